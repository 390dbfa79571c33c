//! JSON-lines dataset manifests: one record per line with keys
//! `id`, `text`, `image` (path relative to the manifest), and `label`.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Positive, Label::Negative, Label::Neutral];

    pub fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
            Label::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Neutral => "neutral",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Label, ()> {
        match s {
            "positive" => Ok(Label::Positive),
            "negative" => Ok(Label::Negative),
            "neutral" => Ok(Label::Neutral),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    text: String,
    image: String,
    label: String,
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    pub id: String,
    pub text: String,
    /// Image path relative to the manifest's directory.
    pub image: String,
    pub label: Label,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory image paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.image)
    }
}

/// Parses a JSONL manifest; an empty file is a valid empty manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let content = std::fs::read_to_string(path)?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = raw.label.parse::<Label>().map_err(|_| DataError::UnknownLabel {
            line: line_no,
            value: raw.label.clone(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(DataError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        records.push(ManifestRecord {
            id: raw.id,
            text: raw.text,
            image: raw.image,
            label,
        });
    }
    Ok(DatasetManifest { records, root })
}

/// Writes records in order, one JSON object per line.
pub fn save_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        let raw = RawRecord {
            id: r.id.clone(),
            text: r.text.clone(),
            image: r.image.clone(),
            label: r.label.to_string(),
        };
        writeln!(out, "{}", serde_json::to_string(&raw).expect("record serializes"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(name: &str, content: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("mmfs_manifest_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    #[test]
    fn parses_a_single_record() {
        let path = write_temp(
            "one.jsonl",
            r#"{"id":"t1","text":"How I feel today","image":"t1.ppm","label":"positive"}"#,
        );
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.records[0].id, "t1");
        assert_eq!(m.records[0].label, Label::Positive);
        assert!(m.image_path(&m.records[0]).ends_with("t1.ppm"));
    }

    #[test]
    fn empty_file_is_an_empty_manifest() {
        let path = write_temp("empty.jsonl", "");
        let m = load_manifest(&path).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn unknown_label_names_the_line_and_value() {
        let path = write_temp(
            "bad_label.jsonl",
            "{\"id\":\"a\",\"text\":\"x\",\"image\":\"a.ppm\",\"label\":\"positive\"}\n{\"id\":\"b\",\"text\":\"y\",\"image\":\"b.ppm\",\"label\":\"happy\"}\n",
        );
        match load_manifest(&path).unwrap_err() {
            DataError::UnknownLabel { line, value } => {
                assert_eq!(line, 2);
                assert_eq!(value, "happy");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_the_line_number() {
        let path = write_temp(
            "broken.jsonl",
            "{\"id\":\"a\",\"text\":\"x\",\"image\":\"a.ppm\",\"label\":\"neutral\"}\nnot json\n",
        );
        match load_manifest(&path).unwrap_err() {
            DataError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let path = write_temp(
            "dup.jsonl",
            "{\"id\":\"a\",\"text\":\"x\",\"image\":\"a.ppm\",\"label\":\"neutral\"}\n{\"id\":\"a\",\"text\":\"y\",\"image\":\"b.ppm\",\"label\":\"negative\"}\n",
        );
        assert!(matches!(
            load_manifest(&path).unwrap_err(),
            DataError::DuplicateId { line: 2, .. }
        ));
    }

    #[test]
    fn save_then_load_roundtrips() {
        let records = vec![
            ManifestRecord {
                id: "x1".into(),
                text: "hello".into(),
                image: "images/x1.ppm".into(),
                label: Label::Neutral,
            },
            ManifestRecord {
                id: "x2".into(),
                text: "world".into(),
                image: "images/x2.ppm".into(),
                label: Label::Negative,
            },
        ];
        let path = std::env::temp_dir().join("mmfs_manifest_tests").join("rt.jsonl");
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_manifest(&path, &records).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records[1].label, Label::Negative);
        assert_eq!(m.records[0].text, "hello");
    }

    #[test]
    fn label_index_roundtrip() {
        for label in Label::ALL {
            assert_eq!(Label::from_index(label.index()), Some(label));
        }
        assert_eq!(Label::from_index(3), None);
    }
}
