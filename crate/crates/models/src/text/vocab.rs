//! Word-level vocabulary and tokenizer.
//!
//! Tokenization is lowercased alphanumeric runs, so `"How I feel today
//! #legday"` becomes `how i feel today legday`. Subword schemes are out of
//! scope; unseen words map to `[UNK]`.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use mmfs_core::{BoolTensor, IntTensor};

use crate::error::{ModelError, Result};

pub const PAD: i64 = 0;
pub const UNK: i64 = 1;
pub const CLS: i64 = 2;
pub const SEP: i64 = 3;
pub const MASK: i64 = 4;

pub const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, i64>,
    id_to_token: Vec<String>,
}

/// Lowercased alphanumeric word split.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

impl Vocab {
    /// Frequency-ranked vocabulary over the corpus: reserved ids first, then
    /// tokens with count >= `min_count` by descending count, ties broken
    /// lexicographically, truncated to `max_size` entries in total.
    pub fn build(corpus: &[impl AsRef<str>], min_count: usize, max_size: usize) -> Result<Vocab> {
        if corpus.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in word_tokens(text.as_ref()) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = max_size.saturating_sub(RESERVED.len());
        ranked.truncate(keep);
        Ok(Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t)))
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Vocab {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as i64))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id_of(&self, token: &str) -> i64 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token_of(&self, id: i64) -> &str {
        &self.id_to_token[id as usize]
    }

    /// Word ids for a text, without special tokens.
    pub fn encode(&self, text: &str) -> Vec<i64> {
        word_tokens(text).iter().map(|t| self.id_of(t)).collect()
    }

    /// Space-joined tokens, skipping padding/control ids.
    pub fn decode(&self, ids: &[i64]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&id| id >= RESERVED.len() as i64 || id == UNK)
            .map(|&id| self.token_of(id))
            .collect();
        words.join(" ")
    }

    /// One token per line, non-reserved entries only; line N holds id N + 5.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for token in &self.id_to_token[RESERVED.len()..] {
            writeln!(file, "{token}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut tokens = Vec::new();
        for line in file.lines() {
            let line = line?;
            if !line.is_empty() {
                tokens.push(line);
            }
        }
        Ok(Vocab::from_tokens(tokens))
    }
}

/// `[CLS]` + word ids truncated to `max_seq_len - 1`, padded with `[PAD]` to
/// exactly `max_seq_len`; the mask is true on non-pad positions.
pub fn tokenize(text: &str, vocab: &Vocab, max_seq_len: usize) -> (IntTensor, BoolTensor) {
    assert!(max_seq_len >= 2, "max_seq_len must be at least 2");
    let mut ids = Vec::with_capacity(max_seq_len);
    ids.push(CLS);
    for id in vocab.encode(text).into_iter().take(max_seq_len - 1) {
        ids.push(id);
    }
    let used = ids.len();
    ids.resize(max_seq_len, PAD);
    let mask: Vec<bool> = (0..max_seq_len).map(|i| i < used).collect();
    (
        IntTensor::from_vec(vec![max_seq_len], ids),
        BoolTensor::from_vec(vec![max_seq_len], mask),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_lexicographic_order() {
        let vocab = Vocab::build(&["a b", "a"], 1, 100).unwrap();
        assert_eq!(vocab.id_of("a"), 5);
        assert_eq!(vocab.id_of("b"), 6);
    }

    #[test]
    fn unseen_token_maps_to_unk() {
        let vocab = Vocab::build(&["hello world"], 1, 100).unwrap();
        assert_eq!(vocab.id_of("martian"), UNK);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let texts: [&str; 0] = [];
        assert!(matches!(
            Vocab::build(&texts, 1, 10).unwrap_err(),
            ModelError::EmptyCorpus
        ));
    }

    #[test]
    fn min_count_and_max_size_prune() {
        let vocab = Vocab::build(&["a a b c", "a b"], 2, 6).unwrap();
        // b has count 2, c has count 1 (pruned); max_size 6 keeps one slot.
        assert_eq!(vocab.size(), 6);
        assert_eq!(vocab.id_of("a"), 5);
        assert_eq!(vocab.id_of("b"), UNK); // truncated by max_size
        assert_eq!(vocab.id_of("c"), UNK);
    }

    #[test]
    fn roundtrip_loses_only_case_and_punctuation() {
        let texts = ["How I feel today #legday", "Poor team getting crushed 12 to 4"];
        let vocab = Vocab::build(&texts, 1, 100).unwrap();
        for t in texts {
            let decoded = vocab.decode(&vocab.encode(t));
            let normalized = word_tokens(t).join(" ");
            assert_eq!(decoded, normalized);
        }
    }

    #[test]
    fn tokenize_empty_text_is_cls_then_padding() {
        let vocab = Vocab::build(&["a"], 1, 10).unwrap();
        let (ids, mask) = tokenize("", &vocab, 4);
        assert_eq!(ids.data, vec![CLS, PAD, PAD, PAD]);
        assert_eq!(mask.data, vec![true, false, false, false]);
    }

    #[test]
    fn tokenize_truncates_long_text() {
        let vocab = Vocab::build(&["a b c d e f"], 1, 100).unwrap();
        let (ids, mask) = tokenize("a b c d e f", &vocab, 4);
        assert_eq!(ids.data.len(), 4);
        assert_eq!(ids.data[0], CLS);
        assert!(mask.data.iter().all(|&m| m));
    }

    #[test]
    fn tweet_like_text_has_five_live_positions() {
        let vocab = Vocab::build(&["how i feel today legday gym"], 1, 100).unwrap();
        let (_, mask) = tokenize("how i feel today", &vocab, 8);
        assert_eq!(mask.data.iter().filter(|&&m| m).count(), 5);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join("mmfs_vocab_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.txt");
        let vocab = Vocab::build(&["alpha beta gamma alpha"], 1, 100).unwrap();
        vocab.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.size(), vocab.size());
        assert_eq!(loaded.id_of("alpha"), vocab.id_of("alpha"));
        assert_eq!(loaded.id_of("gamma"), vocab.id_of("gamma"));
        std::fs::remove_file(&path).ok();
    }
}
