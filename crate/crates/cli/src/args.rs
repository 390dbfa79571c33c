//! Minimal flag parser: `--key value` pairs plus boolean switches.

use std::collections::HashMap;

use crate::error::{CliError, Result};

const SWITCHES: &[&str] = &["freeze-encoders", "help"];

#[derive(Debug, Default)]
pub struct Args {
    values: HashMap<String, String>,
    switches: Vec<String>,
    taken: std::cell::RefCell<Vec<String>>,
}

impl Args {
    pub fn parse(raw: &[String]) -> Result<Args> {
        let mut args = Args::default();
        let mut i = 0;
        while i < raw.len() {
            let token = &raw[i];
            let key = token
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("unexpected argument {token:?}")))?;
            if SWITCHES.contains(&key) {
                args.switches.push(key.to_string());
                i += 1;
                continue;
            }
            let value = raw
                .get(i + 1)
                .ok_or_else(|| CliError::Usage(format!("flag --{key} needs a value")))?;
            if args.values.insert(key.to_string(), value.clone()).is_some() {
                return Err(CliError::Usage(format!("flag --{key} given twice")));
            }
            i += 2;
        }
        Ok(args)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        let v = self.values.get(key).map(|s| s.as_str());
        if v.is_some() {
            self.taken.borrow_mut().push(key.to_string());
        }
        v
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Config(format!("flag --{key}: cannot parse value {raw:?}"))
            }),
        }
    }

    pub fn switch(&self, key: &str) -> bool {
        let hit = self.switches.iter().any(|s| s == key);
        if hit {
            self.taken.borrow_mut().push(key.to_string());
        }
        hit
    }

    /// Fails fast on flags nothing consumed.
    pub fn finish(&self) -> Result<()> {
        let taken = self.taken.borrow();
        for key in self.values.keys().chain(self.switches.iter()) {
            if !taken.iter().any(|t| t == key) {
                return Err(CliError::Usage(format!("unknown flag --{key} for this command")));
            }
        }
        Ok(())
    }
}
