//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the
//! snake_case field names (`tau_prior`, `n_s`, `learning_rate`, ...); the
//! command-line spellings (`tau-prior`, `sinkhorn-iters`, `lr`, ...) are
//! accepted as aliases.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::failure::Failure;

const KEYS: &[(&str, &[&str])] = &[
    ("seed", &[]),
    ("threads", &[]),
    ("out_dir", &["out-dir"]),
    ("tau", &[]),
    ("tau_prior", &["tau-prior"]),
    ("n_s", &["sinkhorn_iters", "sinkhorn-iters"]),
    ("n_opt", &["opt_iters", "opt-iters"]),
    ("learning_rate", &["lr"]),
    ("use_gumbel_noise", &["gumbel"]),
    ("init", &[]),
    ("decoder", &[]),
    ("relaxation", &[]),
    ("individuals", &[]),
    ("features", &[]),
    ("sigma", &[]),
    ("control_fraction", &["control-fraction"]),
    ("missing_fraction", &["missing-fraction"]),
];

#[derive(Debug, Default)]
pub struct Config {
    /// canonical key -> (value, line number)
    entries: BTreeMap<&'static str, (String, usize)>,
    source: String,
}

fn canonical(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .find(|(k, aliases)| *k == key || aliases.contains(&key))
        .map(|(k, _)| *k)
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, Failure> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Failure::config(format!(
                    "{source} line {line_no}: expected key = value, got '{line}'"
                )));
            };
            let key = k.trim();
            let Some(key) = canonical(key) else {
                let known: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
                return Err(Failure::config(format!(
                    "{source} line {line_no}: unknown key '{key}' (known: {})",
                    known.join(", ")
                )));
            };
            if entries
                .insert(key, (v.trim().to_string(), line_no))
                .is_some()
            {
                return Err(Failure::config(format!(
                    "{source} line {line_no}: duplicate key '{key}'"
                )));
            }
        }
        Ok(Self {
            entries,
            source: source.to_string(),
        })
    }

    /// The typed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &'static str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(canonical(key) == Some(key));
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| {
                Failure::config(format!(
                    "{} line {line}: bad value '{v}' for {key}: {e}",
                    self.source
                ))
            }),
        }
    }

    /// Flag if given, else the file's value, else `default`.
    pub fn resolve<T: FromStr>(
        &self,
        flag: Option<T>,
        key: &'static str,
        default: T,
    ) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}
