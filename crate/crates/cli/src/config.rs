//! Flat key=value run configuration with fail-fast unknown-key handling.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// Every key any command understands; anything else is an error.
const KNOWN_KEYS: &[&str] = &[
    // method and shared fit knobs
    "method",
    "gamma",
    "lambda_grid",
    "step_v",
    "step_q",
    "step_a",
    "step_b",
    "decay",
    "max_iter",
    "refresh_every",
    "bandwidth",
    "zeta",
    "cv",
    "tol",
    "seed",
    "window",
    // basis
    "basis",
    "degree",
    "centers_per_dim",
    // data shape
    "n",
    "stages",
    "action_count",
    // environment
    "env",
    "mdp_file",
    "init_state",
    "behavior",
    "behavior_epsilon",
    "mc_rollouts",
    "dose_count",
    "noise_sd",
    "meal_prob",
];

/// Parsed configuration: raw key-value pairs plus the canonical hash.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {}: expected key=value", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                bail!("config line {}: unknown key '{key}'", lineno + 1);
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                bail!("config line {}: duplicate key '{key}'", lineno + 1);
            }
        }
        Ok(RunConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .with_context(|| format!("config key '{key}' is required"))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .with_context(|| format!("config key '{key}': not a number: '{v}'")),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .with_context(|| format!("config key '{key}': not an integer: '{v}'")),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .with_context(|| format!("config key '{key}': not an integer: '{v}'")),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => bail!("config key '{key}': expected true/false, got '{v}'"),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let parsed: std::result::Result<Vec<f64>, _> =
                    v.split(',').map(|x| x.trim().parse()).collect();
                Ok(Some(parsed.with_context(|| {
                    format!("config key '{key}': expected comma-separated numbers, got '{v}'")
                })?))
            }
        }
    }

    /// FNV-1a hash of the canonical (sorted) key=value text, hex-encoded.
    pub fn hash(&self) -> String {
        let canonical: String = self
            .values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in canonical.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_hashes_deterministically() {
        let a = RunConfig::parse("method=pt\ngamma=0.9\n").unwrap();
        let b = RunConfig::parse("gamma=0.9\nmethod=pt").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.require("method").unwrap(), "pt");
    }

    #[test]
    fn unknown_key_is_fatal() {
        assert!(RunConfig::parse("methd=pt").is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let c = RunConfig::parse("# comment\n\nmethod=rg\n").unwrap();
        assert_eq!(c.require("method").unwrap(), "rg");
    }
}
