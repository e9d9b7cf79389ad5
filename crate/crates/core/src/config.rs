//! Experiment configuration: `key = value` files with `#` comments,
//! overridden by command-line flags, hashed for provenance in metric
//! summaries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::Strategy;
use crate::predictor::{PredictorConfig, Variant};

/// Resolved key-value settings. Later sources override earlier ones;
/// the hash covers the final state only.
#[derive(Clone, Default, Debug)]
pub struct ConfigMap {
    map: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are
    /// skipped; repeated keys keep the last value.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut out = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value, found {raw:?}",
                    path.display(),
                    i + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::Config(format!(
                    "{}:{}: empty key",
                    path.display(),
                    i + 1
                )));
            }
            out.set(key, value);
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::Config(format!(
                    "key {key}: cannot parse {raw:?} as {}",
                    std::any::type_name::<T>()
                ))
            }),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    /// Comma-separated positive integers, e.g. `hits_at = 1,3,10`.
    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|part| {
                    part.trim().parse().map_err(|_| {
                        Error::Config(format!("key {key}: bad list entry {part:?}"))
                    })
                })
                .collect(),
        }
    }

    /// The canonical `key=value` listing the hash is computed over.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_variant(raw: &str) -> Result<Variant> {
    match raw {
        "coke" => Ok(Variant::CoKE),
        "interent" => Ok(Variant::InterEnt),
        other => Err(Error::Config(format!(
            "variant must be coke or interent, got {other:?}"
        ))),
    }
}

pub fn parse_strategy(raw: &str) -> Result<Strategy> {
    match raw {
        "sampling" => Ok(Strategy::Sampling),
        "minerva" => Ok(Strategy::Minerva),
        "rl" => Ok(Strategy::Rl),
        "answer-search" => Ok(Strategy::AnswerSearch),
        other => Err(Error::Config(format!(
            "strategy must be sampling, minerva, rl or answer-search, got {other:?}"
        ))),
    }
}

/// A fully resolved evaluation run.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub predictor: PredictorConfig,
    pub strategy: Strategy,
    pub steps: usize,
    pub beam_width: usize,
    pub hits_at: Vec<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// The context length N must serialize within the predictor's
    /// positional table.
    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        let need = match self.predictor.variant.chain_format() {
            crate::sampler::ChainFormat::InterEnt => 3 + 2 * self.steps,
            crate::sampler::ChainFormat::RelOnly => 3 + self.steps,
        };
        if need > self.predictor.max_seq_len {
            return Err(Error::Config(format!(
                "{}-step contexts need {} positions, predictor allows {}",
                self.steps, need, self.predictor.max_seq_len
            )));
        }
        Ok(())
    }
}

/// Builds a predictor shape from config keys, starting from the desk
/// defaults for the given variant and context length.
pub fn predictor_from_map(map: &ConfigMap) -> Result<PredictorConfig> {
    let variant = parse_variant(map.str_or("variant", "coke"))?;
    let steps = map.usize_or("steps", 2)?;
    let base = PredictorConfig::desk(variant, steps);
    let config = PredictorConfig {
        variant,
        d: map.usize_or("d", base.d)?,
        layers: map.usize_or("layers", base.layers)?,
        heads: map.usize_or("heads", base.heads)?,
        max_seq_len: map.usize_or("max_seq_len", base.max_seq_len)?,
        dropout: map.f64_or("dropout", base.dropout)?,
        context_length: map.usize_or("context_length", steps)?,
        tied_output: map.bool_or("tied_output", base.tied_output)?,
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(body: &str) -> (tempfile::TempDir, ConfigMap) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, body).unwrap();
        let map = ConfigMap::load(&path).unwrap();
        (dir, map)
    }

    #[test]
    fn files_parse_with_comments_and_blanks() {
        let (_dir, map) = write_config(
            "# experiment\n\nvariant = interent\nsteps=3   # walk length\n  d = 64\n",
        );
        assert_eq!(map.get("variant"), Some("interent"));
        assert_eq!(map.usize_or("steps", 0).unwrap(), 3);
        assert_eq!(map.usize_or("d", 0).unwrap(), 64);
        assert_eq!(map.get("missing"), None);
    }

    #[test]
    fn malformed_lines_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "variant interent\n").unwrap();
        let err = ConfigMap::load(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");

        std::fs::write(&path, "steps = not_a_number\n").unwrap();
        let map = ConfigMap::load(&path).unwrap();
        assert!(matches!(
            map.usize_or("steps", 1).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn later_settings_override_earlier_ones() {
        let (_dir, mut map) = write_config("seed = 1\nseed = 2\n");
        assert_eq!(map.u64_or("seed", 0).unwrap(), 2);
        map.set("seed", 9);
        assert_eq!(map.u64_or("seed", 0).unwrap(), 9);
    }

    #[test]
    fn hashes_depend_on_content_not_insertion_order() {
        let mut a = ConfigMap::new();
        a.set("x", 1);
        a.set("y", 2);
        let mut b = ConfigMap::new();
        b.set("y", 2);
        b.set("x", 1);
        assert_eq!(a.hash(), b.hash());
        b.set("x", 3);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn hits_lists_parse_or_default() {
        let (_dir, map) = write_config("hits_at = 1, 5 ,20\n");
        assert_eq!(map.usize_list_or("hits_at", &[1, 3]).unwrap(), vec![1, 5, 20]);
        let empty = ConfigMap::new();
        assert_eq!(empty.usize_list_or("hits_at", &[1, 3]).unwrap(), vec![1, 3]);
    }

    #[test]
    fn experiment_validation_ties_steps_to_the_positional_table() {
        let mut map = ConfigMap::new();
        map.set("variant", "interent");
        map.set("steps", 3);
        let predictor = predictor_from_map(&map).unwrap();
        let mut exp = ExperimentConfig {
            data_dir: PathBuf::from("data"),
            predictor,
            strategy: Strategy::Sampling,
            steps: 3,
            beam_width: 40,
            hits_at: vec![1, 3, 10],
            seed: 7,
            out_dir: PathBuf::from("out"),
        };
        exp.validate().unwrap();
        exp.steps = 50;
        assert!(matches!(exp.validate().unwrap_err(), Error::Config(_)));
    }
}
