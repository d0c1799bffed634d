//! Run configuration file.
//!
//! TOML with four optional sections; unknown keys are rejected everywhere.
//!
//! ```toml
//! [scenario]            # synthetic data, see ScenarioConfig for every key
//! days = 1400
//! event_total = 3.7e6
//!
//! [model]
//! kind = "pila"         # pila | hvae
//! rank = 4
//! hidden = 128
//! residual = true
//! [model.loss]          # beta = 10, lambda = 0.1, anneal_epochs = 30,
//! prior = "endstop"     # prior = endstop | kl, clip_eps = 1e-6
//! [model.hvae]          # beta = e^-9, warmup_epochs = 5, target_ratio = 0.1
//! [model.bounds]        # x_m, y_m, depth, dv as [lo, hi]
//!
//! [train]
//! epochs = 150
//! batch_size = 16
//! seed = 0
//! [train.optimizer]     # lr = 3e-4, weight_decay = 1e-4, beta1, beta2, eps
//!
//! [paths]
//! geometry = "stations.csv"   # station table, overrides scenario.geometry
//! data = "runs/gen-data-…"    # dataset directory or raw observations CSV
//! output = "runs"             # base directory for run folders
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use pila_core::diffcore::AdamConfig;
use pila_core::gnssdata::ScenarioConfig;
use pila_core::mogi::VariableBounds;
use pila_core::pila::LossConfig;
use pila_core::trainer::{HvaeSettings, ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub scenario: ScenarioConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub rank: usize,
    pub hidden: usize,
    pub residual: bool,
    pub loss: LossConfig,
    pub hvae: HvaeSettings,
    pub bounds: VariableBounds,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            kind: t.model,
            rank: t.rank,
            hidden: t.hidden,
            residual: t.residual,
            loss: t.loss,
            hvae: t.hvae,
            bounds: t.bounds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            optimizer: t.optimizer,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub geometry: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config `{}`: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config `{}`: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.geometry,
            &mut cfg.paths.data,
            &mut cfg.paths.output,
            &mut cfg.scenario.geometry,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks value ranges, naming the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, msg: String| Err(CliError::Validation(format!("`{key}`: {msg}")));
        if self.train.epochs == 0 {
            return bad("train.epochs", "must be at least 1".into());
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size", "must be at least 1".into());
        }
        if !(self.train.optimizer.lr > 0.0) {
            return bad("train.optimizer.lr", format!("must be positive, got {}", self.train.optimizer.lr));
        }
        if !(self.train.optimizer.weight_decay >= 0.0) {
            return bad("train.optimizer.weight_decay", "must be non-negative".into());
        }
        if self.model.rank == 0 {
            return bad("model.rank", "must be at least 1".into());
        }
        if self.model.hidden == 0 {
            return bad("model.hidden", "must be at least 1".into());
        }
        let l = &self.model.loss;
        for (key, v) in [("model.loss.beta", l.beta), ("model.loss.lambda", l.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(key, format!("must be finite and non-negative, got {v}"));
            }
        }
        if !(l.clip_eps > 0.0 && l.clip_eps < 0.5) {
            return bad("model.loss.clip_eps", format!("must lie in (0, 0.5), got {}", l.clip_eps));
        }
        if !l.kl_prior_var.iter().all(|v| *v > 0.0) {
            return bad("model.loss.kl_prior_var", "must be positive".into());
        }
        if !(self.model.hvae.beta >= 0.0) || !(self.model.hvae.target_ratio > 0.0) {
            return bad("model.hvae", "beta must be non-negative and target_ratio positive".into());
        }
        self.model
            .bounds
            .validate()
            .map_err(|e| CliError::Validation(format!("`model.bounds`: {e}")))?;
        let mut scen = self.scenario.clone();
        if let Some(g) = &self.paths.geometry {
            scen.geometry = Some(g.clone());
        }
        scen.validate()
            .map_err(|e| CliError::Validation(format!("`scenario`: {e}")))?;
        Ok(())
    }

    /// Scenario with `paths.geometry` applied.
    pub fn scenario(&self) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        if let Some(g) = &self.paths.geometry {
            s.geometry = Some(g.clone());
        }
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.kind,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.train.seed,
            rank: self.model.rank,
            hidden: self.model.hidden,
            residual: self.model.residual,
            loss: self.model.loss.clone(),
            hvae: self.model.hvae.clone(),
            optimizer: self.train.optimizer,
            bounds: self.model.bounds,
        }
    }

    /// Canonical text used for run hashing and manifests.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfigFile = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfigFile::default());
        assert_eq!(cfg.train_config(), TrainConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn canonical_text_round_trips() {
        let cfg = RunConfigFile::default();
        let back: RunConfigFile = toml::from_str(&cfg.canonical()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_in_every_section() {
        for doc in [
            "bogus = 1",
            "[scenario]\nbogus = 1",
            "[model]\nbogus = 1",
            "[model.loss]\nbogus = 1",
            "[train]\nbogus = 1",
            "[train.optimizer]\nbogus = 1",
            "[paths]\nbogus = 1",
        ] {
            let err = toml::from_str::<RunConfigFile>(doc).unwrap_err();
            assert!(err.message().contains("bogus"), "{doc}: {}", err.message());
        }
    }

    #[test]
    fn range_errors_name_the_key() {
        let mut cfg = RunConfigFile::default();
        cfg.train.epochs = 0;
        let CliError::Validation(msg) = cfg.validate().unwrap_err() else { panic!() };
        assert!(msg.contains("train.epochs"), "{msg}");

        let mut cfg = RunConfigFile::default();
        cfg.model.loss.beta = -1.0;
        let CliError::Validation(msg) = cfg.validate().unwrap_err() else { panic!() };
        assert!(msg.contains("model.loss.beta"), "{msg}");

        let mut cfg = RunConfigFile::default();
        cfg.scenario.white_sigma = -1.0;
        let CliError::Validation(msg) = cfg.validate().unwrap_err() else { panic!() };
        assert!(msg.contains("white_sigma"), "{msg}");
    }
}
