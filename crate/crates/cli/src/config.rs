//! The run configuration document and its validation.
//!
//! Precedence, highest first: command-line flags, then keys in the config
//! file, then built-in defaults. A top-level `seed` overrides `train.seed`;
//! `replay_ratio` overrides `train.replay_ratio`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sisa_core::{
    load_cifar10, split, AggregationMode, GridConfig, SlicingPolicy, SplitSpec, Splits, Strategy, SyntheticSpec,
    SystemConfig, TrainConfig,
};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Cifar10 { dir: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec {
            n_per_class: 200,
            classes: 10,
            shape: vec![32],
            separation: 3.0,
            seed: 0,
        })
    }
}

/// Grid overrides for `bench`; training settings come from the run config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default)]
    pub setups: Option<Vec<[usize; 2]>>,
    #[serde(default)]
    pub strategies: Option<Vec<Strategy>>,
    #[serde(default)]
    pub replay_ratios: Option<Vec<f64>>,
    #[serde(default)]
    pub replay_setup: Option<[usize; 2]>,
    #[serde(default)]
    pub seeds: Option<usize>,
    #[serde(default)]
    pub classes: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(rename = "K", default = "RunConfig::default_k")]
    pub k: usize,
    #[serde(rename = "L", default = "RunConfig::default_l")]
    pub l: usize,
    /// Must agree with the strategy when given.
    #[serde(default)]
    pub policy: Option<SlicingPolicy>,
    #[serde(default)]
    pub replay_ratio: Option<f64>,
    #[serde(default = "RunConfig::default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub aggregation: AggregationMode,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Shards trained concurrently; defaults to K. `SISA_THREADS` caps it.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

fn invalid(path: &str, message: impl std::fmt::Display) -> Failure {
    Failure::new("config", format!("{path}: {message}"))
}

fn bare(e: sisa_core::Error) -> String {
    match e {
        sisa_core::Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}

impl RunConfig {
    fn default_k() -> usize {
        2
    }
    fn default_l() -> usize {
        5
    }
    fn default_strategy() -> Strategy {
        Strategy::SisaGated
    }

    pub fn from_json(text: &str) -> Result<Self, Failure> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "(root)".to_string() } else { path };
            invalid(&path, e.inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::new("io", format!("reading config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fold the top-level overrides into `train`.
    pub fn resolve(mut self) -> Self {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
        }
        if let Some(r) = self.replay_ratio {
            self.train.replay_ratio = r;
        }
        self.seed = Some(self.train.seed);
        self.replay_ratio = Some(self.train.replay_ratio);
        self
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.k == 0 {
            return Err(invalid("K", "must be at least 1"));
        }
        if self.l == 0 {
            return Err(invalid("L", "must be at least 1"));
        }
        if let Some(r) = self.replay_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid("replay_ratio", format!("{r} is outside [0, 1]")));
            }
        }
        if let Some(p) = self.policy {
            if p != self.strategy.policy() {
                return Err(invalid(
                    "policy",
                    format!("{p:?} conflicts with strategy {}", self.strategy.name()),
                ));
            }
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        self.split.validate().map_err(|e| invalid("split", bare(e)))?;
        self.train.validate().map_err(|e| invalid("train", bare(e)))?;
        match &self.dataset {
            DatasetSource::Synthetic(s) => {
                if s.classes < 2 {
                    return Err(invalid("dataset.synthetic.classes", "must be at least 2"));
                }
                if s.n_per_class == 0 {
                    return Err(invalid("dataset.synthetic.n_per_class", "must be at least 1"));
                }
                if s.shape.is_empty() || s.shape.contains(&0) {
                    return Err(invalid("dataset.synthetic.shape", "dimensions must be positive"));
                }
            }
            DatasetSource::Cifar10 { dir } => {
                if !dir.is_dir() {
                    return Err(invalid("dataset.cifar10.dir", format!("{} is not a directory", dir.display())));
                }
            }
        }
        if let Some(rs) = &self.bench.replay_ratios {
            if let Some(r) = rs.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(invalid("bench.replay_ratios", format!("{r} is outside [0, 1]")));
            }
        }
        if self.bench.seeds == Some(0) {
            return Err(invalid("bench.seeds", "must be at least 1"));
        }
        Ok(())
    }

    /// Shard-training threads: the configured value (default K), capped by `cap`.
    pub fn threads(&self, cap: Option<usize>) -> usize {
        let want = self.threads.unwrap_or(self.k).max(1);
        cap.map_or(want, |c| want.min(c.max(1)))
    }

    pub fn system_config(&self, thread_cap: Option<usize>) -> SystemConfig {
        SystemConfig {
            strategy: self.strategy,
            k: self.k,
            l: self.l,
            aggregation: self.aggregation,
            train: self.train.clone(),
            threads: self.threads(thread_cap),
        }
    }

    pub fn grid_config(&self, seeds: Option<usize>) -> GridConfig {
        let d = GridConfig::default();
        let n = seeds.or(self.bench.seeds).unwrap_or(1) as u64;
        GridConfig {
            setups: self.bench.setups.clone().unwrap_or(d.setups),
            strategies: self.bench.strategies.clone().unwrap_or(d.strategies),
            replay_ratios: self.bench.replay_ratios.clone().unwrap_or(d.replay_ratios),
            replay_setup: self.bench.replay_setup.unwrap_or(d.replay_setup),
            seeds: (self.train.seed..self.train.seed + n).collect(),
            classes: self.bench.classes.clone(),
            aggregation: self.aggregation,
            train: self.train.clone(),
        }
    }

    /// Load (or generate) the dataset and split it; CIFAR-10 is normalized
    /// with statistics fitted on the training split.
    pub fn splits(&self) -> Result<Splits, Failure> {
        match &self.dataset {
            DatasetSource::Synthetic(s) => Ok(split(&s.generate()?, &self.split)?),
            DatasetSource::Cifar10 { dir } => {
                let mut s = split(&load_cifar10(dir)?, &self.split)?;
                s.normalize_from_train()?;
                Ok(s)
            }
        }
    }
}
