//! A trained SISA system: plan, per-shard checkpoint chains and replay
//! buffers, optional gating network, and the removal history.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Splits;
use crate::ensemble::{gating_arch, train_gating, AggregationMode, EnsembleMember, EnsembleModel, GatingModel};
use crate::error::{Error, Result};
use crate::partition::{PartitionPlan, SlicingPolicy};
use crate::trainer::{train_shard, Checkpoint, ReplayBuffer, ShardRun, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BaselineFull,
    SisaBalanced,
    SisaSclsReplay,
    SisaGated,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::BaselineFull,
        Strategy::SisaBalanced,
        Strategy::SisaSclsReplay,
        Strategy::SisaGated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::BaselineFull => "baseline_full",
            Strategy::SisaBalanced => "sisa_balanced",
            Strategy::SisaSclsReplay => "sisa_scls_replay",
            Strategy::SisaGated => "sisa_gated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }

    pub fn policy(self) -> SlicingPolicy {
        match self {
            Strategy::BaselineFull | Strategy::SisaBalanced => SlicingPolicy::Balanced,
            Strategy::SisaSclsReplay | Strategy::SisaGated => SlicingPolicy::SequentialClass,
        }
    }

    /// Shard and slice counts actually used; the baseline is one model on one slice.
    pub fn layout(self, k: usize, l: usize) -> (usize, usize) {
        match self {
            Strategy::BaselineFull => (1, 1),
            _ => (k, l),
        }
    }

    /// Replay ratio actually used; only the sequential strategies replay.
    pub fn replay_ratio(self, configured: f64) -> f64 {
        match self {
            Strategy::BaselineFull | Strategy::SisaBalanced => 0.0,
            Strategy::SisaSclsReplay | Strategy::SisaGated => configured,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub strategy: Strategy,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default)]
    pub aggregation: AggregationMode,
    #[serde(default)]
    pub train: TrainConfig,
    /// Upper bound on shards trained concurrently; 1 trains sequentially.
    #[serde(default = "SystemConfig::default_threads")]
    pub threads: usize,
}

impl SystemConfig {
    fn default_threads() -> usize {
        1
    }

    pub fn new(strategy: Strategy, k: usize, l: usize, train: TrainConfig) -> Self {
        Self {
            strategy,
            k,
            l,
            aggregation: AggregationMode::default(),
            train,
            threads: 1,
        }
    }

    /// Training configuration with the strategy's replay ratio applied.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            replay_ratio: self.strategy.replay_ratio(self.train.replay_ratio),
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardState {
    pub shard_id: usize,
    /// One per slice; the last is the deployed model.
    pub checkpoints: Vec<Checkpoint>,
    /// Replay buffer used for each slice.
    pub replay: Vec<ReplayBuffer>,
    /// Every class of the shard has been removed.
    pub decommissioned: bool,
}

impl ShardState {
    pub fn from_run(run: ShardRun) -> Self {
        Self {
            shard_id: run.shard_id,
            checkpoints: run.checkpoints,
            replay: run.replay,
            decommissioned: false,
        }
    }

    pub fn deployed(&self) -> Option<&Checkpoint> {
        if self.decommissioned {
            None
        } else {
            self.checkpoints.last()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SisaSystem {
    pub config: SystemConfig,
    /// Current plan; removed classes are purged from it.
    pub plan: PartitionPlan,
    pub shards: Vec<ShardState>,
    pub gating: Option<GatingModel>,
    pub class_names: Vec<String>,
    /// Removed classes in request order.
    pub removed: Vec<u32>,
    pub train_seconds: f64,
}

impl SisaSystem {
    pub fn ensemble(&self) -> Result<EnsembleModel> {
        let members = self
            .shards
            .iter()
            .filter_map(|s| {
                s.deployed().map(|c| EnsembleMember {
                    shard_id: s.shard_id,
                    params: c.params.clone(),
                })
            })
            .collect();
        EnsembleModel::new(members, self.config.aggregation, self.gating.clone())
    }

    pub fn shard(&self, shard_id: usize) -> Option<&ShardState> {
        self.shards.iter().find(|s| s.shard_id == shard_id)
    }

    pub fn shard_mut(&mut self, shard_id: usize) -> Option<&mut ShardState> {
        self.shards.iter_mut().find(|s| s.shard_id == shard_id)
    }

    /// Classes still served by some shard.
    pub fn live_classes(&self) -> Vec<u32> {
        self.plan.metadata.entries.keys().copied().collect()
    }

    /// Resolve a class by name or numeric id.
    pub fn resolve_class(&self, name: &str) -> Result<u32> {
        let by_name = self.class_names.iter().position(|n| n == name).map(|i| i as u32);
        let by_id = name.parse::<u32>().ok().filter(|&c| (c as usize) < self.class_names.len());
        by_name.or(by_id).ok_or_else(|| {
            Error::UnknownClass(format!("{name:?}; valid classes: {}", self.class_names.join(", ")))
        })
    }
}

/// Plan and train every shard (and the gating network for the gated strategy).
pub fn train_system(config: &SystemConfig, splits: &Splits) -> Result<SisaSystem> {
    let cfg = config.effective_train();
    cfg.validate()?;
    if config.threads == 0 {
        return Err(Error::InvalidArgument("threads must be at least 1".into()));
    }
    let (k, l) = config.strategy.layout(config.k, config.l);
    let c = splits.num_classes();
    let plan = PartitionPlan::build(splits.train.labels(), c, k, l, config.strategy.policy())?;
    let started = Instant::now();
    let shard_ids: Vec<usize> = (0..k).collect();
    let runs: Vec<ShardRun> = if config.threads > 1 && k > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads.min(k))
            .build()
            .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))?;
        pool.install(|| {
            shard_ids
                .par_iter()
                .map(|&s| train_shard(&plan, s, splits, &cfg))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        shard_ids
            .iter()
            .map(|&s| train_shard(&plan, s, splits, &cfg))
            .collect::<Result<Vec<_>>>()?
    };
    let shards: Vec<ShardState> = runs.into_iter().map(ShardState::from_run).collect();
    let gating = if config.strategy == Strategy::SisaGated {
        let constituent: usize = shards
            .iter()
            .filter_map(|s| s.deployed())
            .map(|c| c.params.param_count())
            .sum();
        let (arch, _) = gating_arch(&cfg.arch_for(splits.train.shape())?, k, constituent);
        Some(train_gating(&arch, k, &plan.metadata, splits, &cfg)?)
    } else {
        None
    };
    let train_seconds = started.elapsed().as_secs_f64();
    Ok(SisaSystem {
        config: config.clone(),
        plan,
        shards,
        gating,
        class_names: splits.train.class_names().to_vec(),
        removed: Vec::new(),
        train_seconds,
    })
}
