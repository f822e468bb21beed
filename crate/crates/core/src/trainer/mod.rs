//! Slice-by-slice training of one constituent model with early stopping,
//! replay and a checkpoint after every slice.

mod checkpoint;
mod early_stop;
mod replay;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Splits};
use crate::error::{Error, Result};
use crate::nn::{adam_step, init_params, AdamConfig, Architecture, ModelParameters, OptimizerState};
use crate::partition::PartitionPlan;
use crate::rng::{streams, DetRng, RngState};

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, load_checkpoint, save_checkpoint, sidecar_path,
    write_atomic, Checkpoint, CheckpointMeta, TrainCursor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use early_stop::{early_stop_monitor, EarlyStopping, StopDecision};
pub use replay::{sample_replay, ReplayBuffer};

const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_max_epochs")]
    pub max_epochs_per_slice: usize,
    #[serde(default = "TrainConfig::default_patience")]
    pub patience: usize,
    /// Epochs between validation checks.
    #[serde(default = "TrainConfig::default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "TrainConfig::default_replay_ratio")]
    pub replay_ratio: f64,
    #[serde(default = "TrainConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Constituent architecture; the reference model for the input shape when absent.
    #[serde(default)]
    pub arch: Option<Architecture>,
}

impl TrainConfig {
    fn default_max_epochs() -> usize {
        30
    }
    fn default_patience() -> usize {
        7
    }
    fn default_eval_every() -> usize {
        1
    }
    fn default_replay_ratio() -> f64 {
        0.3
    }
    fn default_batch_size() -> usize {
        64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.max_epochs_per_slice == 0 {
            return bad("max_epochs_per_slice must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.replay_ratio) {
            return bad(format!("replay_ratio must lie in [0, 1], got {}", self.replay_ratio));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.epsilon > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad(format!("invalid Adam hyperparameters {a:?}"));
        }
        if let Some(arch) = &self.arch {
            arch.validate()?;
        }
        Ok(())
    }

    /// Architecture used for inputs of `shape`.
    pub fn arch_for(&self, shape: &[usize]) -> Result<Architecture> {
        let arch = match &self.arch {
            Some(a) => a.clone(),
            None => Architecture::reference_for(shape),
        };
        if arch.input_len() != shape.iter().product::<usize>() {
            return Err(Error::InvalidArgument(format!(
                "architecture expects {} inputs, samples have shape {shape:?}",
                arch.input_len()
            )));
        }
        Ok(arch)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs_per_slice: Self::default_max_epochs(),
            patience: Self::default_patience(),
            eval_every: Self::default_eval_every(),
            replay_ratio: Self::default_replay_ratio(),
            batch_size: Self::default_batch_size(),
            seed: 0,
            adam: AdamConfig::default(),
            arch: None,
        }
    }
}

/// Samples of one dataset paired with head-local targets.
#[derive(Debug, Clone)]
pub struct FitSet<'a> {
    pub data: &'a LabeledDataset,
    pub indices: Vec<usize>,
    pub targets: Vec<usize>,
}

impl<'a> FitSet<'a> {
    /// Targets are the positions of each sample's class in the model head.
    pub fn for_head(data: &'a LabeledDataset, indices: Vec<usize>, params: &ModelParameters<f32>) -> Result<Self> {
        let targets = indices
            .iter()
            .map(|&i| {
                let label = data.label(i);
                params.local_index(label).ok_or_else(|| Error::InvalidLabel {
                    label,
                    reason: format!("class not in model head {:?}", params.output_classes()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { data, indices, targets })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub epochs_run: usize,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub steps: u64,
    /// Forward/backward sample passes during training.
    pub samples_processed: u64,
    pub stopped_early: bool,
}

/// Mean cross-entropy of `params` over `set`, evaluated in chunks.
pub fn mean_loss(params: &ModelParameters<f32>, set: &FitSet<'_>) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty set".into()));
    }
    let mut total = 0.0;
    for (idx, tgt) in set.indices.chunks(EVAL_CHUNK).zip(set.targets.chunks(EVAL_CHUNK)) {
        let batch = set.data.batch(idx);
        total += params.loss(&batch, tgt)? as f64 * idx.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Train on `train` with Adam, checking `val` every `cfg.eval_every` epochs and
/// stopping after `cfg.patience` checks without strict improvement. On return
/// `params` and `opt` hold the best checkpointed state; `rng` has advanced by
/// every shuffle drawn. With an empty validation set all epochs run and the
/// final state is kept.
pub fn fit(
    params: &mut ModelParameters<f32>,
    opt: &mut OptimizerState<f32>,
    rng: &mut DetRng,
    train: &FitSet<'_>,
    val: &FitSet<'_>,
    cfg: &TrainConfig,
) -> Result<FitStats> {
    let mut stats = FitStats::default();
    if train.is_empty() {
        return Ok(stats);
    }
    let mut monitor = EarlyStopping::new(cfg.patience);
    let mut best: Option<(ModelParameters<f32>, OptimizerState<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut idx = Vec::with_capacity(cfg.batch_size);
    let mut tgt = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.max_epochs_per_slice {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            idx.clear();
            tgt.clear();
            idx.extend(chunk.iter().map(|&p| train.indices[p]));
            tgt.extend(chunk.iter().map(|&p| train.targets[p]));
            let batch = train.data.batch(&idx);
            let (loss, grads) = params.loss_and_grad(&batch, &tgt)?;
            if !loss.is_finite() {
                return Err(Error::NumericFault(format!("non-finite loss {loss} in epoch {epoch}")));
            }
            adam_step(params, &grads, opt).map_err(|e| match e {
                Error::NumericFault(m) => Error::NumericFault(format!("{m} in epoch {epoch}")),
                other => other,
            })?;
            stats.steps += 1;
            stats.samples_processed += chunk.len() as u64;
        }
        stats.epochs_run = epoch + 1;
        if val.is_empty() {
            stats.best_epoch = epoch;
            continue;
        }
        if (epoch + 1) % cfg.eval_every != 0 {
            continue;
        }
        let loss = mean_loss(params, val)?;
        if !loss.is_finite() {
            return Err(Error::NumericFault(format!("non-finite validation loss in epoch {epoch}")));
        }
        let (decision, improved) = monitor.observe(loss);
        if improved {
            best = Some((params.clone(), opt.clone()));
            stats.best_epoch = epoch;
            stats.best_val_loss = Some(loss);
        }
        if decision == StopDecision::Stop {
            stats.stopped_early = true;
            break;
        }
    }
    if let Some((p, o)) = best {
        *params = p;
        *opt = o;
    }
    Ok(stats)
}

/// Root stream of shard `shard_id` for a run seeded with `seed`.
pub fn shard_stream(seed: u64, shard_id: usize) -> RngState {
    RngState::new(seed).derive(streams::SHARD + shard_id as u64)
}

/// Fresh parameters and optimizer for a shard model with the given head.
pub fn fresh_model(
    arch: &Architecture,
    classes: &[u32],
    seed: u64,
    shard_id: usize,
    adam: AdamConfig,
) -> Result<(ModelParameters<f32>, OptimizerState<f32>)> {
    let mut rng = shard_stream(seed, shard_id).derive(streams::INIT).rng();
    let params = init_params(arch, classes, &mut rng)?;
    let opt = OptimizerState::new(&params, adam);
    Ok((params, opt))
}

/// Where slice replay buffers come from when training resumes.
#[derive(Debug, Clone, Copy)]
pub enum ReplaySource<'a> {
    /// Draw a buffer from the shard stream at the start of every slice.
    Draw { ratio: f64 },
    /// Reuse stored buffers, indexed by slice.
    Given(&'a [ReplayBuffer]),
}

/// Result of training (part of) one shard.
#[derive(Debug, Clone)]
pub struct ShardRun {
    pub shard_id: usize,
    /// One checkpoint per trained slice, in slice order.
    pub checkpoints: Vec<Checkpoint>,
    /// Buffers used for the trained slices, in slice order.
    pub replay: Vec<ReplayBuffer>,
    pub slice_stats: Vec<FitStats>,
    pub slice_seconds: Vec<f64>,
    pub seconds: f64,
    /// Slices actually trained; counted, not derived from the plan.
    pub slices_trained: usize,
}

impl ShardRun {
    pub fn final_checkpoint(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    pub fn samples_processed(&self) -> u64 {
        self.slice_stats.iter().map(|s| s.samples_processed).sum()
    }
}

/// Model state training continues from.
#[derive(Debug, Clone)]
pub struct ResumePoint {
    pub params: ModelParameters<f32>,
    pub optimizer: OptimizerState<f32>,
    pub rng: RngState,
}

impl From<Checkpoint> for ResumePoint {
    fn from(c: Checkpoint) -> Self {
        Self {
            params: c.params,
            optimizer: c.optimizer,
            rng: c.rng,
        }
    }
}

/// Train every slice of `shard_id` from a fresh model.
pub fn train_shard(plan: &PartitionPlan, shard_id: usize, splits: &Splits, cfg: &TrainConfig) -> Result<ShardRun> {
    cfg.validate()?;
    let assignment = plan
        .assignment(shard_id)
        .ok_or_else(|| Error::InvalidArgument(format!("plan has no shard {shard_id}")))?;
    let arch = cfg.arch_for(splits.train.shape())?;
    let (params, optimizer) = fresh_model(&arch, &assignment.class_ids, cfg.seed, shard_id, cfg.adam)?;
    let start = ResumePoint {
        params,
        optimizer,
        rng: shard_stream(cfg.seed, shard_id).derive(streams::TRAIN),
    };
    resume_shard(
        plan,
        shard_id,
        splits,
        cfg,
        start,
        0,
        ReplaySource::Draw {
            ratio: cfg.replay_ratio,
        },
    )
}

/// Train slices `from_slice..L` of `shard_id` starting at `start`.
pub fn resume_shard(
    plan: &PartitionPlan,
    shard_id: usize,
    splits: &Splits,
    cfg: &TrainConfig,
    start: ResumePoint,
    from_slice: usize,
    replay: ReplaySource<'_>,
) -> Result<ShardRun> {
    cfg.validate()?;
    let layout = plan
        .layout(shard_id)
        .ok_or_else(|| Error::InvalidArgument(format!("plan has no shard {shard_id}")))?;
    if from_slice > layout.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot resume at slice {from_slice} of {}",
            layout.len()
        )));
    }
    let labels = splits.train.labels();
    let ResumePoint {
        mut params,
        optimizer: mut opt,
        rng,
    } = start;
    let mut rng = rng.rng();
    let head: BTreeSet<u32> = params.output_classes().iter().copied().collect();
    let mut run = ShardRun {
        shard_id,
        checkpoints: Vec::new(),
        replay: Vec::new(),
        slice_stats: Vec::new(),
        slice_seconds: Vec::new(),
        seconds: 0.0,
        slices_trained: 0,
    };
    let started = Instant::now();
    for slice_index in from_slice..layout.len() {
        let slice_started = Instant::now();
        let buffer = match replay {
            ReplaySource::Draw { ratio } => sample_replay(layout, slice_index, ratio, labels, &mut rng)?,
            ReplaySource::Given(buffers) => buffers
                .iter()
                .find(|b| b.slice_index == slice_index)
                .cloned()
                .unwrap_or_else(|| ReplayBuffer {
                    slice_index,
                    ..Default::default()
                }),
        };
        let mut indices = layout.slices[slice_index].clone();
        indices.extend_from_slice(&buffer.indices);
        let train = FitSet::for_head(&splits.train, indices, &params)?;
        // validate only on classes this slice actually trains on
        let present: BTreeSet<u32> = train.indices.iter().map(|&i| labels[i]).collect();
        let val_idx: Vec<usize> = (0..splits.val.len())
            .filter(|&i| {
                let c = splits.val.label(i);
                present.contains(&c) && head.contains(&c)
            })
            .collect();
        let val = FitSet::for_head(&splits.val, val_idx, &params)?;
        let stats = fit(&mut params, &mut opt, &mut rng, &train, &val, cfg).map_err(|e| match e {
            Error::NumericFault(m) => Error::NumericFault(format!("shard {shard_id} slice {slice_index}: {m}")),
            other => other,
        })?;
        run.slice_seconds.push(slice_started.elapsed().as_secs_f64());
        run.slices_trained += 1;
        run.checkpoints.push(Checkpoint::new(
            params.clone(),
            opt.clone(),
            TrainCursor {
                shard_id,
                slice_index,
                epoch: stats.best_epoch,
            },
            rng.state(),
        ));
        run.slice_stats.push(stats);
        run.replay.push(buffer);
    }
    run.seconds = started.elapsed().as_secs_f64();
    Ok(run)
}
