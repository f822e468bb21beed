//! Ensemble inference: max-confidence or sum aggregation over the constituent
//! models, and routing through a gating network over shard ids.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Splits};
use crate::error::{Error, Result};
use crate::nn::{argmax, init_params, Architecture, ModelParameters, OptimizerState, Tensor};
use crate::partition::MetadataTable;
use crate::rng::{streams, RngState};
use crate::trainer::{fit, FitSet, FitStats, TrainConfig};

const PREDICT_CHUNK: usize = 512;

/// Target share of the gating network in the summed constituent parameters.
pub const GATING_TARGET_FRACTION: f64 = 0.125;
pub const GATING_FRACTION_BAND: (f64, f64) = (0.10, 0.15);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    #[default]
    MaxConfidence,
    Sum,
}

/// Combine per-shard probability vectors over disjoint (or overlapping) heads
/// into one global class. Ties go to the lowest class id.
pub fn combine(shards: &[(&[u32], &[f32])], mode: AggregationMode) -> Option<u32> {
    let mut score: BTreeMap<u32, f32> = BTreeMap::new();
    for (classes, probs) in shards {
        for (&c, &p) in classes.iter().zip(probs.iter()) {
            let e = score.entry(c).or_insert(match mode {
                AggregationMode::MaxConfidence => f32::NEG_INFINITY,
                AggregationMode::Sum => 0.0,
            });
            match mode {
                AggregationMode::MaxConfidence => *e = e.max(p),
                AggregationMode::Sum => *e += p,
            }
        }
    }
    let mut best: Option<(u32, f32)> = None;
    for (c, s) in score {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub shard_id: usize,
    pub params: ModelParameters<f32>,
}

/// Gating network whose outputs are shard ids.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingModel {
    pub params: ModelParameters<f32>,
    pub optimizer: OptimizerState<f32>,
    pub stats: FitStats,
}

impl GatingModel {
    pub fn shard_count(&self) -> usize {
        self.params.output_classes().len()
    }
}

/// Probabilities one constituent assigned to its head classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardProbabilities {
    pub shard_id: usize,
    pub classes: Vec<u32>,
    pub probs: Vec<f32>,
}

#[derive(Debug, Default)]
struct Counters {
    constituent: AtomicU64,
    gating: AtomicU64,
}

/// Constituent models plus an optional gating network. Forward passes are
/// counted per query so inference cost can be audited.
#[derive(Debug)]
pub struct EnsembleModel {
    members: Vec<EnsembleMember>,
    mode: AggregationMode,
    gating: Option<GatingModel>,
    counters: Counters,
}

impl Clone for EnsembleModel {
    fn clone(&self) -> Self {
        Self {
            members: self.members.clone(),
            mode: self.mode,
            gating: self.gating.clone(),
            counters: Counters::default(),
        }
    }
}

impl EnsembleModel {
    /// Heads must be pairwise disjoint.
    pub fn new(members: Vec<EnsembleMember>, mode: AggregationMode, gating: Option<GatingModel>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for m in &members {
            for &c in m.params.output_classes() {
                if let Some(other) = seen.insert(c, m.shard_id) {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} appears in the heads of shards {other} and {}",
                        m.shard_id
                    )));
                }
            }
        }
        Ok(Self {
            members,
            mode,
            gating,
            counters: Counters::default(),
        })
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn mode(&self) -> AggregationMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: AggregationMode) {
        self.mode = mode;
    }

    pub fn gating(&self) -> Option<&GatingModel> {
        self.gating.as_ref()
    }

    /// Global classes covered by some head, ascending.
    pub fn classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.members.iter().flat_map(|m| m.params.output_classes().to_vec()).collect();
        c.sort_unstable();
        c
    }

    pub fn constituent_param_count(&self) -> usize {
        self.members.iter().map(|m| m.params.param_count()).sum()
    }

    /// (constituent forward passes, gating forward passes), counted per sample.
    pub fn forward_counts(&self) -> (u64, u64) {
        (
            self.counters.constituent.load(Ordering::Relaxed),
            self.counters.gating.load(Ordering::Relaxed),
        )
    }

    pub fn reset_counters(&self) {
        self.counters.constituent.store(0, Ordering::Relaxed);
        self.counters.gating.store(0, Ordering::Relaxed);
    }

    fn member_probs(&self, m: &EnsembleMember, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let n = batch.dims()[0] as u64;
        self.counters.constituent.fetch_add(n, Ordering::Relaxed);
        m.params.forward(batch)
    }

    /// Aggregated prediction for one input, with every shard's probabilities.
    pub fn aggregate_predict(&self, x: &[f32]) -> Result<(u32, Vec<ShardProbabilities>)> {
        if self.members.is_empty() {
            return Err(Error::InvalidState("ensemble has no constituent models".into()));
        }
        let batch = Tensor::from_vec(vec![1, x.len()], x.to_vec())?;
        let mut out = Vec::with_capacity(self.members.len());
        for m in &self.members {
            out.push(ShardProbabilities {
                shard_id: m.shard_id,
                classes: m.params.output_classes().to_vec(),
                probs: self.member_probs(m, &batch)?.into_vec(),
            });
        }
        let views: Vec<(&[u32], &[f32])> = out.iter().map(|s| (s.classes.as_slice(), s.probs.as_slice())).collect();
        let y = combine(&views, self.mode).expect("members have nonempty heads");
        Ok((y, out))
    }

    /// Aggregated predictions for a batch of inputs.
    pub fn aggregate_predict_batch(&self, batch: &Tensor<f32>) -> Result<Vec<u32>> {
        if self.members.is_empty() {
            return Err(Error::InvalidState("ensemble has no constituent models".into()));
        }
        let n = batch.dims()[0];
        let probs = self
            .members
            .iter()
            .map(|m| self.member_probs(m, batch))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..n)
            .map(|i| {
                let views: Vec<(&[u32], &[f32])> = self
                    .members
                    .iter()
                    .zip(&probs)
                    .map(|(m, p)| {
                        let w = m.params.output_classes().len();
                        (m.params.output_classes(), &p.data()[i * w..(i + 1) * w])
                    })
                    .collect();
                combine(&views, self.mode).expect("members have nonempty heads")
            })
            .collect())
    }

    /// Member position chosen by the gating network for each row of `gate`.
    /// A decommissioned shard is never chosen; the most probable live shard
    /// takes its place.
    fn route(&self, gate: &Tensor<f32>, gating: &GatingModel) -> Vec<usize> {
        let k = gating.shard_count();
        let alive: BTreeMap<usize, usize> = self.members.iter().enumerate().map(|(i, m)| (m.shard_id, i)).collect();
        gate.data()
            .chunks(k)
            .map(|row| {
                let mut best: Option<(usize, f32)> = None;
                for (s, &p) in gating.params.output_classes().iter().zip(row) {
                    if let Some(&pos) = alive.get(&(*s as usize)) {
                        if best.is_none_or(|(_, b)| p > b) {
                            best = Some((pos, p));
                        }
                    }
                }
                best.map(|(pos, _)| pos).unwrap_or(0)
            })
            .collect()
    }

    /// Route `x` to one constituent and return its prediction and shard id.
    pub fn gated_predict(&self, x: &[f32]) -> Result<(u32, usize)> {
        let batch = Tensor::from_vec(vec![1, x.len()], x.to_vec())?;
        Ok(self.gated_predict_batch(&batch)?[0])
    }

    /// Gated predictions for a batch: one gating pass and exactly one
    /// constituent pass per row.
    pub fn gated_predict_batch(&self, batch: &Tensor<f32>) -> Result<Vec<(u32, usize)>> {
        let gating = self
            .gating
            .as_ref()
            .ok_or_else(|| Error::InvalidState("ensemble has no gating network".into()))?;
        if self.members.is_empty() {
            return Err(Error::InvalidState("ensemble has no constituent models".into()));
        }
        let n = batch.dims()[0];
        let per = batch.len() / n.max(1);
        self.counters.gating.fetch_add(n as u64, Ordering::Relaxed);
        let gate = gating.params.forward(batch)?;
        let choice = self.route(&gate, gating);
        let mut out = vec![(0u32, 0usize); n];
        for (pos, m) in self.members.iter().enumerate() {
            let rows: Vec<usize> = (0..n).filter(|&i| choice[i] == pos).collect();
            if rows.is_empty() {
                continue;
            }
            let mut data = Vec::with_capacity(rows.len() * per);
            for &i in &rows {
                data.extend_from_slice(&batch.data()[i * per..(i + 1) * per]);
            }
            let mut dims = batch.dims().to_vec();
            dims[0] = rows.len();
            let sub = Tensor::from_vec(dims, data)?;
            let probs = self.member_probs(m, &sub)?;
            let w = m.params.output_classes().len();
            for (r, &i) in rows.iter().enumerate() {
                let local = argmax(&probs.data()[r * w..(r + 1) * w]);
                out[i] = (m.params.output_classes()[local], m.shard_id);
            }
        }
        Ok(out)
    }

    /// Gated prediction when a gating network is present, aggregation otherwise.
    pub fn predict_batch(&self, batch: &Tensor<f32>) -> Result<Vec<u32>> {
        if self.gating.is_some() {
            Ok(self.gated_predict_batch(batch)?.into_iter().map(|(y, _)| y).collect())
        } else {
            self.aggregate_predict_batch(batch)
        }
    }

    /// Predictions for every sample of `ds`, evaluated in chunks.
    pub fn predict_dataset(&self, ds: &LabeledDataset) -> Result<Vec<u32>> {
        let all: Vec<usize> = (0..ds.len()).collect();
        let mut out = Vec::with_capacity(ds.len());
        for idx in all.chunks(PREDICT_CHUNK) {
            out.extend(self.predict_batch(&ds.batch(idx))?);
        }
        Ok(out)
    }
}

/// Gating architecture derived from `base` (same input stage, `k` outputs)
/// whose hidden width puts its parameter count closest to
/// [`GATING_TARGET_FRACTION`] of `constituent_params`. Returns the
/// architecture and the achieved fraction.
pub fn gating_arch(base: &Architecture, k: usize, constituent_params: usize) -> (Architecture, f64) {
    let total = constituent_params.max(1) as f64;
    let frac = |h: usize| base.with_hidden(h).param_count(k) as f64 / total;
    // parameter count grows linearly in the hidden width
    let (p1, p2) = (frac(1), frac(2));
    let slope = (p2 - p1).max(f64::EPSILON);
    let guess = (1.0 + (GATING_TARGET_FRACTION - p1) / slope).round().max(1.0) as usize;
    let best = (guess.saturating_sub(2).max(1)..=guess + 2)
        .min_by(|&a, &b| {
            (frac(a) - GATING_TARGET_FRACTION)
                .abs()
                .total_cmp(&(frac(b) - GATING_TARGET_FRACTION).abs())
        })
        .expect("nonempty range");
    (base.with_hidden(best), frac(best))
}

/// Train the gating network on shard ids looked up through `metadata`.
/// Class labels are never used as targets.
pub fn train_gating(
    arch: &Architecture,
    k: usize,
    metadata: &MetadataTable,
    splits: &Splits,
    cfg: &TrainConfig,
) -> Result<GatingModel> {
    cfg.validate()?;
    let shard_targets = |ds: &LabeledDataset, strict: bool| -> Result<(Vec<usize>, Vec<usize>)> {
        let mut idx = Vec::with_capacity(ds.len());
        let mut tgt = Vec::with_capacity(ds.len());
        for i in 0..ds.len() {
            let label = ds.label(i);
            match metadata.shard_of(label) {
                Some(s) => {
                    idx.push(i);
                    tgt.push(s);
                }
                None if strict => {
                    return Err(Error::InvalidLabel {
                        label,
                        reason: "class has no shard in the metadata table".into(),
                    })
                }
                None => {}
            }
        }
        Ok((idx, tgt))
    };
    let (ti, tt) = shard_targets(&splits.train, true)?;
    let (vi, vt) = shard_targets(&splits.val, false)?;
    let root = RngState::new(cfg.seed).derive(streams::GATING);
    let shard_ids: Vec<u32> = (0..k as u32).collect();
    let mut params = init_params(arch, &shard_ids, &mut root.derive(streams::INIT).rng())?;
    let mut optimizer = OptimizerState::new(&params, cfg.adam);
    let train = FitSet {
        data: &splits.train,
        indices: ti,
        targets: tt,
    };
    let val = FitSet {
        data: &splits.val,
        indices: vi,
        targets: vt,
    };
    let stats = if k > 1 {
        fit(&mut params, &mut optimizer, &mut root.derive(streams::TRAIN).rng(), &train, &val, cfg)?
    } else {
        FitStats::default()
    };
    Ok(GatingModel {
        params,
        optimizer,
        stats,
    })
}
