//! Class removal under the four strategies.
//!
//! Every strategy locates the class through the metadata table, purges it from
//! the plan, and retrains the owning shard with an output head that no longer
//! contains it. The balanced and baseline strategies restart that shard from a
//! fresh initialization; the sequential strategies roll back to the checkpoint
//! taken just before the first slice holding the class.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Splits;
use crate::error::{Error, Result};
use crate::report::{verify_exact, EvaluationReport, Verdict};
use crate::rng::streams;
use crate::system::{SisaSystem, Strategy};
use crate::trainer::{fresh_model, resume_shard, shard_stream, ReplaySource, ResumePoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnOutcome {
    pub strategy: Strategy,
    pub class: u32,
    pub class_name: String,
    pub shard: usize,
    /// Retrained slices as a half-open range `[start, end)`.
    pub slices_retrained: [usize; 2],
    /// Slices the trainer actually ran.
    pub slice_count: usize,
    /// Training sample passes spent on retraining.
    pub samples_processed: u64,
    pub seconds: f64,
    pub decommissioned: bool,
    /// Absent when no constituent model remains.
    pub verdict: Option<Verdict>,
    pub report: Option<EvaluationReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Dispatch on the system's strategy.
pub fn unlearn(system: &mut SisaSystem, splits: &Splits, class: u32) -> Result<UnlearnOutcome> {
    match system.config.strategy {
        Strategy::BaselineFull => unlearn_baseline(system, splits, class),
        Strategy::SisaBalanced => unlearn_balanced(system, splits, class),
        Strategy::SisaSclsReplay => unlearn_scls(system, splits, class),
        Strategy::SisaGated => unlearn_gated(system, splits, class),
    }
}

fn require(system: &SisaSystem, want: &[Strategy]) -> Result<()> {
    if want.contains(&system.config.strategy) {
        Ok(())
    } else {
        Err(Error::InvalidState(format!(
            "system was trained with {}",
            system.config.strategy.name()
        )))
    }
}

/// Retrain the single full model from scratch without `class`.
pub fn unlearn_baseline(system: &mut SisaSystem, splits: &Splits, class: u32) -> Result<UnlearnOutcome> {
    require(system, &[Strategy::BaselineFull])?;
    remove_class(system, splits, class, true)
}

/// Reinitialize the owning shard and retrain all of its slices.
pub fn unlearn_balanced(system: &mut SisaSystem, splits: &Splits, class: u32) -> Result<UnlearnOutcome> {
    require(system, &[Strategy::SisaBalanced])?;
    remove_class(system, splits, class, true)
}

/// Roll the owning shard back to the checkpoint before the class's first
/// slice and retrain from there with purged replay buffers.
pub fn unlearn_scls(system: &mut SisaSystem, splits: &Splits, class: u32) -> Result<UnlearnOutcome> {
    require(system, &[Strategy::SisaSclsReplay, Strategy::SisaGated])?;
    remove_class(system, splits, class, false)
}

/// As [`unlearn_scls`]; the gating network is left untouched.
pub fn unlearn_gated(system: &mut SisaSystem, splits: &Splits, class: u32) -> Result<UnlearnOutcome> {
    require(system, &[Strategy::SisaGated])?;
    if system.gating.is_none() {
        return Err(Error::InvalidState("gated system has no gating network".into()));
    }
    let before = system.gating.as_ref().map(|g| g.params.digest());
    let out = remove_class(system, splits, class, false)?;
    debug_assert_eq!(before, system.gating.as_ref().map(|g| g.params.digest()));
    Ok(out)
}

fn remove_class(system: &mut SisaSystem, splits: &Splits, class: u32, from_scratch: bool) -> Result<UnlearnOutcome> {
    let name = system
        .class_names
        .get(class as usize)
        .cloned()
        .ok_or_else(|| Error::UnknownClass(format!("{class}; valid classes: {}", system.class_names.join(", "))))?;
    if system.removed.contains(&class) {
        return Err(Error::AlreadyRemoved(name));
    }
    let loc = system
        .plan
        .metadata
        .locate(class)
        .cloned()
        .ok_or_else(|| Error::UnknownClass(format!("{name} has no entry in the metadata table")))?;
    let labels = splits.train.labels();
    let plan = system.plan.without_class(class, labels)?;
    let k = loc.shard_id;
    let surviving = plan
        .assignment(k)
        .expect("shard survives in plan")
        .class_ids
        .clone();
    let cfg = system.config.effective_train();
    let l = plan.l;
    let start_slice = if from_scratch { 0 } else { loc.first_slice };
    let mut warnings = Vec::new();
    let mut seconds = 0.0;
    let mut slice_count = 0;
    let mut samples_processed = 0;
    let decommissioned = surviving.is_empty();

    if decommissioned {
        let shard = system.shard_mut(k).expect("shard exists");
        shard.decommissioned = true;
        warnings.push(format!("shard {k} has no classes left and was decommissioned"));
    } else {
        let shard = system.shard(k).expect("shard exists");
        let start = if start_slice == 0 {
            let arch = shard.checkpoints[0].params.arch().clone();
            let (params, optimizer) = fresh_model(&arch, &surviving, cfg.seed, k, cfg.adam)?;
            ResumePoint {
                params,
                optimizer,
                rng: shard_stream(cfg.seed, k).derive(streams::TRAIN),
            }
        } else {
            let ckpt = shard.checkpoints.get(start_slice - 1).cloned().ok_or_else(|| {
                Error::Integrity(format!("shard {k} is missing the checkpoint of slice {}", start_slice - 1))
            })?;
            let mut point = ResumePoint::from(ckpt);
            let rows = point.params.head_rows(&surviving);
            point.params.select_head_rows(&rows)?;
            point.optimizer.select_head_rows(&rows);
            point
        };
        let mut buffers: Vec<_> = shard.replay.iter().filter(|b| b.slice_index >= start_slice).cloned().collect();
        for b in &mut buffers {
            b.purge(class, labels);
        }
        let source = if from_scratch {
            ReplaySource::Draw {
                ratio: cfg.replay_ratio,
            }
        } else {
            ReplaySource::Given(&buffers)
        };
        let started = Instant::now();
        let run = resume_shard(&plan, k, splits, &cfg, start, start_slice, source)?;
        seconds = started.elapsed().as_secs_f64();
        slice_count = run.slices_trained;
        samples_processed = run.samples_processed();
        let shard = system.shard_mut(k).expect("shard exists");
        shard.checkpoints.truncate(start_slice);
        shard.checkpoints.extend(run.checkpoints);
        shard.replay.truncate(start_slice);
        shard.replay.extend(run.replay);
    }
    system.plan = plan;
    system.removed.push(class);
    if system.live_classes().len() == 1 {
        warnings.push("only one class remains; the task is degenerate".into());
    }

    let ensemble = system.ensemble()?;
    let (verdict, report) = if ensemble.members().is_empty() {
        warnings.push("no constituent model remains; nothing to evaluate".into());
        (None, None)
    } else {
        let v = verify_exact(&ensemble, &splits.test, class)?;
        (Some(v.verdict), Some(v.report))
    };
    Ok(UnlearnOutcome {
        strategy: system.config.strategy,
        class,
        class_name: name,
        shard: k,
        slices_retrained: if decommissioned { [start_slice, start_slice] } else { [start_slice, l] },
        slice_count,
        samples_processed,
        seconds,
        decommissioned,
        verdict,
        report,
        warnings,
    })
}
