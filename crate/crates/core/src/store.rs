//! On-disk run directory.
//!
//! ```text
//! <run>/config.json              system configuration
//! <run>/plan.json                current partition plan
//! <run>/shards/<k>/slice_<l>.ckpt  (+ .json sidecar)
//! <run>/shards/<k>/replay.json   replay buffer of every slice
//! <run>/gating.ckpt              (+ .json sidecar), gated runs only
//! <run>/manifest.json            ensemble manifest, written last
//! <run>/reports/                 evaluation and unlearning reports
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place. The
//! manifest records the digest of every checkpoint it references, so a reader
//! holding an older manifest detects a checkpoint replaced underneath it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{AggregationMode, GatingModel};
use crate::error::{Error, Result};
use crate::partition::PartitionPlan;
use crate::rng::{streams, RngState};
use crate::system::{ShardState, SisaSystem, Strategy, SystemConfig};
use crate::trainer::{load_checkpoint, save_checkpoint, write_atomic, Checkpoint, FitStats, ReplayBuffer, TrainCursor};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    /// Relative to the run directory.
    pub path: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub shard_id: usize,
    pub checkpoint: String,
    /// Head position -> global class id.
    pub output_classes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub shard_id: usize,
    pub decommissioned: bool,
    pub checkpoints: Vec<CheckpointRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingEntry {
    pub checkpoint: CheckpointRef,
    pub stats: FitStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    /// Incremented on every update.
    pub generation: u64,
    pub strategy: Strategy,
    pub aggregation: AggregationMode,
    pub class_names: Vec<String>,
    pub removed: Vec<u32>,
    pub train_seconds: f64,
    /// Deployed constituent models.
    pub members: Vec<MemberEntry>,
    pub gating: Option<GatingEntry>,
    pub shards: Vec<ShardEntry>,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

fn hex(d: u64) -> String {
    format!("{d:016x}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(format!("serializing {}", path.display()), e))?;
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(format!("parsing {}", path.display()), e))
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn plan_path(&self) -> PathBuf {
        self.root.join("plan.json")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn slice_rel(shard: usize, slice: usize) -> String {
        format!("shards/{shard}/slice_{slice}.ckpt")
    }

    fn replay_path(&self, shard: usize) -> PathBuf {
        self.root.join(format!("shards/{shard}/replay.json"))
    }

    pub fn exists(&self) -> bool {
        self.manifest_path().is_file()
    }

    pub fn read_manifest(&self) -> Result<RunManifest> {
        let m: RunManifest = read_json(&self.manifest_path())?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(m)
    }

    pub fn write_plan(&self, plan: &PartitionPlan) -> Result<()> {
        write_atomic(&self.plan_path(), plan.to_json()?.as_bytes())
    }

    fn gating_checkpoint(system: &SisaSystem, g: &GatingModel) -> Checkpoint {
        Checkpoint::new(
            g.params.clone(),
            g.optimizer.clone(),
            TrainCursor {
                shard_id: 0,
                slice_index: 0,
                epoch: g.stats.best_epoch,
            },
            RngState::new(system.config.train.seed).derive(streams::GATING),
        )
    }

    fn write_shard(&self, shard: &ShardState, previous: Option<&ShardEntry>) -> Result<ShardEntry> {
        let mut refs = Vec::with_capacity(shard.checkpoints.len());
        for (i, c) in shard.checkpoints.iter().enumerate() {
            let rel = Self::slice_rel(shard.shard_id, i);
            let digest = hex(c.digest);
            let unchanged = previous
                .and_then(|p| p.checkpoints.get(i))
                .is_some_and(|r| r.path == rel && r.digest == digest);
            if !unchanged {
                save_checkpoint(c, self.root.join(&rel))?;
            }
            refs.push(CheckpointRef { path: rel, digest });
        }
        write_json(&self.replay_path(shard.shard_id), &shard.replay)?;
        Ok(ShardEntry {
            shard_id: shard.shard_id,
            decommissioned: shard.decommissioned,
            checkpoints: refs,
        })
    }

    fn manifest(&self, system: &SisaSystem, shards: Vec<ShardEntry>, gating: Option<GatingEntry>, generation: u64) -> RunManifest {
        let members = system
            .shards
            .iter()
            .zip(&shards)
            .filter_map(|(s, e)| {
                s.deployed().map(|c| MemberEntry {
                    shard_id: s.shard_id,
                    checkpoint: e.checkpoints.last().expect("deployed shard has checkpoints").path.clone(),
                    output_classes: c.params.output_classes().to_vec(),
                })
            })
            .collect();
        RunManifest {
            version: MANIFEST_VERSION,
            generation,
            strategy: system.config.strategy,
            aggregation: system.config.aggregation,
            class_names: system.class_names.clone(),
            removed: system.removed.clone(),
            train_seconds: system.train_seconds,
            members,
            gating,
            shards,
        }
    }

    /// Write a freshly trained system.
    pub fn save_system(&self, system: &SisaSystem) -> Result<RunManifest> {
        write_json(&self.config_path(), &system.config)?;
        self.write_plan(&system.plan)?;
        let shards = system
            .shards
            .iter()
            .map(|s| self.write_shard(s, None))
            .collect::<Result<Vec<_>>>()?;
        let gating = match &system.gating {
            Some(g) => {
                let ck = Self::gating_checkpoint(system, g);
                save_checkpoint(&ck, self.root.join("gating.ckpt"))?;
                Some(GatingEntry {
                    checkpoint: CheckpointRef {
                        path: "gating.ckpt".into(),
                        digest: hex(ck.digest),
                    },
                    stats: g.stats.clone(),
                })
            }
            None => None,
        };
        fs::create_dir_all(self.reports_dir()).map_err(|e| Error::io("creating reports directory", e))?;
        let m = self.manifest(system, shards, gating, 0);
        write_json(&self.manifest_path(), &m)?;
        Ok(m)
    }

    /// Persist the result of an unlearning request: rewrite the changed
    /// checkpoints of `shard_id` only, then swap in the new plan and manifest.
    pub fn save_update(&self, system: &SisaSystem, shard_id: usize) -> Result<RunManifest> {
        let old = self.read_manifest()?;
        let mut shards = old.shards.clone();
        let state = system
            .shard(shard_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no shard {shard_id}")))?;
        let pos = shards
            .iter()
            .position(|e| e.shard_id == shard_id)
            .ok_or_else(|| Error::Integrity(format!("manifest has no shard {shard_id}")))?;
        shards[pos] = self.write_shard(state, Some(&old.shards[pos]))?;
        self.write_plan(&system.plan)?;
        let m = self.manifest(system, shards, old.gating.clone(), old.generation + 1);
        write_json(&self.manifest_path(), &m)?;
        Ok(m)
    }

    fn load_verified(&self, r: &CheckpointRef) -> Result<Checkpoint> {
        let c = load_checkpoint(self.root.join(&r.path))?;
        if hex(c.digest) != r.digest {
            return Err(Error::Integrity(format!(
                "{} has digest {}, manifest expects {}",
                r.path,
                hex(c.digest),
                r.digest
            )));
        }
        Ok(c)
    }

    /// Rebuild the system the manifest describes, verifying every checkpoint.
    pub fn load_system(&self) -> Result<SisaSystem> {
        let m = self.read_manifest()?;
        let config: SystemConfig = read_json(&self.config_path())?;
        let plan_text = fs::read_to_string(self.plan_path()).map_err(|e| Error::io("reading plan.json", e))?;
        let plan = PartitionPlan::from_json(&plan_text)?;
        let mut shards = Vec::with_capacity(m.shards.len());
        for e in &m.shards {
            let checkpoints = e
                .checkpoints
                .iter()
                .map(|r| self.load_verified(r))
                .collect::<Result<Vec<_>>>()?;
            let replay: Vec<ReplayBuffer> = read_json(&self.replay_path(e.shard_id))?;
            shards.push(ShardState {
                shard_id: e.shard_id,
                checkpoints,
                replay,
                decommissioned: e.decommissioned,
            });
        }
        let gating = match &m.gating {
            Some(g) => {
                let c = self.load_verified(&g.checkpoint)?;
                Some(GatingModel {
                    params: c.params,
                    optimizer: c.optimizer,
                    stats: g.stats.clone(),
                })
            }
            None => None,
        };
        Ok(SisaSystem {
            config,
            plan,
            shards,
            gating,
            class_names: m.class_names,
            removed: m.removed,
            train_seconds: m.train_seconds,
        })
    }

    /// Write a report under `reports/`.
    pub fn write_report<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let p = self.reports_dir().join(name);
        write_json(&p, value)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, SplitSpec, Splits};
    use crate::nn::Architecture;
    use crate::system::train_system;
    use crate::trainer::TrainConfig;
    use crate::unlearner::unlearn;

    fn fixture(strategy: Strategy) -> (Splits, SisaSystem) {
        let ds = generate_synthetic(40, 4, &[6], 4.0, 3).unwrap();
        let s = split(&ds, &SplitSpec::new(0.7, 0.1, 0.2, 1)).unwrap();
        let cfg = SystemConfig::new(
            strategy,
            2,
            3,
            TrainConfig {
                max_epochs_per_slice: 2,
                arch: Some(Architecture::Mlp { input: 6, hidden: 8 }),
                ..Default::default()
            },
        );
        let sys = train_system(&cfg, &s).unwrap();
        (s, sys)
    }

    #[test]
    fn layout_and_roundtrip() {
        let (_, sys) = fixture(Strategy::SisaGated);
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let m = store.save_system(&sys).unwrap();
        for k in 0..2 {
            for l in 0..3 {
                assert!(dir.path().join(format!("shards/{k}/slice_{l}.ckpt")).is_file());
                assert!(dir.path().join(format!("shards/{k}/slice_{l}.json")).is_file());
            }
        }
        assert!(dir.path().join("gating.ckpt").is_file());
        assert!(dir.path().join("plan.json").is_file());
        assert_eq!(m.members.len(), 2);
        let back = store.load_system().unwrap();
        assert_eq!(back.shards, sys.shards);
        assert_eq!(back.gating, sys.gating);
        assert_eq!(back.plan, sys.plan);
        assert_eq!(back.config, sys.config);
    }

    #[test]
    fn update_touches_only_the_affected_shard() {
        let (s, mut sys) = fixture(Strategy::SisaGated);
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        store.save_system(&sys).unwrap();
        let snapshot = |k: usize| -> Vec<Vec<u8>> {
            (0..3).map(|l| fs::read(dir.path().join(format!("shards/{k}/slice_{l}.ckpt"))).unwrap()).collect()
        };
        let gate_before = fs::read(dir.path().join("gating.ckpt")).unwrap();
        let other_before = snapshot(1 - sys.plan.metadata.shard_of(3).unwrap());
        let out = unlearn(&mut sys, &s, 3).unwrap();
        let m = store.save_update(&sys, out.shard).unwrap();
        assert_eq!(m.generation, 1);
        assert_eq!(m.removed, vec![3]);
        assert_eq!(snapshot(1 - out.shard), other_before);
        assert_eq!(fs::read(dir.path().join("gating.ckpt")).unwrap(), gate_before);
        let back = store.load_system().unwrap();
        assert_eq!(back.shards, sys.shards);
        assert_eq!(back.removed, vec![3]);
    }

    #[test]
    fn tampered_checkpoint_is_detected() {
        let (_, sys) = fixture(Strategy::SisaSclsReplay);
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        store.save_system(&sys).unwrap();
        let p = dir.path().join("shards/0/slice_1.ckpt");
        let mut b = fs::read(&p).unwrap();
        let n = b.len();
        b[n / 2] ^= 0x40;
        fs::write(&p, b).unwrap();
        assert!(matches!(store.load_system(), Err(Error::Integrity(_))));
    }
}
