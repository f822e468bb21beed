//! The strategy x shard/slice benchmark grid and the replay-ratio study.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::evaluate;
use crate::data::Splits;
use crate::ensemble::AggregationMode;
use crate::error::{Error, Result};
use crate::system::{train_system, Strategy, SystemConfig};
use crate::trainer::{write_atomic, TrainConfig};
use crate::unlearner::unlearn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `[K, L]` pairs.
    #[serde(default = "GridConfig::default_setups")]
    pub setups: Vec<[usize; 2]>,
    #[serde(default = "GridConfig::default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "GridConfig::default_replay_ratios")]
    pub replay_ratios: Vec<f64>,
    #[serde(default = "GridConfig::default_replay_setup")]
    pub replay_setup: [usize; 2],
    #[serde(default = "GridConfig::default_seeds")]
    pub seeds: Vec<u64>,
    /// Classes unlearned one at a time per cell; all classes when absent.
    #[serde(default)]
    pub classes: Option<Vec<u32>>,
    #[serde(default)]
    pub aggregation: AggregationMode,
    #[serde(default)]
    pub train: TrainConfig,
}

impl GridConfig {
    fn default_setups() -> Vec<[usize; 2]> {
        vec![[2, 3], [2, 5], [3, 3], [3, 5]]
    }
    fn default_strategies() -> Vec<Strategy> {
        Strategy::ALL.to_vec()
    }
    fn default_replay_ratios() -> Vec<f64> {
        vec![0.2, 0.3, 0.4]
    }
    fn default_replay_setup() -> [usize; 2] {
        [2, 5]
    }
    fn default_seeds() -> Vec<u64> {
        vec![0]
    }

    pub fn cell_count(&self) -> usize {
        self.setups.len() * self.strategies.len() + self.replay_ratios.len()
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            setups: Self::default_setups(),
            strategies: Self::default_strategies(),
            replay_ratios: Self::default_replay_ratios(),
            replay_setup: Self::default_replay_setup(),
            seeds: Self::default_seeds(),
            classes: None,
            aggregation: AggregationMode::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Strategy,
    Replay,
}

/// One grid row: a cell under one seed, or the mean over seeds (`seed` absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub kind: CellKind,
    pub setup: String,
    pub model: String,
    pub seed: Option<u64>,
    pub accuracy: Option<f64>,
    pub train_seconds: Option<f64>,
    pub after_accuracy: Option<f64>,
    pub avg_retrain_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

struct CellSpec {
    kind: CellKind,
    k: usize,
    l: usize,
    strategy: Strategy,
    replay_ratio: f64,
    model: String,
}

impl CellSpec {
    fn setup(&self) -> String {
        format!("{}-{}", self.k, self.l)
    }

    fn file_name(&self, seed: u64) -> String {
        format!("{}__{}__seed{seed}.json", self.setup(), self.model)
    }
}

fn cells(cfg: &GridConfig) -> Vec<CellSpec> {
    let mut out = Vec::new();
    for &[k, l] in &cfg.setups {
        for &strategy in &cfg.strategies {
            out.push(CellSpec {
                kind: CellKind::Strategy,
                k,
                l,
                strategy,
                replay_ratio: cfg.train.replay_ratio,
                model: strategy.name().to_string(),
            });
        }
    }
    let [k, l] = cfg.replay_setup;
    for &rho in &cfg.replay_ratios {
        out.push(CellSpec {
            kind: CellKind::Replay,
            k,
            l,
            strategy: Strategy::SisaSclsReplay,
            replay_ratio: rho,
            model: format!("replay_{rho}"),
        });
    }
    out
}

fn run_cell(spec: &CellSpec, seed: u64, cfg: &GridConfig, splits: &Splits) -> Result<GridRow> {
    let mut sc = SystemConfig::new(
        spec.strategy,
        spec.k,
        spec.l,
        TrainConfig {
            seed,
            replay_ratio: spec.replay_ratio,
            ..cfg.train.clone()
        },
    );
    sc.aggregation = cfg.aggregation;
    let system = train_system(&sc, splits)?;
    let before = evaluate(&system.ensemble()?, &splits.test)?;
    let mut row = GridRow {
        kind: spec.kind,
        setup: spec.setup(),
        model: spec.model.clone(),
        seed: Some(seed),
        accuracy: Some(before.accuracy),
        train_seconds: Some(system.train_seconds),
        after_accuracy: None,
        avg_retrain_seconds: None,
        error: None,
    };
    if spec.kind == CellKind::Replay {
        return Ok(row);
    }
    let classes: Vec<u32> = match &cfg.classes {
        Some(c) => c.clone(),
        None => (0..splits.num_classes() as u32).collect(),
    };
    let (mut acc, mut secs, mut n) = (0.0, 0.0, 0usize);
    for c in classes {
        let mut fresh = system.clone();
        let out = unlearn(&mut fresh, splits, c)?;
        if let Some(r) = out.report {
            acc += r.accuracy;
            n += 1;
        }
        secs += out.seconds;
    }
    if n > 0 {
        row.after_accuracy = Some(acc / n as f64);
        row.avg_retrain_seconds = Some(secs / n as f64);
    }
    Ok(row)
}

fn mean(rows: &[&GridRow], f: impl Fn(&GridRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Run every cell for every seed. A failing cell is recorded and the grid
/// continues. With `out_dir`, each finished cell is written atomically to
/// `out_dir/cells/` and reused on a later run, so an interrupted grid resumes
/// where it stopped. The baseline ignores K and L and is trained once per seed.
pub fn run_benchmark_grid(cfg: &GridConfig, splits: &Splits, out_dir: Option<&Path>) -> Result<GridReport> {
    cfg.train.validate()?;
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument("benchmark needs at least one seed".into()));
    }
    let cell_dir: Option<PathBuf> = out_dir.map(|d| d.join("cells"));
    let mut rows = Vec::new();
    for spec in cells(cfg) {
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let path = cell_dir.as_ref().map(|d| d.join(spec.file_name(seed)));
            if let Some(p) = &path {
                if let Ok(text) = fs::read(p) {
                    if let Ok(row) = serde_json::from_slice::<GridRow>(&text) {
                        per_seed.push(row);
                        continue;
                    }
                }
            }
            let reuse = (spec.strategy == Strategy::BaselineFull && spec.kind == CellKind::Strategy)
                .then(|| {
                    rows.iter().find(|r: &&GridRow| {
                        r.kind == CellKind::Strategy && r.model == spec.model && r.seed == Some(seed) && r.error.is_none()
                    })
                })
                .flatten()
                .cloned();
            let row = match reuse {
                Some(r) => GridRow { setup: spec.setup(), ..r },
                None => run_cell(&spec, seed, cfg, splits).unwrap_or_else(|e| GridRow {
                    kind: spec.kind,
                    setup: spec.setup(),
                    model: spec.model.clone(),
                    seed: Some(seed),
                    accuracy: None,
                    train_seconds: None,
                    after_accuracy: None,
                    avg_retrain_seconds: None,
                    error: Some(format!("{}: {e}", e.kind())),
                }),
            };
            if let (Some(p), None) = (&path, &row.error) {
                let bytes = serde_json::to_vec_pretty(&row).map_err(|e| Error::json("grid cell", e))?;
                write_atomic(p, &bytes)?;
            }
            per_seed.push(row);
        }
        if cfg.seeds.len() > 1 {
            let ok: Vec<&GridRow> = per_seed.iter().filter(|r| r.error.is_none()).collect();
            let mean_row = GridRow {
                kind: spec.kind,
                setup: spec.setup(),
                model: spec.model.clone(),
                seed: None,
                accuracy: mean(&ok, |r| r.accuracy),
                train_seconds: mean(&ok, |r| r.train_seconds),
                after_accuracy: mean(&ok, |r| r.after_accuracy),
                avg_retrain_seconds: mean(&ok, |r| r.avg_retrain_seconds),
                error: ok.is_empty().then(|| "every seed failed".to_string()),
            };
            per_seed.push(mean_row);
        }
        rows.extend(per_seed);
    }
    let report = GridReport { rows };
    if let Some(d) = out_dir {
        let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::json("grid report", e))?;
        write_atomic(&d.join("grid.json"), &json)?;
        write_atomic(&d.join("grid.txt"), report.to_table().as_bytes())?;
    }
    Ok(report)
}

impl GridReport {
    /// Distinct (setup, model) cells.
    pub fn cell_count(&self) -> usize {
        let mut keys: Vec<(&str, &str)> = self.rows.iter().map(|r| (r.setup.as_str(), r.model.as_str())).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = ["Setup", "Model", "Acc%", "T.Time(s)", "A.Acc%", "A.RT(s)"];
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let sec = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut body: Vec<[String; 6]> = Vec::new();
        for r in &self.rows {
            let model = match (r.seed, &r.error) {
                (_, Some(e)) => format!("{} [failed: {e}]", r.model),
                (Some(s), None) => format!("{} [seed {s}]", r.model),
                (None, None) => format!("{} [mean]", r.model),
            };
            body.push([
                r.setup.clone(),
                model,
                pct(r.accuracy),
                sec(r.train_seconds),
                pct(r.after_accuracy),
                sec(r.avg_retrain_seconds),
            ]);
        }
        let mut width = header.map(str::len);
        for row in &body {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(width)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        let _ = writeln!(out, "{}", "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
        for row in &body {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, SplitSpec};
    use crate::nn::Architecture;

    fn splits() -> Splits {
        let ds = generate_synthetic(30, 6, &[6], 4.0, 1).unwrap();
        split(&ds, &SplitSpec::new(0.7, 0.1, 0.2, 2)).unwrap()
    }

    fn tiny() -> GridConfig {
        GridConfig {
            classes: Some(vec![0, 5]),
            train: TrainConfig {
                max_epochs_per_slice: 2,
                batch_size: 16,
                arch: Some(Architecture::Mlp { input: 6, hidden: 4 }),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn default_grid_shape() {
        let s = splits();
        let cfg = tiny();
        assert_eq!(cfg.cell_count(), 19);
        let r = run_benchmark_grid(&cfg, &s, None).unwrap();
        assert_eq!(r.rows.len(), 19);
        assert_eq!(r.cell_count(), 19);
        assert!(r.rows.iter().all(|x| x.error.is_none()));
        let base: Vec<&GridRow> = r.rows.iter().filter(|x| x.model == "baseline_full").collect();
        assert_eq!(base.len(), 4);
        for b in &base {
            assert_eq!((b.accuracy, b.after_accuracy), (base[0].accuracy, base[0].after_accuracy));
        }
        let table = r.to_table();
        assert!(table.lines().next().unwrap().starts_with("Setup  Model"));
        assert_eq!(table.lines().count(), 21);
    }

    #[test]
    fn seeds_add_mean_rows() {
        let s = splits();
        let cfg = GridConfig {
            setups: vec![[2, 2]],
            strategies: vec![Strategy::SisaBalanced],
            replay_ratios: vec![],
            seeds: vec![1, 2, 3],
            ..tiny()
        };
        let r = run_benchmark_grid(&cfg, &s, None).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.rows[3].seed, None);
        let m = (0..3).map(|i| r.rows[i].accuracy.unwrap()).sum::<f64>() / 3.0;
        assert!((r.rows[3].accuracy.unwrap() - m).abs() < 1e-12);
    }

    #[test]
    fn failing_cell_is_recorded() {
        let s = splits();
        let cfg = GridConfig {
            setups: vec![[7, 2], [2, 2]],
            strategies: vec![Strategy::SisaBalanced],
            replay_ratios: vec![],
            ..tiny()
        };
        let r = run_benchmark_grid(&cfg, &s, None).unwrap();
        assert!(r.rows[0].error.as_deref().unwrap().contains("invalid_argument"));
        assert!(r.rows[1].error.is_none());
    }

    #[test]
    fn completed_cells_survive_and_are_reused() {
        let s = splits();
        let dir = tempfile::tempdir().unwrap();
        let cfg = GridConfig {
            setups: vec![[2, 2]],
            strategies: vec![Strategy::SisaBalanced, Strategy::SisaSclsReplay],
            replay_ratios: vec![],
            ..tiny()
        };
        let first = run_benchmark_grid(&cfg, &s, Some(dir.path())).unwrap();
        let cell = dir.path().join("cells").join("2-2__sisa_balanced__seed0.json");
        let mut row: GridRow = serde_json::from_slice(&fs::read(&cell).unwrap()).unwrap();
        row.train_seconds = Some(123.0);
        fs::write(&cell, serde_json::to_vec(&row).unwrap()).unwrap();
        let second = run_benchmark_grid(&cfg, &s, Some(dir.path())).unwrap();
        assert_eq!(second.rows[0].train_seconds, Some(123.0));
        assert_eq!(second.rows[1], first.rows[1]);
        assert!(dir.path().join("grid.txt").exists());
    }
}
