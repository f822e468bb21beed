use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sisa_core::report::ConfigTag;
use sisa_core::trainer::write_atomic;
use sisa_core::{
    evaluate, run_benchmark_grid, train_system, unlearn, verify_exact, PartitionPlan, RunStore, Strategy,
};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::{Cli, Command};

const DEFAULT_OUT: &str = "sisa-run";
const RUN_CONFIG: &str = "run_config.json";

fn io(context: impl std::fmt::Display, e: std::io::Error) -> Failure {
    Failure::new("io", format!("{context}: {e}"))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::new("json", e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = to_json(value)?;
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn thread_cap() -> Result<Option<usize>, Failure> {
    match env::var("SISA_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Failure::new("config", format!("SISA_THREADS: {v:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Config file (or defaults) with flag overrides applied and validated.
fn load_config(cli: &Cli, strategy: Option<Strategy>) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = strategy {
        cfg.strategy = s;
        if cfg.policy.is_some_and(|p| p != s.policy()) {
            cfg.policy = None;
        }
    }
    let cfg = cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn run_dir(cli: &Cli, run: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    if let Some(r) = run {
        return Ok(r.clone());
    }
    let cfg = match &cli.config {
        Some(p) => Some(RunConfig::load(p)?),
        None => None,
    };
    Ok(out_dir(cli, cfg.as_ref()))
}

pub fn run(cli: &Cli) -> Result<String, Failure> {
    match &cli.command {
        Command::Plan { strategy } => plan(cli, *strategy),
        Command::Train { strategy } => train(cli, *strategy),
        Command::Unlearn { class, run } => unlearn_class(&run_dir(cli, run)?, class),
        Command::Eval { run } => eval(&run_dir(cli, run)?),
        Command::Bench { seeds } => bench(cli, *seeds),
    }
}

fn plan(cli: &Cli, strategy: Option<Strategy>) -> Result<String, Failure> {
    let cfg = load_config(cli, strategy)?;
    let splits = cfg.splits()?;
    let (k, l) = cfg.strategy.layout(cfg.k, cfg.l);
    let plan = PartitionPlan::build(splits.train.labels(), splits.num_classes(), k, l, cfg.strategy.policy())?;
    let out = out_dir(cli, Some(&cfg));
    fs::create_dir_all(&out).map_err(|e| io(format!("creating {}", out.display()), e))?;
    let path = out.join("plan.json");
    write_atomic(&path, plan.to_json()?.as_bytes())?;
    to_json(&json!({
        "plan": path,
        "K": plan.k,
        "L": plan.l,
        "policy": plan.policy,
        "imbalance_ratio": plan.imbalance_ratio,
    }))
}

fn train(cli: &Cli, strategy: Option<Strategy>) -> Result<String, Failure> {
    let cfg = load_config(cli, strategy)?;
    let splits = cfg.splits()?;
    let system = train_system(&cfg.system_config(thread_cap()?), &splits)?;
    let out = out_dir(cli, Some(&cfg));
    for stale in ["shards", "reports"] {
        let p = out.join(stale);
        if p.is_dir() {
            fs::remove_dir_all(&p).map_err(|e| io(format!("clearing {}", p.display()), e))?;
        }
    }
    let gating_path = out.join("gating.ckpt");
    for p in [gating_path.clone(), gating_path.with_extension("ckpt.json")] {
        if p.is_file() {
            fs::remove_file(&p).map_err(|e| io(format!("removing {}", p.display()), e))?;
        }
    }
    let store = RunStore::new(&out);
    let manifest = store.save_system(&system)?;
    write_json(&out.join(RUN_CONFIG), &cfg)?;

    let mut report = evaluate(&system.ensemble()?, &splits.test)?;
    report.train_seconds = Some(system.train_seconds);
    report.tag = Some(ConfigTag {
        k: system.plan.k,
        l: system.plan.l,
        strategy: cfg.strategy.name().to_string(),
        replay_ratio: system.config.effective_train().replay_ratio,
    });
    store.write_report("before.json", &report)?;
    let checkpoints: usize = manifest.shards.iter().map(|s| s.checkpoints.len()).sum();
    to_json(&json!({
        "run": out,
        "strategy": cfg.strategy,
        "K": system.plan.k,
        "L": system.plan.l,
        "slice_checkpoints": checkpoints,
        "gating_checkpoint": manifest.gating.is_some(),
        "accuracy": report.accuracy,
        "train_seconds": system.train_seconds,
    }))
}

fn stored_config(dir: &Path) -> Result<RunConfig, Failure> {
    let store = RunStore::new(dir);
    if !store.exists() {
        return Err(Failure::new(
            "invalid_state",
            format!("{} is not a run directory (no manifest.json)", dir.display()),
        ));
    }
    RunConfig::load(&dir.join(RUN_CONFIG))
}

fn unlearn_class(dir: &Path, class: &str) -> Result<String, Failure> {
    let cfg = stored_config(dir)?;
    let store = RunStore::new(dir);
    let mut system = store.load_system()?;
    let id = system.resolve_class(class)?;
    let splits = cfg.splits()?;
    let outcome = unlearn(&mut system, &splits, id)?;
    store.save_update(&system, outcome.shard)?;
    let name = outcome.class_name.replace(|c: char| !c.is_ascii_alphanumeric() && c != '_' && c != '-', "_");
    store.write_report(&format!("unlearn_{name}.json"), &outcome)?;
    to_json(&outcome)
}

fn eval(dir: &Path) -> Result<String, Failure> {
    let cfg = stored_config(dir)?;
    let store = RunStore::new(dir);
    let system = store.load_system()?;
    let splits = cfg.splits()?;
    let model = system.ensemble()?;
    if model.members().is_empty() {
        return Err(Failure::new("invalid_state", "every shard has been decommissioned"));
    }
    let report = evaluate(&model, &splits.test)?;
    let removed = system
        .removed
        .iter()
        .map(|&c| {
            verify_exact(&model, &splits.test, c).map(|v| {
                json!({
                    "class": c,
                    "class_name": system.class_names[c as usize],
                    "verdict": v.verdict,
                    "predicted_as_class": v.predicted_as_class,
                })
            })
        })
        .collect::<sisa_core::Result<Vec<_>>>()?;
    let doc = json!({ "report": report, "removed": removed });
    store.write_report("eval.json", &doc)?;
    to_json(&json!({
        "run": dir,
        "accuracy": report.accuracy,
        "samples": report.samples,
        "removed": removed,
    }))
}

fn bench(cli: &Cli, seeds: Option<usize>) -> Result<String, Failure> {
    if seeds == Some(0) {
        return Err(Failure::new("usage", "--seeds must be at least 1"));
    }
    let cfg = load_config(cli, None)?;
    let splits = cfg.splits()?;
    let grid = cfg.grid_config(seeds);
    let out = out_dir(cli, Some(&cfg)).join("bench");
    let report = run_benchmark_grid(&grid, &splits, Some(&out))?;
    Ok(report.to_table())
}
