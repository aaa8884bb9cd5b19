use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gcniii::analysis::{ablation_csv, config_hash, report_file_name, run_ablation, AblationPlan};
use gcniii::checkpoint::Checkpoint;
use gcniii::config::{resolve_run_config, RunConfig};
use gcniii::data::{contextual_sbm, make_semi_split, save_bundle, CsbmParams, SEMI_SPLIT};
use gcniii::models::{infer, Arch};
use gcniii::output::write_atomic;
use gcniii::trainer::{evaluate, write_run_artifacts, TrainResult};
use gcniii::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{AblationKind, RunArgs};

pub const RESOLVED: &str = "config.resolved";

/// Flags are applied last, and win over every other layer.
pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(p) => Some(
            fs::read_to_string(p)
                .with_context(|| format!("reading config file {}", p.display()))?,
        ),
        None => None,
    };
    let mut cfg = resolve_run_config(args.preset.as_deref(), file.as_deref(), &args.sets)?;
    if let Some(d) = &args.dataset {
        cfg.dataset = d.clone();
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(s) = &args.seeds {
        cfg.apply_seed_spec(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_graph(cfg: &RunConfig) -> Result<Graph> {
    cfg.load_graph()
        .with_context(|| format!("loading dataset '{}'", cfg.dataset))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn save_run(cfg: &RunConfig, graph: &Graph, run: usize, result: &TrainResult) -> Result<()> {
    let dir = seed_dir(&cfg.out, cfg.seeds[run]);
    let mut train = cfg.train.clone();
    train.seed = cfg.seeds[run];
    write_run_artifacts(&dir, result, &cfg.model, &train, graph.name())?;
    Checkpoint::from_state(&cfg.model, &result.state).save(&dir.join("model.ckpt"))?;
    Ok(())
}

/// Trains every seed with up to `workers` runs in flight. Returns whether all
/// seeds completed.
pub fn train_command(args: &RunArgs, workers: usize) -> Result<bool> {
    let cfg = resolve(args)?;
    let graph = load_graph(&cfg)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_atomic(&cfg.out.join(RESOLVED), cfg.to_toml().as_bytes())?;

    let one = |run: usize| -> Result<TrainResult> {
        let result = cfg.run(&graph, run)?;
        save_run(&cfg, &graph, run, &result)?;
        eprintln!(
            "seed {}: test {:.4} (best epoch {}, {} epochs)",
            cfg.seeds[run],
            result.test_metric,
            result.best_epoch,
            result.epochs_run()
        );
        Ok(result)
    };
    let runs: Vec<usize> = (0..cfg.seeds.len()).collect();
    let results: Vec<Result<TrainResult>> = if workers <= 1 {
        runs.iter().map(|&r| one(r)).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building worker pool")?
            .install(|| runs.par_iter().map(|&r| one(r)).collect())
    };

    let mut values = Vec::new();
    let mut summary = String::new();
    writeln!(summary, "dataset: {}", graph.name())?;
    if let Some(p) = &cfg.preset {
        writeln!(summary, "preset: {p}")?;
    }
    writeln!(summary, "task: {}", cfg.task.as_str())?;
    for (run, r) in results.iter().enumerate() {
        match r {
            Ok(r) => {
                values.push(r.test_metric);
                writeln!(summary, "seed_{}: {}", cfg.seeds[run], r.test_metric)?;
            }
            Err(e) => {
                eprintln!("seed {} failed: {e:#}", cfg.seeds[run]);
                writeln!(summary, "seed_{}: failed", cfg.seeds[run])?;
            }
        }
    }
    let total = cfg.seeds.len();
    writeln!(summary, "completed: {}/{total}", values.len())?;
    if !values.is_empty() {
        let (mean, std) = mean_std(&values);
        writeln!(summary, "mean: {mean}\nstd: {std}")?;
        println!(
            "{}: {:.2} ± {:.2} over {}/{total} seeds",
            metric_name(&cfg),
            100.0 * mean,
            100.0 * std,
            values.len()
        );
    }
    write_atomic(&cfg.out.join("summary.txt"), summary.as_bytes())?;
    Ok(values.len() == total)
}

fn metric_name(cfg: &RunConfig) -> &'static str {
    match cfg.train.eval_metric {
        gcniii::trainer::EvalMetric::Accuracy => "test accuracy",
        gcniii::trainer::EvalMetric::MicroF1 => "test micro-F1",
    }
}

pub fn read_resolved(run: &Path) -> Result<RunConfig> {
    let path = run.join(RESOLVED);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("expected run configuration at {}", path.display()))?;
    Ok(resolve_run_config(None, Some(&text), &[])?)
}

/// Test predictions of the `run`-th seed's checkpoint.
pub fn run_predictions(
    cfg: &RunConfig,
    graph: &Graph,
    run: usize,
) -> Result<(Vec<usize>, Vec<usize>, f64)> {
    let seed = cfg.seeds[run];
    let path = seed_dir(&cfg.out, seed).join("model.ckpt");
    let ck = Checkpoint::load(&path)
        .with_context(|| format!("expected checkpoint at {}", path.display()))?;
    let g = cfg.prepare_graph(graph, seed)?;
    let mut state = ck.into_state(&g)?;
    let logits = infer(&g, &mut state, &ck.config)?;
    let split = cfg.split(graph, run)?;
    let metric = evaluate(&logits, g.labels(), &split.test, cfg.train.eval_metric)?;
    let (pred, _) = gcniii::models::predict(&logits);
    Ok((pred, split.test, metric))
}

pub fn eval_command(run: &Path, dataset: Option<&str>) -> Result<bool> {
    let mut cfg = read_resolved(run)?;
    cfg.out = run.to_path_buf();
    if let Some(d) = dataset {
        cfg.dataset = d.into();
    }
    let graph = load_graph(&cfg)?;
    let mut values = Vec::new();
    for i in 0..cfg.seeds.len() {
        let (_, _, m) = run_predictions(&cfg, &graph, i)?;
        println!("seed {}: {m}", cfg.seeds[i]);
        values.push(m);
    }
    let (mean, std) = mean_std(&values);
    println!(
        "{}: {:.2} ± {:.2}",
        metric_name(&cfg),
        100.0 * mean,
        100.0 * std
    );
    Ok(true)
}

pub fn ablate_command(args: &RunArgs, kind: Option<AblationKind>) -> Result<bool> {
    let cfg = resolve(args)?;
    let mut graph = load_graph(&cfg)?;
    graph = cfg.prepare_graph(&graph, cfg.seeds[0])?;
    let kind = kind.unwrap_or(if cfg.model.arch == Arch::Gcniii {
        AblationKind::Techniques
    } else {
        AblationKind::Wide
    });
    let plan = match kind {
        AblationKind::Techniques => {
            AblationPlan::techniques(cfg.model.clone(), cfg.train.clone(), cfg.seeds.clone())
        }
        AblationKind::Wide => {
            AblationPlan::wide(cfg.model.clone(), cfg.train.clone(), cfg.seeds.clone())
        }
    };
    let split = cfg.split(&graph, 0)?;
    let rows = run_ablation(&plan, &graph, &split)?;
    for r in &rows {
        println!(
            "{:<6} {:6.2} {:+6.2}",
            r.change.to_string(),
            100.0 * r.mean,
            100.0 * r.delta
        );
    }
    let text = cfg.to_toml();
    let path = cfg
        .out
        .join(report_file_name("ablation", graph.name(), &text));
    write_atomic(&path, ablation_csv(&rows, &cfg.seeds).as_bytes())?;
    write_atomic(
        &cfg.out.join(format!(
            "ablation.{}.{}.resolved",
            graph.name(),
            config_hash(&text)
        )),
        text.as_bytes(),
    )?;
    println!("wrote {}", path.display());
    Ok(true)
}

pub fn generate_command(out: &Path, name: &str, params: &CsbmParams, seed: u64) -> Result<bool> {
    let mut g = contextual_sbm(name, params, seed)?;
    match make_semi_split(&g, &mut ChaCha8Rng::seed_from_u64(seed)) {
        Ok(s) => g.insert_split(SEMI_SPLIT, s)?,
        Err(e) => eprintln!("no semi split written: {e}"),
    }
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        bail!("{} exists and is not empty", out.display());
    }
    save_bundle(&g, out)?;
    println!(
        "wrote {} ({} nodes, {} edges)",
        out.display(),
        g.num_nodes(),
        g.listed_edges().len()
    );
    Ok(true)
}
