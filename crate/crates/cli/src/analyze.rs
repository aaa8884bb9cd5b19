use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gcniii::analysis::{
    attention_density_dense, attention_density_sparse, degree_reports_csv,
    misclassified_degree_report, over_generalization_report, report_file_name, theorem1_probe,
    ProbeNorm,
};
use gcniii::data::{load_bundle, resolve_dataset};
use gcniii::graph::{connected_components, personalized_pagerank_matrix, spectral_report};
use gcniii::output::write_atomic;
use gcniii::trainer::parse_epoch_csv;
use gcniii::Graph;

use crate::run::{read_resolved, run_predictions, seed_dir, RESOLVED};
use crate::{Analysis, NormArg};

fn load(dataset: &str) -> Result<Graph> {
    load_bundle(resolve_dataset(dataset)).with_context(|| format!("loading dataset '{dataset}'"))
}

pub fn analyze_command(a: Analysis) -> Result<bool> {
    match a {
        Analysis::Density {
            dataset,
            alpha,
            threshold,
            out,
        } => density(&dataset, alpha, threshold, out.as_deref()),
        Analysis::Theorem1 {
            dataset,
            alpha,
            lambda,
            kmax,
            hidden,
            seed,
            seeds,
            norm,
            out,
        } => {
            let g = load(&dataset)?;
            let norm = match norm {
                NormArg::Frobenius => ProbeNorm::Frobenius,
                NormArg::Spectral => ProbeNorm::Spectral,
            };
            for s in seed..seed + seeds.max(1) {
                let r = theorem1_probe(&g, alpha, lambda, kmax, hidden, s, norm)?;
                let key = format!(
                    "alpha = {alpha}\nlambda = {lambda}\nkmax = {kmax}\nhidden = {hidden}\nseed = {s}\nnorm = {norm:?}\n"
                );
                let path = out.join(report_file_name("theorem1", g.name(), &key));
                write_atomic(&path, r.csv().as_bytes())?;
                let tail = &r.ratios[r.ratios.len().saturating_sub(20)..];
                let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                println!(
                    "seed {s}: d_1 = {:.3e}, d_{} = {:.3e}, last-20 ratios in [{lo:.4}, {hi:.4}] -> {}",
                    r.diffs[0],
                    r.diffs.len(),
                    r.diffs[r.diffs.len() - 1],
                    path.display()
                );
            }
            Ok(true)
        }
        Analysis::Overgen { run } => overgen(&run),
        Analysis::Degrees { runs, out } => degrees(&runs, &out),
        Analysis::Spectral { dataset } => {
            let g = load(&dataset)?;
            let r = spectral_report(&g.normalized_operator())?;
            println!(
                "operator_norm: {}\nlaplacian_top: {}",
                r.operator_norm, r.laplacian_top
            );
            Ok(true)
        }
    }
}

fn density(dataset: &str, alpha: f64, threshold: f64, out: Option<&Path>) -> Result<bool> {
    let g = load(dataset)?;
    let ghat = g.normalized_operator();
    let dg = attention_density_sparse(&ghat, threshold)?;
    let ppr = personalized_pagerank_matrix(&ghat, alpha)?;
    let dp = attention_density_dense(&ppr, threshold)?;
    println!("ghat_density: {dg:.4}\nppr_density: {dp:.4}");
    if let Some(dir) = out {
        let key = format!("alpha = {alpha}\nthreshold = {threshold}\n");
        let csv = format!("matrix,alpha,threshold,density\nghat,,{threshold},{dg}\nppr,{alpha},{threshold},{dp}\n");
        write_atomic(
            &dir.join(report_file_name("density", g.name(), &key)),
            csv.as_bytes(),
        )?;
    }
    Ok(true)
}

/// Epoch files of a run directory: one per seed when a resolved config is
/// present, otherwise `epochs.csv` directly inside it.
fn epoch_files(run: &Path) -> Result<Vec<(String, PathBuf)>> {
    if run.join(RESOLVED).exists() {
        let cfg = read_resolved(run)?;
        Ok(cfg
            .seeds
            .iter()
            .map(|&s| (format!("seed_{s}"), seed_dir(run, s).join("epochs.csv")))
            .collect())
    } else {
        Ok(vec![("run".into(), run.join("epochs.csv"))])
    }
}

fn overgen(run: &Path) -> Result<bool> {
    for (name, path) in epoch_files(run)? {
        if !path.exists() {
            bail!("missing epoch records: expected {}", path.display());
        }
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let records = parse_epoch_csv(&text, &path)?;
        let report = over_generalization_report(&records)?;
        let key = format!("{}\n{name}\n", path.display());
        let csv_path = run.join(report_file_name("overgen", &name, &key));
        write_atomic(&csv_path, report.csv().as_bytes())?;
        print!("[{name}]\n{}", report.summary());
    }
    Ok(true)
}

fn degrees(runs: &[String], out: &Path) -> Result<bool> {
    let mut reports = Vec::new();
    let mut dataset = String::new();
    let mut key = String::new();
    for spec in runs {
        let (name, dir) = spec
            .split_once('=')
            .with_context(|| format!("expected NAME=DIR, got '{spec}'"))?;
        let mut cfg = read_resolved(Path::new(dir))?;
        cfg.out = PathBuf::from(dir);
        let g = cfg
            .load_graph()
            .with_context(|| format!("loading dataset '{}'", cfg.dataset))?;
        let (pred, test, _) = run_predictions(&cfg, &g, 0)?;
        let r = misclassified_degree_report(&g, &test, &pred)?;
        println!(
            "{name}: {} misclassified, {} with degree <= 2",
            r.misclassified.len(),
            r.low_degree
        );
        dataset = g.name().to_string();
        writeln!(key, "[{name}]\n{}", cfg.to_toml())?;
        reports.push((name.to_string(), r));
    }
    let named: Vec<(&str, _)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let path = out.join(report_file_name("degrees", &dataset, &key));
    write_atomic(&path, degree_reports_csv(&named).as_bytes())?;
    println!("wrote {}", path.display());
    Ok(true)
}

pub fn inspect_command(dataset: &str) -> Result<bool> {
    let g = load(dataset)?;
    let x = g.raw_features();
    let nnz = x.data().iter().filter(|v| **v != 0.0).count();
    let components = connected_components(g.adjacency())
        .into_iter()
        .max()
        .map_or(0, |m| m + 1);
    println!(
        "{} {} {} {}",
        g.num_nodes(),
        g.listed_edges().len(),
        g.num_features(),
        g.num_classes()
    );
    println!("name: {}", g.name());
    println!("unique_edges: {}", g.unique_edge_count());
    println!(
        "feature_density: {}",
        nnz as f64 / x.data().len().max(1) as f64
    );
    println!("components: {components}");
    if g.splits().is_empty() {
        println!("no splits");
    }
    for (name, s) in g.splits() {
        let (a, b, c) = s.sizes();
        println!("split {name}: {a}/{b}/{c}");
    }
    Ok(true)
}
