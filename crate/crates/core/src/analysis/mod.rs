//! Diagnostic studies: over-generalisation, attention density, the deep-limit
//! probe, ablations and degrees of misclassified nodes.

mod ablation;
mod theorem1;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

pub use ablation::{ablation_csv, run_ablation, AblationPlan, AblationRow, Change, Technique};
pub use theorem1::{
    dense_spectral_norm, probe_weights, theorem1_probe, theorem1_probe_with, ProbeNorm,
    Theorem1Report,
};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{degree_histogram, Graph, SparseOperator};
use crate::trainer::EpochRecord;

/// Number of trailing epochs averaged by [`over_generalization_report`].
pub const OVERGEN_WINDOW: usize = 50;
pub const OVERFIT_THRESHOLD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Training error above validation error on average.
    OverGeneralizing,
    OverFitting,
    Balanced,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::OverGeneralizing => "over-generalizing",
            Regime::OverFitting => "over-fitting",
            Regime::Balanced => "balanced",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverGenReport {
    /// Mean of `train_err − val_err` over the window.
    pub delta: f64,
    pub regime: Regime,
    /// Epochs actually averaged.
    pub window: usize,
    /// Set when fewer than [`OVERGEN_WINDOW`] epochs were recorded.
    pub short: bool,
    pub epochs: Vec<usize>,
    pub train_err: Vec<f64>,
    pub val_err: Vec<f64>,
}

pub fn over_generalization_report(records: &[EpochRecord]) -> Result<OverGenReport> {
    if records.is_empty() {
        return Err(Error::Parameter("no epoch records".into()));
    }
    let window = records.len().min(OVERGEN_WINDOW);
    let tail = &records[records.len() - window..];
    let delta = tail.iter().map(|r| r.train_err - r.val_err).sum::<f64>() / window as f64;
    let regime = if delta > 0.0 {
        Regime::OverGeneralizing
    } else if delta < -OVERFIT_THRESHOLD {
        Regime::OverFitting
    } else {
        Regime::Balanced
    };
    Ok(OverGenReport {
        delta,
        regime,
        window,
        short: records.len() < OVERGEN_WINDOW,
        epochs: records.iter().map(|r| r.epoch).collect(),
        train_err: records.iter().map(|r| r.train_err).collect(),
        val_err: records.iter().map(|r| r.val_err).collect(),
    })
}

impl OverGenReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("epoch,train_err,val_err\n");
        for ((e, t), v) in self.epochs.iter().zip(&self.train_err).zip(&self.val_err) {
            writeln!(s, "{e},{t},{v}").unwrap();
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "delta: {}\nregime: {}\nwindow: {}\nshort_series: {}\n",
            self.delta,
            self.regime.as_str(),
            self.window,
            self.short
        )
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Parameter(format!(
            "density threshold must be >= 0, got {threshold}"
        )));
    }
    Ok(())
}

/// Fraction of entries with `|v| > threshold`.
pub fn attention_density_dense(m: &DenseMatrix, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    let total = m.data().len();
    if total == 0 {
        return Ok(0.0);
    }
    let hits = m.data().iter().filter(|v| v.abs() > threshold).count();
    Ok(hits as f64 / total as f64)
}

/// Fraction of entries with `|v| > threshold`; implicit zeros count as below.
pub fn attention_density_sparse(op: &SparseOperator, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    let total = op.rows() * op.cols();
    if total == 0 {
        return Ok(0.0);
    }
    let hits = op.values().iter().filter(|v| v.abs() > threshold).count();
    Ok(hits as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DegreeReport {
    pub misclassified: Vec<usize>,
    pub histogram: BTreeMap<usize, usize>,
    /// Misclassified nodes of degree at most 2.
    pub low_degree: usize,
}

/// Degrees of misclassified `nodes` under `predictions` (one class per node).
pub fn misclassified_degree_report(
    graph: &Graph,
    nodes: &[usize],
    predictions: &[usize],
) -> Result<DegreeReport> {
    if predictions.len() != graph.num_nodes() {
        return Err(Error::dim(
            "misclassified_degree_report",
            format!(
                "{} predictions for {} nodes",
                predictions.len(),
                graph.num_nodes()
            ),
        ));
    }
    let labels = graph.labels();
    let wrong: Vec<usize> = nodes
        .iter()
        .copied()
        .filter(|&i| predictions[i] != labels[i])
        .collect();
    let histogram = degree_histogram(graph, &wrong)?;
    let low_degree = histogram.range(..=2).map(|(_, c)| c).sum();
    Ok(DegreeReport {
        misclassified: wrong,
        histogram,
        low_degree,
    })
}

/// Side-by-side degree histogram CSV for named reports.
pub fn degree_reports_csv(reports: &[(&str, &DegreeReport)]) -> String {
    let mut degrees: Vec<usize> = reports
        .iter()
        .flat_map(|(_, r)| r.histogram.keys().copied())
        .collect();
    degrees.sort_unstable();
    degrees.dedup();
    let mut s = String::from("degree");
    for (name, _) in reports {
        write!(s, ",{name}").unwrap();
    }
    s.push('\n');
    for d in degrees {
        write!(s, "{d}").unwrap();
        for (_, r) in reports {
            write!(s, ",{}", r.histogram.get(&d).copied().unwrap_or(0)).unwrap();
        }
        s.push('\n');
    }
    s
}

/// First 12 hex digits of the SHA-256 of a configuration's text form.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(6).fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// `<analysis>.<dataset>.<confighash>.csv`
pub fn report_file_name(analysis: &str, dataset: &str, config_text: &str) -> String {
    format!("{analysis}.{dataset}.{}.csv", config_hash(config_text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, t: f64, v: f64) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 0.0,
            train_err: t,
            val_loss: 0.0,
            val_err: v,
        }
    }

    #[test]
    fn overgen_classification() {
        let same: Vec<_> = (1..=60).map(|e| rec(e, 0.3, 0.3)).collect();
        let r = over_generalization_report(&same).unwrap();
        assert_eq!(
            (r.delta, r.regime, r.window, r.short),
            (0.0, Regime::Balanced, 50, false)
        );

        let over: Vec<_> = (1..=60).map(|e| rec(e, 0.4, 0.2)).collect();
        assert_eq!(
            over_generalization_report(&over).unwrap().regime,
            Regime::OverGeneralizing
        );

        let fit: Vec<_> = (1..=60).map(|e| rec(e, 0.0, 0.2)).collect();
        assert_eq!(
            over_generalization_report(&fit).unwrap().regime,
            Regime::OverFitting
        );

        let mild: Vec<_> = (1..=60).map(|e| rec(e, 0.19, 0.2)).collect();
        assert_eq!(
            over_generalization_report(&mild).unwrap().regime,
            Regime::Balanced
        );

        // Only the final window counts.
        let mut mixed: Vec<_> = (1..=10).map(|e| rec(e, 1.0, 0.0)).collect();
        mixed.extend((11..=60).map(|e| rec(e, 0.0, 0.5)));
        assert!((over_generalization_report(&mixed).unwrap().delta + 0.5).abs() < 1e-15);

        let short = over_generalization_report(&[rec(1, 0.5, 0.25), rec(2, 0.5, 0.25)]).unwrap();
        assert!(short.short);
        assert_eq!(short.window, 2);
        assert_eq!(short.delta, 0.25);
        assert!(over_generalization_report(&[]).is_err());
    }

    #[test]
    fn density_of_identity() {
        let n = 7;
        assert_eq!(
            attention_density_dense(&DenseMatrix::identity(n), 0.0).unwrap(),
            1.0 / 7.0
        );
        assert_eq!(
            attention_density_sparse(&SparseOperator::identity(n), 0.0).unwrap(),
            1.0 / 7.0
        );
        assert!(attention_density_dense(&DenseMatrix::identity(n), -1.0).is_err());
        assert_eq!(
            attention_density_dense(&DenseMatrix::identity(n), 1.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn file_naming() {
        let a = report_file_name("theorem1", "cora", "alpha = 0.1\n");
        assert!(a.starts_with("theorem1.cora.") && a.ends_with(".csv"));
        assert_eq!(a.len(), "theorem1.cora.".len() + 12 + 4);
        assert_ne!(a, report_file_name("theorem1", "cora", "alpha = 0.2\n"));
        // SHA-256 of the empty string starts with e3b0c44298fc.
        assert_eq!(config_hash(""), "e3b0c44298fc");
    }
}
