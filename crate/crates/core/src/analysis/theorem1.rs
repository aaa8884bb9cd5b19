//! Convergence of the residual-propagation closed form as depth grows.
//!
//! Weights are indexed from the output side: the `K`-layer model uses the last
//! `K` mappings of the `K_max` model, and `β` follows each layer's position in
//! the `K_max` model. Consecutive depths therefore share every mapping they
//! have in common.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::closed_form_propagation;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProbeNorm {
    #[default]
    Frobenius,
    Spectral,
}

#[derive(Clone, Debug)]
pub struct Theorem1Report {
    pub alpha: f64,
    pub lambda: f64,
    pub k_max: usize,
    pub seed: u64,
    /// `diffs[i]` is `d_{i+1} = ‖f_{i+2} − f_{i+1}‖`.
    pub diffs: Vec<f64>,
    /// `ratios[i] = d_{i+2} / d_{i+1}`.
    pub ratios: Vec<f64>,
}

impl Theorem1Report {
    /// `d_K` for 1-based `K`.
    pub fn d(&self, k: usize) -> f64 {
        self.diffs[k - 1]
    }

    /// `d_{K+1} / d_K` for 1-based `K`.
    pub fn ratio(&self, k: usize) -> f64 {
        self.ratios[k - 1]
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("k,d_k,ratio\n");
        for (i, d) in self.diffs.iter().enumerate() {
            let r = self
                .ratios
                .get(i)
                .map(|r| r.to_string())
                .unwrap_or_default();
            s.push_str(&format!("{},{d},{r}\n", i + 1));
        }
        s
    }
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn dense_spectral_norm(a: &DenseMatrix) -> f64 {
    let c = a.cols();
    if c == 0 || a.rows() == 0 {
        return 0.0;
    }
    let mut v = DenseMatrix::from_fn(c, 1, |i, _| 1.0 + (i % 7) as f64 / 10.0);
    let mut sigma2 = 0.0;
    for _ in 0..10_000 {
        let norm = v.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = v.scale(1.0 / norm);
        let w = a
            .t_matmul(&a.matmul(&v).expect("shapes agree"))
            .expect("shapes agree");
        let next = w.frobenius_norm();
        let done = (next - sigma2).abs() <= 1e-13 * next;
        sigma2 = next;
        v = w;
        if done {
            break;
        }
    }
    sigma2.sqrt()
}

/// Orthonormal columns (or rows, when wide), clamped at zero and rescaled to
/// spectral norm 1.
fn nonnegative_orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    if rows < cols {
        return nonnegative_orthogonal(cols, rows, rng).transpose();
    }
    let mut q = DenseMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    for j in 0..cols {
        for k in 0..j {
            let dot: f64 = (0..rows).map(|i| q.get(i, j) * q.get(i, k)).sum();
            for i in 0..rows {
                q.set(i, j, q.get(i, j) - dot * q.get(i, k));
            }
        }
        let norm = (0..rows).map(|i| q.get(i, j).powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            q.set(i, j, q.get(i, j) / norm);
        }
    }
    let q = q.map(|v| v.max(0.0));
    let s = dense_spectral_norm(&q);
    if s > 0.0 {
        q.scale(1.0 / s)
    } else {
        q
    }
}

/// `(W_e, [W^(1) … W^(K_max)], W_p)` for the probe.
pub fn probe_weights(
    d: usize,
    hidden: usize,
    classes: usize,
    k_max: usize,
    seed: u64,
) -> (DenseMatrix, Vec<DenseMatrix>, DenseMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let we = nonnegative_orthogonal(d, hidden, &mut rng);
    let layers = (0..k_max)
        .map(|_| nonnegative_orthogonal(hidden, hidden, &mut rng))
        .collect();
    let wp = nonnegative_orthogonal(hidden, classes, &mut rng);
    (we, layers, wp)
}

/// Differences `d_K = ‖f_{K+1} − f_K‖` for `K = 1 … K_max − 1`, where `f_K` is
/// the ReLU-free closed-form output of the `K`-layer model, with seeded
/// nonnegative weights of spectral norm 1.
pub fn theorem1_probe(
    graph: &Graph,
    alpha: f64,
    lambda: f64,
    k_max: usize,
    hidden: usize,
    seed: u64,
    norm: ProbeNorm,
) -> Result<Theorem1Report> {
    if k_max < 2 || hidden == 0 {
        return Err(Error::Parameter(format!(
            "need k_max >= 2 and hidden > 0, got {k_max}, {hidden}"
        )));
    }
    let x = graph.input_features();
    let (we, layers, wp) = probe_weights(x.cols(), hidden, graph.num_classes(), k_max, seed);
    let mut report = theorem1_probe_with(graph, alpha, lambda, &we, &layers, &wp, norm)?;
    report.seed = seed;
    Ok(report)
}

/// [`theorem1_probe`] with explicit weights; `layers.len()` is `K_max`.
pub fn theorem1_probe_with(
    graph: &Graph,
    alpha: f64,
    lambda: f64,
    we: &DenseMatrix,
    layers: &[DenseMatrix],
    wp: &DenseMatrix,
    norm: ProbeNorm,
) -> Result<Theorem1Report> {
    let k_max = layers.len();
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    if k_max < 2 {
        return Err(Error::Parameter(format!("k_max must be >= 2, got {k_max}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!(
            "lambda must be in [0, 1], got {lambda}"
        )));
    }
    let h0 = graph.input_features().matmul(we)?;
    let hidden = h0.cols();
    let eye = DenseMatrix::identity(hidden);
    let mappings: Vec<DenseMatrix> = layers
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let beta = lambda / (i + 1) as f64;
            let mut m = eye.scale(1.0 - beta);
            m.add_scaled(w, beta)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let ghat = graph.normalized_operator();
    let outputs: Vec<DenseMatrix> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            closed_form_propagation(&ghat, &h0, alpha, &mappings[k_max - k..], false)?.matmul(wp)
        })
        .collect::<Result<_>>()?;
    let diffs: Vec<f64> = outputs
        .windows(2)
        .map(|w| {
            let diff = w[1].sub(&w[0]).expect("equal shapes");
            match norm {
                ProbeNorm::Frobenius => diff.frobenius_norm(),
                ProbeNorm::Spectral => dense_spectral_norm(&diff),
            }
        })
        .collect();
    let ratios = diffs.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(Theorem1Report {
        alpha,
        lambda,
        k_max,
        seed: 0,
        diffs,
        ratios,
    })
}
