use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Contextual stochastic block model with bag-of-words style features.
///
/// Classes are balanced. Each sampled edge stays inside its source node's class
/// with probability `homophily`. Feature column `j` is a topic word of class
/// `j % classes`; topic words fire with probability `p_in`, others with `p_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsbmParams {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    pub avg_degree: f64,
    pub homophily: f64,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for CsbmParams {
    fn default() -> Self {
        Self {
            nodes: 600,
            classes: 3,
            features: 60,
            avg_degree: 4.0,
            homophily: 0.8,
            p_in: 0.3,
            p_out: 0.05,
        }
    }
}

impl CsbmParams {
    fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.classes < 2 || self.nodes < 2 * self.classes {
            return Err(Error::Config(format!(
                "csbm needs at least 2 classes and 2 nodes per class, got {} nodes / {} classes",
                self.nodes, self.classes
            )));
        }
        if self.features == 0 || !(self.avg_degree >= 0.0 && self.avg_degree.is_finite()) {
            return Err(Error::Config(
                "csbm needs features > 0 and a finite avg_degree >= 0".into(),
            ));
        }
        if !prob(self.homophily) || !prob(self.p_in) || !prob(self.p_out) {
            return Err(Error::Config(
                "csbm probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Samples a graph; the same `(params, seed)` always yields the same graph.
pub fn contextual_sbm(name: &str, params: &CsbmParams, seed: u64) -> Result<Graph> {
    params.validate()?;
    let (n, c) = (params.nodes, params.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i * c / n).collect();
    labels.shuffle(&mut rng);
    let mut by_class = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let m = (n as f64 * params.avg_degree / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let u = rng.random_range(0..n);
        let v = if rng.random_bool(params.homophily) {
            let same = &by_class[labels[u]];
            same[rng.random_range(0..same.len())]
        } else {
            loop {
                let v = rng.random_range(0..n);
                if labels[v] != labels[u] {
                    break v;
                }
            }
        };
        if u != v {
            edges.push((u, v));
        }
    }

    let x = DenseMatrix::from_fn(n, params.features, |i, j| {
        let p = if j % c == labels[i] {
            params.p_in
        } else {
            params.p_out
        };
        if rng.random_bool(p) {
            1.0
        } else {
            0.0
        }
    });
    let mut g = Graph::new(name, n, edges, x, labels, c)?;
    g.set_normalize_features(true);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_homophilous() {
        let p = CsbmParams::default();
        let a = contextual_sbm("a", &p, 7).unwrap();
        let b = contextual_sbm("a", &p, 7).unwrap();
        assert_eq!(a.listed_edges(), b.listed_edges());
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.raw_features(), b.raw_features());
        assert_eq!(a.listed_edges().len(), 1200);
        let intra = a
            .listed_edges()
            .iter()
            .filter(|&&(u, v)| a.labels()[u] == a.labels()[v])
            .count() as f64
            / 1200.0;
        assert!((intra - 0.8).abs() < 0.05, "{intra}");
        let counts: Vec<usize> = a.nodes_by_class().iter().map(Vec::len).collect();
        assert_eq!(counts, vec![200, 200, 200]);
    }
}
