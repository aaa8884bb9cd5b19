use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::glorot;

/// Replacement node features for the feature-type study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    Native,
    /// Entries drawn from Bernoulli(`density`) in {0, 1}.
    RandomBinary {
        dim: usize,
        density: f64,
    },
    /// Standard normal entries, rows scaled to unit L2 norm.
    RandomDense {
        dim: usize,
    },
    /// `X = I`.
    OneHot,
    /// Trainable `n × dim` matrix, Glorot-initialised.
    Learnable {
        dim: usize,
    },
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSpec::Native => write!(f, "native"),
            FeatureSpec::RandomBinary { dim, density } => {
                write!(f, "random_binary:{dim}:{density}")
            }
            FeatureSpec::RandomDense { dim } => write!(f, "random_dense:{dim}"),
            FeatureSpec::OneHot => write!(f, "one_hot"),
            FeatureSpec::Learnable { dim } => write!(f, "learnable:{dim}"),
        }
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    /// `native`, `one_hot`, `random_binary:<dim>:<density>`, `random_dense:<dim>`,
    /// `learnable:<dim>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("invalid feature spec '{s}'"));
        let dim = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let spec = match parts.as_slice() {
            ["native"] => FeatureSpec::Native,
            ["one_hot"] => FeatureSpec::OneHot,
            ["random_binary", d, p] => FeatureSpec::RandomBinary {
                dim: dim(d)?,
                density: p.parse().map_err(|_| bad())?,
            },
            ["random_dense", d] => FeatureSpec::RandomDense { dim: dim(d)? },
            ["learnable", d] => FeatureSpec::Learnable { dim: dim(d)? },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FeatureSpec::RandomBinary { dim, density } => {
                if dim == 0 || !(0.0..=1.0).contains(&density) {
                    return Err(Error::Config(format!(
                        "random_binary needs dim > 0 and density in [0, 1], got {dim}, {density}"
                    )));
                }
            }
            FeatureSpec::RandomDense { dim } | FeatureSpec::Learnable { dim } if dim == 0 => {
                return Err(Error::Config("feature dimension must be > 0".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Replaces the graph's features according to `spec`.
pub fn synthesize_features(graph: &mut Graph, spec: &FeatureSpec, seed: u64) -> Result<()> {
    spec.validate()?;
    let n = graph.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        FeatureSpec::Native => return Ok(()),
        _ => graph.set_learnable_features(false),
    }
    match *spec {
        FeatureSpec::Native => {}
        FeatureSpec::RandomBinary { dim, density } => {
            let x = DenseMatrix::from_fn(
                n,
                dim,
                |_, _| if rng.random_bool(density) { 1.0 } else { 0.0 },
            );
            graph.set_features(x)?;
        }
        FeatureSpec::RandomDense { dim } => {
            let mut x = DenseMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            for i in 0..n {
                let row = x.row_mut(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            graph.set_features(x)?;
            graph.set_normalize_features(false);
        }
        FeatureSpec::OneHot => {
            graph.set_features(DenseMatrix::identity(n))?;
        }
        FeatureSpec::Learnable { dim } => {
            graph.set_features(glorot(n, dim, &mut rng))?;
            graph.set_normalize_features(false);
            graph.set_learnable_features(true);
        }
    }
    Ok(())
}
