//! Graph container, sparse operators and the structural routines built on them.

mod ops;
mod sparse;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock};

pub use ops::{
    build_normalized_operator, connected_components, degree_histogram, drop_edge,
    personalized_pagerank_matrix, power_iteration_top_eigenvalue, spectral_report, SpectralReport,
    PPR_SERIES_TOL,
};
pub use sparse::SparseOperator;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Train / validation / test node index sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Checks that every index is below `n` and the three parts are disjoint.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (part, idx) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Index {
                        index: i,
                        bound: n,
                        context: format!("{part} split"),
                    });
                }
                if !seen.insert(i) {
                    return Err(Error::Structural(format!(
                        "node {i} appears twice across split parts ({part})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// An undirected node-classification graph.
#[derive(Debug)]
pub struct Graph {
    name: String,
    adjacency: SparseOperator,
    edges: Vec<(usize, usize)>,
    features: Arc<DenseMatrix>,
    labels: Vec<usize>,
    num_classes: usize,
    splits: BTreeMap<String, Split>,
    normalize_features: bool,
    learnable_features: bool,
    normalized: OnceLock<Arc<SparseOperator>>,
    input_features: OnceLock<Arc<DenseMatrix>>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            adjacency: self.adjacency.clone(),
            edges: self.edges.clone(),
            features: Arc::clone(&self.features),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            splits: self.splits.clone(),
            normalize_features: self.normalize_features,
            learnable_features: self.learnable_features,
            normalized: self.normalized.clone(),
            input_features: self.input_features.clone(),
        }
    }
}

impl Graph {
    /// Builds a graph from an undirected edge list. Self-loops are dropped and
    /// repeated pairs collapse to a single adjacency entry; the listed pairs are
    /// kept (as `(min, max)`, sorted) so the published edge count survives.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::dim(
                "Graph::new",
                format!("feature matrix has {} rows for {n} nodes", features.rows()),
            ));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("graph features"));
        }
        if labels.len() != n {
            return Err(Error::LabelCount {
                expected: n,
                found: labels.len(),
            });
        }
        if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::Index {
                index: c,
                bound: num_classes,
                context: format!("label of node {i}"),
            });
        }
        let mut listed = Vec::new();
        for (u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(Error::Index {
                        index: x,
                        bound: n,
                        context: "edge endpoint".into(),
                    });
                }
            }
            if u != v {
                listed.push((u.min(v), u.max(v)));
            }
        }
        listed.sort_unstable();
        let mut unique = listed.clone();
        unique.dedup();
        let adjacency = SparseOperator::from_triplets(
            n,
            n,
            unique.iter().flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)]),
        )?
        .mark_symmetric_unchecked();
        Ok(Self {
            name: name.into(),
            adjacency,
            edges: listed,
            features: Arc::new(features),
            labels,
            num_classes,
            splits: BTreeMap::new(),
            normalize_features: false,
            learnable_features: false,
            normalized: OnceLock::new(),
            input_features: OnceLock::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Binary symmetric adjacency without self-loops.
    pub fn adjacency(&self) -> &SparseOperator {
        &self.adjacency
    }

    /// Edge pairs as listed in the source data, `(min, max)`, sorted.
    pub fn listed_edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn unique_edge_count(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency.row_nnz(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Features exactly as stored.
    pub fn raw_features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn normalize_features(&self) -> bool {
        self.normalize_features
    }

    pub fn learnable_features(&self) -> bool {
        self.learnable_features
    }

    pub fn set_normalize_features(&mut self, on: bool) {
        self.normalize_features = on;
        self.input_features = OnceLock::new();
    }

    pub(crate) fn set_learnable_features(&mut self, on: bool) {
        self.learnable_features = on;
    }

    pub fn set_features(&mut self, features: DenseMatrix) -> Result<()> {
        if features.rows() != self.num_nodes() {
            return Err(Error::dim(
                "Graph::set_features",
                format!("{} rows for {} nodes", features.rows(), self.num_nodes()),
            ));
        }
        self.features = Arc::new(features);
        self.input_features = OnceLock::new();
        Ok(())
    }

    /// Features fed to the models: row-normalised when the graph asks for it.
    pub fn input_features(&self) -> Arc<DenseMatrix> {
        Arc::clone(self.input_features.get_or_init(|| {
            if self.normalize_features {
                Arc::new(row_normalize(&self.features))
            } else {
                Arc::clone(&self.features)
            }
        }))
    }

    /// The normalised convolution operator `D̃^{-1/2}(A + I)D̃^{-1/2}`.
    pub fn normalized_operator(&self) -> Arc<SparseOperator> {
        Arc::clone(self.normalized.get_or_init(|| {
            Arc::new(
                build_normalized_operator(&self.adjacency)
                    .expect("adjacency is symmetric with zero diagonal by construction"),
            )
        }))
    }

    pub fn splits(&self) -> &BTreeMap<String, Split> {
        &self.splits
    }

    pub fn split(&self, name: &str) -> Result<&Split> {
        self.splits.get(name).ok_or_else(|| {
            Error::Config(format!(
                "graph '{}' has no split named '{name}' (available: {})",
                self.name,
                if self.splits.is_empty() {
                    "none".to_string()
                } else {
                    self.splits.keys().cloned().collect::<Vec<_>>().join(", ")
                }
            ))
        })
    }

    pub fn insert_split(&mut self, name: impl Into<String>, split: Split) -> Result<()> {
        split.validate(self.num_nodes())?;
        self.splits.insert(name.into(), split);
        Ok(())
    }

    /// Node indices grouped by class.
    pub fn nodes_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Divides each nonzero row by its sum.
pub fn row_normalize(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let s: f64 = row.iter().sum();
        if s != 0.0 {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> Graph {
        Graph::new("p2", 2, [(0, 1)], DenseMatrix::identity(2), vec![0, 1], 2).unwrap()
    }

    #[test]
    fn self_loops_and_duplicates_are_handled() {
        let g = Graph::new(
            "g",
            3,
            [(0, 1), (1, 0), (2, 2), (1, 2)],
            DenseMatrix::zeros(3, 1),
            vec![0, 0, 0],
            1,
        )
        .unwrap();
        assert_eq!(g.listed_edges(), &[(0, 1), (0, 1), (1, 2)]);
        assert_eq!(g.unique_edge_count(), 2);
        assert_eq!(g.adjacency().get(2, 2), 0.0);
        assert!(g.adjacency().check_symmetric());
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let err = Graph::new("g", 2, [], DenseMatrix::zeros(2, 1), vec![0, 3], 2);
        assert!(matches!(err, Err(Error::Index { .. })));
    }

    #[test]
    fn split_must_be_disjoint() {
        let mut g = path2();
        let bad = Split {
            train: vec![0],
            val: vec![0],
            test: vec![],
        };
        assert!(g.insert_split("x", bad).is_err());
        assert!(g.split("missing").is_err());
    }

    #[test]
    fn row_normalisation_skips_zero_rows() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 3.0], vec![0.0, 0.0]]).unwrap();
        let r = row_normalize(&m);
        assert_eq!(r.row(0), &[0.25, 0.75]);
        assert_eq!(r.row(1), &[0.0, 0.0]);
    }
}
