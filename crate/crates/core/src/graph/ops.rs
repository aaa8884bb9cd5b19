use std::collections::BTreeMap;

use rand::Rng;

use super::{Graph, SparseOperator};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Frobenius norm of a series term below which the PPR summation stops.
pub const PPR_SERIES_TOL: f64 = 1e-10;

const PPR_MAX_TERMS: usize = 200_000;

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` for a symmetric, loop-free, nonnegative adjacency.
pub fn build_normalized_operator(adjacency: &SparseOperator) -> Result<SparseOperator> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(Error::Structural(format!(
            "adjacency must be square, got {}x{}",
            n,
            adjacency.cols()
        )));
    }
    if !adjacency.check_symmetric() {
        return Err(Error::Structural("adjacency is not symmetric".into()));
    }
    let mut degree = vec![1.0f64; n];
    for (i, j, v) in adjacency.triplets() {
        if i == j && v != 0.0 {
            return Err(Error::Structural(format!(
                "adjacency has a stored self-loop at {i}"
            )));
        }
        if v < 0.0 {
            return Err(Error::Structural(format!(
                "negative adjacency weight at ({i}, {j})"
            )));
        }
        degree[i] += v;
    }
    let entries = adjacency
        .triplets()
        .filter(|&(i, j, _)| i != j)
        .chain((0..n).map(|i| (i, i, 1.0)))
        .map(|(i, j, v)| (i, j, v / (degree[i] * degree[j]).sqrt()));
    Ok(SparseOperator::from_triplets(n, n, entries)?.mark_symmetric_unchecked())
}

/// Keeps each undirected edge with probability `1 - rate`; one draw per unordered
/// pair, in CSR order of the upper triangle.
pub fn drop_edge<R: Rng + ?Sized>(
    adjacency: &SparseOperator,
    rate: f64,
    rng: &mut R,
) -> Result<SparseOperator> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!(
            "drop-edge rate must be in [0, 1), got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(adjacency.clone());
    }
    let mut kept = Vec::new();
    for (i, j, v) in adjacency.triplets() {
        if j > i && rng.random::<f64>() >= rate {
            kept.push((i, j, v));
            kept.push((j, i, v));
        }
    }
    Ok(
        SparseOperator::from_triplets(adjacency.rows(), adjacency.cols(), kept)?
            .mark_symmetric_unchecked(),
    )
}

/// Dense `α(I − (1−α)Ĝ)^{-1}` summed as `α Σₖ ((1−α)Ĝ)ᵏ` until the term's
/// Frobenius norm drops below [`PPR_SERIES_TOL`].
pub fn personalized_pagerank_matrix(ghat: &SparseOperator, alpha: f64) -> Result<DenseMatrix> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!(
            "alpha must be in (0, 1], got {alpha}"
        )));
    }
    let n = ghat.rows();
    if ghat.cols() != n {
        return Err(Error::dim(
            "personalized_pagerank_matrix",
            "operator is not square",
        ));
    }
    let mut term = DenseMatrix::identity(n).scale(alpha);
    let mut total = term.clone();
    let decay = 1.0 - alpha;
    let mut prev_norm = term.frobenius_norm();
    for k in 1..=PPR_MAX_TERMS {
        if prev_norm < PPR_SERIES_TOL || decay == 0.0 {
            return Ok(total);
        }
        term = ghat.spmm(&term)?.scale(decay);
        total.add_scaled(&term, 1.0)?;
        let norm = term.frobenius_norm();
        if !norm.is_finite() || norm > 1e12 {
            return Err(Error::Numerical(format!(
                "PPR series diverges at term {k} (term norm {norm:.3e}, growth ratio {:.6}); \
                 I - (1-alpha)G is singular or indefinite",
                norm / prev_norm
            )));
        }
        prev_norm = norm;
    }
    Err(Error::Numerical(format!(
        "PPR series did not reach tolerance {PPR_SERIES_TOL:e} within {PPR_MAX_TERMS} terms \
         (last term norm {prev_norm:.3e}); system is nearly singular"
    )))
}

/// Dominant |eigenvalue| of a symmetric operator via normalised power iteration.
///
/// The estimate is `‖A v‖` for unit `v`, which rises monotonically to the
/// spectral radius and does not oscillate when `±λ` share the top magnitude.
pub fn power_iteration_top_eigenvalue(op: &SparseOperator, iters: usize, tol: f64) -> Result<f64> {
    let n = op.rows();
    if op.cols() != n {
        return Err(Error::dim(
            "power_iteration_top_eigenvalue",
            "operator is not square",
        ));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0)
        .collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..iters {
        let mut w = op.spmv(&v)?;
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return Ok(0.0);
        }
        let converged = (norm - estimate).abs() <= tol * norm.max(1.0);
        estimate = norm;
        v = w;
        if converged {
            return Ok(estimate);
        }
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge to {tol:e} within {iters} iterations (estimate {estimate})"
    )))
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralReport {
    /// ‖Ĝ‖₂, bounded by 1.
    pub operator_norm: f64,
    /// Largest eigenvalue of `I − Ĝ`, strictly below 2.
    pub laplacian_top: f64,
}

/// Runs the two spectral bounds on a normalised operator and fails loudly when
/// either is violated.
pub fn spectral_report(ghat: &SparseOperator) -> Result<SpectralReport> {
    let operator_norm = power_iteration_top_eigenvalue(ghat, 20_000, 1e-12)?;
    if operator_norm > 1.0 + 1e-8 {
        return Err(Error::Numerical(format!(
            "normalised operator has spectral norm {operator_norm} > 1"
        )));
    }
    let laplacian = ghat.identity_minus()?;
    let laplacian_top = power_iteration_top_eigenvalue(&laplacian, 200_000, 1e-12)?;
    if laplacian_top >= 2.0 {
        return Err(Error::Numerical(format!(
            "augmented Laplacian has top eigenvalue {laplacian_top} >= 2"
        )));
    }
    Ok(SpectralReport {
        operator_norm,
        laplacian_top,
    })
}

/// Histogram of adjacency degrees (self-loops excluded) over `nodes`.
pub fn degree_histogram(graph: &Graph, nodes: &[usize]) -> Result<BTreeMap<usize, usize>> {
    let n = graph.num_nodes();
    let mut hist = BTreeMap::new();
    for &i in nodes {
        if i >= n {
            return Err(Error::Index {
                index: i,
                bound: n,
                context: "degree_histogram".into(),
            });
        }
        *hist.entry(graph.degree(i)).or_insert(0) += 1;
    }
    Ok(hist)
}

/// Component id per node; ids are assigned in order of the smallest member.
pub fn connected_components(adjacency: &SparseOperator) -> Vec<usize> {
    let n = adjacency.rows();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        stack.push(s);
        while let Some(u) = stack.pop() {
            for (v, _) in adjacency.row(u) {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path2_adj() -> SparseOperator {
        SparseOperator::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    #[test]
    fn two_node_operator_is_averaging() {
        let g = build_normalized_operator(&path2_adj()).unwrap();
        assert_eq!(g.to_dense().data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn isolated_node_gets_unit_self_loop() {
        let adj = SparseOperator::from_triplets(1, 1, []).unwrap();
        let g = build_normalized_operator(&adj).unwrap();
        assert_eq!(g.to_dense().data(), &[1.0]);
    }

    #[test]
    fn non_symmetric_adjacency_rejected() {
        let adj = SparseOperator::from_triplets(2, 2, [(0, 1, 1.0)]).unwrap();
        assert!(matches!(
            build_normalized_operator(&adj),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn averaging_operator_on_column() {
        let g = build_normalized_operator(&path2_adj()).unwrap();
        let h = DenseMatrix::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(g.spmm(&h).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn drop_edge_rate_zero_is_identity_and_rate_one_rejected() {
        let adj = path2_adj();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(drop_edge(&adj, 0.0, &mut rng).unwrap(), adj);
        assert!(matches!(
            drop_edge(&adj, 1.0, &mut rng),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn ppr_two_node_closed_form() {
        // (I - 0.5 G) = [[.75, -.25], [-.25, .75]], det 0.5, inverse [[1.5, .5], [.5, 1.5]].
        let g = build_normalized_operator(&path2_adj()).unwrap();
        let m = personalized_pagerank_matrix(&g, 0.5).unwrap();
        let expect = DenseMatrix::from_rows(&[vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap();
        assert!(m.max_abs_diff(&expect).unwrap() < 1e-9);

        // Without self-loops the same formula gives thirds.
        let m = personalized_pagerank_matrix(&path2_adj(), 0.5).unwrap();
        let expect =
            DenseMatrix::from_rows(&[vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]])
                .unwrap();
        assert!(m.max_abs_diff(&expect).unwrap() < 1e-9);
    }

    #[test]
    fn ppr_at_alpha_one_is_identity() {
        let g = build_normalized_operator(&path2_adj()).unwrap();
        assert_eq!(
            personalized_pagerank_matrix(&g, 1.0).unwrap(),
            DenseMatrix::identity(2)
        );
        let near = personalized_pagerank_matrix(&g, 1.0 - 1e-9).unwrap();
        assert!(near.max_abs_diff(&DenseMatrix::identity(2)).unwrap() < 1e-8);
        assert!(personalized_pagerank_matrix(&g, 0.0).is_err());
    }

    #[test]
    fn ppr_diverging_series_reports_numerical_error() {
        // Spectral radius 2 breaks the precondition.
        let op = SparseOperator::from_triplets(1, 1, [(0, 0, 2.0)]).unwrap();
        assert!(matches!(
            personalized_pagerank_matrix(&op, 0.1),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn power_iteration_small_cases() {
        let id = SparseOperator::identity(4);
        assert!((power_iteration_top_eigenvalue(&id, 100, 1e-12).unwrap() - 1.0).abs() < 1e-12);
        let g = build_normalized_operator(&path2_adj()).unwrap();
        assert!((power_iteration_top_eigenvalue(&g, 100, 1e-12).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn power_iteration_reports_non_convergence() {
        let g = build_normalized_operator(&path2_adj()).unwrap();
        let l = g.identity_minus().unwrap();
        let diag =
            SparseOperator::from_triplets(3, 3, [(0, 0, 1.0), (1, 1, 0.999), (2, 2, 0.5)]).unwrap();
        assert!(power_iteration_top_eigenvalue(&diag, 2, 1e-15).is_err());
        assert!(power_iteration_top_eigenvalue(&l, 200, 1e-12).is_ok());
    }

    #[test]
    fn components_of_two_pairs() {
        let adj = SparseOperator::from_triplets(
            5,
            5,
            [(0, 1, 1.0), (1, 0, 1.0), (3, 4, 1.0), (4, 3, 1.0)],
        )
        .unwrap();
        assert_eq!(connected_components(&adj), vec![0, 0, 1, 2, 2]);
    }
}
