use gcniii::graph::{
    build_normalized_operator, connected_components, degree_histogram, drop_edge,
    personalized_pagerank_matrix, power_iteration_top_eigenvalue, spectral_report,
};
use gcniii::{DenseMatrix, Graph, SparseOperator};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_adjacency(seed: u64, n: usize, p: f64) -> SparseOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                t.push((i, j, 1.0));
                t.push((j, i, 1.0));
            }
        }
    }
    SparseOperator::from_triplets(n, n, t).unwrap()
}

/// √d̃ recovered from the diagonal: Ĝᵢᵢ = 1/d̃ᵢ.
fn sqrt_degrees(g: &SparseOperator) -> Vec<f64> {
    (0..g.rows()).map(|i| (1.0 / g.get(i, i)).sqrt()).collect()
}

fn dense_product(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
    })
}

fn symmetric_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let d = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let mut e: Vec<f64> = d.symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_operator_is_symmetric_substochastic(seed in any::<u64>(), n in 1usize..50, p in 0.0f64..0.5) {
        let g = build_normalized_operator(&random_adjacency(seed, n, p)).unwrap();
        prop_assert!(g.check_symmetric());
        // Symmetric normalisation is not row-stochastic; its unit eigenvector is √d̃.
        let sqrt_deg = sqrt_degrees(&g);
        let image = g.spmv(&sqrt_deg).unwrap();
        for i in 0..n {
            prop_assert!((image[i] - sqrt_deg[i]).abs() < 1e-12 * sqrt_deg[i].max(1.0));
            prop_assert!(g.get(i, i) > 0.0);
            for (_, v) in g.row(i) {
                prop_assert!(v > 0.0 && v <= 1.0);
            }
        }
    }

    #[test]
    fn spmm_matches_dense_product(seed in any::<u64>(), n in 1usize..50, width in 1usize..6) {
        let g = build_normalized_operator(&random_adjacency(seed, n, 0.2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let h = DenseMatrix::from_fn(n, width, |_, _| rng.random_range(-1.0..1.0));
        let fast = g.spmm(&h).unwrap();
        let slow = dense_product(&g.to_dense(), &h);
        let rel = fast.sub(&slow).unwrap().frobenius_norm() / slow.frobenius_norm().max(1e-300);
        prop_assert!(rel < 1e-12);
    }

    #[test]
    fn ppr_solves_linear_system(seed in any::<u64>(), n in 1usize..25, alpha in 0.05f64..0.95) {
        let g = build_normalized_operator(&random_adjacency(seed, n, 0.3)).unwrap();
        let m = personalized_pagerank_matrix(&g, alpha).unwrap();
        // (I − (1−α)Ĝ)·M should equal α·I.
        let lhs = {
            let mut x = g.spmm(&m).unwrap().scale(-(1.0 - alpha));
            x.add_scaled(&m, 1.0).unwrap();
            x
        };
        let err = lhs.sub(&DenseMatrix::identity(n).scale(alpha)).unwrap().frobenius_norm();
        prop_assert!(err < 1e-8);
        let sqrt_deg = sqrt_degrees(&g);
        let dense_image: Vec<f64> = (0..n)
            .map(|i| m.row(i).iter().zip(&sqrt_deg).map(|(a, b)| a * b).sum())
            .collect();
        for i in 0..n {
            prop_assert!((dense_image[i] - sqrt_deg[i]).abs() < 1e-8);
            prop_assert!(m.row(i).iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn drop_edge_keeps_symmetry(seed in any::<u64>(), n in 1usize..40, rate in 0.0f64..0.99) {
        let adj = random_adjacency(seed, n, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kept = drop_edge(&adj, rate, &mut rng).unwrap();
        prop_assert!(kept.check_symmetric());
        for (i, j, _) in kept.triplets() {
            prop_assert_eq!(adj.get(i, j), 1.0);
        }
    }
}

#[test]
fn drop_edge_count_is_binomial() {
    // A 10,001-node path has exactly 10,000 edges.
    let n = 10_001;
    let trip: Vec<_> = (0..n - 1)
        .flat_map(|i| [(i, i + 1, 1.0), (i + 1, i, 1.0)])
        .collect();
    let adj = SparseOperator::from_triplets(n, n, trip).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let kept = drop_edge(&adj, 0.5, &mut rng).unwrap().nnz() / 2;
        assert!((kept as f64 - 5000.0).abs() <= 4.0 * 50.0, "kept {kept}");
    }
}

#[test]
fn power_iteration_matches_dense_eigensolver() {
    for seed in 0..5 {
        let adj = random_adjacency(seed, 100, 0.05);
        let g = build_normalized_operator(&adj).unwrap();
        let eig = symmetric_eigenvalues(&g.to_dense());
        let top = eig.iter().fold(0.0f64, |a, e| a.max(e.abs()));
        let pi = power_iteration_top_eigenvalue(&g, 100_000, 1e-13).unwrap();
        assert!((pi - top).abs() < 1e-6, "seed {seed}: {pi} vs {top}");
        assert!(pi <= 1.0 + 1e-8);

        let l = g.identity_minus().unwrap();
        let leig = symmetric_eigenvalues(&l.to_dense());
        let ltop = leig.last().copied().unwrap();
        let report = spectral_report(&g).unwrap();
        assert!(
            (report.laplacian_top - ltop).abs() < 1e-6,
            "seed {seed}: {} vs {ltop}",
            report.laplacian_top
        );
        assert!(report.laplacian_top < 2.0);
    }
}

#[test]
fn degree_histogram_cases() {
    let g = Graph::new("p2", 2, [(0, 1)], DenseMatrix::identity(2), vec![0, 0], 1).unwrap();
    assert!(degree_histogram(&g, &[]).unwrap().is_empty());
    let h = degree_histogram(&g, &[0, 1]).unwrap();
    assert_eq!(h.into_iter().collect::<Vec<_>>(), vec![(1, 2)]);
    assert!(degree_histogram(&g, &[2]).is_err());
}

#[test]
fn degrees_sum_to_twice_unique_edges() {
    let adj = random_adjacency(9, 200, 0.03);
    let edges: Vec<(usize, usize)> = adj
        .triplets()
        .filter(|t| t.0 < t.1)
        .map(|t| (t.0, t.1))
        .collect();
    let g = Graph::new(
        "r",
        200,
        edges.iter().copied(),
        DenseMatrix::zeros(200, 1),
        vec![0; 200],
        1,
    )
    .unwrap();
    let all: Vec<usize> = (0..200).collect();
    let h = degree_histogram(&g, &all).unwrap();
    assert_eq!(h.values().sum::<usize>(), 200);
    assert_eq!(
        h.iter().map(|(d, c)| d * c).sum::<usize>(),
        2 * g.unique_edge_count()
    );
    let comps = connected_components(g.adjacency());
    assert_eq!(comps.len(), 200);
}
