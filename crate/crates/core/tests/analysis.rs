use gcniii::analysis::{
    attention_density_dense, attention_density_sparse, dense_spectral_norm,
    misclassified_degree_report, over_generalization_report, probe_weights, run_ablation,
    theorem1_probe, theorem1_probe_with, AblationPlan, Change, ProbeNorm, Regime, Technique,
};
use gcniii::data::{contextual_sbm, make_full_split, CsbmParams};
use gcniii::graph::personalized_pagerank_matrix;
use gcniii::models::{predict, Arch, ModelConfig};
use gcniii::trainer::{train, TrainConfig};
use gcniii::{DenseMatrix, Graph};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn connected_graph(seed: u64, n: usize, d: usize, c: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    for _ in 0..n {
        edges.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    let x = DenseMatrix::from_fn(n, d, |_, _| if rng.random_bool(0.4) { 1.0 } else { 0.0 });
    let labels = (0..n).map(|i| i % c).collect();
    let mut g = Graph::new("conn", n, edges, x, labels, c).unwrap();
    g.set_normalize_features(true);
    g
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

/// Layer-by-layer recursion with a dense operator, independent of the
/// closed-form code path.
fn recursion_oracle(
    g: &Graph,
    alpha: f64,
    lambda: f64,
    we: &DenseMatrix,
    layers: &[DenseMatrix],
    wp: &DenseMatrix,
) -> Vec<f64> {
    let ghat = to_na(&g.normalized_operator().to_dense());
    let h0 = to_na(&g.input_features()) * to_na(we);
    let k_max = layers.len();
    let h = layers[0].rows();
    let maps: Vec<DMatrix<f64>> = layers
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let b = lambda / (i + 1) as f64;
            DMatrix::identity(h, h) * (1.0 - b) + to_na(w) * b
        })
        .collect();
    let outputs: Vec<DMatrix<f64>> = (1..=k_max)
        .map(|k| {
            let mut cur = h0.clone();
            for m in &maps[k_max - k..] {
                cur = (&ghat * &cur * (1.0 - alpha) + &h0 * alpha) * m;
            }
            cur * to_na(wp)
        })
        .collect();
    outputs.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect()
}

#[test]
fn probe_matches_layer_recursion() {
    let g = connected_graph(1, 25, 6, 3);
    for (seed, alpha, lambda) in [(0, 0.1, 0.5), (1, 0.5, 1.0), (2, 0.3, 0.0)] {
        let (we, layers, wp) = probe_weights(6, 4, 3, 12, seed);
        let r = theorem1_probe(&g, alpha, lambda, 12, 4, seed, ProbeNorm::Frobenius).unwrap();
        let oracle = recursion_oracle(&g, alpha, lambda, &we, &layers, &wp);
        assert_eq!(r.diffs.len(), 11);
        assert_eq!(r.ratios.len(), 10);
        for (a, b) in r.diffs.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-10 * b.max(1e-300), "{a} vs {b}");
        }
    }
}

#[test]
fn probe_weights_are_nonnegative_with_unit_norm() {
    let (we, layers, wp) = probe_weights(30, 8, 3, 5, 7);
    for w in std::iter::once(&we)
        .chain(&layers)
        .chain(std::iter::once(&wp))
    {
        assert!(w.data().iter().all(|&v| v >= 0.0));
        let s = to_na(w).singular_values().max();
        assert!((s - 1.0).abs() < 1e-9, "{s}");
        assert!((dense_spectral_norm(w) - s).abs() < 1e-9);
    }
    let (we2, _, _) = probe_weights(30, 8, 3, 5, 7);
    assert_eq!(we, we2);
}

#[test]
fn identity_mappings_give_geometric_decay() {
    // With every mapping equal to I the difference is
    // (1−α)^{K+1} ‖Ĝ^K (Ĝ − I) H0 W_p‖, whose ratio tends to (1−α)·|λ₂|.
    let n = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DenseMatrix::from_fn(n, 5, |_, _| rng.random::<f64>());
    let ring = (0..n).map(|i| (i, (i + 1) % n));
    let g = Graph::new("ring", n, ring, x, (0..n).map(|i| i % 2).collect(), 2).unwrap();
    let alpha = 0.1;
    let (we, _, wp) = probe_weights(5, 4, 2, 2, 0);
    let eye: Vec<DenseMatrix> = (0..120).map(|_| DenseMatrix::identity(4)).collect();
    let r = theorem1_probe_with(&g, alpha, 0.5, &we, &eye, &wp, ProbeNorm::Frobenius).unwrap();

    let ghat = to_na(&g.normalized_operator().to_dense());
    let base =
        (&ghat - DMatrix::identity(40, 40)) * to_na(&g.input_features()) * to_na(&we) * to_na(&wp);
    let mut gk = base.clone();
    for k in 1..=119 {
        gk = &ghat * gk;
        let expect = (1.0 - alpha).powi(k as i32 + 1) * gk.norm();
        assert!(
            (r.d(k) - expect).abs() <= 1e-6 * expect,
            "K={k}: {} vs {expect}",
            r.d(k)
        );
    }
    let mut eig: Vec<f64> = ghat
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let lambda2 = eig[1];
    assert!(
        (r.ratio(118) - (1.0 - alpha) * lambda2).abs() < 2e-3,
        "{} vs {}",
        r.ratio(118),
        lambda2
    );
    for k in 31..119 {
        assert!(r.d(k + 1) < r.d(k));
        assert!(r.ratio(k) <= 1.0 - alpha + 1e-12);
    }
}

#[test]
fn large_alpha_collapses_quickly() {
    let g = connected_graph(4, 30, 6, 3);
    let r = theorem1_probe(&g, 0.9, 0.5, 30, 8, 0, ProbeNorm::Frobenius).unwrap();
    assert!(r.d(25) < 1e-10, "{}", r.d(25));
    let s = theorem1_probe(&g, 0.9, 0.5, 30, 8, 0, ProbeNorm::Spectral).unwrap();
    for (sp, fr) in s.diffs.iter().zip(&r.diffs) {
        assert!(*sp <= fr * (1.0 + 1e-9));
    }
}

#[test]
fn probe_rejects_bad_arguments() {
    let g = connected_graph(4, 10, 3, 2);
    assert!(theorem1_probe(&g, 0.1, 0.5, 1, 4, 0, ProbeNorm::Frobenius).is_err());
    assert!(theorem1_probe(&g, 0.0, 0.5, 5, 4, 0, ProbeNorm::Frobenius).is_err());
    assert!(theorem1_probe(&g, 1.0, 0.5, 5, 4, 0, ProbeNorm::Frobenius).is_err());
}

#[test]
fn density_of_operator_and_ppr() {
    let g = connected_graph(5, 30, 3, 2);
    let op = g.normalized_operator();
    let sparse = attention_density_sparse(&op, 1e-12).unwrap();
    let dense = attention_density_dense(&op.to_dense(), 1e-12).unwrap();
    assert_eq!(sparse, dense);
    assert_eq!(sparse, op.nnz() as f64 / 900.0);
    // A connected graph has a strictly positive PPR matrix.
    let ppr = personalized_pagerank_matrix(&op, 0.1).unwrap();
    assert_eq!(attention_density_dense(&ppr, 1e-12).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_bounded_and_monotone(
        vals in prop::collection::vec(-2.0f64..2.0, 1..60),
        t1 in 0.0f64..2.0,
        t2 in 0.0f64..2.0,
    ) {
        let m = DenseMatrix::from_vec(1, vals.len(), vals).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = attention_density_dense(&m, lo).unwrap();
        let b = attention_density_dense(&m, hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b <= a);
    }
}

#[test]
fn degree_report_counts() {
    let g = connected_graph(6, 30, 3, 3);
    let test: Vec<usize> = (10..30).collect();
    let perfect = misclassified_degree_report(&g, &test, g.labels()).unwrap();
    assert!(perfect.histogram.is_empty() && perfect.low_degree == 0);

    let wrong: Vec<usize> = g.labels().iter().map(|&c| (c + 1) % 3).collect();
    let all = misclassified_degree_report(&g, &test, &wrong).unwrap();
    assert_eq!(all.misclassified, test);
    assert_eq!(all.histogram.values().sum::<usize>(), 20);
    let low = test.iter().filter(|&&i| g.degree(i) <= 2).count();
    assert_eq!(all.low_degree, low);
    assert_eq!(all, misclassified_degree_report(&g, &test, &wrong).unwrap());
    assert!(misclassified_degree_report(&g, &test, &wrong[..5]).is_err());
}

fn csbm() -> (Graph, gcniii::Split) {
    let g = contextual_sbm(
        "csbm",
        &CsbmParams {
            nodes: 300,
            ..Default::default()
        },
        2,
    )
    .unwrap();
    let split = make_full_split(&g, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    (g, split)
}

#[test]
fn one_element_ablation_reproduces_training() {
    let (g, split) = csbm();
    let base = ModelConfig {
        layers: 6,
        hidden: 16,
        ..Default::default()
    };
    let tc = TrainConfig {
        max_epochs: 40,
        patience: 40,
        ..Default::default()
    };
    let plan = AblationPlan {
        base: base.clone(),
        train: tc.clone(),
        seeds: vec![42],
        changes: vec![Change::Control],
    };
    let rows = run_ablation(&plan, &g, &split).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = train(&g, &split, &base, &TrainConfig { seed: 42, ..tc }).unwrap();
    assert_eq!(rows[0].test_acc, vec![direct.test_acc]);
    assert_eq!(rows[0].delta, 0.0);
}

#[test]
fn technique_plan_rows_and_deltas() {
    let (g, split) = csbm();
    let base = ModelConfig {
        layers: 4,
        hidden: 8,
        ..Default::default()
    };
    let tc = TrainConfig {
        max_epochs: 20,
        patience: 20,
        ..Default::default()
    };
    let plan = AblationPlan::techniques(base, tc.clone(), vec![1, 2]);
    let rows = run_ablation(&plan, &g, &split).unwrap();
    let names: Vec<String> = rows.iter().map(|r| r.change.to_string()).collect();
    assert_eq!(names, ["base", "-memo", "-res", "-map"]);
    for r in &rows {
        assert!((r.delta - (r.mean - rows[0].mean)).abs() < 1e-15);
        assert_eq!(r.test_acc.len(), 2);
    }
    assert!(!rows[2].config.techniques.initial_residual);

    // Without a control row the base is still trained for the delta.
    let only = AblationPlan {
        changes: vec![Change::Remove(Technique::InitialResidual)],
        ..plan
    };
    let r = run_ablation(&only, &g, &split).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r[0].test_acc, rows[2].test_acc);
    assert_eq!(r[0].delta, rows[2].delta);

    let gcn = ModelConfig {
        arch: Arch::Gcn,
        layers: 2,
        hidden: 8,
        ..Default::default()
    };
    let wide = run_ablation(&AblationPlan::wide(gcn, tc, vec![3]), &g, &split).unwrap();
    assert!(wide[1].config.wide);
}

#[test]
fn overgen_report_on_a_short_real_run() {
    let (g, split) = csbm();
    let model = ModelConfig {
        arch: Arch::Gcn,
        layers: 2,
        hidden: 8,
        ..Default::default()
    };
    let r = train(
        &g,
        &split,
        &model,
        &TrainConfig {
            max_epochs: 2,
            patience: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let rep = over_generalization_report(&r.records).unwrap();
    assert!(rep.short);
    assert_eq!(rep.window, 2);
    assert_eq!(rep.train_err.len(), 2);
    let (pred, _) = predict(&r.logits);
    assert_eq!(pred.len(), 300);
    assert!(matches!(
        rep.regime,
        Regime::OverGeneralizing | Regime::OverFitting | Regime::Balanced
    ));
}
