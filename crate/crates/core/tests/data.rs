use std::fs;
use std::path::Path;

use gcniii::data::{contextual_sbm, load_bundle, make_semi_split, save_bundle, CsbmParams};
use gcniii::{DenseMatrix, Error, Graph, Split};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn write_bundle(dir: &Path, files: &[(&str, &str)]) {
    fs::create_dir_all(dir).unwrap();
    for (name, content) in files {
        fs::write(dir.join(name), content).unwrap();
    }
}

const META: &str = "nodes 3\nfeatures 2\nclasses 2\nfeature_format sparse\n";

fn minimal(dir: &Path) {
    write_bundle(
        dir,
        &[
            ("meta", META),
            ("edges", "0 1\n1 2\n"),
            ("features", "0 0 1\n2 1 0.5\n"),
            ("labels", "0\n1\n1\n"),
        ],
    );
}

#[test]
fn minimal_bundle_loads() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("tiny");
    minimal(&dir);
    let g = load_bundle(&dir).unwrap();
    assert_eq!(g.name(), "tiny");
    assert_eq!(g.num_nodes(), 3);
    assert_eq!(g.unique_edge_count(), 2);
    assert_eq!(g.raw_features().get(2, 1), 0.5);
    assert!(g.normalize_features());
}

#[test]
fn diagnostics_are_distinct() {
    let tmp = tempfile::tempdir().unwrap();

    let missing = load_bundle(tmp.path().join("nope")).unwrap_err();
    assert!(matches!(missing, Error::MissingFile(_)), "{missing}");

    let dir = tmp.path().join("no_labels");
    minimal(&dir);
    fs::remove_file(dir.join("labels")).unwrap();
    match load_bundle(&dir).unwrap_err() {
        Error::MissingFile(p) => assert!(p.ends_with("labels")),
        e => panic!("{e}"),
    }

    let dir = tmp.path().join("bad_edge");
    minimal(&dir);
    fs::write(dir.join("edges"), "0 1\n1 7\n").unwrap();
    match load_bundle(&dir).unwrap_err() {
        Error::Index {
            index,
            bound,
            context,
        } => {
            assert_eq!((index, bound), (7, 3));
            assert!(context.contains(":2"), "{context}");
        }
        e => panic!("{e}"),
    }

    let dir = tmp.path().join("bad_token");
    minimal(&dir);
    fs::write(dir.join("features"), "0 0 1\n2 1 x\n").unwrap();
    match load_bundle(&dir).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 2),
        e => panic!("{e}"),
    }

    let dir = tmp.path().join("short_labels");
    minimal(&dir);
    fs::write(dir.join("labels"), "0\n1\n").unwrap();
    assert!(matches!(
        load_bundle(&dir).unwrap_err(),
        Error::LabelCount {
            expected: 3,
            found: 2
        }
    ));

    let dir = tmp.path().join("overlap");
    minimal(&dir);
    fs::write(dir.join("split.semi"), "train 0\nval 0\ntest 1\n").unwrap();
    assert!(matches!(
        load_bundle(&dir).unwrap_err(),
        Error::Parse { .. }
    ));
}

#[test]
fn dense_features_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("dense");
    write_bundle(
        &dir,
        &[
            ("meta", "name d\nnodes 2\nfeatures 2\nclasses 1\nfeature_format dense\nnormalize_features false\n"),
            ("edges", "0 1\n"),
            ("features", "0.1 2\n-3e-7 1.5\n"),
            ("labels", "0\n0\n"),
        ],
    );
    let g = load_bundle(&dir).unwrap();
    assert_eq!(g.raw_features().row(1), &[-3e-7, 1.5]);
    let out = tmp.path().join("out");
    save_bundle(&g, &out).unwrap();
    assert_eq!(
        fs::read_to_string(out.join("features")).unwrap(),
        "0.1 2\n-0.0000003 1.5\n"
    );
    let h = load_bundle(&out).unwrap();
    assert_eq!(h.raw_features(), g.raw_features());
    assert!(!h.normalize_features());
}

#[test]
fn sampled_semi_split_is_reproducible_and_stratified() {
    let g = contextual_sbm(
        "s",
        &CsbmParams {
            nodes: 2000,
            classes: 4,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let a = make_semi_split(&g, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(
        a,
        make_semi_split(&g, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    );
    assert_eq!(a.sizes(), (80, 500, 1000));
    let mut per_class = [0; 4];
    for &i in &a.train {
        per_class[g.labels()[i]] += 1;
    }
    assert_eq!(per_class, [20; 4]);
}

fn arb_graph() -> impl Strategy<Value = Graph> {
    (2usize..12, 1usize..5, 1usize..4).prop_flat_map(|(n, d, c)| {
        (
            prop::collection::vec((0..n, 0..n), 0..3 * n),
            prop::collection::vec(prop_oneof![Just(0.0), -1e3f64..1e3], n * d),
            prop::collection::vec(0..c, n),
            any::<bool>(),
            prop::collection::vec(0..3u8, n),
        )
            .prop_map(move |(edges, x, labels, norm, parts)| {
                let x = DenseMatrix::from_vec(n, d, x).unwrap();
                let mut g = Graph::new("p", n, edges, x, labels, c).unwrap();
                g.set_normalize_features(norm);
                let mut s = Split::default();
                for (i, p) in parts.into_iter().enumerate() {
                    [&mut s.train, &mut s.val, &mut s.test][p as usize].push(i);
                }
                g.insert_split("semi", s).unwrap();
                g
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn save_load_save_is_byte_identical(g in arb_graph()) {
        let tmp = tempfile::tempdir().unwrap();
        save_bundle(&g, tmp.path().join("a")).unwrap();
        let h = load_bundle(tmp.path().join("a")).unwrap();
        save_bundle(&h, tmp.path().join("b")).unwrap();
        prop_assert_eq!(read_all(&tmp.path().join("a")), read_all(&tmp.path().join("b")));
        prop_assert_eq!(h.raw_features(), g.raw_features());
        prop_assert_eq!(h.listed_edges(), g.listed_edges());
        prop_assert_eq!(h.labels(), g.labels());
        prop_assert_eq!(h.splits(), g.splits());
        prop_assert_eq!(h.normalize_features(), g.normalize_features());
    }
}
