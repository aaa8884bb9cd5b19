use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};

/// Name of the canonical semi-supervised split shipped in citation bundles.
pub const SEMI_SPLIT: &str = "semi";
/// Full-supervised splits are named `full.0`, `full.1`, ….
pub const FULL_SPLIT_PREFIX: &str = "full.";

const PER_CLASS: usize = 20;
const VAL: usize = 500;
const TEST: usize = 1000;

/// 20 labelled nodes per class, 500 validation, 1000 test.
///
/// A bundled `semi` split is validated and returned as is; otherwise one is
/// sampled.
pub fn make_semi_split<R: Rng + ?Sized>(graph: &Graph, rng: &mut R) -> Result<Split> {
    let by_class = graph.nodes_by_class();
    if let Some(split) = graph.splits().get(SEMI_SPLIT) {
        let mut counts = vec![0usize; graph.num_classes()];
        for &i in &split.train {
            counts[graph.labels()[i]] += 1;
        }
        let bad_class = counts
            .iter()
            .enumerate()
            .find(|(c, &k)| k != PER_CLASS && !by_class[*c].is_empty());
        if let Some((c, k)) = bad_class {
            return Err(Error::Config(format!(
                "bundled semi split has {k} training nodes for class {c}, expected {PER_CLASS}"
            )));
        }
        if split.val.len() != VAL || split.test.len() != TEST {
            return Err(Error::Config(format!(
                "bundled semi split has {} validation / {} test nodes, expected {VAL} / {TEST}",
                split.val.len(),
                split.test.len()
            )));
        }
        return Ok(split.clone());
    }
    let needed = PER_CLASS * graph.num_classes() + VAL + TEST;
    if graph.num_nodes() < needed {
        return Err(Error::Config(format!(
            "semi-supervised split needs {needed} nodes, graph has {}",
            graph.num_nodes()
        )));
    }
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for (c, nodes) in by_class.into_iter().enumerate() {
        if nodes.len() < PER_CLASS {
            return Err(Error::Config(format!(
                "class {c} has {} nodes, semi-supervised split needs {PER_CLASS}",
                nodes.len()
            )));
        }
        let mut nodes = nodes;
        nodes.shuffle(rng);
        train.extend_from_slice(&nodes[..PER_CLASS]);
        rest.extend_from_slice(&nodes[PER_CLASS..]);
    }
    rest.sort_unstable();
    rest.shuffle(rng);
    let mut val = rest[..VAL].to_vec();
    let mut test = rest[VAL..VAL + TEST].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, val, test })
}

/// Stratified 60/20/20: per class, `⌊n_c/5⌋` validation and test nodes, the
/// remainder to training.
pub fn make_full_split<R: Rng + ?Sized>(graph: &Graph, rng: &mut R) -> Result<Split> {
    let mut split = Split::default();
    for (c, mut nodes) in graph.nodes_by_class().into_iter().enumerate() {
        if nodes.is_empty() {
            continue;
        }
        if nodes.len() < 5 {
            return Err(Error::Config(format!(
                "class {c} has {} nodes, full-supervised split needs at least 5",
                nodes.len()
            )));
        }
        nodes.shuffle(rng);
        let k = nodes.len() / 5;
        split.val.extend_from_slice(&nodes[..k]);
        split.test.extend_from_slice(&nodes[k..2 * k]);
        split.train.extend_from_slice(&nodes[2 * k..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// The `k`-th full-supervised split: bundled `full.<k>` when present, otherwise
/// generated from seed `k`.
pub fn full_split(graph: &Graph, k: usize) -> Result<Split> {
    match graph.splits().get(&format!("{FULL_SPLIT_PREFIX}{k}")) {
        Some(s) => Ok(s.clone()),
        None => make_full_split(graph, &mut ChaCha8Rng::seed_from_u64(k as u64)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;

    fn labelled(counts: &[usize]) -> Graph {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        let n = labels.len();
        Graph::new("g", n, [], DenseMatrix::zeros(n, 1), labels, counts.len()).unwrap()
    }

    #[test]
    fn full_split_rounding() {
        let g = labelled(&[10, 7]);
        let s = make_full_split(&g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let count = |idx: &[usize], c: usize| idx.iter().filter(|&&i| g.labels()[i] == c).count();
        assert_eq!(
            (count(&s.train, 0), count(&s.val, 0), count(&s.test, 0)),
            (6, 2, 2)
        );
        assert_eq!(
            (count(&s.train, 1), count(&s.val, 1), count(&s.test, 1)),
            (5, 1, 1)
        );
        s.validate(g.num_nodes()).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 17);
        assert!(make_full_split(&labelled(&[4]), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn semi_split_sizes_and_reproducibility() {
        let g = labelled(&[400, 500, 800]);
        let a = make_semi_split(&g, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = make_semi_split(&g, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sizes(), (60, 500, 1000));
        a.validate(g.num_nodes()).unwrap();
        assert!(
            make_semi_split(&labelled(&[10, 2000]), &mut ChaCha8Rng::seed_from_u64(0)).is_err()
        );
        assert!(make_semi_split(&labelled(&[30, 30]), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
