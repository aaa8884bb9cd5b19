//! On-disk graph bundles, split generation and feature synthesis.
//!
//! A bundle is a directory of line-oriented text files:
//!
//! | file          | content                                                        |
//! |---------------|----------------------------------------------------------------|
//! | `meta`        | `key value` lines: `name`, `nodes`, `features`, `classes`,     |
//! |               | `feature_format` (`sparse`/`dense`), `normalize_features`      |
//! | `edges`       | `u v` per undirected edge                                      |
//! | `features`    | sparse: `row col value` per nonzero; dense: one row per line   |
//! | `labels`      | one class id per line, node order                              |
//! | `split.<name>`| three lines `train …`, `val …`, `test …` of node ids           |
//!
//! Values are written in shortest round-trip decimal, so save → load → save is
//! byte-identical.

mod features;
mod split;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use features::{synthesize_features, FeatureSpec};
pub use split::{full_split, make_full_split, make_semi_split, FULL_SPLIT_PREFIX, SEMI_SPLIT};
pub use synthetic::{contextual_sbm, CsbmParams};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};

/// Environment variable naming the directory that holds dataset bundles.
pub const DATA_ENV: &str = "GCNIII_DATA";

/// `$GCNIII_DATA`, or `data/` under the current directory.
pub fn dataset_root() -> PathBuf {
    std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// An existing directory is used as is; otherwise the name is looked up under
/// [`dataset_root`].
pub fn resolve_dataset(name_or_path: &str) -> PathBuf {
    let p = PathBuf::from(name_or_path);
    if p.is_dir() {
        p
    } else {
        dataset_root().join(name_or_path)
    }
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} '{tok}'")))
}

fn check_index(path: &Path, line: usize, idx: usize, bound: usize, what: &str) -> Result<()> {
    if idx >= bound {
        return Err(Error::Index {
            index: idx,
            bound,
            context: format!("{what} at {}:{line}", path.display()),
        });
    }
    Ok(())
}

struct Meta {
    name: Option<String>,
    nodes: usize,
    features: usize,
    classes: usize,
    sparse: bool,
    normalize: bool,
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join("meta");
    let text = read(&path)?;
    let mut kv = BTreeMap::new();
    for (ln, l) in lines(&text) {
        let (k, v) = l
            .split_once(char::is_whitespace)
            .ok_or_else(|| parse_err(&path, ln, "expected 'key value'"))?;
        kv.insert(k.to_string(), (ln, v.trim().to_string()));
    }
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| parse_err(&path, 0, format!("missing key '{k}'")))
    };
    let count = |k: &str| -> Result<usize> {
        let (ln, v) = get(k)?;
        parse_num(&path, *ln, v, k)
    };
    let sparse = match kv.get("feature_format").map(|(ln, v)| (*ln, v.as_str())) {
        None | Some((_, "sparse")) => true,
        Some((_, "dense")) => false,
        Some((ln, other)) => {
            return Err(parse_err(
                &path,
                ln,
                format!("feature_format must be sparse or dense, got '{other}'"),
            ))
        }
    };
    let normalize = match kv
        .get("normalize_features")
        .map(|(ln, v)| (*ln, v.as_str()))
    {
        None | Some((_, "true")) => true,
        Some((_, "false")) => false,
        Some((ln, other)) => {
            return Err(parse_err(
                &path,
                ln,
                format!("normalize_features must be true or false, got '{other}'"),
            ))
        }
    };
    Ok(Meta {
        name: kv.get("name").map(|(_, v)| v.clone()),
        nodes: count("nodes")?,
        features: count("features")?,
        classes: count("classes")?,
        sparse,
        normalize,
    })
}

fn read_split(path: &Path, n: usize) -> Result<Split> {
    let text = read(path)?;
    let mut parts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (ln, l) in lines(&text) {
        let mut toks = l.split_whitespace();
        let key = toks.next().expect("non-empty line");
        if !matches!(key, "train" | "val" | "test") {
            return Err(parse_err(
                path,
                ln,
                format!("expected train/val/test, got '{key}'"),
            ));
        }
        let mut idx = Vec::new();
        for t in toks {
            let i: usize = parse_num(path, ln, t, "node index")?;
            check_index(path, ln, i, n, "split index")?;
            idx.push(i);
        }
        if parts.insert(key, idx).is_some() {
            return Err(parse_err(path, ln, format!("duplicate '{key}' line")));
        }
    }
    let mut take = |k: &str| {
        parts
            .remove(k)
            .ok_or_else(|| parse_err(path, 0, format!("missing '{k}' line")))
    };
    Ok(Split {
        train: take("train")?,
        val: take("val")?,
        test: take("test")?,
    })
}

/// Reads a bundle directory into a [`Graph`].
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let meta = read_meta(dir)?;
    let n = meta.nodes;

    let path = dir.join("edges");
    let text = read(&path)?;
    let mut edges = Vec::new();
    for (ln, l) in lines(&text) {
        let mut toks = l.split_whitespace();
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(parse_err(&path, ln, "expected 'u v'"));
        };
        let u: usize = parse_num(&path, ln, a, "node index")?;
        let v: usize = parse_num(&path, ln, b, "node index")?;
        check_index(&path, ln, u, n, "edge endpoint")?;
        check_index(&path, ln, v, n, "edge endpoint")?;
        edges.push((u, v));
    }

    let path = dir.join("features");
    let text = read(&path)?;
    let mut x = DenseMatrix::zeros(n, meta.features);
    if meta.sparse {
        for (ln, l) in lines(&text) {
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(parse_err(&path, ln, "expected 'row col value'"));
            }
            let i: usize = parse_num(&path, ln, t[0], "row")?;
            let j: usize = parse_num(&path, ln, t[1], "column")?;
            let v: f64 = parse_num(&path, ln, t[2], "value")?;
            check_index(&path, ln, i, n, "feature row")?;
            check_index(&path, ln, j, meta.features, "feature column")?;
            x.set(i, j, v);
        }
    } else {
        let mut row = 0;
        for (ln, l) in lines(&text) {
            check_index(&path, ln, row, n, "feature row")?;
            let vals: Vec<&str> = l.split_whitespace().collect();
            if vals.len() != meta.features {
                return Err(parse_err(
                    &path,
                    ln,
                    format!("expected {} values, found {}", meta.features, vals.len()),
                ));
            }
            for (j, t) in vals.iter().enumerate() {
                x.set(row, j, parse_num(&path, ln, t, "value")?);
            }
            row += 1;
        }
        if row != n {
            return Err(parse_err(
                &path,
                0,
                format!("expected {n} feature rows, found {row}"),
            ));
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("bundle features"));
    }

    let path = dir.join("labels");
    let text = read(&path)?;
    let mut labels = Vec::with_capacity(n);
    for (ln, l) in lines(&text) {
        let c: usize = parse_num(&path, ln, l, "label")?;
        check_index(&path, ln, c, meta.classes, "label")?;
        labels.push(c);
    }
    if labels.len() != n {
        return Err(Error::LabelCount {
            expected: n,
            found: labels.len(),
        });
    }

    let name = meta.name.clone().unwrap_or_else(|| {
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "graph".into())
    });
    let mut graph = Graph::new(name, n, edges, x, labels, meta.classes)?;
    graph.set_normalize_features(meta.normalize);

    let mut split_files: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let fname = e.file_name().to_string_lossy().into_owned();
            fname
                .strip_prefix("split.")
                .map(|s| (s.to_string(), e.path()))
        })
        .collect();
    split_files.sort();
    for (name, path) in split_files {
        let split = read_split(&path, n)?;
        graph
            .insert_split(name, split)
            .map_err(|e| parse_err(&path, 0, e.to_string()))?;
    }
    Ok(graph)
}

/// Writes a graph in canonical form. Features are stored sparse when at most
/// half the entries are nonzero.
pub fn save_bundle(graph: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let x = graph.raw_features();
    let nnz = x.data().iter().filter(|&&v| v != 0.0).count();
    let sparse = 2 * nnz <= x.data().len();

    let mut meta = String::new();
    writeln!(meta, "name {}", graph.name()).unwrap();
    writeln!(meta, "nodes {}", graph.num_nodes()).unwrap();
    writeln!(meta, "features {}", graph.num_features()).unwrap();
    writeln!(meta, "classes {}", graph.num_classes()).unwrap();
    writeln!(
        meta,
        "feature_format {}",
        if sparse { "sparse" } else { "dense" }
    )
    .unwrap();
    writeln!(meta, "normalize_features {}", graph.normalize_features()).unwrap();
    write_file(&dir.join("meta"), &meta)?;

    let mut edges = String::new();
    for (u, v) in graph.listed_edges() {
        writeln!(edges, "{u} {v}").unwrap();
    }
    write_file(&dir.join("edges"), &edges)?;

    let mut feats = String::new();
    for i in 0..x.rows() {
        if sparse {
            for (j, v) in x.row(i).iter().enumerate() {
                if *v != 0.0 {
                    writeln!(feats, "{i} {j} {v}").unwrap();
                }
            }
        } else {
            let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(feats, "{}", row.join(" ")).unwrap();
        }
    }
    write_file(&dir.join("features"), &feats)?;

    let mut labels = String::new();
    for c in graph.labels() {
        writeln!(labels, "{c}").unwrap();
    }
    write_file(&dir.join("labels"), &labels)?;

    for (name, split) in graph.splits() {
        let mut s = String::new();
        for (key, idx) in [
            ("train", &split.train),
            ("val", &split.val),
            ("test", &split.test),
        ] {
            s.push_str(key);
            for i in idx {
                write!(s, " {i}").unwrap();
            }
            s.push('\n');
        }
        write_file(&dir.join(format!("split.{name}")), &s)?;
    }
    Ok(())
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}
