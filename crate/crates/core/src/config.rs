//! Run configuration, named presets and layered resolution
//! (flag > file > preset > default).

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    full_split, load_bundle, make_semi_split, resolve_dataset, synthesize_features, FeatureSpec,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::models::{Arch, ModelConfig, Techniques};
use crate::trainer::{train, TrainConfig, TrainResult};

/// Seed for sampling a semi-supervised split when the bundle ships none.
pub const SEMI_SPLIT_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// 20 labels per class, 500 validation and 1000 test nodes.
    #[default]
    Semi,
    /// Stratified 60/20/20; run `i` uses split `full.<i>`.
    Full,
    /// Every node in every part.
    All,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Semi => "semi",
            Task::Full => "full",
            Task::All => "all",
        }
    }
}

mod feature_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::data::FeatureSpec;

    pub fn serialize<S: Serializer>(spec: &FeatureSpec, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(spec)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FeatureSpec, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Bundle directory, or a name under the dataset root.
    pub dataset: String,
    pub task: Task,
    #[serde(with = "feature_text")]
    pub features: FeatureSpec,
    /// One training run per seed.
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            preset: None,
            dataset: "cora".into(),
            task: Task::Semi,
            features: FeatureSpec::Native,
            seeds: vec![train.seed],
            out: PathBuf::from("runs"),
            model: ModelConfig::default(),
            train,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.features.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.dataset.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        Ok(())
    }

    /// TOML text; resolving it again yields an identical configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialise")
    }

    /// `"N"` runs seeds `train.seed … train.seed + N − 1`; `"a,b,…"` is an
    /// explicit list.
    pub fn apply_seed_spec(&mut self, spec: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid seed spec '{spec}'"));
        if spec.contains(',') {
            self.seeds = spec
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
        } else {
            let n: u64 = spec.trim().parse().map_err(|_| bad())?;
            self.seeds = (0..n).map(|i| self.train.seed + i).collect();
        }
        if self.seeds.is_empty() {
            return Err(bad());
        }
        Ok(())
    }

    pub fn load_graph(&self) -> Result<Graph> {
        load_bundle(resolve_dataset(&self.dataset))
    }

    /// Split used by the `run`-th seed.
    pub fn split(&self, graph: &Graph, run: usize) -> Result<Split> {
        match self.task {
            Task::Semi => make_semi_split(graph, &mut ChaCha8Rng::seed_from_u64(SEMI_SPLIT_SEED)),
            Task::Full => full_split(graph, run),
            Task::All => {
                let all: Vec<usize> = (0..graph.num_nodes()).collect();
                Ok(Split {
                    train: all.clone(),
                    val: all.clone(),
                    test: all,
                })
            }
        }
    }

    /// The graph with this run's features in place.
    pub fn prepare_graph(&self, graph: &Graph, seed: u64) -> Result<Graph> {
        let mut g = graph.clone();
        synthesize_features(&mut g, &self.features, seed)?;
        Ok(g)
    }

    /// Trains the `run`-th seed.
    pub fn run(&self, graph: &Graph, run: usize) -> Result<TrainResult> {
        let seed = *self.seeds.get(run).ok_or_else(|| {
            Error::Config(format!(
                "run {run} out of range for {} seeds",
                self.seeds.len()
            ))
        })?;
        let split = self.split(graph, run)?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        if self.features == FeatureSpec::Native {
            train(graph, &split, &self.model, &cfg)
        } else {
            train(&self.prepare_graph(graph, seed)?, &split, &self.model, &cfg)
        }
    }
}

#[derive(Clone, Copy)]
struct Row {
    dataset: &'static str,
    name: &'static str,
    task: Task,
    arch: Arch,
    layers: usize,
    hidden: usize,
    lr: f64,
    alpha: f64,
    lambda: f64,
    gamma: f64,
    dropout: f64,
    l2: (f64, f64),
    techniques: [u8; 3],
}

const ROW: Row = Row {
    dataset: "",
    name: "",
    task: Task::Semi,
    arch: Arch::Gcniii,
    layers: 2,
    hidden: 64,
    lr: 0.01,
    alpha: 0.1,
    lambda: 0.5,
    gamma: 0.0,
    dropout: 0.5,
    l2: (5e-4, 5e-4),
    techniques: [1, 1, 1],
};

const CITATION: [&str; 3] = ["cora", "citeseer", "pubmed"];

fn semi_rows() -> Vec<Row> {
    let semi = |dataset, name| Row {
        dataset,
        name,
        ..ROW
    };
    let gcn = |dataset, layers, lr, hidden, dropout| Row {
        arch: Arch::Gcn,
        layers,
        lr,
        hidden,
        dropout,
        ..semi(dataset, "gcn")
    };
    let appnp = |dataset| Row {
        arch: Arch::Appnp,
        layers: 8,
        ..semi(dataset, "appnp")
    };
    vec![
        gcn("cora", 3, 0.001, 512, 0.7),
        appnp("cora"),
        Row {
            arch: Arch::Gcnii,
            layers: 64,
            dropout: 0.6,
            l2: (0.01, 5e-4),
            ..semi("cora", "gcnii")
        },
        Row {
            layers: 64,
            gamma: 0.02,
            dropout: 0.6,
            l2: (0.01, 5e-4),
            ..semi("cora", "gcniii")
        },
        gcn("citeseer", 2, 0.001, 512, 0.5),
        appnp("citeseer"),
        Row {
            arch: Arch::Gcnii,
            layers: 32,
            hidden: 256,
            alpha: 0.2,
            lambda: 0.6,
            dropout: 0.7,
            l2: (0.01, 5e-4),
            ..semi("citeseer", "gcnii")
        },
        Row {
            layers: 16,
            hidden: 256,
            gamma: 0.01,
            l2: (0.01, 5e-4),
            ..semi("citeseer", "gcniii")
        },
        gcn("pubmed", 2, 0.005, 256, 0.7),
        appnp("pubmed"),
        Row {
            arch: Arch::Gcnii,
            layers: 16,
            hidden: 256,
            lambda: 0.4,
            ..semi("pubmed", "gcnii")
        },
        Row {
            layers: 16,
            hidden: 256,
            lambda: 0.4,
            gamma: 0.02,
            ..semi("pubmed", "gcniii")
        },
    ]
}

fn full_rows() -> Vec<Row> {
    let full = |dataset, arch: Arch, layers, alpha, lambda, dropout, l2| Row {
        dataset,
        name: arch.as_str(),
        task: Task::Full,
        arch,
        layers,
        alpha,
        lambda,
        dropout,
        l2: (l2, l2),
        ..ROW
    };
    let gcnii = |dataset, layers, alpha, lambda, l2| {
        full(dataset, Arch::Gcnii, layers, alpha, lambda, 0.5, l2)
    };
    let gcniii = |dataset, layers, alpha, lambda, gamma, dropout, l2, techniques| Row {
        gamma,
        techniques,
        ..full(dataset, Arch::Gcniii, layers, alpha, lambda, dropout, l2)
    };
    vec![
        gcnii("cora", 64, 0.2, 0.5, 1e-4),
        gcniii("cora", 8, 0.2, 0.0, 0.02, 0.5, 1e-4, [1, 1, 0]),
        gcnii("citeseer", 64, 0.5, 0.5, 5e-6),
        Row {
            hidden: 128,
            ..gcniii("citeseer", 8, 0.5, 1.0, 0.02, 0.5, 5e-6, [1, 1, 0])
        },
        gcnii("pubmed", 64, 0.1, 0.5, 5e-6),
        gcniii("pubmed", 32, 0.1, 0.5, 0.02, 0.6, 5e-6, [1, 1, 1]),
        gcnii("chameleon", 8, 0.2, 1.5, 5e-4),
        gcniii("chameleon", 2, 0.0, 0.0, 0.05, 0.0, 5e-4, [1, 0, 0]),
        gcnii("cornell", 16, 0.5, 1.0, 1e-3),
        gcniii("cornell", 2, 0.8, 1.0, 0.02, 0.5, 1e-3, [1, 1, 1]),
        gcnii("texas", 32, 0.5, 1.5, 1e-4),
        gcniii("texas", 2, 0.5, 1.5, 0.05, 0.5, 1e-4, [1, 1, 1]),
        gcnii("wisconsin", 16, 0.5, 1.0, 5e-4),
        gcniii("wisconsin", 3, 0.6, 1.0, 0.1, 0.8, 5e-4, [1, 1, 1]),
    ]
}

fn row_config(r: &Row, task_name: &str) -> RunConfig {
    let preset = format!("{}-{}-{}", r.dataset, r.name, task_name);
    RunConfig {
        preset: Some(preset),
        dataset: r.dataset.into(),
        task: r.task,
        model: ModelConfig {
            arch: r.arch,
            layers: r.layers,
            hidden: r.hidden,
            alpha: r.alpha,
            lambda: r.lambda,
            gamma: r.gamma,
            dropout: r.dropout,
            techniques: Techniques::from_flags(r.techniques),
            ..ModelConfig::default()
        },
        train: TrainConfig {
            lr: r.lr,
            l2_a: r.l2.0,
            l2_b: r.l2.1,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

/// Linear, IMLinear, MLP, GCN and GCN-v without dropout, 200 epochs, reporting
/// the final epoch.
fn study_presets() -> Vec<RunConfig> {
    let mut out = Vec::new();
    for ds in CITATION {
        for (name, arch) in [
            ("linear", Arch::Linear),
            ("imlinear", Arch::Imlinear),
            ("mlp", Arch::Mlp),
            ("gcn", Arch::Gcn),
            ("gcnv", Arch::GcnV),
        ] {
            let mut c = row_config(
                &Row {
                    dataset: ds,
                    name,
                    arch,
                    dropout: 0.0,
                    ..ROW
                },
                "study",
            );
            c.train.max_epochs = 200;
            c.train.patience = 200;
            c.train.restore_best = false;
            out.push(c);
        }
    }
    out
}

/// Uniform technique-ablation settings, and shallow baselines with a plain
/// linear wide component at γ = 0.1.
fn ablation_presets() -> Vec<RunConfig> {
    let mut out = Vec::new();
    let semi = semi_rows();
    for ds in CITATION {
        let mut c = row_config(
            &Row {
                dataset: ds,
                name: "gcniii",
                layers: 64,
                gamma: 0.1,
                l2: (0.01, 5e-4),
                ..ROW
            },
            "ablation",
        );
        c.train.seed = 42;
        c.seeds = vec![42];
        out.push(c);
        for base in ["gcn", "appnp"] {
            let row = semi
                .iter()
                .find(|r| r.dataset == ds && r.name == base)
                .expect("every citation dataset has gcn and appnp rows");
            let layers = if base == "gcn" { 2 } else { row.layers };
            let mut c = row_config(
                &Row {
                    layers,
                    gamma: 0.1,
                    techniques: [0, 1, 1],
                    ..*row
                },
                "wide",
            );
            c.seeds = vec![42];
            out.push(c);
        }
    }
    out
}

/// Every shipped preset, in a stable order.
pub fn presets() -> Vec<RunConfig> {
    let mut out: Vec<RunConfig> = semi_rows().iter().map(|r| row_config(r, "semi")).collect();
    out.extend(full_rows().iter().map(|r| row_config(r, "full")));
    out.push(row_config(
        &Row {
            dataset: "cora",
            name: "gcn2",
            arch: Arch::Gcn,
            hidden: 16,
            ..ROW
        },
        "semi",
    ));
    out.extend(study_presets());
    out.extend(ablation_presets());
    out
}

pub fn preset_names() -> Vec<String> {
    presets().into_iter().filter_map(|p| p.preset).collect()
}

pub fn preset(name: &str) -> Result<RunConfig> {
    presets()
        .into_iter()
        .find(|p| p.preset.as_deref() == Some(name))
        .ok_or_else(|| Error::UnknownPreset {
            name: name.into(),
            available: preset_names(),
        })
}

/// Parses `key.path=value`. The value is read as a TOML literal, falling back
/// to a bare string.
pub fn parse_set(assignment: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("invalid key '{key}'")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut t = table;
    for p in parents {
        let entry = t
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{p}' is not a table")))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn to_table(cfg: &RunConfig) -> toml::Table {
    toml::Table::try_from(cfg).expect("run configs always serialise")
}

/// Layers, lowest first: defaults, the preset (flag, else the file's `preset`
/// key), the file, then `key=value` assignments in order.
pub fn resolve_run_config(
    preset_flag: Option<&str>,
    file_text: Option<&str>,
    sets: &[String],
) -> Result<RunConfig> {
    let file: toml::Table = match file_text {
        Some(text) => {
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?
        }
        None => toml::Table::new(),
    };
    let file_preset = file
        .get("preset")
        .and_then(|v| v.as_str())
        .map(str::to_string);
    let mut table = match preset_flag.map(str::to_string).or(file_preset) {
        Some(name) => to_table(&preset(&name)?),
        None => to_table(&RunConfig::default()),
    };
    let flag_preset = preset_flag.map(|p| toml::Value::String(p.to_string()));
    merge(&mut table, file);
    if let Some(p) = flag_preset {
        table.insert("preset".into(), p);
    }
    for s in sets {
        let (path, value) = parse_set(s)?;
        set_path(&mut table, &path, value)?;
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
