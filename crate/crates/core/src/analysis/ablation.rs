use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::models::{Arch, ModelConfig};
use crate::trainer::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Technique {
    IntersectMemory,
    InitialResidual,
    IdentityMapping,
}

/// One switch flipped relative to the base model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Change {
    Control,
    Remove(Technique),
    AddWide,
}

impl fmt::Display for Change {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Change::Control => "base",
            Change::Remove(Technique::IntersectMemory) => "-memo",
            Change::Remove(Technique::InitialResidual) => "-res",
            Change::Remove(Technique::IdentityMapping) => "-map",
            Change::AddWide => "+wide",
        })
    }
}

impl Change {
    /// The base config with this change applied; errors when the switch has no
    /// effect on `base`.
    pub fn apply(self, base: &ModelConfig) -> Result<ModelConfig> {
        let mut m = base.clone();
        let ineffective = || {
            Error::Config(format!(
                "change '{self}' has no effect on a {} base",
                base.arch
            ))
        };
        match self {
            Change::Control => {}
            Change::Remove(Technique::IntersectMemory) => {
                if !base.has_wide() || base.arch.is_wide_only() || !base.techniques.intersect_memory
                {
                    return Err(ineffective());
                }
                m.techniques.intersect_memory = false;
            }
            Change::Remove(t) => {
                let on = match t {
                    Technique::InitialResidual => &mut m.techniques.initial_residual,
                    _ => &mut m.techniques.identity_mapping,
                };
                if base.arch != Arch::Gcniii || !*on {
                    return Err(ineffective());
                }
                *on = false;
            }
            Change::AddWide => {
                if base.has_wide() {
                    return Err(ineffective());
                }
                m.wide = true;
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug)]
pub struct AblationPlan {
    pub base: ModelConfig,
    pub train: TrainConfig,
    /// Every change is trained with each of these seeds.
    pub seeds: Vec<u64>,
    pub changes: Vec<Change>,
}

impl AblationPlan {
    /// Base plus the three technique removals.
    pub fn techniques(base: ModelConfig, train: TrainConfig, seeds: Vec<u64>) -> Self {
        Self {
            base,
            train,
            seeds,
            changes: vec![
                Change::Control,
                Change::Remove(Technique::IntersectMemory),
                Change::Remove(Technique::InitialResidual),
                Change::Remove(Technique::IdentityMapping),
            ],
        }
    }

    /// Base plus the wide component.
    pub fn wide(base: ModelConfig, train: TrainConfig, seeds: Vec<u64>) -> Self {
        Self {
            base,
            train,
            seeds,
            changes: vec![Change::Control, Change::AddWide],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() || self.changes.is_empty() {
            return Err(Error::Config(
                "ablation plan needs at least one seed and one change".into(),
            ));
        }
        for c in &self.changes {
            c.apply(&self.base)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub change: Change,
    pub config: ModelConfig,
    /// Test accuracy per plan seed.
    pub test_acc: Vec<f64>,
    pub mean: f64,
    /// `mean − base mean`.
    pub delta: f64,
}

/// Trains every `(change, seed)` pair in parallel. The base model is always
/// trained so deltas exist even without a control row.
pub fn run_ablation(plan: &AblationPlan, graph: &Graph, split: &Split) -> Result<Vec<AblationRow>> {
    plan.validate()?;
    let mut changes = plan.changes.clone();
    if !changes.contains(&Change::Control) {
        changes.insert(0, Change::Control);
    }
    let configs: Vec<ModelConfig> = changes
        .iter()
        .map(|c| c.apply(&plan.base))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..changes.len())
        .flat_map(|i| plan.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let cfg = TrainConfig {
                seed,
                ..plan.train.clone()
            };
            train(graph, split, &configs[i], &cfg).map(|r| r.test_acc)
        })
        .collect::<Result<_>>()?;
    let k = plan.seeds.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let base_idx = changes
        .iter()
        .position(|c| *c == Change::Control)
        .expect("control present");
    let base_mean = mean(&accs[base_idx * k..(base_idx + 1) * k]);
    Ok(changes
        .iter()
        .zip(configs)
        .enumerate()
        .filter(|(_, (c, _))| plan.changes.contains(c))
        .map(|(i, (&change, config))| {
            let test_acc = accs[i * k..(i + 1) * k].to_vec();
            let m = mean(&test_acc);
            AblationRow {
                change,
                config,
                test_acc,
                mean: m,
                delta: m - base_mean,
            }
        })
        .collect())
}

/// `variant,seeds,mean,delta` plus one accuracy column per seed.
pub fn ablation_csv(rows: &[AblationRow], seeds: &[u64]) -> String {
    let mut s = String::from("variant,mean,delta");
    for seed in seeds {
        s.push_str(&format!(",seed_{seed}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{}", r.change, r.mean, r.delta));
        for a in &r.test_acc {
            s.push_str(&format!(",{a}"));
        }
        s.push('\n');
    }
    s
}
