use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Gcniii,
    Gcnii,
    Appnp,
    Gcn,
    Resgcn,
    GcnV,
    Mlp,
    Linear,
    Imlinear,
}

impl Arch {
    pub const ALL: [Arch; 9] = [
        Arch::Gcniii,
        Arch::Gcnii,
        Arch::Appnp,
        Arch::Gcn,
        Arch::Resgcn,
        Arch::GcnV,
        Arch::Mlp,
        Arch::Linear,
        Arch::Imlinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Gcniii => "gcniii",
            Arch::Gcnii => "gcnii",
            Arch::Appnp => "appnp",
            Arch::Gcn => "gcn",
            Arch::Resgcn => "resgcn",
            Arch::GcnV => "gcn_v",
            Arch::Mlp => "mlp",
            Arch::Linear => "linear",
            Arch::Imlinear => "imlinear",
        }
    }

    /// Pure wide-component models.
    pub fn is_wide_only(self) -> bool {
        matches!(self, Arch::Linear | Arch::Imlinear)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Arch::ALL.iter().map(|a| a.as_str()).collect();
                Error::Config(format!(
                    "unknown architecture '{s}' (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Techniques {
    pub intersect_memory: bool,
    pub initial_residual: bool,
    pub identity_mapping: bool,
}

impl Default for Techniques {
    fn default() -> Self {
        Self {
            intersect_memory: true,
            initial_residual: true,
            identity_mapping: true,
        }
    }
}

impl Techniques {
    /// From the `[memory, residual, mapping]` triple used in preset tables.
    pub fn from_flags(flags: [u8; 3]) -> Self {
        Self {
            intersect_memory: flags[0] != 0,
            initial_residual: flags[1] != 0,
            identity_mapping: flags[2] != 0,
        }
    }
}

/// Which of the three dropout sites are active; all share `ModelConfig::dropout`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutPositions {
    /// Before the feature embedding / first layer.
    pub input: bool,
    /// Inside every hidden layer.
    pub per_layer: bool,
    /// Before the prediction layer.
    pub pre_prediction: bool,
}

impl Default for DropoutPositions {
    fn default() -> Self {
        Self {
            input: true,
            per_layer: true,
            pre_prediction: true,
        }
    }
}

/// Rows used for training-mode batch-norm statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnStatistics {
    #[default]
    AllNodes,
    TrainNodes,
}

/// Where the per-layer dropout sits inside a deep layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutPlacement {
    #[default]
    BeforePropagation,
    BeforeTransformation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub hidden: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub dropout: f64,
    pub dropedge: f64,
    pub techniques: Techniques,
    pub wide_batchnorm: bool,
    /// Adds the wide component (weighted by `gamma`) to a baseline architecture.
    pub wide: bool,
    pub dropout_positions: DropoutPositions,
    pub dropout_placement: DropoutPlacement,
    pub bn_statistics: BnStatistics,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Gcniii,
            layers: 64,
            hidden: 64,
            alpha: 0.1,
            lambda: 0.5,
            gamma: 0.02,
            dropout: 0.6,
            dropedge: 0.0,
            techniques: Techniques::default(),
            wide_batchnorm: false,
            wide: false,
            dropout_positions: DropoutPositions::default(),
            dropout_placement: DropoutPlacement::default(),
            bn_statistics: BnStatistics::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("gamma", self.gamma)?;
        for (name, p) in [("dropout", self.dropout), ("dropedge", self.dropedge)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be >= 1".into()));
        }
        if self.layers == 0 && self.arch != Arch::Appnp {
            return Err(Error::Config(format!(
                "{} needs at least one layer",
                self.arch
            )));
        }
        Ok(())
    }

    /// `β_l = λ / l`, 1-based.
    pub fn beta(&self, layer: usize) -> f64 {
        self.lambda / layer as f64
    }

    pub fn has_wide(&self) -> bool {
        self.arch == Arch::Gcniii || self.arch.is_wide_only() || self.wide
    }

    pub fn has_deep(&self) -> bool {
        !self.arch.is_wide_only()
    }

    /// Whether the wide logits get one extra propagation.
    pub fn wide_memory(&self) -> bool {
        match self.arch {
            Arch::Linear => false,
            Arch::Imlinear => true,
            _ => self.techniques.intersect_memory,
        }
    }

    /// Techniques the deep stack actually uses; GCNII always has both.
    pub fn deep_techniques(&self) -> Techniques {
        match self.arch {
            Arch::Gcnii => Techniques {
                initial_residual: true,
                identity_mapping: true,
                ..self.techniques
            },
            _ => self.techniques,
        }
    }

    /// Mixing weight of the wide component in the final logits.
    pub fn wide_weight(&self) -> f64 {
        if self.arch.is_wide_only() {
            1.0
        } else if self.has_wide() {
            self.gamma
        } else {
            0.0
        }
    }
}
