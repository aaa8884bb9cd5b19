use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

pub type ParamId = usize;

/// Which L2 coefficient applies to a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayGroup {
    /// Embedding, prediction and wide weights.
    A,
    /// Per-layer hidden weights.
    B,
    None,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Arc<DenseMatrix>,
    grad: DenseMatrix,
    group: DecayGroup,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &DenseMatrix {
        &self.value
    }

    pub(crate) fn value_arc(&self) -> Arc<DenseMatrix> {
        Arc::clone(&self.value)
    }

    /// Mutable access; copies only if a tape still holds the old value.
    pub fn value_mut(&mut self) -> &mut DenseMatrix {
        Arc::make_mut(&mut self.value)
    }

    pub fn set_value(&mut self, value: DenseMatrix) -> Result<()> {
        self.value
            .check_same_shape(&value, "Parameter::set_value")?;
        self.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self) -> &DenseMatrix {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut DenseMatrix {
        &mut self.grad
    }

    pub fn group(&self) -> DecayGroup {
        self.group
    }
}

/// Named parameters in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: DenseMatrix,
        group: DecayGroup,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("parameter initialisation"));
        }
        let id = self.params.len();
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.clone(),
            value: Arc::new(value),
            grad,
            group,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::Config(format!("model state has no parameter '{name}'")))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| &self.params[id])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Running mean / biased variance per column.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(dim: usize) -> Self {
        Self {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    pub(crate) fn update(&mut self, mean: &[f64], var: &[f64]) {
        for (r, m) in self.running_mean.iter_mut().zip(mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}
