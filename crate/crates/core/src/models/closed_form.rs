use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{Graph, SparseOperator};

use super::{deep_layer_name, ModelConfig, ModelState, DEEP_EMBED, INPUT_FEATURES};

/// Iterates `H ← ((1−α)ĜH + αH⁰)·M_l` over the given mapping matrices, with an
/// optional ReLU after each layer. With ReLU off this evaluates the expanded sum
///
/// `H^(K) = (1−α)^K Ĝ^K H⁰ M_1⋯M_K + α Σ_{i<K} (1−α)^i Ĝ^i H⁰ M_{K−i}⋯M_K`.
pub fn closed_form_propagation(
    ghat: &SparseOperator,
    h0: &DenseMatrix,
    alpha: f64,
    mappings: &[DenseMatrix],
    relu: bool,
) -> Result<DenseMatrix> {
    if mappings.is_empty() {
        return Err(Error::Parameter(
            "closed-form propagation needs K >= 1".into(),
        ));
    }
    let mut h = h0.clone();
    for m in mappings {
        let mut s = ghat.spmm(&h)?.scale(1.0 - alpha);
        s.add_scaled(h0, alpha)?;
        h = s.matmul(m)?;
        if relu {
            h = h.map(|v| v.max(0.0));
        }
    }
    Ok(h)
}

/// `H^(K)` of a deep stack built from a model state: `H⁰ = relu(X W_e)`, layer
/// mappings `(1−β_l)I + β_l W^(l)` (identity when mapping is off), `α = 0` when
/// the initial residual is off. Dropout is never applied.
pub fn closed_form_from_state(
    graph: &Graph,
    state: &ModelState,
    config: &ModelConfig,
    k: usize,
    relu: bool,
) -> Result<DenseMatrix> {
    if k == 0 || k > config.layers {
        return Err(Error::Parameter(format!(
            "K must be in 1..={}, got {k}",
            config.layers
        )));
    }
    let tech = config.deep_techniques();
    let x = match state.params.by_name(INPUT_FEATURES) {
        Some(p) => p.value().clone(),
        None => (*graph.input_features()).clone(),
    };
    let we = state.params.get(state.params.require(DEEP_EMBED)?).value();
    let h0 = x.matmul(we)?.map(|v| v.max(0.0));
    let h = config.hidden;
    let mut mappings = Vec::with_capacity(k);
    for l in 1..=k {
        if tech.identity_mapping {
            let w = state
                .params
                .get(state.params.require(&deep_layer_name(l))?)
                .value();
            let beta = config.beta(l);
            let mut m = w.scale(beta);
            for i in 0..h {
                m.set(i, i, m.get(i, i) + 1.0 - beta);
            }
            mappings.push(m);
        } else {
            mappings.push(DenseMatrix::identity(h));
        }
    }
    let alpha = if tech.initial_residual {
        config.alpha
    } else {
        0.0
    };
    closed_form_propagation(&graph.normalized_operator(), &h0, alpha, &mappings, relu)
}
