//! Graph edge weights and the hard/soft gating of node histories.

use alloc::vec;


use super::config::{GateVariant, ModelConfig};
use super::params::ModelParams;
use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Dead-sensor guard: rows whose history max falls below this use 1.0 for
/// normalization and output rescaling.
pub const HISTORY_MAX_FLOOR: f64 = 1e-6;

/// How a given stacked layer obtains its gate matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatePlan {
    /// exp(eps * E E^T) from this layer's own embedding.
    LearnableOwn,
    /// exp(eps * E E^T) from the shared gate embedding.
    LearnableShared,
    FixedIdentity,
    FixedOnes,
    /// Row-softmax soft weights, no hard threshold.
    Attention,
}

impl GatePlan {
    /// Resolve the variant for one layer of a `layer_count`-deep stack.
    pub fn for_layer(variant: GateVariant, layer_index: usize, layer_count: usize) -> GatePlan {
        match variant {
            GateVariant::LearnablePerLayer => GatePlan::LearnableOwn,
            GateVariant::SharedLearnable => GatePlan::LearnableShared,
            GateVariant::LearnableFirstLayer => {
                if layer_index == 0 {
                    GatePlan::LearnableOwn
                } else {
                    GatePlan::FixedOnes
                }
            }
            GateVariant::Ones => GatePlan::FixedOnes,
            GateVariant::Identity => GatePlan::FixedIdentity,
            GateVariant::GraphAttention => GatePlan::Attention,
            GateVariant::IdentityLastLayer => {
                if layer_index + 1 == layer_count {
                    GatePlan::FixedIdentity
                } else {
                    GatePlan::LearnableOwn
                }
            }
        }
    }
}

/// W = exp(eps * E E^T). Symmetric by construction; overflow saturates
/// to the max finite value with a warning.
pub fn edge_weights(tape: &mut Tape, embedding: Var, epsilon: f64) -> Result<Var> {
    let et = tape.transpose(embedding)?;
    let s = tape.matmul(embedding, et)?;
    let scaled = tape.scale(s, epsilon)?;
    tape.exp(scaled, true)
}

/// Row-wise softmax with the usual max-shift for stability.
pub fn row_softmax(tape: &mut Tape, scores: Var) -> Result<Var> {
    let n = tape.value(scores).cols();
    let m = tape.row_max(scores)?;
    let mb = tape.broadcast_col(m, n)?;
    let shifted = tape.sub(scores, mb)?;
    let e = tape.exp(shifted, false)?;
    let sums = tape.row_sum(e)?;
    let sb = tape.broadcast_col(sums, n)?;
    tape.div(e, sb, f64::MIN_POSITIVE)
}

/// Row-wise history maximum with the dead-sensor floor applied.
pub fn history_max(tape: &mut Tape, x: Var) -> Result<Var> {
    let raw = tape.row_max(x)?;
    tape.floor_substitute(raw, HISTORY_MAX_FLOOR, 1.0)
}

/// Hard graph gate: G[i, j*w + k] = relu((W[i,j] * X[j,k] - xmax_i) / xmax_i)
/// where `xmax` is the (floored) row maximum of the histories.
pub fn hard_gate(tape: &mut Tape, w_mat: Var, x: Var, xmax: Var) -> Result<Var> {
    let (n, w) = {
        let t = tape.value(x);
        (t.rows(), t.cols())
    };
    let wrep = tape.repeat_cols(w_mat, w)?;
    let xflat = tape.reshape(x, vec![1, n * w])?;
    let xb = tape.broadcast_row(xflat, n)?;
    let scaled = tape.mul(wrep, xb)?;
    let xmb = tape.broadcast_col(xmax, n * w)?;
    let centered = tape.sub(scaled, xmb)?;
    let ratio = tape.div(centered, xmb, HISTORY_MAX_FLOOR)?;
    tape.relu(ratio)
}

/// Soft gate for the attention ablation: G[i, j*w + k] =
/// A[i,j] * X[j,k] / xmax_i, with no subtraction and no threshold.
pub fn soft_gate(tape: &mut Tape, attn: Var, x: Var, xmax: Var) -> Result<Var> {
    let (n, w) = {
        let t = tape.value(x);
        (t.rows(), t.cols())
    };
    let arep = tape.repeat_cols(attn, w)?;
    let xflat = tape.reshape(x, vec![1, n * w])?;
    let xb = tape.broadcast_row(xflat, n)?;
    let scaled = tape.mul(arep, xb)?;
    let xmb = tape.broadcast_col(xmax, n * w)?;
    tape.div(scaled, xmb, HISTORY_MAX_FLOOR)
}

/// Standalone hard gate computing its own history max, as specified.
pub fn graph_gate(tape: &mut Tape, w_mat: Var, x: Var) -> Result<Var> {
    let xmax = history_max(tape, x)?;
    hard_gate(tape, w_mat, x, xmax)
}

/// Evaluate one layer's gate matrix from trained parameters (for export
/// and analysis). Returns row-softmax weights for the attention variant
/// and the fixed matrix for identity/ones.
pub fn layer_gate_matrix(
    params: &ModelParams,
    cfg: &ModelConfig,
    layer_index: usize,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let plan = GatePlan::for_layer(cfg.gate_variant, layer_index, cfg.layers);
    let var = match plan {
        GatePlan::FixedIdentity => tape.constant(Tensor::identity(cfg.nodes)),
        GatePlan::FixedOnes => tape.constant(Tensor::full(vec![cfg.nodes, cfg.nodes], 1.0)),
        GatePlan::LearnableOwn => {
            let e = tape.constant(params.layers[layer_index].embedding.clone());
            edge_weights(&mut tape, e, cfg.epsilon)?
        }
        GatePlan::LearnableShared => {
            let shared = params
                .shared_gate_embedding
                .as_ref()
                .expect("shared gate embedding present for shared_learnable");
            let e = tape.constant(shared.clone());
            edge_weights(&mut tape, e, cfg.epsilon)?
        }
        GatePlan::Attention => {
            let e = tape.constant(params.layers[layer_index].embedding.clone());
            let et = tape.transpose(e)?;
            let s = tape.matmul(e, et)?;
            let scaled = tape.scale(s, cfg.epsilon)?;
            row_softmax(&mut tape, scaled)?
        }
    };
    Ok(tape.value(var).clone())
}
