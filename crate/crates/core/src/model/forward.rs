//! Forward pass: layer wiring and stacking.

use alloc::vec::Vec;

use super::config::ModelConfig;
use super::gate::{edge_weights, hard_gate, history_max, row_softmax, soft_gate, GatePlan};
use super::params::ModelParams;
use crate::error::{CoreError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Floor applied to the time-gate input effect before division.
pub const TIME_GATE_DIVISION_FLOOR: f64 = 0.01;

pub struct BlockVars {
    pub fc: Vec<(Var, Var)>,
    pub backcast: Var,
    pub forecast: Var,
}

pub struct LayerVars {
    pub embedding: Var,
    pub tg_hidden: (Var, Var),
    pub tg_input_head: (Var, Var),
    pub tg_output_head: (Var, Var),
    pub blocks: Vec<BlockVars>,
}

/// Tape handles for every parameter, registered in [`ModelParams::visit`]
/// order so gradients can be read back positionally.
pub struct ModelVars {
    pub flat: Vec<Var>,
    pub layers: Vec<LayerVars>,
    pub shared_gate_embedding: Option<Var>,
}

impl ModelVars {
    /// Register every parameter tensor as a tape leaf. Each tensor is
    /// registered exactly once; `trainable` controls requires_grad.
    pub fn register(tape: &mut Tape, params: &ModelParams, trainable: bool) -> ModelVars {
        let mut flat = Vec::new();
        let mut reg = |tape: &mut Tape, t: &Tensor| {
            let v = tape.leaf(t.clone(), trainable);
            flat.push(v);
            v
        };
        let mut layers = Vec::with_capacity(params.layers.len());
        for layer in &params.layers {
            let embedding = reg(tape, &layer.embedding);
            let tg = &layer.time_gate;
            let tg_hidden = (reg(tape, &tg.hidden.weight), reg(tape, &tg.hidden.bias));
            let tg_input_head = (
                reg(tape, &tg.input_head.weight),
                reg(tape, &tg.input_head.bias),
            );
            let tg_output_head = (
                reg(tape, &tg.output_head.weight),
                reg(tape, &tg.output_head.bias),
            );
            let mut blocks = Vec::with_capacity(layer.blocks.len());
            for block in &layer.blocks {
                let fc = block
                    .fc
                    .iter()
                    .map(|l| (reg(tape, &l.weight), reg(tape, &l.bias)))
                    .collect();
                let backcast = reg(tape, &block.backcast);
                let forecast = reg(tape, &block.forecast);
                blocks.push(BlockVars {
                    fc,
                    backcast,
                    forecast,
                });
            }
            layers.push(LayerVars {
                embedding,
                tg_hidden,
                tg_input_head,
                tg_output_head,
                blocks,
            });
        }
        let shared_gate_embedding = params
            .shared_gate_embedding
            .as_ref()
            .map(|t| reg(tape, t));
        ModelVars {
            flat,
            layers,
            shared_gate_embedding,
        }
    }
}

/// Time gate: one shared ReLU hidden layer over [time_feature, E_i], then
/// two linear heads giving the input (N x w) and output (N x H) effects.
fn time_gate(
    tape: &mut Tape,
    layer: &LayerVars,
    time_feature: Var,
    nodes: usize,
) -> Result<(Var, Var)> {
    let td = tape.value(time_feature).cols();
    let gate_in = if td > 0 {
        let tf = tape.broadcast_row(time_feature, nodes)?;
        tape.concat_cols(&[tf, layer.embedding])?
    } else {
        layer.embedding
    };
    let h_lin = tape.matmul(gate_in, layer.tg_hidden.0)?;
    let hb = tape.broadcast_row(layer.tg_hidden.1, nodes)?;
    let h_aff = tape.add(h_lin, hb)?;
    let hidden = tape.relu(h_aff)?;

    let head = |tape: &mut Tape, (w, b): (Var, Var)| -> Result<Var> {
        let lin = tape.matmul(hidden, w)?;
        let bb = tape.broadcast_row(b, nodes)?;
        tape.add(lin, bb)
    };
    let input_effect = head(tape, layer.tg_input_head)?;
    let output_effect = head(tape, layer.tg_output_head)?;
    Ok((input_effect, output_effect))
}

/// R residual blocks over the assembled per-node columns Z (din x N):
/// each block runs L FC+ReLU layers, subtracts its backcast from the
/// running residual (re-rectified) and adds its partial forecast.
pub fn fc_ts_block_stack(tape: &mut Tape, layer: &LayerVars, z: Var) -> Result<Var> {
    let n = tape.value(z).cols();
    let mut residual = z;
    let mut forecast_sum: Option<Var> = None;
    for block in &layer.blocks {
        let mut h = residual;
        for &(w, b) in &block.fc {
            let lin = tape.matmul(w, h)?;
            let bb = tape.broadcast_col(b, n)?;
            let aff = tape.add(lin, bb)?;
            h = tape.relu(aff)?;
        }
        let backcast = tape.matmul(block.backcast, h)?;
        let diff = tape.sub(residual, backcast)?;
        residual = tape.relu(diff)?;
        let ht = tape.transpose(h)?;
        let part = tape.matmul(ht, block.forecast)?;
        forecast_sum = Some(match forecast_sum {
            None => part,
            Some(acc) => tape.add(acc, part)?,
        });
    }
    Ok(forecast_sum.expect("at least one residual block"))
}

fn gate_matrix_var(
    tape: &mut Tape,
    plan: GatePlan,
    layer: &LayerVars,
    shared: Option<Var>,
    cfg: &ModelConfig,
) -> Result<Option<Var>> {
    Ok(match plan {
        GatePlan::FixedIdentity => Some(tape.constant(Tensor::identity(cfg.nodes))),
        GatePlan::FixedOnes => Some(tape.constant(Tensor::full(
            alloc::vec![cfg.nodes, cfg.nodes],
            1.0,
        ))),
        GatePlan::LearnableOwn => Some(edge_weights(tape, layer.embedding, cfg.epsilon)?),
        GatePlan::LearnableShared => {
            let e = shared.expect("shared gate embedding registered");
            Some(edge_weights(tape, e, cfg.epsilon)?)
        }
        GatePlan::Attention => None,
    })
}

/// One stacked layer: time-gate input division, graph gating, block stack,
/// output effect and rescaling by the per-node history maximum.
pub fn layer_forward(
    tape: &mut Tape,
    layer: &LayerVars,
    plan: GatePlan,
    shared: Option<Var>,
    x: Var,
    time_feature: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let (input_effect, output_effect) = time_gate(tape, layer, time_feature, cfg.nodes)?;
    let x_gated = tape.div(x, input_effect, TIME_GATE_DIVISION_FLOOR)?;
    let xmax = history_max(tape, x_gated)?;

    let g = match gate_matrix_var(tape, plan, layer, shared, cfg)? {
        Some(w_mat) => hard_gate(tape, w_mat, x_gated, xmax)?,
        None => {
            let et = tape.transpose(layer.embedding)?;
            let s = tape.matmul(layer.embedding, et)?;
            let scaled = tape.scale(s, cfg.epsilon)?;
            let attn = row_softmax(tape, scaled)?;
            soft_gate(tape, attn, x_gated, xmax)?
        }
    };

    let xmax_w = tape.broadcast_col(xmax, cfg.history)?;
    let xnorm = tape.div(x_gated, xmax_w, f64::MIN_POSITIVE)?;
    let zt = tape.concat_cols(&[layer.embedding, xnorm, g])?;
    let z = tape.transpose(zt)?;

    let core_forecast = fc_ts_block_stack(tape, layer, z)?;
    let shaped = tape.mul(core_forecast, output_effect)?;
    let xmax_h = tape.broadcast_col(xmax, cfg.horizon)?;
    tape.mul(shaped, xmax_h)
}

pub struct ForwardOutput {
    /// Average of the layer forecasts, N x H.
    pub forecast: Var,
    /// Raw per-layer forecasts (before the 1/M averaging).
    pub layer_forecasts: Vec<Var>,
}

/// Full stack: layer m > 1 consumes the cumulative sum of earlier layer
/// forecasts, clamped at zero; the output is the average over layers.
pub fn model_forward(
    tape: &mut Tape,
    vars: &ModelVars,
    x: Var,
    time_feature: Var,
    cfg: &ModelConfig,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    {
        let t = tape.value(x);
        if t.rows() != cfg.nodes || t.cols() != cfg.history {
            return Err(CoreError::ShapeMismatch {
                op: "model_forward",
                lhs: t.shape().to_vec(),
                rhs: alloc::vec![cfg.nodes, cfg.history],
            });
        }
    }
    let mut layer_forecasts = Vec::with_capacity(cfg.layers);
    let mut cumulative: Option<Var> = None;
    for (li, layer) in vars.layers.iter().enumerate() {
        let input = match cumulative {
            None => x,
            Some(sum) => tape.relu(sum)?,
        };
        let plan = GatePlan::for_layer(cfg.gate_variant, li, cfg.layers);
        let y = layer_forward(
            tape,
            layer,
            plan,
            vars.shared_gate_embedding,
            input,
            time_feature,
            cfg,
        )?;
        cumulative = Some(match cumulative {
            None => y,
            Some(sum) => tape.add(sum, y)?,
        });
        layer_forecasts.push(y);
    }
    let total = cumulative.expect("at least one layer");
    let forecast = tape.scale(total, 1.0 / cfg.layers as f64)?;
    Ok(ForwardOutput {
        forecast,
        layer_forecasts,
    })
}

/// Convenience: forecast from plain tensors without keeping the tape.
pub fn predict(
    params: &ModelParams,
    cfg: &ModelConfig,
    x: &Tensor,
    time_feature: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, false);
    let xv = tape.constant(x.clone());
    let tf = tape.constant(time_feature.clone());
    let out = model_forward(&mut tape, &vars, xv, tf, cfg)?;
    Ok(tape.value(out.forecast).clone())
}
