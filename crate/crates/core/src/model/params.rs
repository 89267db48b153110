use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::{GateVariant, ModelConfig};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Classifies parameters for weight decay: only `Weight` matrices are
/// penalized; biases and embeddings are exempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

/// One fully connected layer, stored as weight (out x in) plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Glorot-uniform matrix in its stored orientation; the bound is
/// symmetric in the two fans, so orientation does not matter.
fn glorot_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let bound = libm::sqrt(6.0 / (rows + cols) as f64);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng::uniform_in(rng, -bound, bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("glorot shape")
}

/// Time gate: one shared hidden layer and two linear heads. Head weights
/// start at zero with unit biases so the gate is an exact no-op at init.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGateParams {
    /// (time_dim + d) -> d_h, weight stored (time_dim+d) x d_h for
    /// row-layout inputs, bias 1 x d_h.
    pub hidden: FcLayer,
    /// d_h -> w head, weight d_h x w, bias 1 x w.
    pub input_head: FcLayer,
    /// d_h -> H head, weight d_h x H, bias 1 x H.
    pub output_head: FcLayer,
}

/// One residual block: L FC layers, a backcast projection and a forecast
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    /// fc[0]: d_h x din, rest d_h x d_h; biases d_h x 1.
    pub fc: Vec<FcLayer>,
    /// din x d_h.
    pub backcast: Tensor,
    /// d_h x H.
    pub forecast: Tensor,
}

/// All learnable state owned by one stacked layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// N x d node embeddings.
    pub embedding: Tensor,
    pub time_gate: TimeGateParams,
    pub blocks: Vec<ResidualBlock>,
}

/// Complete learnable state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    /// Present only for the shared-learnable gate variant.
    pub shared_gate_embedding: Option<Tensor>,
}

fn embedding_init(rng: &mut Rng, nodes: usize, dim: usize) -> Tensor {
    let sd = 1.0 / libm::sqrt(dim as f64);
    let data: Vec<f64> = (0..nodes * dim)
        .map(|_| sd * rng::standard_normal(rng))
        .collect();
    Tensor::matrix(nodes, dim, data).expect("embedding shape")
}

impl ModelParams {
    /// Seeded initialization: Glorot-uniform FC weights, zero biases,
    /// N(0, 1/sqrt(d)) embeddings, identity-at-init time-gate heads.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let din = cfg.block_input_dim();
        let td = cfg.time_features.dim();
        let layers = (0..cfg.layers)
            .map(|_| {
                let embedding = embedding_init(&mut rng, cfg.nodes, cfg.embedding_dim);
                let hidden = FcLayer {
                    weight: glorot_matrix(&mut rng, td + cfg.embedding_dim, cfg.hidden_dim),
                    bias: Tensor::zeros(alloc::vec![1, cfg.hidden_dim]),
                };
                let input_head = FcLayer {
                    weight: Tensor::zeros(alloc::vec![cfg.hidden_dim, cfg.history]),
                    bias: Tensor::full(alloc::vec![1, cfg.history], 1.0),
                };
                let output_head = FcLayer {
                    weight: Tensor::zeros(alloc::vec![cfg.hidden_dim, cfg.horizon]),
                    bias: Tensor::full(alloc::vec![1, cfg.horizon], 1.0),
                };
                let blocks = (0..cfg.blocks)
                    .map(|_| {
                        let mut fc = Vec::with_capacity(cfg.fc_layers);
                        fc.push(FcLayer {
                            weight: glorot_matrix(&mut rng, cfg.hidden_dim, din),
                            bias: Tensor::zeros(alloc::vec![cfg.hidden_dim, 1]),
                        });
                        for _ in 1..cfg.fc_layers {
                            fc.push(FcLayer {
                                weight: glorot_matrix(&mut rng, cfg.hidden_dim, cfg.hidden_dim),
                                bias: Tensor::zeros(alloc::vec![cfg.hidden_dim, 1]),
                            });
                        }
                        let backcast = glorot_matrix(&mut rng, din, cfg.hidden_dim);
                        let forecast = glorot_matrix(&mut rng, cfg.hidden_dim, cfg.horizon);
                        ResidualBlock {
                            fc,
                            backcast,
                            forecast,
                        }
                    })
                    .collect();
                LayerParams {
                    embedding,
                    time_gate: TimeGateParams {
                        hidden,
                        input_head,
                        output_head,
                    },
                    blocks,
                }
            })
            .collect();
        let shared_gate_embedding = if cfg.gate_variant == GateVariant::SharedLearnable {
            Some(embedding_init(&mut rng, cfg.nodes, cfg.embedding_dim))
        } else {
            None
        };
        ModelParams {
            layers,
            shared_gate_embedding,
        }
    }

    /// Visit every parameter in a fixed order with its name and kind.
    pub fn visit(&self, mut f: impl FnMut(String, ParamKind, &Tensor)) {
        for (li, layer) in self.layers.iter().enumerate() {
            f(format!("layer{li}.embedding"), ParamKind::Embedding, &layer.embedding);
            let tg = &layer.time_gate;
            f(format!("layer{li}.time_gate.hidden.weight"), ParamKind::Weight, &tg.hidden.weight);
            f(format!("layer{li}.time_gate.hidden.bias"), ParamKind::Bias, &tg.hidden.bias);
            f(format!("layer{li}.time_gate.input_head.weight"), ParamKind::Weight, &tg.input_head.weight);
            f(format!("layer{li}.time_gate.input_head.bias"), ParamKind::Bias, &tg.input_head.bias);
            f(format!("layer{li}.time_gate.output_head.weight"), ParamKind::Weight, &tg.output_head.weight);
            f(format!("layer{li}.time_gate.output_head.bias"), ParamKind::Bias, &tg.output_head.bias);
            for (bi, block) in layer.blocks.iter().enumerate() {
                for (fi, fc) in block.fc.iter().enumerate() {
                    f(format!("layer{li}.block{bi}.fc{fi}.weight"), ParamKind::Weight, &fc.weight);
                    f(format!("layer{li}.block{bi}.fc{fi}.bias"), ParamKind::Bias, &fc.bias);
                }
                f(format!("layer{li}.block{bi}.backcast"), ParamKind::Weight, &block.backcast);
                f(format!("layer{li}.block{bi}.forecast"), ParamKind::Weight, &block.forecast);
            }
        }
        if let Some(shared) = &self.shared_gate_embedding {
            f(String::from("shared_gate.embedding"), ParamKind::Embedding, shared);
        }
    }

    /// Mutable traversal in the same order as [`ModelParams::visit`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        for layer in self.layers.iter_mut() {
            f(&mut layer.embedding);
            let tg = &mut layer.time_gate;
            f(&mut tg.hidden.weight);
            f(&mut tg.hidden.bias);
            f(&mut tg.input_head.weight);
            f(&mut tg.input_head.bias);
            f(&mut tg.output_head.weight);
            f(&mut tg.output_head.bias);
            for block in layer.blocks.iter_mut() {
                for fc in block.fc.iter_mut() {
                    f(&mut fc.weight);
                    f(&mut fc.bias);
                }
                f(&mut block.backcast);
                f(&mut block.forecast);
            }
        }
        if let Some(shared) = &mut self.shared_gate_embedding {
            f(shared);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, t| n += t.len());
        n
    }

    pub fn flattened(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit(|_, _, t| out.push(t.clone()));
        out
    }
}
