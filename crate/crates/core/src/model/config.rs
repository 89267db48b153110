use alloc::format;
use alloc::string::String;

use crate::error::{CoreError, Result};

/// Which time covariates feed the time gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeFeatureSpec {
    /// Minutes since midnight / 1440, in [0, 1).
    pub time_of_day: bool,
    /// Monday-first one-hot of length 7.
    pub day_of_week: bool,
}

impl Default for TimeFeatureSpec {
    fn default() -> Self {
        TimeFeatureSpec {
            time_of_day: true,
            day_of_week: false,
        }
    }
}

impl TimeFeatureSpec {
    pub fn dim(&self) -> usize {
        (self.time_of_day as usize) + if self.day_of_week { 7 } else { 0 }
    }
}

/// Graph gate construction, including the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GateVariant {
    /// Every layer learns its own embedding-derived gate (the full model).
    LearnablePerLayer,
    /// One gate embedding shared by all layers.
    SharedLearnable,
    /// Layer 1 learnable, later layers all-ones.
    LearnableFirstLayer,
    /// Fixed all-ones weights.
    Ones,
    /// Fixed identity weights (univariate model).
    Identity,
    /// Row-softmax soft weighting, no hard threshold.
    GraphAttention,
    /// Last layer identity, earlier layers learnable (the 4I variant).
    IdentityLastLayer,
}

impl GateVariant {
    pub fn name(&self) -> &'static str {
        match self {
            GateVariant::LearnablePerLayer => "learnable_per_layer",
            GateVariant::SharedLearnable => "shared_learnable",
            GateVariant::LearnableFirstLayer => "learnable_first_layer",
            GateVariant::Ones => "ones",
            GateVariant::Identity => "identity",
            GateVariant::GraphAttention => "graph_attention",
            GateVariant::IdentityLastLayer => "identity_last_layer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "learnable_per_layer" => GateVariant::LearnablePerLayer,
            "shared_learnable" => GateVariant::SharedLearnable,
            "learnable_first_layer" => GateVariant::LearnableFirstLayer,
            "ones" => GateVariant::Ones,
            "identity" => GateVariant::Identity,
            "graph_attention" => GateVariant::GraphAttention,
            "identity_last_layer" => GateVariant::IdentityLastLayer,
            other => {
                return Err(CoreError::InvalidConfig(format!(
                    "unknown gate variant `{other}`"
                )))
            }
        })
    }
}

/// Structural hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Node count N.
    pub nodes: usize,
    /// Input history length w, in steps.
    pub history: usize,
    /// Forecast horizon H, in steps.
    pub horizon: usize,
    /// Node embedding width d.
    pub embedding_dim: usize,
    /// Hidden width d_h of all fully connected layers.
    pub hidden_dim: usize,
    /// FC layers per residual block, L >= 2.
    pub fc_layers: usize,
    /// Residual blocks per layer, R.
    pub blocks: usize,
    /// Stacked layer count M.
    pub layers: usize,
    /// Gate-weight scale epsilon.
    pub epsilon: f64,
    pub gate_variant: GateVariant,
    pub time_features: TimeFeatureSpec,
}

impl ModelConfig {
    /// Paper defaults, parameterized on node count.
    pub fn default_for_nodes(nodes: usize) -> Self {
        ModelConfig {
            nodes,
            history: 12,
            horizon: 12,
            embedding_dim: 64,
            hidden_dim: 128,
            fc_layers: 3,
            blocks: 2,
            layers: 3,
            epsilon: 10.0,
            gate_variant: GateVariant::LearnablePerLayer,
            time_features: TimeFeatureSpec::default(),
        }
    }

    /// Width of the per-node block input column: d + w + N*w.
    pub fn block_input_dim(&self) -> usize {
        self.embedding_dim + self.history * (self.nodes + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("history", self.history),
            ("horizon", self.horizon),
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("fc_layers", self.fc_layers),
            ("blocks", self.blocks),
            ("layers", self.layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CoreError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.fc_layers < 2 {
            return Err(CoreError::InvalidConfig(String::from(
                "fc_layers must be at least 2",
            )));
        }
        if self.layers > 1 && self.history != self.horizon {
            return Err(CoreError::InvalidConfig(format!(
                "stacking {} layers requires history == horizon (got {} vs {})",
                self.layers, self.history, self.horizon
            )));
        }
        if !self.epsilon.is_finite() {
            return Err(CoreError::InvalidConfig(String::from(
                "epsilon must be finite",
            )));
        }
        Ok(())
    }
}
