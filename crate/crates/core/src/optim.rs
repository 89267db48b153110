//! Adam optimizer and the step learning-rate schedule.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

/// Adam with the referenced framework's defaults: beta1 = 0.9,
/// beta2 = 0.999, eps = 1e-7.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    /// First/second moment accumulators, mirroring parameter shapes.
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let shapes = params.flattened();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            step: 0,
            first_moment: shapes.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
            second_moment: shapes.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }

    /// One bias-corrected Adam update, in place. `grads` must align with
    /// [`ModelParams::visit`] order; missing gradients (parameters not on
    /// the loss path) are treated as zero.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[Option<Tensor>],
        names: &[String],
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - pow(self.beta1, t);
        let bc2 = 1.0 - pow(self.beta2, t);
        let mut idx = 0usize;
        let mut failure: Option<CoreError> = None;
        params.visit_mut(|p| {
            if failure.is_some() {
                idx += 1;
                return;
            }
            if let Some(g) = grads[idx].as_ref() {
                if !g.all_finite() {
                    failure = Some(CoreError::NonFiniteGradient {
                        param: names[idx].clone(),
                    });
                    idx += 1;
                    return;
                }
                let m = self.first_moment[idx].data_mut();
                let v = self.second_moment[idx].data_mut();
                for ((pv, &gv), (mv, vv)) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data().iter())
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                    *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                    let m_hat = *mv / bc1;
                    let v_hat = *vv / bc2;
                    *pv -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
                }
            }
            idx += 1;
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn pow(base: f64, exp: i32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..exp {
        acc *= base;
    }
    acc
}

/// Training-run schedule: 0.001 until epoch 42, then halved every 6
/// epochs starting at epoch 43 (epochs are 1-based).
pub fn lr_schedule(epoch: u32) -> f64 {
    const BASE: f64 = 1e-3;
    const ANNEAL_START: u32 = 43;
    const ANNEAL_EVERY: u32 = 6;
    if epoch < ANNEAL_START {
        BASE
    } else {
        let halvings = (epoch - ANNEAL_START) / ANNEAL_EVERY + 1;
        BASE / pow(2.0, halvings as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GateVariant, ModelConfig, TimeFeatureSpec};

    fn tiny_params() -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig {
            nodes: 2,
            history: 3,
            horizon: 3,
            embedding_dim: 2,
            hidden_dim: 4,
            fc_layers: 2,
            blocks: 1,
            layers: 1,
            epsilon: 1.0,
            gate_variant: GateVariant::LearnablePerLayer,
            time_features: TimeFeatureSpec::default(),
        };
        let params = ModelParams::init(&cfg, 5);
        (cfg, params)
    }

    fn names_of(p: &ModelParams) -> Vec<String> {
        let mut v = Vec::new();
        p.visit(|n, _, _| v.push(n));
        v
    }

    #[test]
    fn first_step_magnitude_closed_form() {
        // g = 1 everywhere, lr = 0.001: delta = -lr / (1 + eps)
        let (_, mut params) = tiny_params();
        let before = params.flattened();
        let names = names_of(&params);
        let grads: Vec<Option<Tensor>> = before
            .iter()
            .map(|t| Some(Tensor::full(t.shape().to_vec(), 1.0)))
            .collect();
        let mut adam = AdamState::new(&params, 1e-3);
        adam.step(&mut params, &grads, &names).unwrap();
        let expected = -1e-3 / (1.0 + 1e-7);
        let after = params.flattened();
        for (b, a) in before.iter().zip(after.iter()) {
            for (x, y) in b.data().iter().zip(a.data().iter()) {
                assert!((y - x - expected).abs() < 1e-15);
            }
        }
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (_, mut params) = tiny_params();
        let before = params.flattened();
        let names = names_of(&params);
        let grads: Vec<Option<Tensor>> = before
            .iter()
            .map(|t| Some(Tensor::zeros(t.shape().to_vec())))
            .collect();
        let mut adam = AdamState::new(&params, 1e-3);
        adam.step(&mut params, &grads, &names).unwrap();
        assert_eq!(before, params.flattened());
    }

    #[test]
    fn first_step_scale_invariance() {
        // Proportional gradients produce equal-magnitude first updates.
        let (_, params) = tiny_params();
        let names = names_of(&params);
        let run = |scale: f64| {
            let mut p = params.clone();
            let grads: Vec<Option<Tensor>> = p
                .flattened()
                .iter()
                .map(|t| Some(Tensor::full(t.shape().to_vec(), scale)))
                .collect();
            let mut adam = AdamState::new(&p, 1e-3);
            adam.step(&mut p, &grads, &names).unwrap();
            p.flattened()
        };
        let a = run(1.0);
        let b = run(100.0);
        for (x, y) in a.iter().zip(b.iter()) {
            for (u, v) in x.data().iter().zip(y.data().iter()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (_, mut params) = tiny_params();
        let names = names_of(&params);
        let mut grads: Vec<Option<Tensor>> = params
            .flattened()
            .iter()
            .map(|t| Some(Tensor::zeros(t.shape().to_vec())))
            .collect();
        grads[2] = Some(Tensor::full(
            params.flattened()[2].shape().to_vec(),
            f64::NAN,
        ));
        let mut adam = AdamState::new(&params, 1e-3);
        let err = adam.step(&mut params, &grads, &names).unwrap_err();
        assert_eq!(
            err,
            CoreError::NonFiniteGradient {
                param: names[2].clone()
            }
        );
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(1), 0.001);
        assert_eq!(lr_schedule(42), 0.001);
        assert_eq!(lr_schedule(43), 0.0005);
        assert_eq!(lr_schedule(48), 0.0005);
        assert_eq!(lr_schedule(49), 0.00025);
        assert_eq!(lr_schedule(55), 0.000125);
        assert_eq!(lr_schedule(60), 0.000125);
    }

    #[test]
    fn schedule_positive_and_non_increasing() {
        let mut prev = f64::INFINITY;
        for epoch in 1..=60 {
            let lr = lr_schedule(epoch);
            assert!(lr > 0.0);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
