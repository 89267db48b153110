//! Masked evaluation metrics and the training loss.
//!
//! Zero-valued targets encode missing sensor data and are excluded from
//! every metric and from the training objective.

use alloc::vec::Vec;

use crate::error::Result;
use crate::model::ParamKind;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Targets with magnitude at or below this are treated as missing.
pub const MASK_THRESHOLD: f64 = 1e-6;

/// Masked metrics at one forecast step.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HorizonMetrics {
    /// Forecast step, 1-based.
    pub step: usize,
    /// Step expressed in minutes at the panel's sampling interval.
    pub minutes: u64,
    pub mae: f64,
    /// Percentage.
    pub mape_pct: f64,
    pub rmse: f64,
    /// Unmasked samples that entered the averages.
    pub count: usize,
}

impl HorizonMetrics {
    /// Zero evaluated samples leave the metrics undefined (NaN markers).
    pub fn undefined(step: usize, minutes: u64) -> Self {
        HorizonMetrics {
            step,
            minutes,
            mae: f64::NAN,
            mape_pct: f64::NAN,
            rmse: f64::NAN,
            count: 0,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.count > 0
    }
}

/// Per-horizon masked MAE / MAPE / RMSE report.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub horizons: Vec<HorizonMetrics>,
}

impl MetricsReport {
    /// Mean masked MAE over all defined horizons; the checkpoint
    /// selection criterion.
    pub fn mean_mae(&self) -> f64 {
        let defined: Vec<f64> = self
            .horizons
            .iter()
            .filter(|h| h.is_defined())
            .map(|h| h.mae)
            .collect();
        if defined.is_empty() {
            f64::NAN
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    }
}

/// Streaming accumulator for one horizon step.
#[derive(Debug, Clone, Copy, Default)]
pub struct MetricAccumulator {
    abs_sum: f64,
    ape_sum: f64,
    sq_sum: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn push(&mut self, target: f64, forecast: f64) {
        if libm::fabs(target) <= MASK_THRESHOLD {
            return;
        }
        let err = target - forecast;
        self.abs_sum += libm::fabs(err);
        self.ape_sum += libm::fabs(err) / libm::fabs(target);
        self.sq_sum += err * err;
        self.count += 1;
    }

    pub fn finish(&self, step: usize, minutes: u64) -> HorizonMetrics {
        if self.count == 0 {
            return HorizonMetrics::undefined(step, minutes);
        }
        let n = self.count as f64;
        HorizonMetrics {
            step,
            minutes,
            mae: self.abs_sum / n,
            mape_pct: 100.0 * self.ape_sum / n,
            rmse: libm::sqrt(self.sq_sum / n),
            count: self.count,
        }
    }
}

/// Masked mean absolute error over a batch of (forecast, target) pairs,
/// differentiable through the tape. Targets are constants; entries with
/// |target| <= threshold contribute nothing. A fully masked batch yields
/// a zero loss with a warning.
pub fn masked_mae_loss(tape: &mut Tape, forecasts: &[Var], targets: &[&Tensor]) -> Result<Var> {
    assert_eq!(forecasts.len(), targets.len());
    let mut unmasked = 0usize;
    let mut total: Option<Var> = None;
    for (&f, &y) in forecasts.iter().zip(targets.iter()) {
        let mask_data: Vec<f64> = y
            .data()
            .iter()
            .map(|&t| if libm::fabs(t) > MASK_THRESHOLD { 1.0 } else { 0.0 })
            .collect();
        unmasked += mask_data.iter().filter(|&&m| m > 0.0).count();
        let mask = tape.constant(Tensor::new(y.shape().to_vec(), mask_data)?);
        let yv = tape.constant(y.clone());
        let diff = tape.sub(yv, f)?;
        let abs = tape.abs(diff)?;
        let masked = tape.mul(abs, mask)?;
        let s = tape.sum(masked)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let total = total.expect("non-empty batch");
    if unmasked == 0 {
        log::warn!("masked MAE: every target in the batch is masked, loss is 0");
        return tape.scale(total, 0.0);
    }
    tape.scale(total, 1.0 / unmasked as f64)
}

/// lambda * sum of squared entries over `Weight`-kind parameters only.
/// Biases and embeddings are exempt.
pub fn weight_decay_penalty(
    tape: &mut Tape,
    vars: &[Var],
    kinds: &[ParamKind],
    lambda: f64,
) -> Result<Var> {
    assert_eq!(vars.len(), kinds.len());
    let mut total: Option<Var> = None;
    for (&v, &kind) in vars.iter().zip(kinds.iter()) {
        if kind != ParamKind::Weight {
            continue;
        }
        let sq = tape.mul(v, v)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    match total {
        None => {
            let zero = tape.constant(Tensor::scalar(0.0));
            Ok(zero)
        }
        Some(t) => tape.scale(t, lambda),
    }
}
