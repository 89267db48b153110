//! Speed panels, chronological splits, time covariates and window
//! sampling. Parsing of on-disk formats lives in the companion crate;
//! this module owns the validated in-memory forms.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::model::TimeFeatureSpec;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// T x N panel of nonnegative speeds at uniform timestamps. Zeros encode
/// missing readings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPanel {
    node_ids: Vec<String>,
    /// Unix epoch seconds, strictly increasing, uniformly spaced.
    timestamps: Vec<i64>,
    /// Row-major T x N.
    values: Vec<f64>,
}

impl SpeedPanel {
    pub fn new(node_ids: Vec<String>, timestamps: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        let n = node_ids.len();
        let t = timestamps.len();
        if n == 0 || t == 0 {
            return Err(CoreError::InvalidData {
                line: None,
                msg: String::from("panel must have at least one node and one timestamp"),
            });
        }
        if values.len() != t * n {
            return Err(CoreError::InvalidData {
                line: None,
                msg: format!("expected {} values, got {}", t * n, values.len()),
            });
        }
        if t > 1 {
            let step = timestamps[1] - timestamps[0];
            if step <= 0 {
                return Err(CoreError::InvalidData {
                    line: None,
                    msg: String::from("timestamps must be strictly increasing"),
                });
            }
            for (i, w) in timestamps.windows(2).enumerate() {
                if w[1] - w[0] != step {
                    return Err(CoreError::InvalidData {
                        line: Some(i + 2),
                        msg: format!(
                            "non-uniform timestamp spacing: {} vs {}",
                            w[1] - w[0],
                            step
                        ),
                    });
                }
            }
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::InvalidData {
                    line: Some(i / n + 1),
                    msg: format!("speed values must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(SpeedPanel {
            node_ids,
            timestamps,
            values,
        })
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sampling interval in seconds.
    pub fn step_seconds(&self) -> i64 {
        if self.timestamps.len() > 1 {
            self.timestamps[1] - self.timestamps[0]
        } else {
            300
        }
    }

    pub fn value(&self, t: usize, node: usize) -> f64 {
        self.values[t * self.num_nodes() + node]
    }

    /// N x w history matrix ending at (and including) time index `anchor`.
    pub fn history(&self, anchor: usize, w: usize) -> Tensor {
        let n = self.num_nodes();
        let mut data = alloc::vec![0.0; n * w];
        for node in 0..n {
            for k in 0..w {
                data[node * w + k] = self.value(anchor + 1 - w + k, node);
            }
        }
        Tensor::matrix(n, w, data).expect("history shape")
    }

    /// N x h target matrix covering (anchor, anchor + h].
    pub fn targets(&self, anchor: usize, h: usize) -> Tensor {
        let n = self.num_nodes();
        let mut data = alloc::vec![0.0; n * h];
        for node in 0..n {
            for k in 0..h {
                data[node * h + k] = self.value(anchor + 1 + k, node);
            }
        }
        Tensor::matrix(n, h, data).expect("target shape")
    }
}

/// Chronological train/val/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

/// Half-open index ranges [start, end) over the panel's time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: (usize, usize),
    pub val: (usize, usize),
    pub test: (usize, usize),
}

/// Boundaries at floor(train * T) and floor((train + val) * T).
pub fn split(panel: &SpeedPanel, spec: &SplitSpec, w: usize, h: usize) -> Result<SplitRanges> {
    if spec.train <= 0.0 || spec.val <= 0.0 || spec.test <= 0.0 {
        return Err(CoreError::InvalidConfig(String::from(
            "split fractions must be positive",
        )));
    }
    if libm::fabs(spec.train + spec.val + spec.test - 1.0) > 1e-9 {
        return Err(CoreError::InvalidConfig(String::from(
            "split fractions must sum to 1",
        )));
    }
    let t = panel.num_steps();
    let b1 = (spec.train * t as f64) as usize;
    let b2 = ((spec.train + spec.val) * t as f64) as usize;
    let ranges = SplitRanges {
        train: (0, b1),
        val: (b1, b2),
        test: (b2, t),
    };
    for (name, range) in [
        ("train", ranges.train),
        ("val", ranges.val),
        ("test", ranges.test),
    ] {
        if valid_anchors(range, w, h).is_empty() {
            return Err(CoreError::InvalidConfig(format!(
                "{name} split [{}, {}) admits no full window (w={w}, h={h})",
                range.0, range.1
            )));
        }
    }
    Ok(ranges)
}

/// Anchors t in [start, end) whose targets (t, t+h] stay inside the split
/// and whose inputs [t-w+1, t] exist. Inputs may reach back across the
/// split boundary; only targets define split membership.
pub fn valid_anchors(range: (usize, usize), w: usize, h: usize) -> Vec<usize> {
    let (start, end) = range;
    // t >= w - 1 (inputs exist), t + 1 >= start and t + h <= end - 1
    // (targets stay inside the split).
    if end < h + 1 {
        return Vec::new();
    }
    let lo = core::cmp::max(w.saturating_sub(1), start.saturating_sub(1));
    let hi = end - h; // exclusive: last valid anchor is end - h - 1
    if lo >= hi {
        return Vec::new();
    }
    (lo..hi).collect()
}

/// Time covariates for a timestamp: time-of-day in [0, 1) and optionally
/// a Monday-first day-of-week one-hot.
pub fn time_features(timestamp: i64, spec: &TimeFeatureSpec) -> Tensor {
    let mut data = Vec::with_capacity(spec.dim());
    let secs_of_day = timestamp.rem_euclid(SECONDS_PER_DAY);
    if spec.time_of_day {
        data.push(secs_of_day as f64 / SECONDS_PER_DAY as f64);
    }
    if spec.day_of_week {
        let days = timestamp.div_euclid(SECONDS_PER_DAY);
        // 1970-01-01 was a Thursday; Monday-first index.
        let dow = (days + 3).rem_euclid(7) as usize;
        for i in 0..7 {
            data.push(if i == dow { 1.0 } else { 0.0 });
        }
    }
    Tensor::matrix(1, data.len(), data).expect("time feature shape")
}

/// One sampled batch of windows; anchors index the panel's time axis.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub anchors: Vec<usize>,
    /// Per anchor: N x w histories.
    pub histories: Vec<Tensor>,
    /// Per anchor: N x h targets.
    pub targets: Vec<Tensor>,
    /// Per anchor: covariates of the anchor timestamp (model input).
    pub input_time_features: Vec<Tensor>,
    /// Per anchor: covariates of the first forecast step.
    pub output_time_features: Vec<Tensor>,
}

fn build_batch(
    panel: &SpeedPanel,
    anchors: Vec<usize>,
    w: usize,
    h: usize,
    spec: &TimeFeatureSpec,
) -> WindowBatch {
    let histories = anchors.iter().map(|&t| panel.history(t, w)).collect();
    let targets = anchors.iter().map(|&t| panel.targets(t, h)).collect();
    let input_time_features = anchors
        .iter()
        .map(|&t| time_features(panel.timestamps()[t], spec))
        .collect();
    let output_time_features = anchors
        .iter()
        .map(|&t| time_features(panel.timestamps()[t + 1], spec))
        .collect();
    WindowBatch {
        anchors,
        histories,
        targets,
        input_time_features,
        output_time_features,
    }
}

/// Randomized training stream: `batches_per_epoch` batches of
/// `batch_size` anchors drawn uniformly with replacement. Every anchor
/// contributes the histories of all nodes.
pub fn sample_epoch(
    panel: &SpeedPanel,
    range: (usize, usize),
    w: usize,
    h: usize,
    tf_spec: &TimeFeatureSpec,
    rng: &mut Rng,
    batches_per_epoch: usize,
    batch_size: usize,
) -> Result<Vec<WindowBatch>> {
    let anchors = valid_anchors(range, w, h);
    if anchors.is_empty() {
        return Err(CoreError::EmptyAnchorSet);
    }
    let mut out = Vec::with_capacity(batches_per_epoch);
    for _ in 0..batches_per_epoch {
        let picked: Vec<usize> = (0..batch_size)
            .map(|_| anchors[rng::uniform_index(rng, anchors.len())])
            .collect();
        out.push(build_batch(panel, picked, w, h, tf_spec));
    }
    Ok(out)
}

/// Deterministic evaluation stream: every valid anchor exactly once, in
/// order, chunked for convenience.
pub fn eval_batches(
    panel: &SpeedPanel,
    range: (usize, usize),
    w: usize,
    h: usize,
    tf_spec: &TimeFeatureSpec,
    chunk: usize,
) -> Result<Vec<WindowBatch>> {
    let anchors = valid_anchors(range, w, h);
    if anchors.is_empty() {
        return Err(CoreError::EmptyAnchorSet);
    }
    Ok(anchors
        .chunks(chunk.max(1))
        .map(|c| build_batch(panel, c.to_vec(), w, h, tf_spec))
        .collect())
}
