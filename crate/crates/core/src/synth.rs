//! Synthetic traffic panels with a planted coupling graph, plus the
//! ranking oracle that scores learned gate weights against that graph.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::SpeedPanel;
use crate::error::{CoreError, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Configuration of the planted-coupling generator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub nodes: usize,
    pub steps: usize,
    /// True neighbors per node (hollow row-sparse adjacency).
    pub neighbors_per_node: usize,
    /// Coupling strength applied to a neighbor's lagged congestion.
    pub coupling: f64,
    /// Peak depth of the daily seasonal dip.
    pub seasonal_amplitude: f64,
    /// Steps per day.
    pub seasonal_period: usize,
    /// Steps before a congestion event reaches the neighbors.
    pub coupling_lag: usize,
    pub noise_scale: f64,
    /// Per-step probability of a new congestion event at a node.
    pub event_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            nodes: 8,
            steps: 2880,
            neighbors_per_node: 2,
            coupling: 1.0,
            seasonal_amplitude: 15.0,
            seasonal_period: 288,
            coupling_lag: 3,
            noise_scale: 1.0,
            event_rate: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.steps == 0 || self.seasonal_period == 0 {
            return Err(CoreError::InvalidConfig(String::from(
                "nodes, steps and seasonal_period must be positive",
            )));
        }
        if self.neighbors_per_node == 0 || self.neighbors_per_node >= self.nodes {
            return Err(CoreError::InvalidConfig(String::from(
                "need 1 <= neighbors_per_node < nodes",
            )));
        }
        for (name, v) in [
            ("coupling", self.coupling),
            ("seasonal_amplitude", self.seasonal_amplitude),
            ("noise_scale", self.noise_scale),
            ("event_rate", self.event_rate),
        ] {
            if !(v >= 0.0) {
                return Err(CoreError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

const BASELINE_SPEED: f64 = 65.0;
const EVENT_MAGNITUDE: f64 = 25.0;
const EVENT_DECAY: f64 = 0.85;
const PANEL_START_EPOCH: i64 = 1_330_560_000; // 2012-03-01T00:00:00Z
const STEP_SECONDS: i64 = 300;

/// Hollow adjacency with `neighbors_per_node` distinct targets per row.
/// adjacency[i][j] > 0 means node j's congestion slows node i after the
/// configured lag.
fn planted_adjacency(cfg: &SynthConfig, rng: &mut Rng) -> Tensor {
    let n = cfg.nodes;
    let mut adj = Tensor::zeros(alloc::vec![n, n]);
    for i in 0..n {
        let mut picked = 0;
        while picked < cfg.neighbors_per_node {
            let j = rng::uniform_index(rng, n);
            if j != i && adj.at(i, j) == 0.0 {
                adj.set(i, j, 1.0);
                picked += 1;
            }
        }
    }
    adj
}

/// Generate a panel plus the ground-truth adjacency.
///
/// Node speeds: baseline minus a per-node-phased seasonal dip, minus the
/// node's own congestion, minus coupled lagged congestion of its planted
/// neighbors, plus noise; clipped at zero. Congestion events start with a
/// fixed magnitude and decay exponentially.
pub fn generate(cfg: &SynthConfig) -> Result<(SpeedPanel, Tensor)> {
    cfg.validate()?;
    let mut rng = rng::seeded(cfg.seed);
    let n = cfg.nodes;
    let adj = planted_adjacency(cfg, &mut rng);
    let phases: Vec<f64> = (0..n).map(|_| rng::uniform(&mut rng)).collect();

    // congestion[t][j], built first so lagged lookups are simple
    let mut congestion = alloc::vec![0.0f64; cfg.steps * n];
    for t in 0..cfg.steps {
        for j in 0..n {
            let carried = if t > 0 {
                congestion[(t - 1) * n + j] * EVENT_DECAY
            } else {
                0.0
            };
            let fresh = if rng::uniform(&mut rng) < cfg.event_rate {
                EVENT_MAGNITUDE
            } else {
                0.0
            };
            congestion[t * n + j] = carried + fresh;
        }
    }

    let mut values = alloc::vec![0.0f64; cfg.steps * n];
    let period = cfg.seasonal_period as f64;
    for t in 0..cfg.steps {
        for i in 0..n {
            let phase = 2.0 * core::f64::consts::PI * (t as f64 / period + phases[i]);
            let seasonal = cfg.seasonal_amplitude * 0.5 * (1.0 - libm::cos(phase));
            let own = congestion[t * n + i];
            let mut coupled = 0.0;
            if t >= cfg.coupling_lag {
                let tl = t - cfg.coupling_lag;
                for j in 0..n {
                    let a = adj.at(i, j);
                    if a > 0.0 {
                        coupled += a * congestion[tl * n + j];
                    }
                }
            }
            let noise = cfg.noise_scale * rng::standard_normal(&mut rng);
            let v = BASELINE_SPEED - seasonal - own - cfg.coupling * coupled + noise;
            values[t * n + i] = v.max(0.0);
        }
    }

    let node_ids = (0..n).map(|i| format!("s{i:03}")).collect();
    let timestamps = (0..cfg.steps as i64)
        .map(|t| PANEL_START_EPOCH + STEP_SECONDS * t)
        .collect();
    let panel = SpeedPanel::new(node_ids, timestamps, values)?;
    Ok((panel, adj))
}

/// Ranking score of learned gate weights against the planted adjacency:
/// for each node i, all j != i are ranked by W[i,j] / W[i,i] descending
/// (ties broken by ascending node index), and the score is the mean
/// reciprocal rank of the true neighbors, averaged over nodes.
pub fn neighbor_rank_score(w: &Tensor, adjacency: &Tensor) -> Result<f64> {
    let n = adjacency.rows();
    if w.rows() != n || w.cols() != n || adjacency.cols() != n {
        return Err(CoreError::ShapeMismatch {
            op: "neighbor_rank_score",
            lhs: w.shape().to_vec(),
            rhs: adjacency.shape().to_vec(),
        });
    }
    let mut node_scores = Vec::with_capacity(n);
    for i in 0..n {
        let ranked = ranked_neighbors(w, i);
        let mut rr_sum = 0.0;
        let mut neighbors = 0usize;
        for (rank, &(j, _)) in ranked.iter().enumerate() {
            if adjacency.at(i, j) > 0.0 {
                rr_sum += 1.0 / (rank + 1) as f64;
                neighbors += 1;
            }
        }
        if neighbors > 0 {
            node_scores.push(rr_sum / neighbors as f64);
        }
    }
    if node_scores.is_empty() {
        return Err(CoreError::InvalidConfig(String::from(
            "adjacency has no neighbors to score",
        )));
    }
    Ok(node_scores.iter().sum::<f64>() / node_scores.len() as f64)
}

/// Off-diagonal entries of row i ranked by W[i,j] / W[i,i] descending,
/// ties by ascending index. Returns (node, normalized weight) pairs.
pub fn ranked_neighbors(w: &Tensor, i: usize) -> Vec<(usize, f64)> {
    let n = w.rows();
    let self_w = w.at(i, i);
    let denom = if self_w != 0.0 { self_w } else { 1.0 };
    let mut entries: Vec<(usize, f64)> = (0..n)
        .filter(|&j| j != i)
        .map(|j| (j, w.at(i, j) / denom))
        .collect();
    // stable sort keeps ascending-index order among ties
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal));
    entries
}

/// Mean normalized weight at each rank position, averaged over rows.
pub fn mean_weight_per_rank(w: &Tensor) -> Vec<f64> {
    let n = w.rows();
    if n < 2 {
        return Vec::new();
    }
    let mut sums = alloc::vec![0.0f64; n - 1];
    for i in 0..n {
        for (rank, (_, nw)) in ranked_neighbors(w, i).iter().enumerate() {
            sums[rank] += nw;
        }
    }
    sums.iter().map(|s| s / n as f64).collect()
}

/// Mean distance to the forecasted node at each rank position, given node
/// coordinates (one (x, y) per node).
pub fn mean_distance_per_rank(w: &Tensor, coords: &[(f64, f64)]) -> Vec<f64> {
    let n = w.rows();
    if n < 2 || coords.len() != n {
        return Vec::new();
    }
    let mut sums = alloc::vec![0.0f64; n - 1];
    for i in 0..n {
        for (rank, &(j, _)) in ranked_neighbors(w, i).iter().enumerate() {
            let dx = coords[i].0 - coords[j].0;
            let dy = coords[i].1 - coords[j].1;
            sums[rank] += libm::sqrt(dx * dx + dy * dy);
        }
    }
    sums.iter().map(|s| s / n as f64).collect()
}

/// Null distribution of [`neighbor_rank_score`] under random neighbor
/// placement: each shuffle redraws every node's neighbor set (same
/// per-node counts) and rescores. Returns the sorted scores.
pub fn permutation_null(
    w: &Tensor,
    adjacency: &Tensor,
    shuffles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = adjacency.rows();
    let mut rng = rng::seeded(seed);
    let counts: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| adjacency.at(i, j) > 0.0).count())
        .collect();
    let mut scores = Vec::with_capacity(shuffles);
    for _ in 0..shuffles {
        let mut shuffled = Tensor::zeros(alloc::vec![n, n]);
        for i in 0..n {
            let mut picked = 0;
            while picked < counts[i] {
                let j = rng::uniform_index(&mut rng, n);
                if j != i && shuffled.at(i, j) == 0.0 {
                    shuffled.set(i, j, 1.0);
                    picked += 1;
                }
            }
        }
        scores.push(neighbor_rank_score(w, &shuffled)?);
    }
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    Ok(scores)
}

/// The q-th percentile (0..=100) of an ascending-sorted slice, by
/// nearest-rank.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = libm::ceil(q / 100.0 * sorted.len() as f64) as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = SynthConfig::default();
        let (a, adj_a) = generate(&cfg).unwrap();
        let (b, adj_b) = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(adj_a, adj_b);
    }

    #[test]
    fn adjacency_is_hollow_with_k_neighbors() {
        let cfg = SynthConfig::default();
        let (_, adj) = generate(&cfg).unwrap();
        for i in 0..cfg.nodes {
            assert_eq!(adj.at(i, i), 0.0);
            let row_count = (0..cfg.nodes).filter(|&j| adj.at(i, j) > 0.0).count();
            assert_eq!(row_count, cfg.neighbors_per_node);
        }
    }

    #[test]
    fn pure_seasonal_signal_has_exact_period() {
        let cfg = SynthConfig {
            noise_scale: 0.0,
            event_rate: 0.0,
            coupling: 0.0,
            steps: 600,
            seasonal_period: 100,
            ..SynthConfig::default()
        };
        let (panel, _) = generate(&cfg).unwrap();
        for node in 0..cfg.nodes {
            for t in 0..cfg.steps - cfg.seasonal_period {
                let a = panel.value(t, node);
                let b = panel.value(t + cfg.seasonal_period, node);
                assert!((a - b).abs() < 1e-9, "period broken at t={t}");
            }
        }
    }

    /// Brute-force lagged cross-correlation between two series.
    fn lagged_corr(panel: &SpeedPanel, src: usize, dst: usize, lag: usize) -> f64 {
        let t = panel.num_steps();
        let xs: Vec<f64> = (0..t - lag).map(|k| panel.value(k, src)).collect();
        let ys: Vec<f64> = (0..t - lag).map(|k| panel.value(k + lag, dst)).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (x, y) in xs.iter().zip(ys.iter()) {
            cov += (x - mx) * (y - my);
            vx += (x - mx) * (x - mx);
            vy += (y - my) * (y - my);
        }
        cov / libm::sqrt(vx * vy)
    }

    #[test]
    fn neighbors_correlate_at_the_configured_lag() {
        let cfg = SynthConfig {
            steps: 4000,
            seasonal_amplitude: 0.0,
            noise_scale: 0.5,
            event_rate: 0.03,
            ..SynthConfig::default()
        };
        let (panel, adj) = generate(&cfg).unwrap();
        let mut neighbor_corrs = Vec::new();
        let mut other_corrs = Vec::new();
        for i in 0..cfg.nodes {
            for j in 0..cfg.nodes {
                if i == j {
                    continue;
                }
                // adj[i][j] > 0: j's congestion hits i after the lag
                let c = lagged_corr(&panel, j, i, cfg.coupling_lag);
                if adj.at(i, j) > 0.0 {
                    neighbor_corrs.push(c);
                } else {
                    other_corrs.push(c);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&neighbor_corrs) > mean(&other_corrs) + 0.1,
            "planted coupling invisible: {} vs {}",
            mean(&neighbor_corrs),
            mean(&other_corrs)
        );
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let n = 5;
        let mut adj = Tensor::zeros(vec![n, n]);
        let mut w = Tensor::identity(n);
        for i in 0..n {
            let j = (i + 1) % n;
            adj.set(i, j, 1.0);
            w.set(i, j, 0.9); // highest off-diagonal in the row
            w.set(i, (i + 2) % n, 0.1);
        }
        assert_eq!(neighbor_rank_score(&w, &adj).unwrap(), 1.0);
    }

    #[test]
    fn identity_weights_score_matches_tie_break() {
        // All off-diagonal ratios are 0; stable tie-break is ascending
        // index, so node i's neighbor j lands at rank j - (j > i) + 1.
        let n = 4;
        let w = Tensor::identity(n);
        let mut adj = Tensor::zeros(vec![n, n]);
        adj.set(0, 2, 1.0); // ranks: 1->1, 2->2, 3->3, so RR = 1/2
        adj.set(1, 0, 1.0); // rank 1 -> RR = 1
        adj.set(2, 3, 1.0); // candidates 0,1,3 -> rank 3 -> 1/3
        adj.set(3, 1, 1.0); // candidates 0,1,2 -> rank 2 -> 1/2
        let expect = (0.5 + 1.0 + 1.0 / 3.0 + 0.5) / 4.0;
        assert!((neighbor_rank_score(&w, &adj).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn shuffled_adjacency_falls_inside_its_own_null() {
        let cfg = SynthConfig::default();
        let (_, adj) = generate(&cfg).unwrap();
        let mut rng = rng::seeded(77);
        // random weights: no relation to the adjacency
        let data: Vec<f64> = (0..cfg.nodes * cfg.nodes)
            .map(|_| rng::uniform(&mut rng))
            .collect();
        let w = Tensor::matrix(cfg.nodes, cfg.nodes, data).unwrap();
        let score = neighbor_rank_score(&w, &adj).unwrap();
        let null = permutation_null(&w, &adj, 500, 123).unwrap();
        let lo = percentile(&null, 2.5);
        let hi = percentile(&null, 97.5);
        assert!(score >= lo && score <= hi, "{score} outside [{lo}, {hi}]");
    }

    #[test]
    fn score_shape_mismatch_errors() {
        let w = Tensor::identity(3);
        let adj = Tensor::zeros(vec![4, 4]);
        assert!(neighbor_rank_score(&w, &adj).is_err());
    }
}
