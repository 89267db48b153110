use proptest::prelude::*;

use fcgaga_core::metrics::MetricAccumulator;
use fcgaga_core::model::{hard_gate, history_max};
use fcgaga_core::tensor::Tensor;
use fcgaga_core::Tape;

fn finite_vec(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

proptest! {
    #[test]
    fn relu_is_idempotent(data in finite_vec(12, -100.0, 100.0)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 4, data).unwrap());
        let once = tape.relu(x).unwrap();
        let twice = tape.relu(once).unwrap();
        prop_assert_eq!(tape.value(once).data(), tape.value(twice).data());
    }

    #[test]
    fn gate_entries_are_nonnegative(
        hist in finite_vec(12, 0.0, 80.0),
        emb in finite_vec(8, -0.5, 0.5),
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(4, 3, hist).unwrap());
        let e = tape.leaf(Tensor::matrix(4, 2, emb).unwrap(), false);
        let w = fcgaga_core::model::edge_weights(&mut tape, e, 2.0).unwrap();
        let xmax = history_max(&mut tape, x).unwrap();
        let g = hard_gate(&mut tape, w, x, xmax).unwrap();
        prop_assert!(tape.value(g).data().iter().all(|&v| v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn streaming_metrics_match_batch_order(
        pairs in prop::collection::vec((1.0f64..90.0, 1.0f64..90.0), 1..40),
    ) {
        // one accumulator fed element-wise vs two fed a split of the same
        // stream: identical counts and means
        let mut whole = MetricAccumulator::default();
        let mut front = MetricAccumulator::default();
        let mut back = MetricAccumulator::default();
        let cut = pairs.len() / 2;
        for (i, &(t, p)) in pairs.iter().enumerate() {
            whole.push(t, p);
            if i < cut { front.push(t, p); } else { back.push(t, p); }
        }
        let w = whole.finish(1, 5);
        let f = front.finish(1, 5);
        let b = back.finish(1, 5);
        prop_assert_eq!(w.count, f.count + b.count);
        if f.count > 0 && b.count > 0 {
            let merged_mae =
                (f.mae * f.count as f64 + b.mae * b.count as f64) / w.count as f64;
            prop_assert!((w.mae - merged_mae).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_samples_stay_in_unit_interval(seed in any::<u64>()) {
        let mut rng = fcgaga_core::rng::seeded(seed);
        for _ in 0..64 {
            let u = fcgaga_core::rng::uniform(&mut rng);
            prop_assert!((0.0..1.0).contains(&u));
        }
    }
}
