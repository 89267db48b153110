//! Reverse-mode gradients checked against central differences. The
//! numeric side never touches the tape, so agreement here is meaningful.

use fcgaga_core::gradcheck::{finite_difference_gradient, grad_close};
use fcgaga_core::model::{model_forward, GateVariant, ModelConfig, ModelParams, ModelVars};
use fcgaga_core::tensor::Tensor;
use fcgaga_core::{Tape, Var};

const PRIM_TOL: f64 = 1e-6;
const PRIM_H: f64 = 1e-6;

/// Check d(sum(f(p) .* f(p)))/dp against central differences for one
/// tensor input, with any other operands closed over as constants.
fn fd_check<F>(input: &Tensor, f: F)
where
    F: Fn(&mut Tape, Var) -> fcgaga_core::error::Result<Var>,
{
    let scalar_loss = |tape: &mut Tape, v: Var| -> fcgaga_core::error::Result<f64> {
        let out = f(tape, v)?;
        let sq = tape.mul(out, out)?;
        let s = tape.sum(sq)?;
        Ok(tape.value(s).data()[0])
    };

    let mut tape = Tape::new();
    let v = tape.leaf(input.clone(), true);
    let out = f(&mut tape, v).unwrap();
    let sq = tape.mul(out, out).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    let analytic = tape.grad(v).expect("input requires grad");

    let numeric = finite_difference_gradient(
        |p| {
            let mut t = Tape::new();
            let pv = t.constant(p.clone());
            scalar_loss(&mut t, pv)
        },
        input,
        PRIM_H,
    )
    .unwrap();

    for i in 0..input.len() {
        let (a, n) = (analytic.data()[i], numeric.data()[i]);
        assert!(
            grad_close(a, n, PRIM_TOL),
            "coordinate {i}: analytic {a} vs numeric {n}"
        );
    }
}

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn matmul_grad_left_and_right() {
    let a = t(2, 3, &[0.3, -1.2, 0.8, 2.1, 0.05, -0.7]);
    let b = t(3, 2, &[1.0, -0.4, 0.9, 0.2, -1.5, 0.6]);
    fd_check(&a, |tape, v| {
        let bc = tape.constant(b.clone());
        tape.matmul(v, bc)
    });
    fd_check(&b, |tape, v| {
        let ac = tape.constant(a.clone());
        tape.matmul(ac, v)
    });
}

#[test]
fn matmul_grad_shared_operand() {
    // E appears on both sides, as in E . E^T; accumulation must be exact.
    let e = t(3, 2, &[0.4, -0.9, 1.1, 0.3, -0.2, 0.7]);
    fd_check(&e, |tape, v| {
        let et = tape.transpose(v)?;
        tape.matmul(v, et)
    });
}

#[test]
fn transpose_grad() {
    let a = t(2, 3, &[1.0, -2.0, 0.5, 0.25, 3.0, -0.75]);
    fd_check(&a, |tape, v| {
        let tr = tape.transpose(v)?;
        let c = tape.constant(t(3, 2, &[0.2, 1.3, -0.5, 0.8, 0.4, -1.1]));
        tape.mul(tr, c)
    });
}

#[test]
fn add_sub_mul_grads() {
    let a = t(2, 2, &[0.5, -1.5, 2.5, 0.1]);
    let b = t(2, 2, &[1.2, 0.3, -0.8, 2.0]);
    fd_check(&a, |tape, v| {
        let bc = tape.constant(b.clone());
        tape.add(v, bc)
    });
    fd_check(&a, |tape, v| {
        let bc = tape.constant(b.clone());
        tape.sub(bc, v)
    });
    fd_check(&a, |tape, v| {
        let bc = tape.constant(b.clone());
        tape.mul(v, bc)
    });
}

#[test]
fn div_grads_both_sides() {
    let a = t(2, 2, &[0.5, -1.5, 2.5, 0.1]);
    let b = t(2, 2, &[1.2, 0.3, -0.8, 2.0]);
    fd_check(&a, |tape, v| {
        let bc = tape.constant(b.clone());
        tape.div(v, bc, 1e-9)
    });
    fd_check(&b, |tape, v| {
        let ac = tape.constant(a.clone());
        tape.div(ac, v, 1e-9)
    });
}

#[test]
fn div_clamped_divisor_grad_matches_fd() {
    // Divisors below the floor are frozen at the floor; both the analytic
    // and the numeric gradient see flat dependence on them. Numerators of
    // the clamped entries are tiny so the frozen quotients do not swamp
    // the finite difference of the live one.
    let a = t(1, 3, &[2e-4, 3e-4, 4.0]);
    let b = t(1, 3, &[1e-9, -1e-9, 2.0]);
    fd_check(&b, |tape, v| {
        let ac = tape.constant(a.clone());
        tape.div(ac, v, 1e-3)
    });
}

#[test]
fn relu_grad_away_from_kink() {
    let a = t(2, 3, &[0.5, -1.5, 2.5, -0.1, 0.8, -2.0]);
    fd_check(&a, |tape, v| tape.relu(v));
}

#[test]
fn exp_grad() {
    let a = t(2, 2, &[0.5, -1.5, 2.5, 0.1]);
    fd_check(&a, |tape, v| tape.exp(v, false));
}

#[test]
fn scale_grad() {
    let a = t(2, 2, &[0.5, -1.5, 2.5, 0.1]);
    fd_check(&a, |tape, v| tape.scale(v, -2.5));
}

#[test]
fn row_max_grad_on_strict_max() {
    let a = t(2, 3, &[1.0, 5.0, 2.0, -7.0, -1.0, -3.0]);
    fd_check(&a, |tape, v| tape.row_max(v));
}

#[test]
fn row_sum_sum_abs_sqrt_grads() {
    let a = t(2, 3, &[0.5, -1.5, 2.5, -0.1, 0.8, -2.0]);
    fd_check(&a, |tape, v| tape.row_sum(v));
    fd_check(&a, |tape, v| tape.sum(v));
    fd_check(&a, |tape, v| tape.abs(v));
    let pos = t(2, 2, &[0.5, 1.5, 2.5, 0.1]);
    fd_check(&pos, |tape, v| tape.sqrt(v));
}

#[test]
fn concat_broadcast_reshape_repeat_grads() {
    let a = t(2, 2, &[0.5, -1.5, 2.5, 0.1]);
    fd_check(&a, |tape, v| {
        let other = tape.constant(t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        tape.concat_cols(&[v, other, v])
    });
    let col = t(2, 1, &[0.7, -0.3]);
    fd_check(&col, |tape, v| tape.broadcast_col(v, 4));
    let row = t(1, 3, &[0.7, -0.3, 1.1]);
    fd_check(&row, |tape, v| tape.broadcast_row(v, 4));
    fd_check(&a, |tape, v| tape.reshape(v, vec![1, 4]));
    fd_check(&a, |tape, v| tape.repeat_cols(v, 3));
}

#[test]
fn floor_substitute_grad_matches_fd() {
    // The substituted entries sit far below the floor so the probe step
    // cannot push them across the boundary.
    let a = t(1, 4, &[2.0, 1e-6, 0.5, 3e-5]);
    fd_check(&a, |tape, v| tape.floor_substitute(v, 1e-3, 1.0));
}

// ---- whole model ------------------------------------------------------

fn small_config(variant: GateVariant) -> ModelConfig {
    let mut cfg = ModelConfig::default_for_nodes(5);
    cfg.history = 4;
    cfg.horizon = 4;
    cfg.embedding_dim = 3;
    cfg.hidden_dim = 8;
    cfg.fc_layers = 3;
    cfg.blocks = 2;
    cfg.layers = 2;
    cfg.gate_variant = variant;
    // keep the loss O(1): the default-scale epsilon exponentiates inner
    // products into magnitudes where central differences lose precision
    cfg.epsilon = 1.0;
    cfg.validate().unwrap();
    cfg
}

fn flatten_params(params: &ModelParams) -> Tensor {
    let mut out = Vec::new();
    params.visit(|_, _, tensor| out.extend_from_slice(tensor.data()));
    let n = out.len();
    Tensor::new(vec![n], out).unwrap()
}

fn write_params(params: &mut ModelParams, flat: &Tensor) {
    let mut offset = 0;
    params.visit_mut(|tensor| {
        let n = tensor.len();
        tensor
            .data_mut()
            .copy_from_slice(&flat.data()[offset..offset + n]);
        offset += n;
    });
    assert_eq!(offset, flat.len());
}

fn rand_tensor(rng: &mut fcgaga_core::rng::Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| fcgaga_core::rng::uniform_in(rng, lo, hi))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Loss used by the model check: sum of squared forecast entries. Smooth
/// in the parameters except at ReLU kinks, which random inputs avoid.
fn model_loss_and_grad(
    cfg: &ModelConfig,
    params: &ModelParams,
    x: &Tensor,
    tf: &Tensor,
) -> (f64, Tensor) {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, true);
    let xv = tape.constant(x.clone());
    let tfv = tape.constant(tf.clone());
    let out = model_forward(&mut tape, &vars, xv, tfv, cfg).unwrap();
    let sq = tape.mul(out.forecast, out.forecast).unwrap();
    let loss = tape.sum(sq).unwrap();
    let loss_value = tape.value(loss).data()[0];
    tape.backward(loss).unwrap();
    let mut grad = Vec::new();
    for &v in &vars.flat {
        // parameters the loss never touches (e.g. the last block's
        // backcast matrix) report no gradient, which means zero
        match tape.grad(v) {
            Some(g) => grad.extend_from_slice(g.data()),
            None => grad.extend(core::iter::repeat(0.0).take(tape.value(v).len())),
        }
    }
    let n = grad.len();
    (loss_value, Tensor::new(vec![n], grad).unwrap())
}

/// Full-model check for one gate variant. `stride` picks which flat
/// coordinates the numeric side probes (1 = all of them).
fn check_model_gradient(variant: GateVariant, stride: usize) {
    let cfg = small_config(variant);
    let params = ModelParams::init(&cfg, 11);
    let mut rng = fcgaga_core::rng::seeded(42);
    let x = rand_tensor(&mut rng, cfg.nodes, cfg.history, 0.5, 1.5);
    let tf = rand_tensor(&mut rng, 1, cfg.time_features.dim(), 0.1, 0.9);

    let (_, analytic) = model_loss_and_grad(&cfg, &params, &x, &tf);
    let flat = flatten_params(&params);
    assert_eq!(flat.len(), analytic.len());

    let mut scratch = params.clone();
    let h = 1e-5;
    let mut checked = 0usize;
    for i in (0..flat.len()).step_by(stride) {
        let mut plus = flat.clone();
        plus.data_mut()[i] += h;
        write_params(&mut scratch, &plus);
        let (lp, _) = loss_only(&cfg, &scratch, &x, &tf);
        let mut minus = flat.clone();
        minus.data_mut()[i] -= h;
        write_params(&mut scratch, &minus);
        let (lm, _) = loss_only(&cfg, &scratch, &x, &tf);
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic.data()[i];
        assert!(
            grad_close(a, numeric, 1e-4) || (a - numeric).abs() <= 1e-6,
            "{variant:?} coordinate {i}: analytic {a} vs numeric {numeric}",
            variant = variant
        );
        checked += 1;
    }
    assert!(checked > 0);
}

fn loss_only(cfg: &ModelConfig, params: &ModelParams, x: &Tensor, tf: &Tensor) -> (f64, ()) {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, false);
    let xv = tape.constant(x.clone());
    let tfv = tape.constant(tf.clone());
    let out = model_forward(&mut tape, &vars, xv, tfv, cfg).unwrap();
    let sq = tape.mul(out.forecast, out.forecast).unwrap();
    let loss = tape.sum(sq).unwrap();
    (tape.value(loss).data()[0], ())
}

#[test]
fn model_gradient_learnable_per_layer_full() {
    check_model_gradient(GateVariant::LearnablePerLayer, 1);
}

#[test]
fn model_gradient_other_variants_strided() {
    for variant in [
        GateVariant::SharedLearnable,
        GateVariant::LearnableFirstLayer,
        GateVariant::Ones,
        GateVariant::Identity,
        GateVariant::GraphAttention,
        GateVariant::IdentityLastLayer,
    ] {
        check_model_gradient(variant, 7);
    }
}
