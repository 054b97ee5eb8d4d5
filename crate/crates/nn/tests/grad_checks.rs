//! Central finite-difference checks for every differentiable operation,
//! run at f64 with step 1e-5 and relative tolerance 1e-4.

use ldct_nn::check::{grad_check, test_values, test_values_offset_zero};
use ldct_nn::layers::{Linear, MlpStack, MultiHeadAttention, ResidualBlock2d, UNet};
use ldct_nn::params::{ParamStore, Session};
use ldct_nn::tape::{Tape, Var};
use ldct_nn::tensor::TensorData;
use ldct_nn::Result;

fn t(shape: &[usize], values: Vec<f64>) -> TensorData<f64> {
    TensorData::new(shape.to_vec(), values).unwrap()
}

/// Reduce a tensor to a scalar through a fixed random functional, so the
/// incoming gradient of the checked op is non-uniform.
fn reduce(tape: &Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let n = tape.value_len(v);
    let shape = tape.shape(v);
    let w = tape.leaf(t(&shape, test_values(seed ^ 0xabcd, n, -1.0, 1.0)));
    Ok(tape.sum(tape.mul(v, w)?))
}

#[test]
fn elementwise_ops() {
    let a = t(&[2, 3], test_values(1, 6, -1.0, 1.0));
    let b = t(&[2, 3], test_values(2, 6, -1.0, 1.0));
    grad_check(|tp, v| reduce(tp, tp.add(v[0], v[1])?, 1), &[a.clone(), b.clone()]).unwrap();
    grad_check(|tp, v| reduce(tp, tp.sub(v[0], v[1])?, 2), &[a.clone(), b.clone()]).unwrap();
    grad_check(|tp, v| reduce(tp, tp.mul(v[0], v[1])?, 3), &[a.clone(), b.clone()]).unwrap();
    grad_check(|tp, v| reduce(tp, tp.neg(v[0]), 4), &[a.clone()]).unwrap();
    grad_check(|tp, v| reduce(tp, tp.scale(v[0], -1.7), 5), &[a]).unwrap();
}

#[test]
fn broadcast_ops() {
    let x = t(&[3, 4], test_values(3, 12, -1.0, 1.0));
    let b = t(&[4], test_values(4, 4, -1.0, 1.0));
    grad_check(
        |tp, v| reduce(tp, tp.add_row_broadcast(v[0], v[1])?, 6),
        &[x, b],
    )
    .unwrap();
    let x = t(&[2, 3, 4], test_values(5, 24, -1.0, 1.0));
    let b = t(&[3], test_values(6, 3, -1.0, 1.0));
    grad_check(
        |tp, v| reduce(tp, tp.add_channel_bias(v[0], v[1], 1)?, 7),
        &[x, b],
    )
    .unwrap();
}

#[test]
fn matmul_transpose_reshape() {
    let a = t(&[3, 4], test_values(7, 12, -1.0, 1.0));
    let b = t(&[4, 2], test_values(8, 8, -1.0, 1.0));
    grad_check(|tp, v| reduce(tp, tp.matmul(v[0], v[1])?, 8), &[a.clone(), b]).unwrap();
    grad_check(|tp, v| reduce(tp, tp.transpose(v[0])?, 9), &[a.clone()]).unwrap();
    grad_check(
        |tp, v| reduce(tp, tp.reshape(v[0], vec![2, 2, 3])?, 10),
        &[a],
    )
    .unwrap();
}

#[test]
fn concat_and_slice() {
    let a = t(&[2, 3], test_values(11, 6, -1.0, 1.0));
    let b = t(&[2, 2], test_values(12, 4, -1.0, 1.0));
    grad_check(
        |tp, v| reduce(tp, tp.concat(1, &[v[0], v[1]])?, 11),
        &[a.clone(), b],
    )
    .unwrap();
    let x = t(&[3, 5], test_values(13, 15, -1.0, 1.0));
    grad_check(|tp, v| reduce(tp, tp.slice(v[0], 1, 1, 3)?, 12), &[x]).unwrap();
}

#[test]
fn reductions_and_activations() {
    let x = t(&[2, 4], test_values(14, 8, -1.0, 1.0));
    grad_check(|tp, v| Ok(tp.sum(v[0])), &[x.clone()]).unwrap();
    grad_check(|tp, v| Ok(tp.mean(v[0])), &[x.clone()]).unwrap();
    // relu checked away from the kink
    let x_off = t(&[2, 4], test_values_offset_zero(15, 8));
    grad_check(|tp, v| reduce(tp, tp.relu(v[0]), 13), &[x_off]).unwrap();
    grad_check(|tp, v| reduce(tp, tp.softmax_last_axis(v[0]), 14), &[x]).unwrap();
}

#[test]
fn softmax_rows_sum_to_one() {
    let tape: Tape<f64> = Tape::new();
    let x = tape.leaf(t(&[4, 7], test_values(16, 28, -3.0, 3.0)));
    let y = tape.softmax_last_axis(x);
    let vals = tape.value(y);
    for r in 0..4 {
        let s: f64 = vals[r * 7..(r + 1) * 7].iter().sum();
        assert!((s - 1.0).abs() <= 1e-6, "row {r} sums to {s}");
        assert!(vals[r * 7..(r + 1) * 7].iter().all(|v| *v >= 0.0));
    }
    // pinned: softmax over (0, 0) is (0.5, 0.5)
    let z = tape.leaf(t(&[1, 2], vec![0.0, 0.0]));
    assert_eq!(tape.value(tape.softmax_last_axis(z)), vec![0.5, 0.5]);
}

#[test]
fn l1_loss_value_and_gradient() {
    // keep |a - b| away from zero so the kink is not sampled
    let a = t(&[3, 3], test_values_offset_zero(17, 9));
    let b = t(
        &[3, 3],
        a.data.iter().map(|v| v + 2.0 * v.signum()).collect(),
    );
    grad_check(|tp, v| tp.l1_loss(v[0], v[1]), &[a, b]).unwrap();
}

#[test]
fn conv_ops() {
    let x = t(&[2, 3, 7], test_values(18, 42, -1.0, 1.0));
    let w = t(&[4, 3, 3], test_values(19, 36, -1.0, 1.0));
    grad_check(|tp, v| reduce(tp, tp.conv1d(v[0], v[1])?, 15), &[x, w]).unwrap();

    let x = t(&[2, 5, 6], test_values(20, 60, -1.0, 1.0));
    let w = t(&[3, 2, 3, 3], test_values(21, 54, -1.0, 1.0));
    grad_check(|tp, v| reduce(tp, tp.conv2d(v[0], v[1])?, 16), &[x, w]).unwrap();
}

#[test]
fn conv_identity_kernels() {
    let tape: Tape<f64> = Tape::new();
    // conv1d identity: kernel (1,1,3) = [0,1,0]
    let x = tape.leaf(t(&[1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]));
    let w = tape.leaf(t(&[1, 1, 3], vec![0.0, 1.0, 0.0]));
    let y = tape.conv1d(x, w).unwrap();
    assert_eq!(tape.value(y), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    // all-ones 3-kernel on (0,1,0) -> (1,1,1)
    let x = tape.leaf(t(&[1, 1, 3], vec![0.0, 1.0, 0.0]));
    let w = tape.leaf(t(&[1, 1, 3], vec![1.0, 1.0, 1.0]));
    let y = tape.conv1d(x, w).unwrap();
    assert_eq!(tape.value(y), vec![1.0, 1.0, 1.0]);
    // even kernels are a configuration error
    let w_even = tape.leaf(t(&[1, 1, 2], vec![1.0, 1.0]));
    assert!(tape.conv1d(x, w_even).is_err());
    // conv2d identity
    let x = tape.leaf(t(&[1, 3, 3], test_values(22, 9, -1.0, 1.0)));
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = tape.leaf(t(&[1, 1, 3, 3], k));
    let y = tape.conv2d(x, w).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn pool_upsample_layernorm() {
    let x = t(&[2, 4, 4], test_values(23, 32, -1.0, 1.0));
    grad_check(|tp, v| reduce(tp, tp.avg_pool2(v[0])?, 17), &[x.clone()]).unwrap();
    grad_check(|tp, v| reduce(tp, tp.upsample2(v[0])?, 18), &[x]).unwrap();
    let x = t(&[3, 6], test_values(24, 18, -1.0, 1.0));
    grad_check(
        |tp, v| reduce(tp, tp.layer_norm_rows(v[0], 1e-5)?, 19),
        &[x],
    )
    .unwrap();
}

#[test]
fn scalar_with_grad_bridge() {
    // f(x) = sum(x^2) supplied externally; 3*f so the chain rule through
    // the external node is exercised.
    let x = t(&[5], test_values(25, 5, -1.0, 1.0));
    grad_check(
        |tp, v| {
            let vals = tp.value(v[0]);
            let f: f64 = vals.iter().map(|a| a * a).sum();
            let grad: Vec<f64> = vals.iter().map(|a| 2.0 * a).collect();
            let ext = tp.scalar_with_grad(v[0], f, grad)?;
            Ok(tp.scale(ext, 3.0))
        },
        &[x],
    )
    .unwrap();
}

#[test]
fn attention_composite_gradient() {
    let mha = MultiHeadAttention::new("m", 8, 2).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    mha.init(&mut store, 33).unwrap();
    let x = t(&[4, 8], test_values(26, 32, -1.0, 1.0));
    grad_check(
        |tp, v| {
            let s = Session::new(tp, &store);
            reduce(tp, mha.forward(&s, v[0])?, 20)
        },
        &[x],
    )
    .unwrap();
}

#[test]
fn attention_parameter_gradients() {
    // check gradients w.r.t. the projection weights themselves
    let x_data = test_values(27, 24, -1.0, 1.0);
    let wq = t(&[6, 6], test_values(28, 36, -0.5, 0.5));
    grad_check(
        |tp, v| {
            let x = tp.leaf(t(&[4, 6], x_data.clone()));
            let q = tp.matmul(x, v[0])?;
            let kt = tp.transpose(x)?;
            let scores = tp.scale(tp.matmul(q, kt)?, 1.0 / (6f64).sqrt());
            let w = tp.softmax_last_axis(scores);
            reduce(tp, tp.matmul(w, x)?, 21)
        },
        &[wq],
    )
    .unwrap();
}

#[test]
fn residual_block_gradient() {
    let block = ResidualBlock2d::new("r", 3);
    let mut store: ParamStore<f64> = ParamStore::new();
    block.init(&mut store, 41).unwrap();
    // zero-init reduce conv has zero gradient paths through relu kinks at
    // exactly 0; nudge the weights off zero first
    let w = store.get_mut("r.c2.w").unwrap();
    let nudge = test_values(42, w.data.len(), -0.3, 0.3);
    w.data.copy_from_slice(&nudge);
    let x = t(&[1, 5, 4], test_values(43, 20, -1.0, 1.0));
    grad_check(
        |tp, v| {
            let s = Session::new(tp, &store);
            reduce(tp, block.forward(&s, v[0])?, 22)
        },
        &[x],
    )
    .unwrap();
}

#[test]
fn mlp_three_layer_gradient_sampled() {
    // random 3-layer MLP, 50 sampled coordinates
    let mlp = MlpStack::new("mlp", &[6, 8, 8, 4]);
    let mut store: ParamStore<f64> = ParamStore::new();
    mlp.init(&mut store, 51).unwrap();
    let x = t(&[3, 6], test_values(52, 18, -1.0, 1.0));
    let coords: Vec<(usize, usize)> = (0..50).map(|k| (0usize, (k * 7) % 18)).collect();
    ldct_nn::check::grad_check_at(
        |tp, v| {
            let s = Session::new(tp, &store);
            reduce(tp, mlp.forward_relu(&s, v[0])?, 23)
        },
        &[x],
        Some(&coords),
        1e-5,
        1e-4,
    )
    .unwrap();
}

#[test]
fn linear_weight_gradients() {
    let x_data = test_values(53, 12, -1.0, 1.0);
    let w = t(&[4, 3], test_values(54, 12, -0.7, 0.7));
    let b = t(&[3], test_values(55, 3, -0.5, 0.5));
    grad_check(
        |tp, v| {
            let x = tp.leaf(t(&[3, 4], x_data.clone()));
            let y = tp.add_row_broadcast(tp.matmul(x, v[0])?, v[1])?;
            reduce(tp, y, 24)
        },
        &[w, b],
    )
    .unwrap();
}

#[test]
fn unet_gradient_at_16x16() {
    let unet = UNet::new("u", 2, 2).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    unet.init(&mut store, 61).unwrap();
    // give the zero-init output conv nonzero weights so its path carries
    // gradient signal
    let w = store.get_mut("u.out.w").unwrap();
    let nudge = test_values(62, w.data.len(), -0.2, 0.2);
    w.data.copy_from_slice(&nudge);
    let x = t(&[1, 16, 16], test_values(63, 256, -1.0, 1.0));
    let coords: Vec<(usize, usize)> = (0..64).map(|k| (0usize, k * 4)).collect();
    ldct_nn::check::grad_check_at(
        |tp, v| {
            let s = Session::new(tp, &store);
            reduce(tp, unet.forward(&s, v[0])?, 25)
        },
        &[x],
        Some(&coords),
        1e-5,
        1e-4,
    )
    .unwrap();
}

#[test]
fn unet_parameter_gradient() {
    let unet = UNet::new("u", 1, 2).unwrap();
    let mut store: ParamStore<f64> = ParamStore::new();
    unet.init(&mut store, 71).unwrap();
    // the zero-init output conv would block all parameter gradients
    let w = store.get_mut("u.out.w").unwrap();
    let nudge = test_values(73, w.data.len(), -0.2, 0.2);
    w.data.copy_from_slice(&nudge);
    let x_data = test_values(72, 64, -1.0, 1.0);
    let loss_of = |st: &ParamStore<f64>| -> f64 {
        let tape: Tape<f64> = Tape::new();
        let s = Session::new(&tape, st);
        let x = tape.leaf(t(&[1, 8, 8], x_data.clone()));
        let out = unet.forward(&s, x).unwrap();
        let w = tape.leaf(t(&[1, 8, 8], test_values(74, 64, -1.0, 1.0)));
        tape.scalar_value(tape.sum(tape.mul(out, w).unwrap())).unwrap()
    };

    // analytic gradient of the checked parameter
    let tape: Tape<f64> = Tape::new();
    let s = Session::new(&tape, &store);
    let x = tape.leaf(t(&[1, 8, 8], x_data.clone()));
    let out = unet.forward(&s, x).unwrap();
    let wfun = tape.leaf(t(&[1, 8, 8], test_values(74, 64, -1.0, 1.0)));
    let loss = tape.sum(tape.mul(out, wfun).unwrap());
    let grads = tape.backward(loss).unwrap();
    let pvar = s.param("u.enc0.a.w").unwrap();
    let analytic = grads.grad(pvar, store.get("u.enc0.a.w").unwrap().len());

    let h = 1e-5;
    let mut nonzero = false;
    for k in (0..analytic.len()).step_by(3) {
        let base = store.get("u.enc0.a.w").unwrap().data[k];
        let mut plus = store.clone();
        plus.get_mut("u.enc0.a.w").unwrap().data[k] = base + h;
        let mut minus = store.clone();
        minus.get_mut("u.enc0.a.w").unwrap().data[k] = base - h;
        let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        let err = ldct_nn::check::rel_err(analytic[k], numeric, 1e-8);
        assert!(err <= 1e-4, "coord {k}: {} vs {numeric}", analytic[k]);
        nonzero |= numeric.abs() > 1e-10;
    }
    assert!(nonzero, "gradient path is dead");
}

#[test]
fn backward_requires_scalar() {
    let tape: Tape<f64> = Tape::new();
    let x = tape.leaf(t(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    assert!(tape.backward(x).is_err());
    let s = tape.sum(x);
    assert!(tape.backward(s).is_ok());
}

#[test]
fn pinned_gradients() {
    let tape: Tape<f64> = Tape::new();
    // loss = sum(x) -> all-ones gradient
    let x = tape.leaf(t(&[3], vec![5.0, -1.0, 2.0]));
    let grads = tape.backward(tape.sum(x)).unwrap();
    assert_eq!(grads.grad(x, 3), vec![1.0, 1.0, 1.0]);
    // loss = sum(x * x) at (1, 2) -> (2, 4)
    let x = tape.leaf(t(&[2], vec![1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let grads = tape.backward(tape.sum(sq)).unwrap();
    assert_eq!(grads.grad(x, 2), vec![2.0, 4.0]);
    // relu(-1, 0, 2) forward
    let r = tape.relu(tape.leaf(t(&[3], vec![-1.0, 0.0, 2.0])));
    assert_eq!(tape.value(r), vec![0.0, 0.0, 2.0]);
    // ones(2,3) x ones(3,2) = 2x2 of 3s
    let a = tape.leaf(t(&[2, 3], vec![1.0; 6]));
    let b = tape.leaf(t(&[3, 2], vec![1.0; 6]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c), vec![3.0; 4]);
}

#[test]
fn forward_backward_bit_determinism() {
    let run = || {
        let mlp = MlpStack::new("d", &[8, 16, 8]);
        let mut store: ParamStore<f64> = ParamStore::new();
        mlp.init(&mut store, 99).unwrap();
        let tape = Tape::new();
        let s = Session::new(&tape, &store);
        let x = tape.leaf(t(&[4, 8], test_values(100, 32, -1.0, 1.0)));
        let y = mlp.forward_relu(&s, x).unwrap();
        let loss = tape.mean(y);
        let grads = tape.backward(loss).unwrap();
        let mut bits: Vec<u64> = tape.value(y).iter().map(|v| v.to_bits()).collect();
        for (_, var) in s.bound_params() {
            let len = tape.value_len(var);
            bits.extend(grads.grad(var, len).iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn fan_out_gradients_accumulate() {
    // y = x + x: dy/dx = 2 through two paths
    let tape: Tape<f64> = Tape::new();
    let x = tape.leaf(t(&[2], vec![1.0, -3.0]));
    let y = tape.add(x, x).unwrap();
    let grads = tape.backward(tape.sum(y)).unwrap();
    assert_eq!(grads.grad(x, 2), vec![2.0, 2.0]);
}

#[test]
fn linear_layer_zero_bias_zero_input() {
    let lin = Linear::new("z", 4, 3);
    let mut store: ParamStore<f64> = ParamStore::new();
    lin.init(&mut store, 5).unwrap();
    let tape = Tape::new();
    let s = Session::new(&tape, &store);
    let x = tape.leaf(t(&[2, 4], vec![0.0; 8]));
    let y = lin.forward(&s, x).unwrap();
    assert!(tape.value(y).iter().all(|v| *v == 0.0));
}
