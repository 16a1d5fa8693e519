//! Finite-difference gradient checks for every differentiable op.
//!
//! All checks run at 64-bit with central differences (h = 1e-5) and demand
//! max relative error < 1e-4.

use volseg_core::autograd::{grad_check, randn_tensor, FD_STEP};
use volseg_core::ops::{self, BatchNormState, Mode, Padding};
use volseg_core::Tensor;

const TOL: f64 = 1e-4;

fn assert_grad_ok(name: &str, got: volseg_core::autograd::GradCheck) {
    assert!(
        got.max_rel_error < TOL,
        "{name}: max rel error {} at flat index {} (analytic {}, numeric {})",
        got.max_rel_error,
        got.worst_index,
        got.analytic,
        got.numeric
    );
}

/// Weights the scalar objective with a fixed random direction so the check
/// exercises non-uniform upstream gradients.
fn weighted_sum(y: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let dir = randn_tensor(y.shape().to_vec(), seed, false);
    ops::sum_all(&ops::mul(y, &dir).unwrap())
}

#[test]
fn grad_conv3d_same_padding() {
    let x = randn_tensor(vec![1, 2, 3, 3, 3], 1, true);
    let w = randn_tensor(vec![2, 2, 3, 3, 3], 2, true);
    let b = randn_tensor(vec![2], 3, true);
    let check = grad_check(
        |inp| {
            let y = ops::conv3d(&inp[0], &inp[1], &inp[2], 1, Padding::Same).unwrap();
            weighted_sum(&y, 99)
        },
        &[x, w, b],
        FD_STEP,
    );
    assert_grad_ok("conv3d same", check);
}

#[test]
fn grad_conv3d_strided_valid() {
    let x = randn_tensor(vec![2, 2, 4, 4, 4], 4, true);
    let w = randn_tensor(vec![3, 2, 2, 2, 2], 5, true);
    let b = randn_tensor(vec![3], 6, true);
    let check = grad_check(
        |inp| {
            let y = ops::conv3d(&inp[0], &inp[1], &inp[2], 2, Padding::Explicit(0)).unwrap();
            weighted_sum(&y, 98)
        },
        &[x, w, b],
        FD_STEP,
    );
    assert_grad_ok("conv3d stride 2", check);
}

#[test]
fn grad_transposed_conv3d() {
    let x = randn_tensor(vec![1, 3, 2, 2, 2], 7, true);
    let w = randn_tensor(vec![2, 3, 2, 2, 2], 8, true);
    let b = randn_tensor(vec![2], 9, true);
    let check = grad_check(
        |inp| {
            let y = ops::transposed_conv3d(&inp[0], &inp[1], &inp[2], 2).unwrap();
            weighted_sum(&y, 97)
        },
        &[x, w, b],
        FD_STEP,
    );
    assert_grad_ok("transposed_conv3d", check);
}

#[test]
fn grad_transposed_conv3d_overlapping() {
    // kernel 3, stride 2: overlapping scatter
    let x = randn_tensor(vec![1, 2, 2, 2, 2], 70, true);
    let w = randn_tensor(vec![2, 2, 3, 3, 3], 71, true);
    let b = randn_tensor(vec![2], 72, true);
    let check = grad_check(
        |inp| {
            let y = ops::transposed_conv3d(&inp[0], &inp[1], &inp[2], 2).unwrap();
            weighted_sum(&y, 96)
        },
        &[x, w, b],
        FD_STEP,
    );
    assert_grad_ok("transposed_conv3d k3 s2", check);
}

#[test]
fn grad_maxpool_downsampling() {
    let x = randn_tensor(vec![1, 2, 4, 4, 4], 10, true);
    let check = grad_check(
        |inp| {
            let y = ops::maxpool3d(&inp[0], 2, 2, Padding::Explicit(0)).unwrap();
            weighted_sum(&y.output, 95)
        },
        &[x],
        FD_STEP,
    );
    assert_grad_ok("maxpool 2/2", check);
}

#[test]
fn grad_maxpool_same_padded_window3() {
    let x = randn_tensor(vec![1, 2, 3, 3, 3], 11, true);
    let check = grad_check(
        |inp| {
            let y = ops::maxpool3d(&inp[0], 3, 1, Padding::Same).unwrap();
            weighted_sum(&y.output, 94)
        },
        &[x],
        FD_STEP,
    );
    assert_grad_ok("maxpool 3/1 same", check);
}

#[test]
fn grad_batchnorm_train_mode() {
    let x = randn_tensor(vec![2, 2, 2, 2, 2], 12, true);
    let gamma = randn_tensor(vec![2], 13, true);
    let beta = randn_tensor(vec![2], 14, true);
    let check = grad_check(
        |inp| {
            let state = BatchNormState::new(2);
            let y = ops::batchnorm3d(&inp[0], &inp[1], &inp[2], &state, Mode::Train).unwrap();
            weighted_sum(&y, 93)
        },
        &[x, gamma, beta],
        FD_STEP,
    );
    assert_grad_ok("batchnorm train", check);
}

#[test]
fn grad_batchnorm_eval_mode() {
    let x = randn_tensor(vec![2, 2, 2, 2, 2], 15, true);
    let gamma = randn_tensor(vec![2], 16, true);
    let beta = randn_tensor(vec![2], 17, true);
    let state = BatchNormState::new(2);
    // populate running stats away from the init values
    let warm = randn_tensor(vec![2, 2, 2, 2, 2], 18, false);
    ops::batchnorm3d(&warm, &Tensor::full(vec![2], 1.0), &Tensor::zeros(vec![2]), &state, Mode::Train)
        .unwrap();
    let check = grad_check(
        |inp| {
            let y = ops::batchnorm3d(&inp[0], &inp[1], &inp[2], &state, Mode::Eval).unwrap();
            weighted_sum(&y, 92)
        },
        &[x, gamma, beta],
        FD_STEP,
    );
    assert_grad_ok("batchnorm eval", check);
}

#[test]
fn grad_global_avg_pool() {
    let x = randn_tensor(vec![2, 3, 2, 2, 2], 19, true);
    let check = grad_check(
        |inp| weighted_sum(&ops::global_avg_pool(&inp[0]).unwrap(), 91),
        &[x],
        FD_STEP,
    );
    assert_grad_ok("global_avg_pool", check);
}

#[test]
fn grad_dense() {
    let x = randn_tensor(vec![2, 3], 20, true);
    let w = randn_tensor(vec![3, 4], 21, true);
    let b = randn_tensor(vec![4], 22, true);
    let check = grad_check(
        |inp| weighted_sum(&ops::dense(&inp[0], &inp[1], &inp[2]).unwrap(), 90),
        &[x, w, b],
        FD_STEP,
    );
    assert_grad_ok("dense", check);
}

#[test]
fn grad_pointwise_family() {
    let x = randn_tensor(vec![2, 2, 2, 2, 2], 23, true);
    let y = randn_tensor(vec![2, 2, 2, 2, 2], 24, true);
    let check = grad_check(
        |inp| {
            let r = ops::relu(&inp[0]);
            let s = ops::sigmoid(&inp[1]);
            let sum = ops::add(&r, &s).unwrap();
            let prod = ops::mul(&sum, &inp[1]).unwrap();
            let aff = ops::affine(&prod, -0.5, 0.25);
            weighted_sum(&aff, 89)
        },
        &[x, y],
        FD_STEP,
    );
    assert_grad_ok("relu/sigmoid/add/mul/affine", check);
}

#[test]
fn grad_concat_and_channel_gate() {
    let a = randn_tensor(vec![1, 2, 2, 2, 2], 25, true);
    let b = randn_tensor(vec![1, 3, 2, 2, 2], 26, true);
    let gate = randn_tensor(vec![1, 5], 27, true);
    let check = grad_check(
        |inp| {
            let cat = ops::concat_channels(&[&inp[0], &inp[1]]).unwrap();
            let gated = ops::mul_channelwise(&cat, &inp[2]).unwrap();
            weighted_sum(&gated, 88)
        },
        &[a, b, gate],
        FD_STEP,
    );
    assert_grad_ok("concat+gate", check);
}

#[test]
fn grad_softmax_paths() {
    let x = randn_tensor(vec![1, 3, 2, 2, 2], 28, true);
    let check = grad_check(
        |inp| weighted_sum(&ops::softmax_channels(&inp[0]).unwrap(), 87),
        std::slice::from_ref(&x),
        FD_STEP,
    );
    assert_grad_ok("softmax_channels", check);

    let x2 = randn_tensor(vec![2, 4, 3], 29, true);
    let check = grad_check(
        |inp| weighted_sum(&ops::log_softmax_channels(&inp[0]).unwrap(), 86),
        &[x2],
        FD_STEP,
    );
    assert_grad_ok("log_softmax_channels", check);
}

#[test]
fn grad_reduction_and_ratio_chain() {
    // mirrors the overlap-ratio structure used by the dice objective
    let p = randn_tensor(vec![2, 3, 2, 2], 30, true);
    let t = randn_tensor(vec![2, 3, 2, 2], 31, false);
    let check = grad_check(
        |inp| {
            let prod = ops::mul(&inp[0], &t).unwrap();
            let num = ops::affine(&ops::sum_per_channel(&prod).unwrap(), 2.0, 1.0);
            let den = ops::affine(&ops::sum_per_channel(&inp[0]).unwrap(), 1.0, 1.0);
            let ratio = ops::div(&num, &den).unwrap();
            let fg = ops::narrow1d(&ratio, 1, 2).unwrap();
            ops::mean_all(&fg)
        },
        &[p],
        FD_STEP,
    );
    assert_grad_ok("per-channel ratio chain", check);
}

#[test]
fn grad_upsample_nearest() {
    let x = randn_tensor(vec![1, 2, 2, 2, 2], 32, true);
    let check = grad_check(
        |inp| weighted_sum(&ops::upsample_nearest(&inp[0], [2, 2, 2]).unwrap(), 85),
        &[x],
        FD_STEP,
    );
    assert_grad_ok("upsample_nearest", check);
}

#[test]
fn grad_accumulates_across_two_branches() {
    // grad of x used twice equals the sum of per-branch grads
    let x: Tensor<f64> = randn_tensor(vec![4], 33, true);
    let branch_a = ops::affine(&x, 2.0, 0.0);
    let branch_b = ops::relu(&x);
    let joined = ops::add(&branch_a, &branch_b).unwrap();
    let loss = ops::sum_all(&joined);
    volseg_core::autograd::backward(&loss).unwrap();
    let g = x.grad().unwrap();
    for (i, &xv) in x.data().iter().enumerate() {
        let expected = 2.0 + if xv > 0.0 { 1.0 } else { 0.0 };
        assert!((g[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn grad_check_reports_deterministically() {
    let run = || {
        let x = randn_tensor(vec![1, 2, 3, 3, 3], 77, true);
        let w = randn_tensor(vec![2, 2, 3, 3, 3], 78, true);
        let b = randn_tensor(vec![2], 79, true);
        grad_check(
            |inp| {
                let y = ops::conv3d(&inp[0], &inp[1], &inp[2], 1, Padding::Same).unwrap();
                weighted_sum(&y, 84)
            },
            &[x, w, b],
            FD_STEP,
        )
    };
    let a = run();
    let b = run();
    assert_eq!(a.max_rel_error, b.max_rel_error);
    assert_eq!(a.worst_index, b.worst_index);
}
