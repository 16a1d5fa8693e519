//! Fully connected layer: [N, F] x [F, G] + [G] -> [N, G].

use crate::ops::gemm::{dot_lanes, gemm_kordered};
use crate::tensor::{expect_rank, Element, Result, Tensor, TensorError};

pub fn dense<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(x, 2, "dense input")?;
    expect_rank(weight, 2, "dense weight")?;
    expect_rank(bias, 1, "dense bias")?;
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let (wf, g) = (weight.shape()[0], weight.shape()[1]);
    if f != wf {
        return Err(TensorError::ShapeMismatch {
            axis: 1,
            expected: wf,
            got: f,
            context: "dense input features vs weight".into(),
        });
    }
    if bias.shape()[0] != g {
        return Err(TensorError::ShapeMismatch {
            axis: 0,
            expected: g,
            got: bias.shape()[0],
            context: "dense bias vs output features".into(),
        });
    }
    let mut out = vec![T::zero(); n * g];
    gemm_kordered(x.data(), n, f, weight.data(), g, &mut out);
    let bd = bias.data();
    for row in out.chunks_mut(g) {
        for (v, &b) in row.iter_mut().zip(bd) {
            *v = *v + b;
        }
    }
    let (xc, wc) = (x.clone(), weight.clone());
    Ok(Tensor::from_op(
        vec![n, g],
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |_out, grad, needs| {
            let xd = xc.data();
            let wd = wc.data();
            // grad: [N, G]
            let gx = needs[0].then(|| {
                // dX = grad @ W^T
                let mut gx = vec![T::zero(); n * f];
                for i in 0..n {
                    for j in 0..f {
                        gx[i * f + j] = dot_lanes(
                            &grad[i * g..(i + 1) * g],
                            &wd[j * g..(j + 1) * g],
                        );
                    }
                }
                gx
            });
            let gw = needs[1].then(|| {
                // dW[j, k] = sum_i X[i, j] * grad[i, k]
                let mut gw = vec![T::zero(); f * g];
                for i in 0..n {
                    for j in 0..f {
                        let xij = xd[i * f + j];
                        let grow = &grad[i * g..(i + 1) * g];
                        let wrow = &mut gw[j * g..(j + 1) * g];
                        for (wv, &gv) in wrow.iter_mut().zip(grow) {
                            *wv = *wv + xij * gv;
                        }
                    }
                }
                gw
            });
            let gb = needs[2].then(|| {
                let mut gb = vec![T::zero(); g];
                for i in 0..n {
                    for (bv, &gv) in gb.iter_mut().zip(&grad[i * g..(i + 1) * g]) {
                        *bv = *bv + gv;
                    }
                }
                gb
            });
            vec![gx, gw, gb]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_through() {
        let x: Tensor<f32> = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], false);
        let mut eye = vec![0.0f32; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = Tensor::from_vec(vec![3, 3], eye, false);
        let b = Tensor::zeros(vec![3]);
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let x: Tensor<f32> = Tensor::full(vec![2, 3], 7.0);
        let w = Tensor::zeros(vec![3, 4]);
        let b = Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0], false);
        let y = dense(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matches_hand_matmul() {
        // 2x3 by 3x4 against explicitly written-out products
        let x: Tensor<f64> =
            Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0], false);
        let w = Tensor::from_vec(
            vec![3, 4],
            vec![
                0.5, -1.0, 2.0, 0.0, //
                1.5, 0.25, -0.5, 1.0, //
                -2.0, 3.0, 0.1, 0.6,
            ],
            false,
        );
        let b = Tensor::from_vec(vec![4], vec![0.1, 0.2, 0.3, 0.4], false);
        let y = dense(&x, &w, &b).unwrap();
        let mut expected = vec![0.0f64; 8];
        for i in 0..2 {
            for k in 0..4 {
                let mut s = 0.0;
                for j in 0..3 {
                    s += x.data()[i * 3 + j] * w.data()[j * 4 + k];
                }
                expected[i * 4 + k] = s + b.data()[k];
            }
        }
        for (a, e) in y.data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}
