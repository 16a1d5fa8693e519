//! Elementwise operations, channel concatenation and channel gating.

use crate::tensor::{check_same_shape, expect_rank, Element, Result, Tensor, TensorError};

/// relu(x) = max(0, x). Subgradient 0 at the kink.
pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| v.max(T::zero())).collect();
    let xc = x.clone();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| {
            let g = xc
                .data()
                .iter()
                .zip(grad)
                .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            vec![Some(g)]
        }),
    )
}

pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x
        .data()
        .iter()
        .map(|&v| T::one() / (T::one() + (-v).exp()))
        .collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |out, grad, _needs| {
            let g = out
                .iter()
                .zip(grad)
                .map(|(&y, &gv)| gv * y * (T::one() - y))
                .collect();
            vec![Some(g)]
        }),
    )
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(a, b, "add")?;
    let data: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |_out, grad, needs| {
            let ga = needs[0].then(|| grad.to_vec());
            let gb = needs[1].then(|| grad.to_vec());
            vec![ga, gb]
        }),
    ))
}

/// Elementwise product of two same-shape tensors.
pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(a, b, "mul")?;
    let data: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |_out, grad, needs| {
            let ga = needs[0]
                .then(|| grad.iter().zip(bc.data()).map(|(&g, &y)| g * y).collect());
            let gb = needs[1]
                .then(|| grad.iter().zip(ac.data()).map(|(&g, &x)| g * x).collect());
            vec![ga, gb]
        }),
    ))
}

/// affine(x) = scale * x + shift, elementwise with scalar coefficients.
/// Covers scalar multiply (shift 0) and 1 - x (scale -1, shift 1).
pub fn affine<T: Element>(x: &Tensor<T>, scale: f64, shift: f64) -> Tensor<T> {
    let s = T::from_f64(scale);
    let c = T::from_f64(shift);
    let data: Vec<T> = x.data().iter().map(|&v| s * v + c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| {
            vec![Some(grad.iter().map(|&g| g * s).collect())]
        }),
    )
}

/// Concatenate along the channel axis (axis 1). All other extents must
/// agree; output channels are the sum of input channels, inputs in order.
pub fn concat_channels<T: Element>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if inputs.is_empty() {
        return Err(TensorError::Invalid("concat of zero tensors".into()));
    }
    let first = inputs[0];
    expect_rank(first, 5, "concat input")?;
    for t in &inputs[1..] {
        expect_rank(t, 5, "concat input")?;
        for axis in [0usize, 2, 3, 4] {
            if t.shape()[axis] != first.shape()[axis] {
                return Err(TensorError::ShapeMismatch {
                    axis,
                    expected: first.shape()[axis],
                    got: t.shape()[axis],
                    context: "concat non-channel extents".into(),
                });
            }
        }
    }
    let batch = first.shape()[0];
    let vox: usize = first.shape()[2..].iter().product();
    let channels: Vec<usize> = inputs.iter().map(|t| t.shape()[1]).collect();
    let total_c: usize = channels.iter().sum();
    let mut out = vec![T::zero(); batch * total_c * vox];
    for n in 0..batch {
        let mut c_off = 0usize;
        for (t, &c_t) in inputs.iter().zip(&channels) {
            let src = &t.data()[n * c_t * vox..(n + 1) * c_t * vox];
            let dst_base = (n * total_c + c_off) * vox;
            out[dst_base..dst_base + c_t * vox].copy_from_slice(src);
            c_off += c_t;
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = total_c;
    let channels_b = channels.clone();
    Ok(Tensor::from_op(
        shape,
        out,
        inputs.iter().map(|&t| t.clone()).collect(),
        Box::new(move |_out, grad, needs| {
            let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(channels_b.len());
            let mut c_off = 0usize;
            for (pi, &c_t) in channels_b.iter().enumerate() {
                if !needs[pi] {
                    grads.push(None);
                    c_off += c_t;
                    continue;
                }
                let mut g = vec![T::zero(); batch * c_t * vox];
                for n in 0..batch {
                    let src_base = (n * total_c + c_off) * vox;
                    g[n * c_t * vox..(n + 1) * c_t * vox]
                        .copy_from_slice(&grad[src_base..src_base + c_t * vox]);
                }
                grads.push(Some(g));
                c_off += c_t;
            }
            grads
        }),
    ))
}

/// Gate a [N, C, D, H, W] volume by a per-channel [N, C] factor.
pub fn mul_channelwise<T: Element>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(x, 5, "mul_channelwise input")?;
    expect_rank(gate, 2, "mul_channelwise gate")?;
    let (batch, channels) = (x.shape()[0], x.shape()[1]);
    if gate.shape() != [batch, channels] {
        return Err(TensorError::ShapeMismatch {
            axis: if gate.shape()[0] != batch { 0 } else { 1 },
            expected: if gate.shape()[0] != batch { batch } else { channels },
            got: if gate.shape()[0] != batch {
                gate.shape()[0]
            } else {
                gate.shape()[1]
            },
            context: "mul_channelwise gate vs input".into(),
        });
    }
    let vox: usize = x.shape()[2..].iter().product();
    let xd = x.data();
    let gd = gate.data();
    let mut out = vec![T::zero(); x.numel()];
    for nc in 0..batch * channels {
        let g = gd[nc];
        for i in nc * vox..(nc + 1) * vox {
            out[i] = xd[i] * g;
        }
    }
    let (xc, gc) = (x.clone(), gate.clone());
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gate.clone()],
        Box::new(move |_out, grad, needs| {
            let xd = xc.data();
            let gd = gc.data();
            let gx = needs[0].then(|| {
                let mut g = vec![T::zero(); xd.len()];
                for nc in 0..batch * channels {
                    let gv = gd[nc];
                    for i in nc * vox..(nc + 1) * vox {
                        g[i] = grad[i] * gv;
                    }
                }
                g
            });
            let ggate = needs[1].then(|| {
                let mut g = vec![T::zero(); batch * channels];
                for nc in 0..batch * channels {
                    let mut s = T::zero();
                    for i in nc * vox..(nc + 1) * vox {
                        s = s + grad[i] * xd[i];
                    }
                    g[nc] = s;
                }
                g
            });
            vec![gx, ggate]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x: Tensor<f32> = Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0], false);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn add_zero_is_identity() {
        let x: Tensor<f32> = Tensor::from_vec(vec![2, 2], vec![1.0, -2.0, 3.5, 0.0], false);
        let z: Tensor<f32> = Tensor::zeros(vec![2, 2]);
        assert_eq!(add(&x, &z).unwrap().data(), x.data());
    }

    #[test]
    fn concat_preserves_inputs_in_order() {
        let a: Tensor<f32> = Tensor::full(vec![1, 2, 1, 1, 2], 1.0);
        let b: Tensor<f32> = Tensor::full(vec![1, 3, 1, 1, 2], 2.0);
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), &[1, 5, 1, 1, 2]);
        assert_eq!(&y.data()[..4], &[1.0; 4]);
        assert_eq!(&y.data()[4..], &[2.0; 6]);
    }

    #[test]
    fn concat_shape_mismatch_names_axis() {
        let a: Tensor<f32> = Tensor::zeros(vec![1, 2, 2, 2, 2]);
        let b: Tensor<f32> = Tensor::zeros(vec![1, 2, 3, 2, 2]);
        match concat_channels(&[&a, &b]) {
            Err(TensorError::ShapeMismatch { axis: 2, .. }) => {}
            other => panic!("expected axis-2 mismatch, got {other:?}"),
        }
    }

    #[test]
    fn channel_gate_scales_each_channel() {
        let x: Tensor<f32> = Tensor::full(vec![1, 2, 1, 1, 2], 3.0);
        let gate = Tensor::from_vec(vec![1, 2], vec![0.5, 2.0], false);
        let y = mul_channelwise(&x, &gate).unwrap();
        assert_eq!(y.data(), &[1.5, 1.5, 6.0, 6.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let x: Tensor<f64> = Tensor::zeros(vec![2]);
        let y = sigmoid(&x);
        assert!(y.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn affine_covers_one_minus_x() {
        let x: Tensor<f32> = Tensor::from_vec(vec![2], vec![0.25, 2.0], false);
        let y = affine(&x, -1.0, 1.0);
        assert_eq!(y.data(), &[0.75, -1.0]);
    }
}
