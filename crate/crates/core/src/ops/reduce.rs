//! Reductions, channel softmax, and small vector ops used by the losses.

use crate::tensor::{check_same_shape, Element, Result, Tensor, TensorError};

pub fn sum_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let mut s = T::zero();
    for &v in x.data() {
        s = s + v;
    }
    let n = x.numel();
    Tensor::from_op(
        vec![1],
        vec![s],
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| vec![Some(vec![grad[0]; n])]),
    )
}

pub fn mean_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.numel();
    let inv = T::from_f64(1.0 / n as f64);
    let mut s = T::zero();
    for &v in x.data() {
        s = s + v;
    }
    Tensor::from_op(
        vec![1],
        vec![s * inv],
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| vec![Some(vec![grad[0] * inv; n])]),
    )
}

/// Sum a [N, C, ...] tensor over batch and all trailing axes, producing [C].
pub fn sum_per_channel<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() < 2 {
        return Err(TensorError::RankMismatch {
            expected: 2,
            got: x.shape().len(),
            context: "sum_per_channel input".into(),
        });
    }
    let (batch, channels) = (x.shape()[0], x.shape()[1]);
    let vox: usize = x.shape()[2..].iter().product();
    let xd = x.data();
    let mut out = vec![T::zero(); channels];
    for n in 0..batch {
        for c in 0..channels {
            let base = (n * channels + c) * vox;
            let mut s = T::zero();
            for &v in &xd[base..base + vox] {
                s = s + v;
            }
            out[c] = out[c] + s;
        }
    }
    let numel = x.numel();
    Ok(Tensor::from_op(
        vec![channels],
        out,
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| {
            let mut g = vec![T::zero(); numel];
            for n in 0..batch {
                for c in 0..channels {
                    let base = (n * channels + c) * vox;
                    for v in g[base..base + vox].iter_mut() {
                        *v = grad[c];
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

/// Elementwise quotient of two same-shape tensors.
pub fn div<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(a, b, "div")?;
    let data: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| x / y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |_out, grad, needs| {
            let bd = bc.data();
            let ad = ac.data();
            let ga = needs[0].then(|| {
                grad.iter().zip(bd).map(|(&g, &y)| g / y).collect()
            });
            let gb = needs[1].then(|| {
                grad.iter()
                    .zip(ad.iter().zip(bd))
                    .map(|(&g, (&x, &y))| -g * x / (y * y))
                    .collect()
            });
            vec![ga, gb]
        }),
    ))
}

/// Slice a 1-d tensor: elements [start, start+len).
pub fn narrow1d<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 1 || start + len > x.numel() {
        return Err(TensorError::Invalid(format!(
            "narrow1d [{start}, {}) out of range for shape {:?}",
            start + len,
            x.shape()
        )));
    }
    let data = x.data()[start..start + len].to_vec();
    let total = x.numel();
    Ok(Tensor::from_op(
        vec![len],
        data,
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| {
            let mut g = vec![T::zero(); total];
            g[start..start + len].copy_from_slice(grad);
            vec![Some(g)]
        }),
    ))
}

fn channel_positions(shape: &[usize]) -> (usize, usize, usize) {
    let batch = shape[0];
    let channels = shape[1];
    let vox: usize = shape[2..].iter().product();
    (batch, channels, vox)
}

/// Numerically stable softmax over the channel axis of [N, C, ...].
pub fn softmax_channels<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() < 2 {
        return Err(TensorError::RankMismatch {
            expected: 2,
            got: x.shape().len(),
            context: "softmax_channels input".into(),
        });
    }
    let (batch, channels, vox) = channel_positions(x.shape());
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for n in 0..batch {
        for p in 0..vox {
            let mut mx = T::neg_infinity();
            for c in 0..channels {
                mx = mx.max(xd[(n * channels + c) * vox + p]);
            }
            let mut z = T::zero();
            for c in 0..channels {
                let e = (xd[(n * channels + c) * vox + p] - mx).exp();
                out[(n * channels + c) * vox + p] = e;
                z = z + e;
            }
            for c in 0..channels {
                let i = (n * channels + c) * vox + p;
                out[i] = out[i] / z;
            }
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |out, grad, _needs| {
            // dx_c = p_c * (g_c - sum_k g_k p_k) per position
            let mut g = vec![T::zero(); out.len()];
            for n in 0..batch {
                for p in 0..vox {
                    let mut dot = T::zero();
                    for c in 0..channels {
                        let i = (n * channels + c) * vox + p;
                        dot = dot + grad[i] * out[i];
                    }
                    for c in 0..channels {
                        let i = (n * channels + c) * vox + p;
                        g[i] = out[i] * (grad[i] - dot);
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

/// Numerically stable log-softmax over the channel axis of [N, C, ...].
pub fn log_softmax_channels<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() < 2 {
        return Err(TensorError::RankMismatch {
            expected: 2,
            got: x.shape().len(),
            context: "log_softmax_channels input".into(),
        });
    }
    let (batch, channels, vox) = channel_positions(x.shape());
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for n in 0..batch {
        for p in 0..vox {
            let mut mx = T::neg_infinity();
            for c in 0..channels {
                mx = mx.max(xd[(n * channels + c) * vox + p]);
            }
            let mut z = T::zero();
            for c in 0..channels {
                z = z + (xd[(n * channels + c) * vox + p] - mx).exp();
            }
            let log_z = z.ln() + mx;
            for c in 0..channels {
                let i = (n * channels + c) * vox + p;
                out[i] = xd[i] - log_z;
            }
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |out, grad, _needs| {
            // dx_c = g_c - softmax_c * sum_k g_k
            let mut g = vec![T::zero(); out.len()];
            for n in 0..batch {
                for p in 0..vox {
                    let mut gsum = T::zero();
                    for c in 0..channels {
                        gsum = gsum + grad[(n * channels + c) * vox + p];
                    }
                    for c in 0..channels {
                        let i = (n * channels + c) * vox + p;
                        g[i] = grad[i] - out[i].exp() * gsum;
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{backward, randn_tensor};

    #[test]
    fn softmax_channels_sum_to_one() {
        let x: Tensor<f64> = randn_tensor(vec![2, 3, 2, 2, 2], 9, false);
        let p = softmax_channels(&x).unwrap();
        for n in 0..2 {
            for pos in 0..8 {
                let s: f64 = (0..3).map(|c| p.data()[(n * 3 + c) * 8 + pos]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sum_per_channel_matches_manual() {
        let x: Tensor<f64> = Tensor::from_vec(
            vec![2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            false,
        );
        let s = sum_per_channel(&x).unwrap();
        assert_eq!(s.data(), &[1.0 + 2.0 + 5.0 + 6.0, 3.0 + 4.0 + 7.0 + 8.0]);
    }

    #[test]
    fn narrow_grad_scatters_back() {
        let x: Tensor<f64> = Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0], true);
        let y = narrow1d(&x, 1, 2).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
        let loss = sum_all(&y);
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn mean_all_gradient_uniform() {
        let x: Tensor<f64> = randn_tensor(vec![5], 3, true);
        let loss = mean_all(&x);
        backward(&loss).unwrap();
        assert!(x.grad().unwrap().iter().all(|&g| (g - 0.2).abs() < 1e-12));
    }
}
