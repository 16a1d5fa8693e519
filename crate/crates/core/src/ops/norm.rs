//! Batch normalization over [N, C, D, H, W] with per-channel statistics.

use std::sync::Mutex;

use crate::ops::Mode;
use crate::tensor::{expect_rank, Element, Result, Tensor, TensorError};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

/// Running mean/variance buffers, mutated only by train-mode forward.
pub struct BatchNormState<T: Element> {
    pub(crate) mean: Mutex<Vec<T>>,
    pub(crate) var: Mutex<Vec<T>>,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            mean: Mutex::new(vec![T::zero(); channels]),
            var: Mutex::new(vec![T::one(); channels]),
        }
    }

    pub fn snapshot(&self) -> (Vec<T>, Vec<T>) {
        (self.mean.lock().unwrap().clone(), self.var.lock().unwrap().clone())
    }

    pub fn restore(&self, mean: Vec<T>, var: Vec<T>) {
        *self.mean.lock().unwrap() = mean;
        *self.var.lock().unwrap() = var;
    }
}

/// Normalize per channel over N and all spatial positions.
///
/// Train mode uses batch statistics and updates the running buffers with
/// momentum 0.1 (variance stored unbiased); eval mode reads the running
/// buffers and leaves them untouched.
pub fn batchnorm3d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    expect_rank(x, 5, "batchnorm3d input")?;
    let (batch, channels) = (x.shape()[0], x.shape()[1]);
    let vox: usize = x.shape()[2..].iter().product();
    for (t, name) in [(gamma, "gamma"), (beta, "beta")] {
        if t.shape() != [channels] {
            return Err(TensorError::ShapeMismatch {
                axis: 0,
                expected: channels,
                got: t.numel(),
                context: format!("batchnorm3d {name}"),
            });
        }
    }
    let m = batch * vox;
    let eps = T::from_f64(BATCHNORM_EPS);
    let xd = x.data();

    let per_channel_sum = |f: &dyn Fn(usize) -> T| -> Vec<T> {
        let mut acc = vec![T::zero(); channels];
        for n in 0..batch {
            for c in 0..channels {
                let base = (n * channels + c) * vox;
                let mut s = T::zero();
                for i in base..base + vox {
                    s = s + f(i);
                }
                acc[c] = acc[c] + s;
            }
        }
        acc
    };

    let (mean, var) = match mode {
        Mode::Train => {
            let inv_m = T::from_f64(1.0 / m as f64);
            let sums = per_channel_sum(&|i| xd[i]);
            let mean: Vec<T> = sums.iter().map(|&s| s * inv_m).collect();
            let mut var = vec![T::zero(); channels];
            for n in 0..batch {
                for c in 0..channels {
                    let base = (n * channels + c) * vox;
                    let mu = mean[c];
                    let mut s = T::zero();
                    for i in base..base + vox {
                        let d = xd[i] - mu;
                        s = s + d * d;
                    }
                    var[c] = var[c] + s;
                }
            }
            for v in var.iter_mut() {
                *v = *v * inv_m;
            }
            // Momentum update; unbiased variance in the running buffer.
            let mom = T::from_f64(BATCHNORM_MOMENTUM);
            let keep = T::one() - mom;
            let bias_fix = if m > 1 {
                T::from_f64(m as f64 / (m as f64 - 1.0))
            } else {
                T::one()
            };
            {
                let mut rm = state.mean.lock().unwrap();
                let mut rv = state.var.lock().unwrap();
                for c in 0..channels {
                    rm[c] = keep * rm[c] + mom * mean[c];
                    rv[c] = keep * rv[c] + mom * var[c] * bias_fix;
                }
            }
            (mean, var)
        }
        Mode::Eval => state.snapshot(),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gd = gamma.data();
    let bd = beta.data();
    let mut out = vec![T::zero(); x.numel()];
    for n in 0..batch {
        for c in 0..channels {
            let base = (n * channels + c) * vox;
            let (mu, istd, ga, be) = (mean[c], inv_std[c], gd[c], bd[c]);
            for i in base..base + vox {
                out[i] = ga * (xd[i] - mu) * istd + be;
            }
        }
    }

    let xc = x.clone();
    let gc = gamma.clone();
    let train = matches!(mode, Mode::Train);
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |_out, grad, needs| {
            let xd = xc.data();
            let gd = gc.data();
            // Per-channel reductions of grad and grad*xhat.
            let mut sum_g = vec![T::zero(); channels];
            let mut sum_gx = vec![T::zero(); channels];
            for n in 0..batch {
                for c in 0..channels {
                    let base = (n * channels + c) * vox;
                    let (mu, istd) = (mean[c], inv_std[c]);
                    let mut sg = T::zero();
                    let mut sgx = T::zero();
                    for i in base..base + vox {
                        let xhat = (xd[i] - mu) * istd;
                        sg = sg + grad[i];
                        sgx = sgx + grad[i] * xhat;
                    }
                    sum_g[c] = sum_g[c] + sg;
                    sum_gx[c] = sum_gx[c] + sgx;
                }
            }
            let grad_x = if needs[0] {
                let mut gx = vec![T::zero(); xd.len()];
                if train {
                    let inv_m = T::from_f64(1.0 / m as f64);
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * vox;
                            let (mu, istd, ga) = (mean[c], inv_std[c], gd[c]);
                            let mg = sum_g[c] * inv_m;
                            let mgx = sum_gx[c] * inv_m;
                            for i in base..base + vox {
                                let xhat = (xd[i] - mu) * istd;
                                gx[i] = ga * istd * (grad[i] - mg - xhat * mgx);
                            }
                        }
                    }
                } else {
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * vox;
                            let scale = gd[c] * inv_std[c];
                            for i in base..base + vox {
                                gx[i] = grad[i] * scale;
                            }
                        }
                    }
                }
                Some(gx)
            } else {
                None
            };
            let grad_gamma = if needs[1] { Some(sum_gx.clone()) } else { None };
            let grad_beta = if needs[2] { Some(sum_g.clone()) } else { None };
            vec![grad_x, grad_gamma, grad_beta]
        }),
    ))
}
