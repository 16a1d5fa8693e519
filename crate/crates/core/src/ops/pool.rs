//! Pooling and resampling: max pooling with argmax routing, global average
//! pooling, and nearest-neighbor upsampling.

use std::sync::Arc;

use crate::ops::conv::Padding;
use crate::ops::gemm::Spatial;
use crate::tensor::{expect_rank, Element, Result, Tensor, TensorError};

/// Max pooling output together with the flat input index of each winning
/// voxel (first in row-major order on ties); the indices are what the
/// backward pass routes gradients through.
#[derive(Debug)]
pub struct MaxPoolOut<T: Element> {
    pub output: Tensor<T>,
    pub indices: Arc<Vec<u32>>,
}

/// 3D max pooling over [N, C, D, H, W].
///
/// `window == stride` with divisible extents is the downsampling fast path;
/// `Padding::Same` with stride 1 keeps extents (used by inception branches).
/// Padding positions never win the max.
pub fn maxpool3d<T: Element>(
    x: &Tensor<T>,
    window: usize,
    stride: usize,
    padding: Padding,
) -> Result<MaxPoolOut<T>> {
    expect_rank(x, 5, "maxpool3d input")?;
    if window == 0 || stride == 0 {
        return Err(TensorError::Invalid(
            "maxpool3d window and stride must be positive".into(),
        ));
    }
    let (batch, channels) = (x.shape()[0], x.shape()[1]);
    let in_sp = Spatial {
        d: x.shape()[2],
        h: x.shape()[3],
        w: x.shape()[4],
    };
    let pad = match padding {
        Padding::Same => {
            if stride == 1 {
                if window % 2 == 0 {
                    return Err(TensorError::Invalid(format!(
                        "same-padded maxpool requires an odd window, got {window}"
                    )));
                }
                (window - 1) / 2
            } else {
                // Downsampling path: require exact divisibility instead of
                // implicit padding, so gradients stay unambiguous.
                for (axis, ext) in [(2, in_sp.d), (3, in_sp.h), (4, in_sp.w)] {
                    if ext % stride != 0 {
                        return Err(TensorError::Indivisible {
                            axis,
                            extent: ext,
                            divisor: stride,
                            context: "maxpool3d extent vs stride".into(),
                        });
                    }
                }
                0
            }
        }
        Padding::Explicit(p) => p,
    };
    if pad == 0 && stride == window {
        for (axis, ext) in [(2, in_sp.d), (3, in_sp.h), (4, in_sp.w)] {
            if ext % stride != 0 {
                return Err(TensorError::Indivisible {
                    axis,
                    extent: ext,
                    divisor: stride,
                    context: "maxpool3d extent vs stride".into(),
                });
            }
        }
    }
    let out_sp = in_sp.conv_out(window, stride, pad).ok_or_else(|| {
        TensorError::Invalid(format!(
            "maxpool3d input {:?} too small for window {window}",
            x.shape()
        ))
    })?;

    let in_vox = in_sp.voxels();
    let out_vox = out_sp.voxels();
    let total_out = batch * channels * out_vox;
    let mut out = vec![T::zero(); total_out];
    let mut indices = vec![0u32; total_out];
    let xd = x.data();

    let mut oi = 0usize;
    for n in 0..batch {
        for c in 0..channels {
            let base = (n * channels + c) * in_vox;
            for od in 0..out_sp.d {
                for oh in 0..out_sp.h {
                    for ow in 0..out_sp.w {
                        let mut best = T::neg_infinity();
                        let mut best_idx = u32::MAX;
                        for kd in 0..window {
                            let id = (od * stride + kd) as isize - pad as isize;
                            if id < 0 || id as usize >= in_sp.d {
                                continue;
                            }
                            for kh in 0..window {
                                let ih = (oh * stride + kh) as isize - pad as isize;
                                if ih < 0 || ih as usize >= in_sp.h {
                                    continue;
                                }
                                for kw in 0..window {
                                    let iw = (ow * stride + kw) as isize - pad as isize;
                                    if iw < 0 || iw as usize >= in_sp.w {
                                        continue;
                                    }
                                    let xi = base
                                        + (id as usize * in_sp.h + ih as usize) * in_sp.w
                                        + iw as usize;
                                    let v = xd[xi];
                                    if v > best {
                                        best = v;
                                        best_idx = xi as u32;
                                    }
                                }
                            }
                        }
                        debug_assert_ne!(best_idx, u32::MAX, "empty pooling window");
                        out[oi] = best;
                        indices[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
    }

    let indices = Arc::new(indices);
    let idx_for_bwd = Arc::clone(&indices);
    let in_numel = x.numel();
    let output = Tensor::from_op(
        vec![batch, channels, out_sp.d, out_sp.h, out_sp.w],
        out,
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| {
            let mut gx = vec![T::zero(); in_numel];
            for (gi, &xi) in grad.iter().zip(idx_for_bwd.iter()) {
                let xi = xi as usize;
                gx[xi] = gx[xi] + *gi;
            }
            vec![Some(gx)]
        }),
    );
    Ok(MaxPoolOut { output, indices })
}

/// Mean over all spatial positions: [N, C, D, H, W] -> [N, C].
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank(x, 5, "global_avg_pool input")?;
    let (batch, channels) = (x.shape()[0], x.shape()[1]);
    let vox: usize = x.shape()[2..].iter().product();
    if vox == 0 {
        return Err(TensorError::Invalid("global_avg_pool on empty volume".into()));
    }
    let inv = T::from_f64(1.0 / vox as f64);
    let xd = x.data();
    let mut out = vec![T::zero(); batch * channels];
    for nc in 0..batch * channels {
        let mut s = T::zero();
        for &v in &xd[nc * vox..(nc + 1) * vox] {
            s = s + v;
        }
        out[nc] = s * inv;
    }
    let in_numel = x.numel();
    Ok(Tensor::from_op(
        vec![batch, channels],
        out,
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| {
            let mut gx = vec![T::zero(); in_numel];
            for nc in 0..batch * channels {
                let g = grad[nc] * inv;
                for v in gx[nc * vox..(nc + 1) * vox].iter_mut() {
                    *v = g;
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Nearest-neighbor upsampling by an integer factor per spatial axis.
pub fn upsample_nearest<T: Element>(x: &Tensor<T>, factor: [usize; 3]) -> Result<Tensor<T>> {
    expect_rank(x, 5, "upsample_nearest input")?;
    if factor.iter().any(|&f| f == 0) {
        return Err(TensorError::Invalid("upsample factor must be positive".into()));
    }
    let (batch, channels) = (x.shape()[0], x.shape()[1]);
    let in_sp = Spatial {
        d: x.shape()[2],
        h: x.shape()[3],
        w: x.shape()[4],
    };
    let out_sp = Spatial {
        d: in_sp.d * factor[0],
        h: in_sp.h * factor[1],
        w: in_sp.w * factor[2],
    };
    let in_vox = in_sp.voxels();
    let out_vox = out_sp.voxels();
    let xd = x.data();
    let mut out = vec![T::zero(); batch * channels * out_vox];
    for nc in 0..batch * channels {
        let src = &xd[nc * in_vox..(nc + 1) * in_vox];
        let dst = &mut out[nc * out_vox..(nc + 1) * out_vox];
        let mut oi = 0usize;
        for od in 0..out_sp.d {
            let id = od / factor[0];
            for oh in 0..out_sp.h {
                let ih = oh / factor[1];
                let row = (id * in_sp.h + ih) * in_sp.w;
                for ow in 0..out_sp.w {
                    dst[oi] = src[row + ow / factor[2]];
                    oi += 1;
                }
            }
        }
    }
    let in_numel = x.numel();
    Ok(Tensor::from_op(
        vec![batch, channels, out_sp.d, out_sp.h, out_sp.w],
        out,
        vec![x.clone()],
        Box::new(move |_out, grad, _needs| {
            let mut gx = vec![T::zero(); in_numel];
            for nc in 0..batch * channels {
                let gsrc = &grad[nc * out_vox..(nc + 1) * out_vox];
                let gdst = &mut gx[nc * in_vox..(nc + 1) * in_vox];
                let mut oi = 0usize;
                for od in 0..out_sp.d {
                    let id = od / factor[0];
                    for oh in 0..out_sp.h {
                        let ih = oh / factor[1];
                        let row = (id * in_sp.h + ih) * in_sp.w;
                        for ow in 0..out_sp.w {
                            let xi = row + ow / factor[2];
                            gdst[xi] = gdst[xi] + gsrc[oi];
                            oi += 1;
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_max_of_one_window() {
        let x: Tensor<f32> = Tensor::from_vec(
            vec![1, 1, 2, 2, 2],
            (1..=8).map(|v| v as f32).collect(),
            false,
        );
        let pooled = maxpool3d(&x, 2, 2, Padding::Explicit(0)).unwrap();
        assert_eq!(pooled.output.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(pooled.output.data(), &[8.0]);
        assert_eq!(pooled.indices[0], 7);
    }

    #[test]
    fn constant_volume_ties_break_row_major_first() {
        let x: Tensor<f32> = Tensor::full(vec![1, 1, 4, 4, 4], 2.5);
        let pooled = maxpool3d(&x, 2, 2, Padding::Explicit(0)).unwrap();
        assert!(pooled.output.data().iter().all(|&v| v == 2.5));
        // First output window covers input corner (0,0,0); index 0 wins.
        assert_eq!(pooled.indices[0], 0);
        // Window at output (0,0,1) starts at input (0,0,2) = flat 2.
        assert_eq!(pooled.indices[1], 2);
    }

    #[test]
    fn indivisible_extent_is_reported() {
        let x: Tensor<f32> = Tensor::zeros(vec![1, 1, 5, 4, 4]);
        match maxpool3d(&x, 2, 2, Padding::Explicit(0)) {
            Err(TensorError::Indivisible { axis: 2, extent: 5, divisor: 2, .. }) => {}
            other => panic!("expected indivisible error, got {other:?}"),
        }
    }

    #[test]
    fn same_padded_window3_keeps_extents() {
        let x: Tensor<f32> = Tensor::from_vec(
            vec![1, 1, 2, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            false,
        );
        let pooled = maxpool3d(&x, 3, 1, Padding::Same).unwrap();
        assert_eq!(pooled.output.shape(), &[1, 1, 2, 2, 2]);
        // Window covers the whole cube from every position.
        assert!(pooled.output.data().iter().all(|&v| v == 8.0));
    }

    #[test]
    fn gap_of_constant_volume() {
        let x: Tensor<f32> = Tensor::full(vec![2, 3, 2, 2, 2], 0.75);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
    }

    #[test]
    fn gap_one_hot() {
        let mut data = vec![0.0f32; 8];
        data[3] = 1.0;
        let x = Tensor::from_vec(vec![1, 1, 2, 2, 2], data, false);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), &[0.125]);
    }

    #[test]
    fn upsample_restores_pooled_extents() {
        let x: Tensor<f32> = Tensor::from_vec(vec![1, 1, 1, 1, 2], vec![1.0, 2.0], false);
        let y = upsample_nearest(&x, [2, 2, 2]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 4]);
        assert_eq!(&y.data()[..4], &[1.0, 1.0, 2.0, 2.0]);
    }
}
