//! 3D convolution and transposed convolution with reverse-mode gradients.
//!
//! Two forward paths exist for `conv3d`: `conv3d_direct` (seven nested
//! loops, the reference) and the default lowered path (vol2col + GEMM).
//! Both accumulate per output element in the same (ci, kd, kh, kw) order,
//! so they agree bit-for-bit; tests enforce that.

use rayon::prelude::*;

use crate::ops::gemm::{dot_lanes, gemm_kordered, vol2col, Spatial};
use crate::tensor::{expect_rank, Element, Result, Tensor, TensorError};

/// Spatial padding policy. `Same` keeps extents at stride 1 and requires an
/// odd kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Explicit(usize),
}

impl Padding {
    pub fn resolve(self, kernel: usize) -> Result<usize> {
        match self {
            Padding::Same => {
                if kernel % 2 == 0 {
                    return Err(TensorError::Invalid(format!(
                        "same padding requires an odd kernel, got {kernel}"
                    )));
                }
                Ok((kernel - 1) / 2)
            }
            Padding::Explicit(p) => Ok(p),
        }
    }
}

pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_sp: Spatial,
    pub out_sp: Spatial,
}

fn conv_geometry<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    expect_rank(x, 5, "conv3d input")?;
    expect_rank(weight, 5, "conv3d weight")?;
    expect_rank(bias, 1, "conv3d bias")?;
    let (batch, cin) = (x.shape()[0], x.shape()[1]);
    let in_sp = Spatial {
        d: x.shape()[2],
        h: x.shape()[3],
        w: x.shape()[4],
    };
    let cout = weight.shape()[0];
    if weight.shape()[1] != cin {
        return Err(TensorError::ShapeMismatch {
            axis: 1,
            expected: weight.shape()[1],
            got: cin,
            context: "conv3d input channels vs weight".into(),
        });
    }
    let kernel = weight.shape()[2];
    if weight.shape()[3] != kernel || weight.shape()[4] != kernel {
        return Err(TensorError::Invalid(format!(
            "conv3d kernel must be cubic, got {:?}",
            &weight.shape()[2..]
        )));
    }
    if bias.shape()[0] != cout {
        return Err(TensorError::ShapeMismatch {
            axis: 0,
            expected: cout,
            got: bias.shape()[0],
            context: "conv3d bias vs output channels".into(),
        });
    }
    if stride == 0 {
        return Err(TensorError::Invalid("conv3d stride must be positive".into()));
    }
    let pad = padding.resolve(kernel)?;
    let out_sp = in_sp.conv_out(kernel, stride, pad).ok_or_else(|| {
        TensorError::Invalid(format!(
            "conv3d input {:?} too small for kernel {kernel} with padding {pad}",
            x.shape()
        ))
    })?;
    Ok(ConvGeometry {
        batch,
        cin,
        cout,
        kernel,
        stride,
        pad,
        in_sp,
        out_sp,
    })
}

/// Direct seven-loop convolution over raw buffers: the reference path.
fn conv3d_raw_direct<T: Element>(
    x: &[T],
    w: &[T],
    b: &[T],
    g: &ConvGeometry,
    out: &mut [T],
) {
    let k = g.kernel;
    let in_vox = g.in_sp.voxels();
    let out_vox = g.out_sp.voxels();
    for n in 0..g.batch {
        let xn = &x[n * g.cin * in_vox..(n + 1) * g.cin * in_vox];
        let on = &mut out[n * g.cout * out_vox..(n + 1) * g.cout * out_vox];
        for co in 0..g.cout {
            let wc = &w[co * g.cin * k * k * k..(co + 1) * g.cin * k * k * k];
            let oc = &mut on[co * out_vox..(co + 1) * out_vox];
            let mut pi = 0usize;
            for od in 0..g.out_sp.d {
                for oh in 0..g.out_sp.h {
                    for ow in 0..g.out_sp.w {
                        let mut acc = T::zero();
                        for ci in 0..g.cin {
                            let xc = &xn[ci * in_vox..(ci + 1) * in_vox];
                            for kd in 0..k {
                                let id = (od * g.stride + kd) as isize - g.pad as isize;
                                if id < 0 || id as usize >= g.in_sp.d {
                                    continue;
                                }
                                for kh in 0..k {
                                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                                    if ih < 0 || ih as usize >= g.in_sp.h {
                                        continue;
                                    }
                                    for kw in 0..k {
                                        let iw =
                                            (ow * g.stride + kw) as isize - g.pad as isize;
                                        if iw < 0 || iw as usize >= g.in_sp.w {
                                            continue;
                                        }
                                        let xi = (id as usize * g.in_sp.h + ih as usize)
                                            * g.in_sp.w
                                            + iw as usize;
                                        let wi = ((ci * k + kd) * k + kh) * k + kw;
                                        acc = acc + xc[xi] * wc[wi];
                                    }
                                }
                            }
                        }
                        oc[pi] = acc + b[co];
                        pi += 1;
                    }
                }
            }
        }
    }
}

/// Lowered convolution: vol2col + fixed-order GEMM, parallel over samples.
fn conv3d_raw_lowered<T: Element>(x: &[T], w: &[T], b: &[T], g: &ConvGeometry, out: &mut [T]) {
    let k3 = g.kernel * g.kernel * g.kernel;
    let kdim = g.cin * k3;
    let p = g.out_sp.voxels();
    let in_len = g.cin * g.in_sp.voxels();
    let out_len = g.cout * p;
    out.par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(n, on)| {
            let xn = &x[n * in_len..(n + 1) * in_len];
            let mut col = vec![T::zero(); kdim * p];
            vol2col(xn, g.cin, g.in_sp, g.kernel, g.stride, g.pad, g.out_sp, &mut col);
            gemm_kordered(w, g.cout, kdim, &col, p, on);
            for co in 0..g.cout {
                let bc = b[co];
                for v in on[co * p..(co + 1) * p].iter_mut() {
                    *v = *v + bc;
                }
            }
        });
}

fn conv_backward_raw<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeometry,
    grad_out: &[T],
    needs: &[bool],
) -> Vec<Option<Vec<T>>> {
    let k = g.kernel;
    let k3 = k * k * k;
    let kdim = g.cin * k3;
    let p = g.out_sp.voxels();
    let in_len = g.cin * g.in_sp.voxels();
    let out_len = g.cout * p;

    // d/dInput: for stride 1 this is a convolution of grad_out with the
    // channel-swapped, spatially flipped kernel at padding k-1-pad.
    let grad_x = if needs[0] {
        let mut flipped = vec![T::zero(); w.numel()];
        let wd = w.data();
        for co in 0..g.cout {
            for ci in 0..g.cin {
                for kd in 0..k {
                    for kh in 0..k {
                        for kw in 0..k {
                            let src = (((co * g.cin + ci) * k + kd) * k + kh) * k + kw;
                            let dst = (((ci * g.cout + co) * k + (k - 1 - kd)) * k
                                + (k - 1 - kh))
                                * k
                                + (k - 1 - kw);
                            flipped[dst] = wd[src];
                        }
                    }
                }
            }
        }
        if g.stride == 1 && g.pad <= k - 1 {
            let back_geo = ConvGeometry {
                batch: g.batch,
                cin: g.cout,
                cout: g.cin,
                kernel: k,
                stride: 1,
                pad: k - 1 - g.pad,
                in_sp: g.out_sp,
                out_sp: g.in_sp,
            };
            let zero_bias = vec![T::zero(); g.cin];
            let mut gx = vec![T::zero(); g.batch * in_len];
            conv3d_raw_lowered(grad_out, &flipped, &zero_bias, &back_geo, &mut gx);
            Some(gx)
        } else {
            // Strided case: direct scatter, fixed iteration order.
            let mut gx = vec![T::zero(); g.batch * in_len];
            let wd = w.data();
            for n in 0..g.batch {
                for co in 0..g.cout {
                    let gon = &grad_out[(n * g.cout + co) * p..(n * g.cout + co + 1) * p];
                    let mut pi = 0usize;
                    for od in 0..g.out_sp.d {
                        for oh in 0..g.out_sp.h {
                            for ow in 0..g.out_sp.w {
                                let go = gon[pi];
                                pi += 1;
                                for ci in 0..g.cin {
                                    for kd in 0..k {
                                        let id = (od * g.stride + kd) as isize - g.pad as isize;
                                        if id < 0 || id as usize >= g.in_sp.d {
                                            continue;
                                        }
                                        for kh in 0..k {
                                            let ih =
                                                (oh * g.stride + kh) as isize - g.pad as isize;
                                            if ih < 0 || ih as usize >= g.in_sp.h {
                                                continue;
                                            }
                                            for kw in 0..k {
                                                let iw = (ow * g.stride + kw) as isize
                                                    - g.pad as isize;
                                                if iw < 0 || iw as usize >= g.in_sp.w {
                                                    continue;
                                                }
                                                let xi = ((n * g.cin + ci) * g.in_sp.d
                                                    + id as usize)
                                                    * g.in_sp.h
                                                    * g.in_sp.w
                                                    + (ih as usize) * g.in_sp.w
                                                    + iw as usize;
                                                let wi = (((co * g.cin + ci) * k + kd) * k
                                                    + kh)
                                                    * k
                                                    + kw;
                                                gx[xi] = gx[xi] + go * wd[wi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Some(gx)
        }
    } else {
        None
    };

    // d/dWeight: per-sample partials via in-register dots over the patch
    // matrix, then summed in sample order.
    let grad_w = if needs[1] {
        let xd = x.data();
        let partials: Vec<Vec<T>> = (0..g.batch)
            .into_par_iter()
            .map(|n| {
                let xn = &xd[n * in_len..(n + 1) * in_len];
                let gon = &grad_out[n * out_len..(n + 1) * out_len];
                let mut col = vec![T::zero(); kdim * p];
                vol2col(xn, g.cin, g.in_sp, g.kernel, g.stride, g.pad, g.out_sp, &mut col);
                let mut gw = vec![T::zero(); g.cout * kdim];
                for co in 0..g.cout {
                    let gorow = &gon[co * p..(co + 1) * p];
                    for kk in 0..kdim {
                        gw[co * kdim + kk] = dot_lanes(gorow, &col[kk * p..(kk + 1) * p]);
                    }
                }
                gw
            })
            .collect();
        let mut gw = vec![T::zero(); g.cout * kdim];
        for part in &partials {
            for (a, &b) in gw.iter_mut().zip(part) {
                *a = *a + b;
            }
        }
        Some(gw)
    } else {
        None
    };

    let grad_b = if needs[2] {
        let mut gb = vec![T::zero(); g.cout];
        for n in 0..g.batch {
            for co in 0..g.cout {
                let row = &grad_out[(n * g.cout + co) * p..(n * g.cout + co + 1) * p];
                let mut s = T::zero();
                for &v in row {
                    s = s + v;
                }
                gb[co] = gb[co] + s;
            }
        }
        Some(gb)
    } else {
        None
    };

    vec![grad_x, grad_w, grad_b]
}

fn conv3d_with<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
    direct: bool,
) -> Result<Tensor<T>> {
    let g = conv_geometry(x, weight, bias, stride, padding)?;
    let out_shape = vec![g.batch, g.cout, g.out_sp.d, g.out_sp.h, g.out_sp.w];
    let mut out = vec![T::zero(); out_shape.iter().product()];
    if direct {
        conv3d_raw_direct(x.data(), weight.data(), bias.data(), &g, &mut out);
    } else {
        conv3d_raw_lowered(x.data(), weight.data(), bias.data(), &g, &mut out);
    }
    let xc = x.clone();
    let wc = weight.clone();
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |_out, grad, needs| conv_backward_raw(&xc, &wc, &g, grad, needs)),
    ))
}

/// 3D convolution, default lowered path.
///
/// Input [N, Cin, D, H, W], weight [Cout, Cin, k, k, k], bias [Cout].
pub fn conv3d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    conv3d_with(x, weight, bias, stride, padding, false)
}

/// Reference convolution: direct nested loops. Same contract as [`conv3d`];
/// bit-identical output.
pub fn conv3d_direct<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    conv3d_with(x, weight, bias, stride, padding, true)
}

fn tconv_geometry<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<(usize, usize, usize, usize, Spatial, Spatial)> {
    expect_rank(x, 5, "transposed_conv3d input")?;
    expect_rank(weight, 5, "transposed_conv3d weight")?;
    expect_rank(bias, 1, "transposed_conv3d bias")?;
    let (batch, cin) = (x.shape()[0], x.shape()[1]);
    let cout = weight.shape()[0];
    if weight.shape()[1] != cin {
        return Err(TensorError::ShapeMismatch {
            axis: 1,
            expected: weight.shape()[1],
            got: cin,
            context: "transposed_conv3d input channels vs weight".into(),
        });
    }
    let kernel = weight.shape()[2];
    if weight.shape()[3] != kernel || weight.shape()[4] != kernel {
        return Err(TensorError::Invalid(format!(
            "transposed_conv3d kernel must be cubic, got {:?}",
            &weight.shape()[2..]
        )));
    }
    if bias.shape()[0] != cout {
        return Err(TensorError::ShapeMismatch {
            axis: 0,
            expected: cout,
            got: bias.shape()[0],
            context: "transposed_conv3d bias vs output channels".into(),
        });
    }
    if stride == 0 || kernel < stride {
        return Err(TensorError::Invalid(format!(
            "transposed_conv3d requires kernel >= stride >= 1, got kernel {kernel} stride {stride}"
        )));
    }
    let in_sp = Spatial {
        d: x.shape()[2],
        h: x.shape()[3],
        w: x.shape()[4],
    };
    let ext = |e: usize| (e - 1) * stride + kernel;
    let out_sp = Spatial {
        d: ext(in_sp.d),
        h: ext(in_sp.h),
        w: ext(in_sp.w),
    };
    Ok((batch, cin, cout, kernel, in_sp, out_sp))
}

/// Transposed 3D convolution (fractionally-strided). Weight layout
/// [Cout, Cin, k, k, k]; with kernel == stride the spatial extents multiply
/// exactly by the stride.
pub fn transposed_conv3d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (batch, cin, cout, kernel, in_sp, out_sp) = tconv_geometry(x, weight, bias, stride)?;
    let in_vox = in_sp.voxels();
    let out_vox = out_sp.voxels();
    let out_shape = vec![batch, cout, out_sp.d, out_sp.h, out_sp.w];
    let mut out = vec![T::zero(); out_shape.iter().product()];

    // Gather form: every output voxel accumulates over ci (then over the
    // kernel offsets that can reach it) in fixed order.
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    out.par_chunks_mut(cout * out_vox).enumerate().for_each(|(n, on)| {
        let xn = &xd[n * cin * in_vox..(n + 1) * cin * in_vox];
        for co in 0..cout {
            let oc = &mut on[co * out_vox..(co + 1) * out_vox];
            let mut pi = 0usize;
            for od in 0..out_sp.d {
                for oh in 0..out_sp.h {
                    for ow in 0..out_sp.w {
                        let mut acc = T::zero();
                        for ci in 0..cin {
                            let xc = &xn[ci * in_vox..(ci + 1) * in_vox];
                            for kd in 0..kernel {
                                if od < kd || (od - kd) % stride != 0 {
                                    continue;
                                }
                                let id = (od - kd) / stride;
                                if id >= in_sp.d {
                                    continue;
                                }
                                for kh in 0..kernel {
                                    if oh < kh || (oh - kh) % stride != 0 {
                                        continue;
                                    }
                                    let ih = (oh - kh) / stride;
                                    if ih >= in_sp.h {
                                        continue;
                                    }
                                    for kw in 0..kernel {
                                        if ow < kw || (ow - kw) % stride != 0 {
                                            continue;
                                        }
                                        let iw = (ow - kw) / stride;
                                        if iw >= in_sp.w {
                                            continue;
                                        }
                                        let xi = (id * in_sp.h + ih) * in_sp.w + iw;
                                        let wi = (((co * cin + ci) * kernel + kd) * kernel
                                            + kh)
                                            * kernel
                                            + kw;
                                        acc = acc + xc[xi] * wd[wi];
                                    }
                                }
                            }
                        }
                        oc[pi] = acc + bd[co];
                        pi += 1;
                    }
                }
            }
        }
    });

    let xc = x.clone();
    let wc = weight.clone();
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |_outd, grad, needs| {
            let xd = xc.data();
            let wd = wc.data();
            let grad_x = if needs[0] {
                // dX[n,ci,i] = sum over co, kernel offsets of
                // grad[n,co, i*s + k] * w[co,ci,k]
                let mut gx = vec![T::zero(); batch * cin * in_vox];
                for n in 0..batch {
                    for ci in 0..cin {
                        let gxc = &mut gx
                            [(n * cin + ci) * in_vox..(n * cin + ci + 1) * in_vox];
                        let mut pi = 0usize;
                        for id in 0..in_sp.d {
                            for ih in 0..in_sp.h {
                                for iw in 0..in_sp.w {
                                    let mut acc = T::zero();
                                    for co in 0..cout {
                                        let gn = &grad[(n * cout + co) * out_vox
                                            ..(n * cout + co + 1) * out_vox];
                                        for kd in 0..kernel {
                                            let od = id * stride + kd;
                                            for kh in 0..kernel {
                                                let oh = ih * stride + kh;
                                                for kw in 0..kernel {
                                                    let ow = iw * stride + kw;
                                                    let gi = (od * out_sp.h + oh)
                                                        * out_sp.w
                                                        + ow;
                                                    let wi = (((co * cin + ci) * kernel
                                                        + kd)
                                                        * kernel
                                                        + kh)
                                                        * kernel
                                                        + kw;
                                                    acc = acc + gn[gi] * wd[wi];
                                                }
                                            }
                                        }
                                    }
                                    gxc[pi] = acc;
                                    pi += 1;
                                }
                            }
                        }
                    }
                }
                Some(gx)
            } else {
                None
            };
            let grad_w = if needs[1] {
                let mut gw = vec![T::zero(); cout * cin * kernel * kernel * kernel];
                for n in 0..batch {
                    for co in 0..cout {
                        let gn = &grad
                            [(n * cout + co) * out_vox..(n * cout + co + 1) * out_vox];
                        for ci in 0..cin {
                            let xc = &xd
                                [(n * cin + ci) * in_vox..(n * cin + ci + 1) * in_vox];
                            for kd in 0..kernel {
                                for kh in 0..kernel {
                                    for kw in 0..kernel {
                                        let mut acc = T::zero();
                                        let mut xi = 0usize;
                                        for id in 0..in_sp.d {
                                            let od = id * stride + kd;
                                            for ih in 0..in_sp.h {
                                                let oh = ih * stride + kh;
                                                let gbase =
                                                    (od * out_sp.h + oh) * out_sp.w + kw;
                                                for iw in 0..in_sp.w {
                                                    acc = acc
                                                        + xc[xi]
                                                            * gn[gbase + iw * stride];
                                                    xi += 1;
                                                }
                                            }
                                        }
                                        let wi = (((co * cin + ci) * kernel + kd)
                                            * kernel
                                            + kh)
                                            * kernel
                                            + kw;
                                        gw[wi] = gw[wi] + acc;
                                    }
                                }
                            }
                        }
                    }
                }
                Some(gw)
            } else {
                None
            };
            let grad_b = if needs[2] {
                let mut gb = vec![T::zero(); cout];
                for n in 0..batch {
                    for co in 0..cout {
                        let row = &grad
                            [(n * cout + co) * out_vox..(n * cout + co + 1) * out_vox];
                        let mut s = T::zero();
                        for &v in row {
                            s = s + v;
                        }
                        gb[co] = gb[co] + s;
                    }
                }
                Some(gb)
            } else {
                None
            };
            vec![grad_x, grad_w, grad_b]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::randn_tensor;

    #[test]
    fn one_voxel_conv_is_affine() {
        let x: Tensor<f32> = Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![5.0], false);
        let w = Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![2.0], false);
        let b = Tensor::from_vec(vec![1], vec![1.0], false);
        let y = conv3d(&x, &w, &b, 1, Padding::Explicit(0)).unwrap();
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn zero_input_gives_bias_only_output() {
        let x: Tensor<f32> = Tensor::zeros(vec![1, 4, 8, 8, 8]);
        let w = randn_tensor(vec![3, 4, 3, 3, 3], 11, false);
        let b = Tensor::zeros(vec![3]);
        let y = conv3d(&x, &w, &b, 1, Padding::Same).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), &[1, 3, 8, 8, 8]);
    }

    #[test]
    fn lowered_matches_direct_bitwise() {
        for seed in 0..5u64 {
            let x: Tensor<f32> = randn_tensor(vec![2, 3, 5, 4, 6], seed, false);
            let w = randn_tensor(vec![4, 3, 3, 3, 3], seed + 100, false);
            let b = randn_tensor(vec![4], seed + 200, false);
            let fast = conv3d(&x, &w, &b, 1, Padding::Same).unwrap();
            let direct = conv3d_direct(&x, &w, &b, 1, Padding::Same).unwrap();
            assert_eq!(fast.shape(), direct.shape());
            for (a, e) in fast.data().iter().zip(direct.data()) {
                assert_eq!(a.to_bits(), e.to_bits());
            }
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x: Tensor<f32> = Tensor::zeros(vec![1, 2, 4, 4, 4]);
        let w: Tensor<f32> = Tensor::zeros(vec![3, 5, 3, 3, 3]);
        let b: Tensor<f32> = Tensor::zeros(vec![3]);
        match conv3d(&x, &w, &b, 1, Padding::Same) {
            Err(TensorError::ShapeMismatch { axis: 1, .. }) => {}
            other => panic!("expected axis-1 mismatch, got {other:?}"),
        }
    }

    #[test]
    fn tconv_single_voxel_scatters() {
        let x: Tensor<f32> = Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![3.0], false);
        let w = Tensor::from_vec(vec![1, 1, 2, 2, 2], vec![1.0; 8], false);
        let b = Tensor::zeros(vec![1]);
        let y = transposed_conv3d(&x, &w, &b, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn tconv_zero_input_zero_output() {
        let x: Tensor<f32> = Tensor::zeros(vec![1, 3, 4, 4, 4]);
        let w = randn_tensor(vec![2, 3, 2, 2, 2], 5, false);
        let b = Tensor::zeros(vec![2]);
        let y = transposed_conv3d(&x, &w, &b, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_padding_requires_odd_kernel() {
        assert!(Padding::Same.resolve(4).is_err());
        assert_eq!(Padding::Same.resolve(5).unwrap(), 2);
    }
}
