//! Matrix kernels with fixed reduction order.
//!
//! `gemm_kordered` computes each output element as a plain in-order dot
//! product over k, exactly the sequence of adds a naive loop performs, so
//! the lowered convolution path is bit-identical to the direct reference.
//! Tiling over output columns only changes which elements are computed
//! when, never the order of adds within one element.
//!
//! `dot_lanes` uses a fixed 8-way split reduction: faster than an in-order
//! dot, still deterministic (the lane structure is compile-time constant),
//! used where bit-matching the direct reference is not required (weight
//! gradients).

use crate::tensor::Element;

/// Column-tile width. 256 f32 accumulators stay in registers / L1.
const TILE: usize = 256;

/// out[m x n] = a[m x k] * b[k x n], all row-major contiguous.
///
/// Each out element accumulates strictly in k order starting from zero.
pub fn gemm_kordered<T: Element>(a: &[T], m: usize, k: usize, b: &[T], n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut acc = [T::zero(); TILE];
    let mut j0 = 0;
    while j0 < n {
        let jl = TILE.min(n - j0);
        for i in 0..m {
            let acc = &mut acc[..jl];
            for v in acc.iter_mut() {
                *v = T::zero();
            }
            let a_row = &a[i * k..(i + 1) * k];
            for (kk, &aik) in a_row.iter().enumerate() {
                let b_row = &b[kk * n + j0..kk * n + j0 + jl];
                for (av, &bv) in acc.iter_mut().zip(b_row) {
                    *av = *av + aik * bv;
                }
            }
            out[i * n + j0..i * n + j0 + jl].copy_from_slice(acc);
        }
        j0 += TILE;
    }
}

/// Deterministic 8-lane dot product.
pub fn dot_lanes<T: Element>(x: &[T], y: &[T]) -> T {
    const LANES: usize = 8;
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    let chunks = n / LANES;
    let mut acc = [T::zero(); LANES];
    for c in 0..chunks {
        let xo = &x[c * LANES..(c + 1) * LANES];
        let yo = &y[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            acc[l] = acc[l] + xo[l] * yo[l];
        }
    }
    let mut s = T::zero();
    for l in 0..LANES {
        s = s + acc[l];
    }
    for i in chunks * LANES..n {
        s = s + x[i] * y[i];
    }
    s
}

/// Extents of one 3-d spatial volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spatial {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Spatial {
    pub fn voxels(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn conv_out(&self, kernel: usize, stride: usize, pad: usize) -> Option<Spatial> {
        let ext = |e: usize| {
            let padded = e + 2 * pad;
            if padded < kernel {
                None
            } else {
                Some((padded - kernel) / stride + 1)
            }
        };
        Some(Spatial {
            d: ext(self.d)?,
            h: ext(self.h)?,
            w: ext(self.w)?,
        })
    }
}

/// Lower one sample's [Cin, D, H, W] volume into the patch matrix
/// col[Cin*k^3 x P] with P output positions, zero-filling padding.
///
/// Row index order is (ci, kd, kh, kw) — the same order the direct
/// reference sums in.
pub fn vol2col<T: Element>(
    x: &[T],
    cin: usize,
    sp: Spatial,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_sp: Spatial,
    col: &mut [T],
) {
    let p = out_sp.voxels();
    debug_assert_eq!(x.len(), cin * sp.voxels());
    debug_assert_eq!(col.len(), cin * kernel * kernel * kernel * p);
    let mut row = 0usize;
    for ci in 0..cin {
        let xc = &x[ci * sp.voxels()..(ci + 1) * sp.voxels()];
        for kd in 0..kernel {
            for kh in 0..kernel {
                for kw in 0..kernel {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut pi = 0usize;
                    for od in 0..out_sp.d {
                        let id = (od * stride + kd) as isize - pad as isize;
                        for oh in 0..out_sp.h {
                            let ih = (oh * stride + kh) as isize - pad as isize;
                            let in_plane = id >= 0
                                && (id as usize) < sp.d
                                && ih >= 0
                                && (ih as usize) < sp.h;
                            if !in_plane {
                                for v in dst[pi..pi + out_sp.w].iter_mut() {
                                    *v = T::zero();
                                }
                                pi += out_sp.w;
                                continue;
                            }
                            let base = (id as usize * sp.h + ih as usize) * sp.w;
                            for ow in 0..out_sp.w {
                                let iw = (ow * stride + kw) as isize - pad as isize;
                                dst[pi] = if iw >= 0 && (iw as usize) < sp.w {
                                    xc[base + iw as usize]
                                } else {
                                    T::zero()
                                };
                                pi += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
