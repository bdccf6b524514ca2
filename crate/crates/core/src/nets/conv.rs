//! im2col-based convolution kernels with explicit backward passes.
//!
//! Both layer kinds are expressed through one [`ConvGeom`] describing a
//! strided "same"-padded convolution from a large map to a small map. A
//! convolution runs that geometry forward; a transposed convolution is its
//! adjoint (small → large), so the same `im2col`/`col2im` pair serves both.

use crate::tensor::Real;

/// Strided, "same"-padded convolution geometry from `big` to `small`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub big_h: usize,
    pub big_w: usize,
    pub big_c: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kernel: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_pad(big: usize, small: usize, stride: usize, kernel: usize) -> usize {
    ((small - 1) * stride + kernel).saturating_sub(big) / 2
}

impl ConvGeom {
    /// Geometry for a convolution reading a `big_h×big_w×big_c` map.
    pub fn conv(big_h: usize, big_w: usize, big_c: usize, kernel: usize, stride: (usize, usize)) -> Self {
        let small_h = big_h.div_ceil(stride.0);
        let small_w = big_w.div_ceil(stride.1);
        Self::between(big_h, big_w, big_c, small_h, small_w, kernel, stride)
    }

    /// Geometry whose adjoint upsamples `small_h×small_w` by the stride into
    /// `big_c` channels.
    pub fn transposed(small_h: usize, small_w: usize, big_c: usize, kernel: usize, stride: (usize, usize)) -> Self {
        let big_h = small_h * stride.0;
        let big_w = small_w * stride.1;
        Self::between(big_h, big_w, big_c, small_h, small_w, kernel, stride)
    }

    fn between(
        big_h: usize,
        big_w: usize,
        big_c: usize,
        small_h: usize,
        small_w: usize,
        kernel: usize,
        stride: (usize, usize),
    ) -> Self {
        ConvGeom {
            big_h,
            big_w,
            big_c,
            small_h,
            small_w,
            kernel,
            stride_h: stride.0,
            stride_w: stride.1,
            pad_top: same_pad(big_h, small_h, stride.0, kernel),
            pad_left: same_pad(big_w, small_w, stride.1, kernel),
        }
    }

    /// Columns per im2col row.
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.big_c
    }

    pub fn small_pixels(&self) -> usize {
        self.small_h * self.small_w
    }

    pub fn big_len(&self) -> usize {
        self.big_h * self.big_w * self.big_c
    }

    /// Source row/column of kernel tap `k` for output index `o`, if in bounds.
    #[inline]
    fn tap(o: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < limit).then_some(pos)
    }

    /// Writes the `small_pixels × patch_len` patch matrix of `big` into `cols`.
    pub fn im2col<T: Real>(&self, big: &[T], cols: &mut [T]) {
        debug_assert_eq!(big.len(), self.big_len());
        debug_assert_eq!(cols.len(), self.small_pixels() * self.patch_len());
        let c = self.big_c;
        let f = self.kernel;
        let mut row = 0;
        for oy in 0..self.small_h {
            for ox in 0..self.small_w {
                let dst = &mut cols[row * self.patch_len()..(row + 1) * self.patch_len()];
                for ky in 0..f {
                    let sy = Self::tap(oy, ky, self.stride_h, self.pad_top, self.big_h);
                    for kx in 0..f {
                        let off = (ky * f + kx) * c;
                        let seg = &mut dst[off..off + c];
                        match (sy, Self::tap(ox, kx, self.stride_w, self.pad_left, self.big_w)) {
                            (Some(y), Some(x)) => {
                                let src = (y * self.big_w + x) * c;
                                seg.copy_from_slice(&big[src..src + c]);
                            }
                            _ => seg.fill(T::zero()),
                        }
                    }
                }
                row += 1;
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatter-adds `cols` into `big`.
    pub fn col2im<T: Real>(&self, cols: &[T], big: &mut [T]) {
        debug_assert_eq!(big.len(), self.big_len());
        let c = self.big_c;
        let f = self.kernel;
        let mut row = 0;
        for oy in 0..self.small_h {
            for ox in 0..self.small_w {
                let src = &cols[row * self.patch_len()..(row + 1) * self.patch_len()];
                for ky in 0..f {
                    let Some(y) = Self::tap(oy, ky, self.stride_h, self.pad_top, self.big_h) else {
                        continue;
                    };
                    for kx in 0..f {
                        let Some(x) = Self::tap(ox, kx, self.stride_w, self.pad_left, self.big_w) else {
                            continue;
                        };
                        let off = (ky * f + kx) * c;
                        let dst = (y * self.big_w + x) * c;
                        for (d, &s) in big[dst..dst + c].iter_mut().zip(&src[off..off + c]) {
                            *d += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// A convolution or transposed convolution over one image, with workspace.
///
/// Weights are stored as the `patch_len × small_c` matrix of the underlying
/// big→small convolution in both cases: for a convolution `small_c` is the
/// output width, for a transposed convolution it is the input width.
#[derive(Debug, Clone, Copy)]
pub struct ConvOp {
    pub geom: ConvGeom,
    pub small_c: usize,
    pub transposed: bool,
}

impl ConvOp {
    pub fn weight_len(&self) -> usize {
        self.geom.patch_len() * self.small_c
    }

    pub fn in_len(&self) -> usize {
        if self.transposed {
            self.geom.small_pixels() * self.small_c
        } else {
            self.geom.big_len()
        }
    }

    pub fn out_len(&self) -> usize {
        if self.transposed {
            self.geom.big_len()
        } else {
            self.geom.small_pixels() * self.small_c
        }
    }

    pub fn out_channels(&self) -> usize {
        if self.transposed {
            self.geom.big_c
        } else {
            self.small_c
        }
    }

    /// `out = op(input) + bias` for one image.
    pub fn forward<T: Real>(&self, input: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
        let g = &self.geom;
        let (p, q, kc) = (g.small_pixels(), g.patch_len(), self.small_c);
        let mut cols = vec![T::zero(); p * q];
        if self.transposed {
            // cols[p×q] = X[p×kc] · Wᵀ[kc×q]
            T::gemm(
                p,
                kc,
                q,
                T::one(),
                input,
                kc as isize,
                1,
                weight,
                1,
                kc as isize,
                T::zero(),
                &mut cols,
                q as isize,
                1,
            );
            out.fill(T::zero());
            g.col2im(&cols, out);
        } else {
            g.im2col(input, &mut cols);
            // out[p×kc] = cols[p×q] · W[q×kc]
            T::gemm(p, q, kc, T::one(), &cols, q as isize, 1, weight, kc as isize, 1, T::zero(), out, kc as isize, 1);
        }
        let oc = self.out_channels();
        for px in out.chunks_exact_mut(oc) {
            for (v, &b) in px.iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Accumulates weight and bias gradients and writes the input gradient.
    pub fn backward<T: Real>(
        &self,
        input: &[T],
        weight: &[T],
        grad_out: &[T],
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        grad_in: &mut [T],
    ) {
        let g = &self.geom;
        let (p, q, kc) = (g.small_pixels(), g.patch_len(), self.small_c);
        let oc = self.out_channels();
        for px in grad_out.chunks_exact(oc) {
            for (gb, &v) in grad_bias.iter_mut().zip(px) {
                *gb += v;
            }
        }
        let mut cols = vec![T::zero(); p * q];
        if self.transposed {
            g.im2col(grad_out, &mut cols);
            // dX[p×kc] = dcols[p×q] · W[q×kc]
            T::gemm(
                p,
                q,
                kc,
                T::one(),
                &cols,
                q as isize,
                1,
                weight,
                kc as isize,
                1,
                T::zero(),
                grad_in,
                kc as isize,
                1,
            );
            // dW[q×kc] += dcolsᵀ[q×p] · X[p×kc]
            T::gemm(
                q,
                p,
                kc,
                T::one(),
                &cols,
                1,
                q as isize,
                input,
                kc as isize,
                1,
                T::one(),
                grad_weight,
                kc as isize,
                1,
            );
        } else {
            g.im2col(input, &mut cols);
            // dW[q×kc] += colsᵀ[q×p] · dOut[p×kc]
            T::gemm(
                q,
                p,
                kc,
                T::one(),
                &cols,
                1,
                q as isize,
                grad_out,
                kc as isize,
                1,
                T::one(),
                grad_weight,
                kc as isize,
                1,
            );
            // dcols[p×q] = dOut[p×kc] · Wᵀ[kc×q]
            T::gemm(
                p,
                kc,
                q,
                T::one(),
                grad_out,
                kc as isize,
                1,
                weight,
                1,
                kc as isize,
                T::zero(),
                &mut cols,
                q as isize,
                1,
            );
            grad_in.fill(T::zero());
            g.col2im(&cols, grad_in);
        }
    }
}
