//! Direct 2-D cross-correlation kernels used by [`Tape::conv2d`](super::Tape::conv2d).

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Stride and per-side zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: usize,
    pub pad_top: usize,
    pub pad_bottom: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv2dGeometry {
    pub fn symmetric(stride: usize, pad: usize) -> Self {
        Self {
            stride,
            pad_top: pad,
            pad_bottom: pad,
            pad_left: pad,
            pad_right: pad,
        }
    }

    /// Padding giving `ceil(in / stride)` outputs per axis; the odd pixel of
    /// padding goes to the bottom/right side.
    pub fn same(stride: usize, kernel: (usize, usize), input: (usize, usize)) -> Self {
        let split = |n: usize, k: usize| {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            (total / 2, total - total / 2)
        };
        let (pad_top, pad_bottom) = split(input.0, kernel.0);
        let (pad_left, pad_right) = split(input.1, kernel.1);
        Self {
            stride,
            pad_top,
            pad_bottom,
            pad_left,
            pad_right,
        }
    }

    /// Output height/width, rejecting even kernels and non-integral sizes.
    pub fn output_size(&self, input: (usize, usize), kernel: (usize, usize)) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel {kernel:?} must have odd extents")));
        }
        let axis = |n: usize, lo: usize, hi: usize, k: usize| -> Result<usize> {
            let padded = n + lo + hi;
            if padded < k || (padded - k) % self.stride != 0 {
                return Err(Error::Config(format!(
                    "conv2d output size ({n} + {lo} + {hi} - {k}) / {} + 1 is not integral",
                    self.stride
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((
            axis(input.0, self.pad_top, self.pad_bottom, kernel.0)?,
            axis(input.1, self.pad_left, self.pad_right, kernel.1)?,
        ))
    }
}

/// Output indices `o` in `0..out` with `o*stride + k - pad` inside `0..len`.
#[inline]
fn valid_range(out: usize, stride: usize, k: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k { ((len + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    geom: Conv2dGeometry,
) -> Result<(Vec<T>, Vec<usize>)> {
    let (xs, ks) = (x.shape(), k.shape());
    let (ci_n, h, w) = (xs[0], xs[1], xs[2]);
    let (co_n, kh, kw) = (ks[0], ks[2], ks[3]);
    let (oh, ow) = geom.output_size((h, w), (kh, kw))?;
    let s = geom.stride;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![T::zero(); co_n * oh * ow];

    for co in 0..co_n {
        let oplane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let xplane = &xd[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, s, ky, geom.pad_top, h);
                for kx in 0..kw {
                    let wv = kd[((co * ci_n + ci) * kh + ky) * kw + kx];
                    let (ox0, ox1) = valid_range(ow, s, kx, geom.pad_left, w);
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - geom.pad_top;
                        let xrow = &xplane[iy * w..(iy + 1) * w];
                        let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                        for ox in ox0..ox1 {
                            orow[ox] += wv * xrow[ox * s + kx - geom.pad_left];
                        }
                    }
                }
            }
        }
    }
    Ok((out, vec![co_n, oh, ow]))
}

#[allow(clippy::type_complexity)]
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    out_shape: &[usize],
    g: &[T],
    geom: Conv2dGeometry,
    want_x: bool,
    want_k: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (xs, ks) = (x.shape(), k.shape());
    let (ci_n, h, w) = (xs[0], xs[1], xs[2]);
    let (co_n, kh, kw) = (ks[0], ks[2], ks[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let s = geom.stride;
    let (xd, kd) = (x.data(), k.data());
    let mut gx = want_x.then(|| vec![T::zero(); xd.len()]);
    let mut gk = want_k.then(|| vec![T::zero(); kd.len()]);

    for co in 0..co_n {
        let gplane = &g[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let xoff = ci * h * w;
            for ky in 0..kh {
                let (oy0, oy1) = valid_range(oh, s, ky, geom.pad_top, h);
                for kx in 0..kw {
                    let kidx = ((co * ci_n + ci) * kh + ky) * kw + kx;
                    let wv = kd[kidx];
                    let (ox0, ox1) = valid_range(ow, s, kx, geom.pad_left, w);
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - geom.pad_top;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let row = xoff + iy * w;
                        if let Some(gx) = gx.as_mut() {
                            for ox in ox0..ox1 {
                                gx[row + ox * s + kx - geom.pad_left] += wv * grow[ox];
                            }
                        }
                        if want_k {
                            for ox in ox0..ox1 {
                                acc += grow[ox] * xd[row + ox * s + kx - geom.pad_left];
                            }
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    (gx, gk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_kernel_copies_the_input() {
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let k = Tensor::new(vec![1, 1, 3, 3], k).unwrap();
        let (out, shape) = forward(&x, &k, Conv2dGeometry::symmetric(1, 1)).unwrap();
        assert_eq!(shape, vec![1, 3, 3]);
        assert_eq!(out, x.data());
    }

    #[test]
    fn strided_conv_matches_hand_computation() {
        // 4x4 ramp, 3x3 box kernel, stride 2, same padding (0 top/left, 1 bottom/right)
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let k = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let geom = Conv2dGeometry::same(2, (3, 3), (4, 4));
        assert_eq!((geom.pad_top, geom.pad_bottom), (0, 1));
        let (out, shape) = forward(&x, &k, geom).unwrap();
        assert_eq!(shape, vec![1, 2, 2]);
        assert_eq!(out, vec![45.0, 39.0, 66.0, 50.0]);
    }

    #[test]
    fn even_kernels_are_rejected() {
        let g = Conv2dGeometry::symmetric(1, 1);
        assert!(matches!(g.output_size((5, 5), (2, 3)), Err(Error::Config(_))));
        assert!(matches!(Conv2dGeometry::symmetric(0, 1).output_size((5, 5), (3, 3)), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn same_padding_gives_ceiling_output(h in 1usize..40, w in 1usize..40, s in 1usize..4) {
            let g = Conv2dGeometry::same(s, (3, 3), (h, w));
            prop_assert_eq!(g.output_size((h, w), (3, 3)).unwrap(), (h.div_ceil(s), w.div_ceil(s)));
        }
    }
}
