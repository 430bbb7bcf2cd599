//! Spatial ops over `[batch, channels, height, width]` tensors.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayD, ArrayView2, ArrayViewMut2, Ix4};

use crate::{Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one sample `[C, H, W]` into `[C·kh·kw, Ho·Wo]` (zero padding).
fn im2col<T: Real>(x: &[T], geo: &Conv2dGeometry, cols: &mut [T]) {
    let (h, w) = (geo.height as isize, geo.width as isize);
    let (ho, wo) = (geo.out_height(), geo.out_width());
    let (s, p) = (geo.stride as isize, geo.padding as isize);
    let plane = geo.height * geo.width;
    let mut row = 0;
    for c in 0..geo.in_channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ki in 0..geo.kernel_h as isize {
            for kj in 0..geo.kernel_w as isize {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ki - p;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[(iy * w) as usize..((iy + 1) * w) as usize];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj - p;
                        *d = if ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[C·kh·kw, Ho·Wo]` back onto `[C, H, W]`.
fn col2im<T: Real>(cols: &[T], geo: &Conv2dGeometry, x: &mut [T]) {
    let (h, w) = (geo.height as isize, geo.width as isize);
    let (ho, wo) = (geo.out_height(), geo.out_width());
    let (s, p) = (geo.stride as isize, geo.padding as isize);
    let plane = geo.height * geo.width;
    let mut row = 0;
    for c in 0..geo.in_channels {
        let dst = &mut x[c * plane..(c + 1) * plane];
        for ki in 0..geo.kernel_h as isize {
            for kj in 0..geo.kernel_w as isize {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = oy as isize * s + ki - p;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let line = &src[oy * wo..(oy + 1) * wo];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = ox as isize * s + kj - p;
                        if ix >= 0 && ix < w {
                            dst[(iy * w + ix) as usize] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn contiguous4<T: Real>(t: &Tensor<T>) -> Array4<T> {
    t.view()
        .into_dimensionality::<Ix4>()
        .expect("expected a [N, C, H, W] tensor")
        .as_standard_layout()
        .into_owned()
}

/// Builds a 1-axis resampling matrix `[out, in]` for a separable linear filter.
pub type ResampleMatrix<T> = Array2<T>;

impl<'g, T: Real> Var<'g, T> {
    /// 2-D cross-correlation, `x: [N, C, H, W]`, `weight: [O, C, kh, kw]`,
    /// zero padding, no bias.
    pub fn conv2d(self, weight: Var<'g, T>, stride: usize, padding: usize) -> Var<'g, T> {
        let x = contiguous4(&self.value());
        let w = contiguous4(&weight.value());
        let (n, c, h, wd) = x.dim();
        let (o, wc, kh, kw) = w.dim();
        assert_eq!(c, wc, "conv2d: input has {c} channels, kernel expects {wc}");
        assert!(stride >= 1);
        assert!(
            h + 2 * padding >= kh && wd + 2 * padding >= kw,
            "conv2d: kernel larger than padded input"
        );
        let geo = Conv2dGeometry {
            in_channels: c,
            height: h,
            width: wd,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        let (ho, wo) = (geo.out_height(), geo.out_width());
        let w2 = w
            .clone()
            .into_shape_with_order((o, geo.patch_len()))
            .unwrap();

        let mut out = Array4::<T>::zeros((n, o, ho, wo));
        let xs = x.as_slice().unwrap();
        let sample = c * h * wd;
        let mut cols = vec![T::zero(); if geo.is_pointwise() { 0 } else { geo.patch_len() * ho * wo }];
        {
            let out_s = out.as_slice_mut().unwrap();
            for b in 0..n {
                let xb = &xs[b * sample..(b + 1) * sample];
                let cols_view = if geo.is_pointwise() {
                    ArrayView2::from_shape((c, h * wd), xb).unwrap()
                } else {
                    im2col(xb, &geo, &mut cols);
                    ArrayView2::from_shape((geo.patch_len(), ho * wo), &cols).unwrap()
                };
                let mut ob = ArrayViewMut2::from_shape(
                    (o, ho * wo),
                    &mut out_s[b * o * ho * wo..(b + 1) * o * ho * wo],
                )
                .unwrap();
                general_mat_mul(T::one(), &w2, &cols_view, T::zero(), &mut ob);
            }
        }

        self.op(&[self, weight], out.into_dyn(), move |g, need| {
            let g = g.as_standard_layout();
            let gs = g.as_slice().unwrap();
            let xs = x.as_slice().unwrap();
            let mut gw = need[1].then(|| Array2::<T>::zeros((o, geo.patch_len())));
            let mut gx = need[0].then(|| Array4::<T>::zeros((n, c, h, wd)));
            let mut cols = vec![T::zero(); geo.patch_len() * ho * wo];
            let mut dcols = Array2::<T>::zeros((geo.patch_len(), ho * wo));
            for b in 0..n {
                let gb = ArrayView2::from_shape((o, ho * wo), &gs[b * o * ho * wo..(b + 1) * o * ho * wo])
                    .unwrap();
                if let Some(gw) = gw.as_mut() {
                    let xb = &xs[b * sample..(b + 1) * sample];
                    let cols_view = if geo.is_pointwise() {
                        ArrayView2::from_shape((c, h * wd), xb).unwrap()
                    } else {
                        im2col(xb, &geo, &mut cols);
                        ArrayView2::from_shape((geo.patch_len(), ho * wo), &cols).unwrap()
                    };
                    general_mat_mul(T::one(), &gb, &cols_view.t(), T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    let gxs = gx.as_slice_mut().unwrap();
                    let gxb = &mut gxs[b * sample..(b + 1) * sample];
                    if geo.is_pointwise() {
                        let mut view = ArrayViewMut2::from_shape((c, h * wd), gxb).unwrap();
                        general_mat_mul(T::one(), &w2.t(), &gb, T::zero(), &mut view);
                    } else {
                        general_mat_mul(T::one(), &w2.t(), &gb, T::zero(), &mut dcols);
                        col2im(dcols.as_slice().unwrap(), &geo, gxb);
                    }
                }
            }
            vec![
                gx.map(|a| a.into_dyn()),
                gw.map(|a| a.into_shape_with_order((o, c, kh, kw)).unwrap().into_dyn()),
            ]
        })
    }

    /// Adds a per-channel bias `[C]` to a `[N, C, H, W]` tensor.
    pub fn add_channel_bias(self, bias: Var<'g, T>) -> Var<'g, T> {
        let c = bias.shape()[0];
        self.add(bias.reshape(&[1, c, 1, 1]))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample_nearest2x(self) -> Var<'g, T> {
        let x = contiguous4(&self.value());
        let (n, c, h, w) = x.dim();
        let out = Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(b, ch, y, xx)| x[[b, ch, y / 2, xx / 2]]);
        self.op(&[self], out.into_dyn(), move |g, _| {
            let g = g.view().into_dimensionality::<Ix4>().unwrap();
            let gx = Array4::from_shape_fn((n, c, h, w), |(b, ch, y, xx)| {
                g[[b, ch, 2 * y, 2 * xx]]
                    + g[[b, ch, 2 * y, 2 * xx + 1]]
                    + g[[b, ch, 2 * y + 1, 2 * xx]]
                    + g[[b, ch, 2 * y + 1, 2 * xx + 1]]
            });
            vec![Some(gx.into_dyn())]
        })
    }

    /// Separable linear resampling of every `[H, W]` plane:
    /// `y = rows · x · colsᵀ` with `rows: [Ho, H]`, `cols: [Wo, W]`.
    pub fn resample(self, rows: &ResampleMatrix<T>, cols: &ResampleMatrix<T>) -> Var<'g, T> {
        let x = contiguous4(&self.value());
        let (n, c, h, w) = x.dim();
        assert_eq!(rows.ncols(), h, "resample: row matrix expects height {}", rows.ncols());
        assert_eq!(cols.ncols(), w, "resample: column matrix expects width {}", cols.ncols());
        let (ho, wo) = (rows.nrows(), cols.nrows());
        let out = resample_planes(&x, rows, cols, ho, wo);
        let (rows, cols) = (rows.clone(), cols.clone());
        self.op(&[self], out.into_dyn(), move |g, _| {
            let g = contiguous4(g);
            // adjoint: rowsᵀ · g · cols
            let gx = resample_planes(&g, &rows.t().to_owned(), &cols.t().to_owned(), h, w);
            debug_assert_eq!(gx.dim(), (n, c, h, w));
            vec![Some(gx.into_dyn())]
        })
    }
}

fn resample_planes<T: Real>(
    x: &Array4<T>,
    rows: &Array2<T>,
    cols: &Array2<T>,
    ho: usize,
    wo: usize,
) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    let flat = x
        .view()
        .into_shape_with_order((n * c * h, w))
        .unwrap();
    // [N·C·H, W] · [W, Wo]
    let horiz = flat.dot(&cols.t());
    let mut out = Array4::<T>::zeros((n, c, ho, wo));
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * h;
            let plane = horiz.slice(ndarray::s![start..start + h, ..]);
            let mut dst = out.slice_mut(ndarray::s![b, ch, .., ..]);
            general_mat_mul(T::one(), rows, &plane, T::zero(), &mut dst);
        }
    }
    out
}

/// Shape helper used by callers that keep NCHW tensors as `ArrayD`.
pub fn dims4<T: Real>(t: &ArrayD<T>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected a [N, C, H, W] tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}
