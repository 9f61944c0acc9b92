//! Single-sample layer primitives on `(channels, height, width)` tensors.
//!
//! Convolutions use "same" zero padding: the output is `ceil(in / stride)`
//! and the total padding `max((out - 1) * stride + k - in, 0)` is split with
//! the smaller half before. Transposed convolutions are the exact adjoint of
//! such a convolution, which lets them restore any target size.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView3, ArrayView4, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn same(in_h: usize, in_w: usize, kernel: usize, stride: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad = |inp: usize, out: usize| ((out - 1) * stride + kernel).saturating_sub(inp) / 2;
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            kernel,
            stride,
            pad_top: pad(in_h, out_h),
            pad_left: pad(in_w, out_w),
        }
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `x` into `(C * k * k, out_h * out_w)` patch columns.
pub fn im2col(x: ArrayView3<f64>, g: &ConvGeom) -> Array2<f64> {
    let c = x.shape()[0];
    let k = g.kernel;
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((c * k * k, g.out_len()));
    let out = cols.as_slice_mut().expect("fresh array");
    let plane = g.in_h * g.in_w;
    for ch in 0..c {
        let src = &xs[ch * plane..(ch + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut out[row * g.out_len()..(row + 1) * g.out_len()];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih as usize >= g.in_h {
                        continue;
                    }
                    let src_row = &src[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                    let dst_row = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    for (ow, d) in dst_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                        if iw >= 0 && (iw as usize) < g.in_w {
                            *d = src_row[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
pub fn col2im(cols: &Array2<f64>, c: usize, g: &ConvGeom) -> Array3<f64> {
    let k = g.kernel;
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut x = Array3::zeros((c, g.in_h, g.in_w));
    let xs = x.as_slice_mut().expect("fresh array");
    let plane = g.in_h * g.in_w;
    for ch in 0..c {
        let dst = &mut xs[ch * plane..(ch + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cs[row * g.out_len()..(row + 1) * g.out_len()];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih as usize >= g.in_h {
                        continue;
                    }
                    let dst_row = &mut dst[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                    let src_row = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    for (ow, v) in src_row.iter().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad_left as isize;
                        if iw >= 0 && (iw as usize) < g.in_w {
                            dst_row[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

fn as_matrix(w: ArrayView4<f64>) -> Array2<f64> {
    let (a, b, k1, k2) = w.dim();
    w.as_standard_layout()
        .into_owned()
        .into_shape_with_order((a, b * k1 * k2))
        .expect("contiguous weights")
}

fn to_planes(m: Array2<f64>, h: usize, w: usize) -> Array3<f64> {
    let c = m.nrows();
    m.into_shape_with_order((c, h, w))
        .expect("contiguous output")
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Array2<f64>,
    geom: ConvGeom,
    in_channels: usize,
}

/// Weight layout `(out_channels, in_channels, k, k)`.
pub fn conv2d(
    x: ArrayView3<f64>,
    w: ArrayView4<f64>,
    b: ArrayView1<f64>,
    stride: usize,
) -> (Array3<f64>, ConvCache) {
    let (cin, h, wd) = x.dim();
    let k = w.shape()[2];
    debug_assert_eq!(w.shape()[1], cin);
    let geom = ConvGeom::same(h, wd, k, stride);
    let cols = im2col(x, &geom);
    let mut y = as_matrix(w).dot(&cols);
    for (mut row, bias) in y.axis_iter_mut(Axis(0)).zip(b.iter()) {
        row += *bias;
    }
    let y = to_planes(y, geom.out_h, geom.out_w);
    (
        y,
        ConvCache {
            cols,
            geom,
            in_channels: cin,
        },
    )
}

pub struct ConvGrads {
    pub dx: Option<Array3<f64>>,
    pub dw: Option<Array4<f64>>,
    pub db: Option<Array1<f64>>,
}

/// Backward pass for [`conv2d`]. Weight gradients are skipped when
/// `param_grads` is false.
pub fn conv2d_backward(
    dy: &Array3<f64>,
    w: ArrayView4<f64>,
    cache: &ConvCache,
    need_dx: bool,
    param_grads: bool,
) -> ConvGrads {
    let cout = dy.shape()[0];
    let dy = dy
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cout, cache.geom.out_len()))
        .expect("contiguous gradient");
    let (dw, db) = if param_grads {
        let dw = dy
            .dot(&cache.cols.t())
            .into_shape_with_order(w.raw_dim())
            .expect("weight shape");
        (Some(dw), Some(dy.sum_axis(Axis(1))))
    } else {
        (None, None)
    };
    let dx = need_dx.then(|| {
        let dcols = as_matrix(w).t().dot(&dy);
        col2im(&dcols, cache.in_channels, &cache.geom)
    });
    ConvGrads { dx, dw, db }
}

#[derive(Debug, Clone)]
pub struct ConvTransposeCache {
    x: Array2<f64>,
    geom: ConvGeom,
}

/// Transposed convolution producing exactly `out_h x out_w`. Weight layout
/// `(in_channels, out_channels, k, k)`. Panics unless a same-padded stride
/// `stride` convolution would map `out_h x out_w` back to the input size.
pub fn conv_transpose2d(
    x: ArrayView3<f64>,
    w: ArrayView4<f64>,
    b: ArrayView1<f64>,
    stride: usize,
    out_hw: (usize, usize),
) -> (Array3<f64>, ConvTransposeCache) {
    let (cin, h, wd) = x.dim();
    let (_, cout, k, _) = w.dim();
    let geom = ConvGeom::same(out_hw.0, out_hw.1, k, stride);
    assert_eq!(
        (geom.out_h, geom.out_w),
        (h, wd),
        "transposed conv target size mismatch"
    );
    let xm = x
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cin, h * wd))
        .expect("contiguous input");
    let cols = as_matrix(w).t().dot(&xm);
    let mut y = col2im(&cols, cout, &geom);
    for (mut plane, bias) in y.axis_iter_mut(Axis(0)).zip(b.iter()) {
        plane += *bias;
    }
    (y, ConvTransposeCache { x: xm, geom })
}

pub fn conv_transpose2d_backward(
    dy: &Array3<f64>,
    w: ArrayView4<f64>,
    cache: &ConvTransposeCache,
    param_grads: bool,
) -> ConvGrads {
    let dcols = im2col(dy.view(), &cache.geom);
    let wm = as_matrix(w);
    let dx = wm.dot(&dcols);
    let dx = to_planes(dx, cache.geom.out_h, cache.geom.out_w);
    let (dw, db) = if param_grads {
        let dw = cache
            .x
            .dot(&dcols.t())
            .into_shape_with_order(w.raw_dim())
            .expect("weight shape");
        (Some(dw), Some(dy.sum_axis(Axis(2)).sum_axis(Axis(1))))
    } else {
        (None, None)
    };
    ConvGrads {
        dx: Some(dx),
        dw,
        db,
    }
}

#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Array3<f64>,
    inv_std: Array1<f64>,
}

/// Per-channel normalization over the spatial plane with learned scale and
/// offset.
pub fn instance_norm(
    x: &Array3<f64>,
    scale: ArrayView1<f64>,
    offset: ArrayView1<f64>,
    eps: f64,
) -> (Array3<f64>, NormCache) {
    let c = x.shape()[0];
    let n = (x.shape()[1] * x.shape()[2]) as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(c);
    for (ch, mut plane) in xhat.axis_iter_mut(Axis(0)).enumerate() {
        let mean = plane.sum() / n;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        plane.mapv_inplace(|v| (v - mean) * is);
        inv_std[ch] = is;
    }
    let mut y = xhat.clone();
    for (ch, mut plane) in y.axis_iter_mut(Axis(0)).enumerate() {
        let (g, o) = (scale[ch], offset[ch]);
        plane.mapv_inplace(|v| v * g + o);
    }
    (y, NormCache { xhat, inv_std })
}

/// Returns `(dx, dscale, doffset)`.
pub fn instance_norm_backward(
    dy: &Array3<f64>,
    scale: ArrayView1<f64>,
    cache: &NormCache,
) -> (Array3<f64>, Array1<f64>, Array1<f64>) {
    let c = dy.shape()[0];
    let n = (dy.shape()[1] * dy.shape()[2]) as f64;
    let mut dx = Array3::zeros(dy.raw_dim());
    let mut dscale = Array1::zeros(c);
    let mut doffset = Array1::zeros(c);
    for ch in 0..c {
        let dyp = dy.index_axis(Axis(0), ch);
        let xh = cache.xhat.index_axis(Axis(0), ch);
        let sum_dy = dyp.sum();
        let sum_dy_xh = (&dyp * &xh).sum();
        dscale[ch] = sum_dy_xh;
        doffset[ch] = sum_dy;
        let k = scale[ch] * cache.inv_std[ch] / n;
        let mut out = dx.index_axis_mut(Axis(0), ch);
        ndarray::Zip::from(&mut out)
            .and(&dyp)
            .and(&xh)
            .for_each(|o, &d, &h| *o = k * (n * d - sum_dy - h * sum_dy_xh));
    }
    (dx, dscale, doffset)
}

/// Leaky rectifier; `slope == 0` gives the plain rectifier.
pub fn leaky_relu(x: &mut Array3<f64>, slope: f64) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
}

/// Backward through [`leaky_relu`] given its output `y` (positive slope keeps
/// the sign of the input).
pub fn leaky_relu_backward(dy: &mut Array3<f64>, y: &Array3<f64>, slope: f64) {
    ndarray::Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d *= slope;
        }
    });
}

pub(crate) fn matrix_to_image(x: &Array2<f64>) -> Array3<f64> {
    x.clone().insert_axis(Axis(0))
}

pub(crate) fn image_to_matrix(x: Array3<f64>) -> Array2<f64> {
    x.slice_move(s![0, .., ..])
}
