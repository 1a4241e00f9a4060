//! Low-level numeric kernels: convolution lowering, matrix products,
//! bilinear resampling tables and instance normalization.
//!
//! Every kernel here is single-threaded with a fixed summation order, so
//! results are bit-reproducible for identical inputs.

/// Geometry of a 2-D convolution applied to one `[c, h, w]` image.
///
/// Output extent is stored explicitly instead of being derived, so the same
/// geometry describes the adjoint (transposed) convolution as well.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Geometry whose output is `ceil(input / stride)` in each axis.
    ///
    /// Padding is `pad` on the top/left side; any extra rows or columns the
    /// kernel needs on the bottom/right are treated as zeros.
    pub fn ceil_mode(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        dilation: usize,
    ) -> Self {
        ConvGeom {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            dilation,
            out_h: height.div_ceil(stride),
            out_w: width.div_ceil(stride),
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Lower one image into its patch matrix `[c*k*k, out_h*out_w]`.
pub fn im2col(img: &[f32], g: &ConvGeom, cols: &mut [f32]) {
    let (oh, ow) = (g.out_h, g.out_w);
    let k = g.kernel;
    debug_assert_eq!(img.len(), g.channels * g.height * g.width);
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy as usize >= g.height {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                        *out = if ix < 0 || ix as usize >= g.width {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into an image.
pub fn col2im(cols: &[f32], g: &ConvGeom, img: &mut [f32]) {
    let (oh, ow) = (g.out_h, g.out_w);
    let k = g.kernel;
    debug_assert_eq!(img.len(), g.channels * g.height * g.width);
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix operand, optionally transposed.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = beta * out + a · b` with `out` row-major `[m, n]`.
pub fn gemm(a: Mat<'_>, b: Mat<'_>, out: &mut [f32], beta: f32) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimensions differ");
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: strides and extents are derived from slices whose lengths were
    // checked against `rows * cols`, so every access is in bounds.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Per-axis sampling table for bilinear resampling with half-pixel centers.
#[derive(Clone, Debug)]
pub struct Axis {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f32>,
}

impl Axis {
    pub fn new(src: usize, dst: usize) -> Self {
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        let scale = src as f64 / dst as f64;
        for d in 0..dst {
            let pos = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let l = pos.floor() as usize;
            let h = (l + 1).min(src - 1);
            lo.push(l);
            hi.push(h);
            frac.push((pos - l as f64) as f32);
        }
        Axis { lo, hi, frac }
    }
}

/// Bilinear resample of one plane.
pub fn resize_plane(src: &[f32], sw: usize, ys: &Axis, xs: &Axis, dst: &mut [f32]) {
    let dw = xs.lo.len();
    for (dy, ((&y0, &y1), &fy)) in ys.lo.iter().zip(&ys.hi).zip(&ys.frac).enumerate() {
        let r0 = &src[y0 * sw..(y0 + 1) * sw];
        let r1 = &src[y1 * sw..(y1 + 1) * sw];
        let out = &mut dst[dy * dw..(dy + 1) * dw];
        for (dx, o) in out.iter_mut().enumerate() {
            let (x0, x1, fx) = (xs.lo[dx], xs.hi[dx], xs.frac[dx]);
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
            *o = if fy == 0.0 { top } else { top + (bot - top) * fy };
        }
    }
}

/// Adjoint of [`resize_plane`].
pub fn resize_plane_backward(grad_out: &[f32], sw: usize, ys: &Axis, xs: &Axis, grad_src: &mut [f32]) {
    let dw = xs.lo.len();
    for (dy, ((&y0, &y1), &fy)) in ys.lo.iter().zip(&ys.hi).zip(&ys.frac).enumerate() {
        for dx in 0..dw {
            let g = grad_out[dy * dw + dx];
            let (x0, x1, fx) = (xs.lo[dx], xs.hi[dx], xs.frac[dx]);
            let gt = g * (1.0 - fy);
            let gb = g * fy;
            grad_src[y0 * sw + x0] += gt * (1.0 - fx);
            grad_src[y0 * sw + x1] += gt * fx;
            grad_src[y1 * sw + x0] += gb * (1.0 - fx);
            grad_src[y1 * sw + x1] += gb * fx;
        }
    }
}

pub const NORM_EPS: f32 = 1e-5;

/// Normalize each plane to zero mean and unit variance.
/// Returns the inverse standard deviation per plane.
pub fn instance_norm(x: &[f32], plane: usize, out: &mut [f32]) -> Vec<f32> {
    x.chunks(plane)
        .zip(out.chunks_mut(plane))
        .map(|(src, dst)| {
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
            let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / plane as f64;
            let inv = 1.0 / (var + NORM_EPS as f64).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = ((s as f64 - mean) * inv) as f32;
            }
            inv as f32
        })
        .collect()
}

/// Gradient of [`instance_norm`] given its output `y` and `inv_std`.
pub fn instance_norm_backward(y: &[f32], grad_out: &[f32], inv_std: &[f32], plane: usize, grad_in: &mut [f32]) {
    for (((ys, gs), &inv), dst) in y
        .chunks(plane)
        .zip(grad_out.chunks(plane))
        .zip(inv_std)
        .zip(grad_in.chunks_mut(plane))
    {
        let n = plane as f64;
        let mean_g = gs.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mean_gy = gs.iter().zip(ys).map(|(&g, &y)| g as f64 * y as f64).sum::<f64>() / n;
        for ((d, &g), &yv) in dst.iter_mut().zip(gs).zip(ys) {
            *d += (inv as f64 * (g as f64 - mean_g - yv as f64 * mean_gy)) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(img: &[f32], g: &ConvGeom, w: &[f32], out_ch: usize) -> Vec<f32> {
        let mut out = vec![0.0; out_ch * g.out_h * g.out_w];
        for o in 0..out_ch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = 0.0;
                    for c in 0..g.channels {
                        for ki in 0..g.kernel {
                            for kj in 0..g.kernel {
                                let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy as usize >= g.height || ix as usize >= g.width {
                                    continue;
                                }
                                let wv = w[((o * g.channels + c) * g.kernel + ki) * g.kernel + kj];
                                acc += wv * img[(c * g.height + iy as usize) * g.width + ix as usize];
                            }
                        }
                    }
                    out[(o * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn lowered_convolution_matches_direct_loops() {
        let g = ConvGeom::ceil_mode(2, 7, 5, 4, 2, 1, 1);
        assert_eq!((g.out_h, g.out_w), (4, 3));
        let img: Vec<f32> = (0..70).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let w: Vec<f32> = (0..3 * 32).map(|i| ((i * 5) % 7) as f32 * 0.1 - 0.3).collect();
        let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
        im2col(&img, &g, &mut cols);
        let mut out = vec![0.0; 3 * g.col_cols()];
        gemm(Mat::new(&w, 3, g.col_rows()), Mat::new(&cols, g.col_rows(), g.col_cols()), &mut out, 0.0);
        let expected = naive_conv(&img, &g, &w, 3);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::ceil_mode(2, 5, 6, 3, 1, 2, 2);
        let x: Vec<f32> = (0..60).map(|i| (i as f32 * 0.37).sin()).collect();
        let y: Vec<f32> = (0..g.col_rows() * g.col_cols()).map(|i| (i as f32 * 0.11).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
    }

    #[test]
    fn transposed_gemm_operands() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut out = [0.0; 4];
        gemm(Mat::new(&a, 2, 3), Mat::new(&b, 3, 2), &mut out, 0.0);
        assert_eq!(out, [4.0, 5.0, 10.0, 11.0]);
        // a^T (3x2) times a (2x3) -> 3x3, check one entry
        let mut out = [0.0; 9];
        gemm(Mat::new(&a, 2, 3).t(), Mat::new(&a, 2, 3), &mut out, 0.0);
        assert_eq!(out[0], 1.0 + 16.0);
        assert_eq!(out[5], 2.0 * 3.0 + 5.0 * 6.0);
    }

    #[test]
    fn identity_resize_copies_exactly() {
        let ax = Axis::new(5, 5);
        assert!(ax.frac.iter().all(|&f| f == 0.0));
        assert_eq!(ax.lo, vec![0, 1, 2, 3, 4]);
    }
}
