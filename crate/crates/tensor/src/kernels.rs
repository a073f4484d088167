//! Numeric kernels behind the graph ops.
//!
//! `gemm` wraps `matrixmultiply::dgemm`; the parallel variant splits the
//! output rows into blocks and runs one dgemm per block. Every output
//! element is still produced by exactly one dgemm call over the full inner
//! dimension, so parallel and sequential results are bit-identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the parallel GEMM runs sequentially.
pub const PAR_GEMM_MIN_WORK: usize = 1 << 16;
#[cfg(feature = "parallel")]
const PAR_ELEMWISE_MIN: usize = 1 << 15;

/// Strided read-only matrix view: element `(i, j)` lives at
/// `data[i * row_stride + j * col_stride]`.
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows x cols` view.
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix that has `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(
            last < self.data.len(),
            "matrix view {rows}x{cols} overruns buffer of {}",
            self.data.len()
        );
    }
}

/// `c[m, n] = (accumulate ? c : 0) + a[m, k] * b[k, n]`, `c` row-major.
pub fn gemm_seq(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, c: &mut [f64], accumulate: bool) {
    assert_eq!(c.len(), m * n);
    a.check(m, k);
    b.check(k, n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: bounds of all three views were checked above and `c` is an
    // exclusive borrow of exactly m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(feature = "parallel")]
pub fn gemm_par(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, c: &mut [f64], accumulate: bool) {
    assert_eq!(c.len(), m * n);
    a.check(m, k);
    b.check(k, n);
    let threads = rayon::current_num_threads();
    if threads <= 1 || m < 2 || m * n * k < PAR_GEMM_MIN_WORK {
        return gemm_seq(m, k, n, a, b, c, accumulate);
    }
    let block = m.div_ceil(threads * 2).max(8);
    c.par_chunks_mut(block * n).enumerate().for_each(|(bi, c_block)| {
        let r0 = bi * block;
        let rows = c_block.len() / n;
        let sub = MatRef {
            data: &a.data[r0 * a.row_stride..],
            row_stride: a.row_stride,
            col_stride: a.col_stride,
        };
        gemm_seq(rows, k, n, sub, b, c_block, accumulate);
    });
}

pub fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, c: &mut [f64], accumulate: bool) {
    #[cfg(feature = "parallel")]
    {
        gemm_par(m, k, n, a, b, c, accumulate)
    }
    #[cfg(not(feature = "parallel"))]
    {
        gemm_seq(m, k, n, a, b, c, accumulate)
    }
}

/// Geometry of a square-kernel 2-D convolution over a `[C, H, W]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

fn im2col_row(g: &ConvGeom, x: &[f64], row: usize, out: &mut [f64]) {
    let kk = g.kernel * g.kernel;
    let c = row / kk;
    let ky = (row % kk) / g.kernel;
    let kx = row % g.kernel;
    let (ho, wo) = (g.out_height(), g.out_width());
    let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
    for oy in 0..ho {
        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
        let dst = &mut out[oy * wo..(oy + 1) * wo];
        if iy < 0 || iy >= g.height as isize {
            dst.fill(0.0);
            continue;
        }
        let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
        for (ox, d) in dst.iter_mut().enumerate() {
            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
            *d = if ix < 0 || ix >= g.width as isize {
                0.0
            } else {
                src[ix as usize]
            };
        }
    }
}

/// Unfolds `x` into a `[C*k*k, Ho*Wo]` patch matrix.
pub fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), g.channels * g.height * g.width);
    let ol = g.out_len();
    let mut cols = vec![0.0; g.patch_len() * ol];
    #[cfg(feature = "parallel")]
    {
        if cols.len() >= PAR_ELEMWISE_MIN {
            cols.par_chunks_mut(ol)
                .enumerate()
                .for_each(|(row, out)| im2col_row(g, x, row, out));
            return cols;
        }
    }
    for (row, out) in cols.chunks_mut(ol).enumerate() {
        im2col_row(g, x, row, out);
    }
    cols
}

/// Folds a patch-matrix gradient back onto the input, summing overlaps.
pub fn col2im(g: &ConvGeom, cols: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let kk = g.kernel * g.kernel;
    let plane_len = g.height * g.width;
    let mut x = vec![0.0; g.channels * plane_len];
    let fold_channel = |c: usize, plane: &mut [f64]| {
        for kidx in 0..kk {
            let (ky, kx) = (kidx / g.kernel, kidx % g.kernel);
            let src = &cols[(c * kk + kidx) * ho * wo..(c * kk + kidx + 1) * ho * wo];
            for oy in 0..ho {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.height as isize {
                    continue;
                }
                let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                for ox in 0..wo {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix >= 0 && ix < g.width as isize {
                        dst[ix as usize] += src[oy * wo + ox];
                    }
                }
            }
        }
    };
    #[cfg(feature = "parallel")]
    {
        if x.len() >= PAR_ELEMWISE_MIN {
            x.par_chunks_mut(plane_len)
                .enumerate()
                .for_each(|(c, plane)| fold_channel(c, plane));
            return x;
        }
    }
    for (c, plane) in x.chunks_mut(plane_len).enumerate() {
        fold_channel(c, plane);
    }
    x
}

/// Convolution forward. Returns `(output [O, Ho*Wo], patch matrix)`.
pub fn conv2d_forward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    out_channels: usize,
) -> (Vec<f64>, Vec<f64>) {
    let cols = im2col(g, x);
    let pl = g.patch_len();
    let ol = g.out_len();
    let mut out = vec![0.0; out_channels * ol];
    gemm(
        out_channels,
        pl,
        ol,
        MatRef::row_major(weight, pl),
        MatRef::row_major(&cols, ol),
        &mut out,
        false,
    );
    if let Some(b) = bias {
        for (o, row) in out.chunks_mut(ol).enumerate() {
            row.iter_mut().for_each(|v| *v += b[o]);
        }
    }
    (out, cols)
}

/// Gradients of a convolution: `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    g: &ConvGeom,
    cols: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    out_channels: usize,
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let pl = g.patch_len();
    let ol = g.out_len();
    let mut dw = vec![0.0; out_channels * pl];
    gemm(
        out_channels,
        ol,
        pl,
        MatRef::row_major(grad_out, ol),
        MatRef::transposed(cols, ol),
        &mut dw,
        false,
    );
    let db = grad_out.chunks(ol).map(|r| r.iter().sum()).collect();
    let dx = need_input.then(|| {
        let mut dcols = vec![0.0; pl * ol];
        gemm(
            pl,
            out_channels,
            ol,
            MatRef::transposed(weight, pl),
            MatRef::row_major(grad_out, ol),
            &mut dcols,
            false,
        );
        col2im(g, &dcols)
    });
    (dx, dw, db)
}

/// Applies `f` to every element, chunked over rayon for large buffers.
pub fn map_inplace(data: &mut [f64], f: impl Fn(f64) -> f64 + Sync + Send) {
    #[cfg(feature = "parallel")]
    {
        if data.len() >= PAR_ELEMWISE_MIN {
            data.par_chunks_mut(4096)
                .for_each(|chunk| chunk.iter_mut().for_each(|v| *v = f(*v)));
            return;
        }
    }
    data.iter_mut().for_each(|v| *v = f(*v));
}
