//! Dense kernels shared by the graph ops: strided GEMM and im2col.

/// Strided matrix view used to describe GEMM operands.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat {
    pub offset: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Mat {
    /// Row-major matrix with `cols` columns starting at `offset`.
    pub fn rows(offset: usize, cols: usize) -> Self {
        Mat {
            offset,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn rows_t(offset: usize, cols: usize) -> Self {
        Mat {
            offset,
            row_stride: 1,
            col_stride: cols,
        }
    }

    pub fn strided(offset: usize, row_stride: usize, col_stride: usize) -> Self {
        Mat {
            offset,
            row_stride,
            col_stride,
        }
    }
}

/// `c = beta * c + a(m×k) · b(k×n)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    am: Mat,
    b: &[f64],
    bm: Mat,
    beta: f64,
    c: &mut [f64],
    cm: Mat,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(last_index(m, k, am) < a.len() || k == 0);
    debug_assert!(last_index(k, n, bm) < b.len() || k == 0);
    debug_assert!(last_index(m, n, cm) < c.len());
    // SAFETY: the views above are bounds-checked in debug builds and all
    // callers construct them from the buffer shapes they own.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(am.offset),
            am.row_stride as isize,
            am.col_stride as isize,
            b.as_ptr().add(bm.offset),
            bm.row_stride as isize,
            bm.col_stride as isize,
            beta,
            c.as_mut_ptr().add(cm.offset),
            cm.row_stride as isize,
            cm.col_stride as isize,
        );
    }
}

fn last_index(rows: usize, cols: usize, m: Mat) -> usize {
    m.offset + (rows.saturating_sub(1)) * m.row_stride + (cols.saturating_sub(1)) * m.col_stride
}

/// Geometry of a 2-D convolution over one image.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one image `(C, H, W)` into a `(C·k·k, out_h·out_w)` column matrix.
pub(crate) fn im2col(img: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let hw_out = g.col_cols();
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
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

/// Adjoint of [`im2col`]: scatters column gradients back into an image.
pub(crate) fn col2im_add(col: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let hw_out = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
