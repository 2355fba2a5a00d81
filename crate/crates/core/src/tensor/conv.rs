//! im2col lowering for 2-D convolution.
//!
//! A `Cin×H×W` plane stack becomes a `(Cin·kh·kw) × (Ho·Wo)` column matrix so
//! that convolution is a single GEMM against the `Cout × (Cin·kh·kw)` weight.

use super::Real;

/// `floor((size + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, unpadded: the input already is the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unroll `input` (`cin·h·w`, row-major) into `cols` (`cin·kh·kw × ho·wo`).
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Real>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Vec<T> {
    let ho = conv_output_dim(h, kh, stride, padding).expect("kernel fits");
    let wo = conv_output_dim(w, kw, stride, padding).expect("kernel fits");
    let g = ConvGeometry {
        cin,
        h,
        w,
        kh,
        kw,
        stride,
        padding,
        ho,
        wo,
    };
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    im2col_into(input, &g, &mut cols);
    cols
}

pub(crate) fn im2col_into<T: Real>(input: &[T], g: &ConvGeometry, cols: &mut [T]) {
    let p = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.cin {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto the input planes (adjoint of im2col).
pub(crate) fn col2im_add<T: Real>(cols: &[T], g: &ConvGeometry, input_grad: &mut [T]) {
    let p = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.cin {
        let plane = &mut input_grad[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}
