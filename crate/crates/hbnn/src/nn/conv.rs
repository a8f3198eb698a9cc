//! im2col patch extraction and its transpose, shared by the binary and
//! full-precision convolution layers.
//!
//! Layout: for one sample, the column matrix has one row per output position
//! (`oh·ow` rows) and one column per kernel tap (`c·k·k`), so each row is a
//! contiguous patch that can be bit-packed and fed to the XNOR dot kernel
//! against a packed weight row.

/// Output spatial size of a convolution/pooling window.
pub fn out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Extract patches of one `[c, h, w]` sample into `cols` with shape
/// `[oh·ow, c·k·k]`. Out-of-bounds taps read as zero.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    cols: &mut [f64],
) {
    let oh = out_dim(h, kernel, stride, padding);
    let ow = out_dim(w, kernel, stride, padding);
    let k2 = kernel * kernel;
    let patch = c * k2;
    debug_assert_eq!(cols.len(), oh * ow * patch);

    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * patch;
            for ch in 0..c {
                let plane = ch * h * w;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        let dst = row + ch * k2 + ky * kernel + kx;
                        cols[dst] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            input[plane + iy as usize * w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-add column gradients back onto the input
/// layout, dropping contributions that fell on padding.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols_grad: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    input_grad: &mut [f64],
) {
    let oh = out_dim(h, kernel, stride, padding);
    let ow = out_dim(w, kernel, stride, padding);
    let k2 = kernel * kernel;
    let patch = c * k2;
    debug_assert_eq!(input_grad.len(), c * h * w);

    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * patch;
            for ch in 0..c {
                let plane = ch * h * w;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        input_grad[plane + iy as usize * w + ix as usize] +=
                            cols_grad[row + ch * k2 + ky * kernel + kx];
                    }
                }
            }
        }
    }
}
