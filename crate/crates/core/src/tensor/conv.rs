//! 2-D convolution lowered to a matrix product over unfolded patches.

use super::autograd::{expect_rank4, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Pointwise stride-1 convs read the input directly as the patch matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c[m×n] = alpha·a[m×k]·b[k×n] + beta·c`, with explicit row/column strides
/// so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller provides slices whose extents cover the strided
    // m×k, k×n and m×n views; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f32], g: &Geometry, cols: &mut [f32]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &Geometry, dx: &mut [f32]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            drow[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `input[N,Cin,H,W]` with `weight[Cout,Cin,kh,kw]`
/// plus a per-channel `bias[Cout]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [n, cin, h, w] = expect_rank4(input, "conv2d input")?;
    let [cout, wcin, kh, kw] = expect_rank4(weight, "conv2d weight")?;
    if wcin != cin {
        return Err(Error::Dimension(format!(
            "conv2d: input {:?} has {cin} channels but weight {:?} expects {wcin}",
            input.shape(),
            weight.shape()
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::Dimension(format!(
            "conv2d: bias {:?} does not match weight {:?}",
            bias.shape(),
            weight.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d: stride must be at least 1".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Dimension(format!(
            "conv2d: kernel {kh}x{kw} exceeds padded input {:?} (padding {padding})",
            input.shape()
        )));
    }
    let g = Geometry {
        cin,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
    };
    let k = g.k();
    let plane = g.out_plane();
    let in_stride = cin * h * w;
    let out_stride = cout * plane;

    let mut out = vec![0.0f32; n * out_stride];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; k * plane]
    };
    for i in 0..n {
        let x = &input.data()[i * in_stride..(i + 1) * in_stride];
        let o = &mut out[i * out_stride..(i + 1) * out_stride];
        for (co, chunk) in o.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        let patches: &[f32] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        gemm(
            cout,
            k,
            plane,
            weight.data(),
            (k as isize, 1),
            patches,
            (plane as isize, 1),
            1.0,
            o,
        );
    }

    let (x_saved, w_saved) = (input.clone(), weight.clone());
    let track_input = input.requires_grad();
    let track_weight = weight.requires_grad();
    let track_bias = bias.requires_grad();
    Ok(Tensor::from_op(
        "conv2d",
        vec![n, cout, g.oh, g.ow],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        move |grad| {
            let mut gw = vec![0.0f32; cout * k];
            let mut gb = vec![0.0f32; cout];
            let mut gx = vec![0.0f32; if track_input { n * in_stride } else { 0 }];
            let mut cols = if g.is_pointwise() {
                Vec::new()
            } else {
                vec![0.0f32; k * plane]
            };
            let mut dcols = if g.is_pointwise() {
                Vec::new()
            } else {
                vec![0.0f32; k * plane]
            };
            for i in 0..n {
                let go = &grad[i * out_stride..(i + 1) * out_stride];
                if track_bias {
                    for (co, chunk) in go.chunks(plane).enumerate() {
                        gb[co] += chunk.iter().sum::<f32>();
                    }
                }
                if track_weight {
                    let x = &x_saved.data()[i * in_stride..(i + 1) * in_stride];
                    let patches: &[f32] = if g.is_pointwise() {
                        x
                    } else {
                        im2col(x, &g, &mut cols);
                        &cols
                    };
                    // gw[cout×k] += go[cout×plane] · patchesᵀ[plane×k]
                    gemm(
                        cout,
                        plane,
                        k,
                        go,
                        (plane as isize, 1),
                        patches,
                        (1, plane as isize),
                        1.0,
                        &mut gw,
                    );
                }
                if track_input {
                    let dst = &mut gx[i * in_stride..(i + 1) * in_stride];
                    // dcols[k×plane] = wᵀ[k×cout] · go[cout×plane]
                    if g.is_pointwise() {
                        gemm(
                            k,
                            cout,
                            plane,
                            w_saved.data(),
                            (1, k as isize),
                            go,
                            (plane as isize, 1),
                            0.0,
                            dst,
                        );
                    } else {
                        gemm(
                            k,
                            cout,
                            plane,
                            w_saved.data(),
                            (1, k as isize),
                            go,
                            (plane as isize, 1),
                            0.0,
                            &mut dcols,
                        );
                        col2im(&dcols, &g, dst);
                    }
                }
            }
            vec![
                track_input.then_some(gx),
                track_weight.then_some(gw),
                track_bias.then_some(gb),
            ]
        },
    ))
}
