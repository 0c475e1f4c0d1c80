//! 3-D convolution and transposed convolution over `[N, T, C, H, W]` tensors.
//!
//! Both directions are expressed through one pair of kernels, `im2col` and
//! its adjoint `col2im`, that map between a "wide" volume (the input of a
//! convolution) and a "narrow" volume (its output). A transposed convolution
//! is a convolution run backwards through the same geometry.
//!
//! Kernels are stored as `[C_narrow, C_wide, kT, kH, kW]`: `[C_out, C_in, ..]`
//! for convolution and `[C_in, C_out, ..]` for transposed convolution.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Stride, zero padding and (transposed convolution only) extra output
/// padding, each given per `(T, H, W)` axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output_padding: [usize; 3],
}

impl ConvParams {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self {
            stride,
            padding,
            output_padding: [0; 3],
        }
    }

    pub fn with_output_padding(mut self, output_padding: [usize; 3]) -> Self {
        self.output_padding = output_padding;
        self
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        Self::new([1; 3], [0; 3])
    }
}

/// Output extent of a convolution along one axis, if the window fits.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 || input == 0 || output_pad >= stride {
        return None;
    }
    let full = (input - 1) * stride + kernel + output_pad;
    (full > 2 * pad).then(|| full - 2 * pad)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    wide_ch: usize,
    narrow_ch: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
    wide: [usize; 3],
    narrow: [usize; 3],
}

impl Geometry {
    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn col_rows(&self) -> usize {
        self.wide_ch * self.kernel_volume()
    }

    fn narrow_plane(&self) -> usize {
        self.narrow[1] * self.narrow[2]
    }

    fn wide_sample(&self) -> usize {
        self.wide[0] * self.wide_ch * self.wide[1] * self.wide[2]
    }

    fn narrow_sample(&self) -> usize {
        self.narrow[0] * self.narrow_ch * self.narrow_plane()
    }

    fn wide_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.wide[0],
            self.wide_ch,
            self.wide[1],
            self.wide[2],
        ]
    }

    fn narrow_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.narrow[0],
            self.narrow_ch,
            self.narrow[1],
            self.narrow[2],
        ]
    }
}

fn check_rank(op: &'static str, what: &str, shape: &[usize]) -> Result<()> {
    if shape.len() != 5 {
        return Err(Error::shape(
            op,
            format!("{what} must have 5 axes, got {shape:?}"),
        ));
    }
    Ok(())
}

fn conv_geometry(input: &[usize], kernel: &[usize], params: &ConvParams) -> Result<Geometry> {
    const OP: &str = "conv3d";
    check_rank(OP, "input [N,T,C,H,W]", input)?;
    check_rank(OP, "kernel [C_out,C_in,kT,kH,kW]", kernel)?;
    if input[2] != kernel[1] {
        return Err(Error::shape(
            OP,
            format!(
                "input has {} channels but kernel expects {}",
                input[2], kernel[1]
            ),
        ));
    }
    let wide = [input[1], input[3], input[4]];
    let ksize = [kernel[2], kernel[3], kernel[4]];
    let mut narrow = [0; 3];
    for axis in 0..3 {
        narrow[axis] = conv_out_extent(
            wide[axis],
            ksize[axis],
            params.stride[axis],
            params.padding[axis],
        )
        .ok_or_else(|| {
            Error::shape(
                OP,
                format!(
                    "axis {axis}: extent {} with kernel {}, stride {}, padding {} has no valid output",
                    wide[axis], ksize[axis], params.stride[axis], params.padding[axis]
                ),
            )
        })?;
    }
    Ok(Geometry {
        batch: input[0],
        wide_ch: kernel[1],
        narrow_ch: kernel[0],
        kernel: ksize,
        stride: params.stride,
        padding: params.padding,
        wide,
        narrow,
    })
}

fn conv_transpose_geometry(
    input: &[usize],
    kernel: &[usize],
    params: &ConvParams,
) -> Result<Geometry> {
    const OP: &str = "conv_transpose3d";
    check_rank(OP, "input [N,T,C,H,W]", input)?;
    check_rank(OP, "kernel [C_in,C_out,kT,kH,kW]", kernel)?;
    if input[2] != kernel[0] {
        return Err(Error::shape(
            OP,
            format!(
                "input has {} channels but kernel expects {}",
                input[2], kernel[0]
            ),
        ));
    }
    let narrow = [input[1], input[3], input[4]];
    let ksize = [kernel[2], kernel[3], kernel[4]];
    let mut wide = [0; 3];
    for axis in 0..3 {
        wide[axis] = conv_transpose_out_extent(
            narrow[axis],
            ksize[axis],
            params.stride[axis],
            params.padding[axis],
            params.output_padding[axis],
        )
        .ok_or_else(|| {
            Error::shape(
                OP,
                format!(
                    "axis {axis}: extent {} with kernel {}, stride {}, padding {}, output padding {} has no valid output",
                    narrow[axis],
                    ksize[axis],
                    params.stride[axis],
                    params.padding[axis],
                    params.output_padding[axis]
                ),
            )
        })?;
    }
    Ok(Geometry {
        batch: input[0],
        wide_ch: kernel[1],
        narrow_ch: kernel[0],
        kernel: ksize,
        stride: params.stride,
        padding: params.padding,
        wide,
        narrow,
    })
}

/// Gathers the receptive fields of every output position of narrow time
/// slice `ts` into `col`, a `(C_wide * kT * kH * kW) x (H_n * W_n)` matrix.
fn im2col<F: Scalar>(g: &Geometry, wide: &[F], ts: usize, col: &mut [F]) {
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [tw, hw, ww] = g.wide;
    let [_, hn, wn] = g.narrow;
    let plane = hn * wn;
    let mut rows = col.chunks_exact_mut(plane);
    for c in 0..g.wide_ch {
        for dt in 0..kt {
            let ti = (ts * st + dt).checked_sub(pt).filter(|&t| t < tw);
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = rows.next().expect("col sized by geometry");
                    let Some(ti) = ti else {
                        row.fill(F::zero());
                        continue;
                    };
                    let base = (ti * g.wide_ch + c) * hw * ww;
                    for (ho, out) in row.chunks_exact_mut(wn).enumerate() {
                        let Some(hi) = (ho * sh + dh).checked_sub(ph).filter(|&h| h < hw) else {
                            out.fill(F::zero());
                            continue;
                        };
                        let src = &wide[base + hi * ww..base + (hi + 1) * ww];
                        for (wo, o) in out.iter_mut().enumerate() {
                            *o = match (wo * sw + dw).checked_sub(pw) {
                                Some(wi) if wi < ww => src[wi],
                                _ => F::zero(),
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` back into the wide volume.
fn col2im<F: Scalar>(g: &Geometry, col: &[F], ts: usize, wide: &mut [F]) {
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.padding;
    let [tw, hw, ww] = g.wide;
    let [_, hn, wn] = g.narrow;
    let plane = hn * wn;
    let mut rows = col.chunks_exact(plane);
    for c in 0..g.wide_ch {
        for dt in 0..kt {
            let ti = (ts * st + dt).checked_sub(pt).filter(|&t| t < tw);
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = rows.next().expect("col sized by geometry");
                    let Some(ti) = ti else { continue };
                    let base = (ti * g.wide_ch + c) * hw * ww;
                    for (ho, src) in row.chunks_exact(wn).enumerate() {
                        let Some(hi) = (ho * sh + dh).checked_sub(ph).filter(|&h| h < hw) else {
                            continue;
                        };
                        let dst = &mut wide[base + hi * ww..base + (hi + 1) * ww];
                        for (wo, v) in src.iter().enumerate() {
                            if let Some(wi) = (wo * sw + dw).checked_sub(pw).filter(|&w| w < ww) {
                                dst[wi] = dst[wi] + *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output shape of [`conv3d`] without running it.
pub fn conv3d_shape(input: &[usize], kernel: &[usize], params: &ConvParams) -> Result<Vec<usize>> {
    conv_geometry(input, kernel, params).map(|g| g.narrow_shape())
}

/// Output shape of [`conv_transpose3d`] without running it.
pub fn conv_transpose3d_shape(
    input: &[usize],
    kernel: &[usize],
    params: &ConvParams,
) -> Result<Vec<usize>> {
    conv_transpose_geometry(input, kernel, params).map(|g| g.wide_shape())
}

pub fn conv3d<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    params: &ConvParams,
) -> Result<Tensor<F>> {
    let g = conv_geometry(input.shape(), kernel.shape(), params)?;
    let plane = g.narrow_plane();
    let rows = g.col_rows();
    let mut out = vec![F::zero(); g.batch * g.narrow_sample()];
    let mut col = vec![F::zero(); rows * plane];
    for (x, y) in input
        .data()
        .chunks_exact(g.wide_sample())
        .zip(out.chunks_exact_mut(g.narrow_sample()))
    {
        for (ts, y_t) in y.chunks_exact_mut(g.narrow_ch * plane).enumerate() {
            im2col(&g, x, ts, &mut col);
            F::gemm(g.narrow_ch, rows, plane, kernel.data(), false, &col, false, y_t, false);
        }
    }
    Tensor::new(g.narrow_shape(), out)
}

/// Gradients of [`conv3d`] with respect to its input (when requested) and
/// its kernel.
pub fn conv3d_backward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    grad_out: &[F],
    params: &ConvParams,
    want_input: bool,
) -> Result<(Option<Vec<F>>, Vec<F>)> {
    let g = conv_geometry(input.shape(), kernel.shape(), params)?;
    let plane = g.narrow_plane();
    let rows = g.col_rows();
    let mut grad_kernel = vec![F::zero(); kernel.len()];
    let mut grad_input = want_input.then(|| vec![F::zero(); input.len()]);
    let mut col = vec![F::zero(); rows * plane];
    for (n, (x, dy)) in input
        .data()
        .chunks_exact(g.wide_sample())
        .zip(grad_out.chunks_exact(g.narrow_sample()))
        .enumerate()
    {
        for (ts, dy_t) in dy.chunks_exact(g.narrow_ch * plane).enumerate() {
            im2col(&g, x, ts, &mut col);
            F::gemm(g.narrow_ch, plane, rows, dy_t, false, &col, true, &mut grad_kernel, true);
            if let Some(dx) = grad_input.as_mut() {
                F::gemm(rows, g.narrow_ch, plane, kernel.data(), true, dy_t, false, &mut col, false);
                let wide = g.wide_sample();
                col2im(&g, &col, ts, &mut dx[n * wide..(n + 1) * wide]);
            }
        }
    }
    Ok((grad_input, grad_kernel))
}

pub fn conv_transpose3d<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    params: &ConvParams,
) -> Result<Tensor<F>> {
    let g = conv_transpose_geometry(input.shape(), kernel.shape(), params)?;
    let plane = g.narrow_plane();
    let rows = g.col_rows();
    let mut out = vec![F::zero(); g.batch * g.wide_sample()];
    let mut col = vec![F::zero(); rows * plane];
    for (x, y) in input
        .data()
        .chunks_exact(g.narrow_sample())
        .zip(out.chunks_exact_mut(g.wide_sample()))
    {
        for (ts, x_t) in x.chunks_exact(g.narrow_ch * plane).enumerate() {
            F::gemm(rows, g.narrow_ch, plane, kernel.data(), true, x_t, false, &mut col, false);
            col2im(&g, &col, ts, y);
        }
    }
    Tensor::new(g.wide_shape(), out)
}

/// Gradients of [`conv_transpose3d`] with respect to its input (when
/// requested) and its kernel.
pub fn conv_transpose3d_backward<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    grad_out: &[F],
    params: &ConvParams,
    want_input: bool,
) -> Result<(Option<Vec<F>>, Vec<F>)> {
    let g = conv_transpose_geometry(input.shape(), kernel.shape(), params)?;
    let plane = g.narrow_plane();
    let rows = g.col_rows();
    let mut grad_kernel = vec![F::zero(); kernel.len()];
    let mut grad_input = want_input.then(|| vec![F::zero(); input.len()]);
    let mut col = vec![F::zero(); rows * plane];
    for (n, (x, dy)) in input
        .data()
        .chunks_exact(g.narrow_sample())
        .zip(grad_out.chunks_exact(g.wide_sample()))
        .enumerate()
    {
        for (ts, x_t) in x.chunks_exact(g.narrow_ch * plane).enumerate() {
            im2col(&g, dy, ts, &mut col);
            F::gemm(g.narrow_ch, plane, rows, x_t, false, &col, true, &mut grad_kernel, true);
            if let Some(dx) = grad_input.as_mut() {
                let slice = g.narrow_sample();
                let offset = n * slice + ts * g.narrow_ch * plane;
                F::gemm(
                    g.narrow_ch,
                    rows,
                    plane,
                    kernel.data(),
                    false,
                    &col,
                    false,
                    &mut dx[offset..offset + g.narrow_ch * plane],
                    false,
                );
            }
        }
    }
    Ok((grad_input, grad_kernel))
}
