//! Layer primitives with hand-derived backward passes.
//!
//! Convolutions are cross-correlations over NCHW batches. Convolution
//! weights are `(C_out, C_in, K, K)`; transposed-convolution weights are
//! `(C_in, C_out, K, K)`, so the same tensor drives a convolution and its
//! adjoint.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn conv_transpose_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    ((input - 1) * stride + kernel)
        .checked_sub(2 * padding)
        .filter(|&e| e > 0)
}

/// Output `(H, W)` of a convolution, or `None` when the output is empty.
pub fn conv2d_output_hw(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<(usize, usize)> {
    Some((
        conv_out_extent(h, kernel, stride, padding)?,
        conv_out_extent(w, kernel, stride, padding)?,
    ))
}

pub fn conv_transpose2d_output_hw(
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<(usize, usize)> {
    Some((
        conv_transpose_out_extent(h, kernel, stride, padding)?,
        conv_transpose_out_extent(w, kernel, stride, padding)?,
    ))
}

struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    transposed: bool,
) -> Result<ConvGeom> {
    let (n, cin, h, w) = input.dims4(op)?;
    let (w0, w1, kh, kw) = weight.dims4(op)?;
    if kh != kw {
        return Err(Error::invalid(format!("{op}: non-square kernel {kh}x{kw}")));
    }
    let (wcin, cout) = if transposed { (w0, w1) } else { (w1, w0) };
    if wcin != cin {
        return Err(Error::Shape {
            op,
            expected: vec![n, wcin, h, w],
            got: input.shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(op, &[cout], b.shape()));
        }
    }
    let out = if transposed {
        conv_transpose2d_output_hw(h, w, kh, stride, padding)
    } else {
        conv2d_output_hw(h, w, kh, stride, padding)
    };
    let (oh, ow) = out.ok_or_else(|| {
        Error::invalid(format!(
            "{op}: empty output for input {:?}, kernel {kh}, stride {stride}, padding {padding}",
            input.shape()
        ))
    })?;
    Ok(ConvGeom {
        n,
        cin,
        h,
        w,
        cout,
        k: kh,
        oh,
        ow,
    })
}

/// Maps output position `o` and kernel tap `t` to the input coordinate.
#[inline]
fn src_index(o: usize, t: usize, stride: usize, padding: usize, extent: usize) -> Option<usize> {
    (o * stride + t)
        .checked_sub(padding)
        .filter(|&i| i < extent)
}

pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = conv_geometry("conv2d", input, weight, Some(bias), stride, padding, false)?;
    let x = input.data();
    let wt = weight.data();
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let o = out.data_mut();
    for n in 0..g.n {
        for co in 0..g.cout {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for ci in 0..g.cin {
                        for ky in 0..g.k {
                            let Some(iy) = src_index(oy, ky, stride, padding, g.h) else {
                                continue;
                            };
                            for kx in 0..g.k {
                                let Some(ix) = src_index(ox, kx, stride, padding, g.w) else {
                                    continue;
                                };
                                acc += x[((n * g.cin + ci) * g.h + iy) * g.w + ix]
                                    * wt[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                            }
                        }
                    }
                    o[((n * g.cout + co) * g.oh + oy) * g.ow + ox] = acc + bias.data()[co];
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<ParamGrads> {
    let g = conv_geometry(
        "conv2d_backward",
        input,
        weight,
        None,
        stride,
        padding,
        false,
    )?;
    if upstream.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d_backward",
            &[g.n, g.cout, g.oh, g.ow],
            upstream.shape(),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let up = upstream.data();
    let mut gi = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[g.cout]);
    {
        let gi = gi.data_mut();
        let gw = gw.data_mut();
        let gb = gb.data_mut();
        for n in 0..g.n {
            for co in 0..g.cout {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let u = up[((n * g.cout + co) * g.oh + oy) * g.ow + ox];
                        gb[co] += u;
                        for ci in 0..g.cin {
                            for ky in 0..g.k {
                                let Some(iy) = src_index(oy, ky, stride, padding, g.h) else {
                                    continue;
                                };
                                for kx in 0..g.k {
                                    let Some(ix) = src_index(ox, kx, stride, padding, g.w) else {
                                        continue;
                                    };
                                    let xi = ((n * g.cin + ci) * g.h + iy) * g.w + ix;
                                    let wi = ((co * g.cin + ci) * g.k + ky) * g.k + kx;
                                    gi[xi] += u * wt[wi];
                                    gw[wi] += u * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ParamGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

/// Transposed convolution: each input element scatters `value * kernel`
/// into the output at stride spacing, then padding is cropped.
pub fn conv_transpose2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = conv_geometry(
        "conv_transpose2d",
        input,
        weight,
        Some(bias),
        stride,
        padding,
        true,
    )?;
    let x = input.data();
    let wt = weight.data();
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let o = out.data_mut();
    for n in 0..g.n {
        for ci in 0..g.cin {
            for iy in 0..g.h {
                for ix in 0..g.w {
                    let v = x[((n * g.cin + ci) * g.h + iy) * g.w + ix];
                    for co in 0..g.cout {
                        for ky in 0..g.k {
                            let Some(oy) = src_index(iy, ky, stride, padding, g.oh) else {
                                continue;
                            };
                            for kx in 0..g.k {
                                let Some(ox) = src_index(ix, kx, stride, padding, g.ow) else {
                                    continue;
                                };
                                o[((n * g.cout + co) * g.oh + oy) * g.ow + ox] +=
                                    v * wt[((ci * g.cout + co) * g.k + ky) * g.k + kx];
                            }
                        }
                    }
                }
            }
        }
        for co in 0..g.cout {
            let b = bias.data()[co];
            let base = (n * g.cout + co) * g.oh * g.ow;
            o[base..base + g.oh * g.ow].iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<ParamGrads> {
    let g = conv_geometry(
        "conv_transpose2d_backward",
        input,
        weight,
        None,
        stride,
        padding,
        true,
    )?;
    if upstream.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::shape(
            "conv_transpose2d_backward",
            &[g.n, g.cout, g.oh, g.ow],
            upstream.shape(),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let up = upstream.data();
    let mut gi = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[g.cout]);
    {
        let gi = gi.data_mut();
        let gw = gw.data_mut();
        let gb = gb.data_mut();
        for n in 0..g.n {
            for ci in 0..g.cin {
                for iy in 0..g.h {
                    for ix in 0..g.w {
                        let xi = ((n * g.cin + ci) * g.h + iy) * g.w + ix;
                        let v = x[xi];
                        let mut acc = 0.0;
                        for co in 0..g.cout {
                            for ky in 0..g.k {
                                let Some(oy) = src_index(iy, ky, stride, padding, g.oh) else {
                                    continue;
                                };
                                for kx in 0..g.k {
                                    let Some(ox) = src_index(ix, kx, stride, padding, g.ow) else {
                                        continue;
                                    };
                                    let u = up[((n * g.cout + co) * g.oh + oy) * g.ow + ox];
                                    let wi = ((ci * g.cout + co) * g.k + ky) * g.k + kx;
                                    acc += u * wt[wi];
                                    gw[wi] += u * v;
                                }
                            }
                        }
                        gi[xi] = acc;
                    }
                }
            }
            for (co, b) in gb.iter_mut().enumerate() {
                let base = (n * g.cout + co) * g.oh * g.ow;
                *b += up[base..base + g.oh * g.ow].iter().sum::<f64>();
            }
        }
    }
    Ok(ParamGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

/// `y = W·x + b` per batch row; trailing axes of `input` are flattened.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f) = (input.batch(), input.item_len());
    let [o, wf] = weight.shape()[..] else {
        return Err(Error::shape("dense", &[0, f], weight.shape()));
    };
    if wf != f {
        return Err(Error::shape("dense", &[o, f], weight.shape()));
    }
    if bias.shape() != [o] {
        return Err(Error::shape("dense", &[o], bias.shape()));
    }
    let x = input.data();
    let w = weight.data();
    let mut out = Tensor::zeros(&[n, o]);
    for (row, y) in out.data_mut().chunks_mut(o).enumerate() {
        let xr = &x[row * f..(row + 1) * f];
        for (j, yj) in y.iter_mut().enumerate() {
            let acc: f64 = w[j * f..(j + 1) * f]
                .iter()
                .zip(xr)
                .map(|(a, b)| a * b)
                .sum();
            *yj = acc + bias.data()[j];
        }
    }
    Ok(out)
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<ParamGrads> {
    let (n, f) = (input.batch(), input.item_len());
    let o = weight.shape()[0];
    if weight.shape() != [o, f] {
        return Err(Error::shape("dense_backward", &[o, f], weight.shape()));
    }
    if upstream.shape() != [n, o] {
        return Err(Error::shape("dense_backward", &[n, o], upstream.shape()));
    }
    let x = input.data();
    let w = weight.data();
    let up = upstream.data();
    let mut gi = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[o]);
    {
        let (gi, gw, gb) = (gi.data_mut(), gw.data_mut(), gb.data_mut());
        for row in 0..n {
            for j in 0..o {
                let u = up[row * o + j];
                gb[j] += u;
                for k in 0..f {
                    gi[row * f + k] += u * w[j * f + k];
                    gw[j * f + k] += u * x[row * f + k];
                }
            }
        }
    }
    Ok(ParamGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Sigmoid,
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn leaky_relu(v: f64, alpha: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        alpha * v
    }
}

pub fn activation_forward(x: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::LeakyRelu { alpha } => x.map(|v| leaky_relu(v, alpha)),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Gradient through an activation. Needs both the pre-activation `input`
/// and the `output` (sigmoid's derivative is taken from its output).
pub fn activation_backward(
    input: &Tensor,
    output: &Tensor,
    upstream: &Tensor,
    act: Activation,
) -> Result<Tensor> {
    input.expect_same_shape("activation_backward", upstream)?;
    output.expect_same_shape("activation_backward", upstream)?;
    let mut g = upstream.clone();
    match act {
        Activation::LeakyRelu { alpha } => {
            for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
                if x < 0.0 {
                    *gv *= alpha;
                }
            }
        }
        Activation::Sigmoid => {
            for (gv, &s) in g.data_mut().iter_mut().zip(output.data()) {
                *gv *= s * (1.0 - s);
            }
        }
    }
    Ok(g)
}
