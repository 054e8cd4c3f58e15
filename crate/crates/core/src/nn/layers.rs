//! Forward and reverse passes for the fixed layer vocabulary.
//!
//! Convolution uses cross-correlation semantics (no kernel flip), the
//! deep-learning convention. Kernels are `[co][ci][ky][kx]` row-major slices.
//! The 3x3 / stride-1 case — the only one the regression backbone uses — has
//! a tiled kernel that keeps eight accumulators live per pass; everything
//! else goes through a plain reference loop.

use super::{NnError, Tensor3};

/// `floor((input + 2*pad - k) / stride) + 1`.
pub fn conv_output_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

fn pad_input(input: &Tensor3, pad: usize) -> Tensor3 {
    if pad == 0 {
        return input.clone();
    }
    let mut out = Tensor3::zeros(input.c, input.h + 2 * pad, input.w + 2 * pad);
    for c in 0..input.c {
        for y in 0..input.h {
            out.row_mut(c, y + pad)[pad..pad + input.w].copy_from_slice(input.row(c, y));
        }
    }
    out
}

fn check_conv_shapes(
    input: &Tensor3,
    kernel: &[f64],
    co: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Result<(usize, usize), NnError> {
    if kernel.len() != co * input.c * k * k {
        return Err(NnError::ShapeMismatch(format!(
            "kernel has {} values, expected co*ci*k*k = {}",
            kernel.len(),
            co * input.c * k * k
        )));
    }
    if bias.len() != co {
        return Err(NnError::ShapeMismatch(format!(
            "bias has {} values, expected {co}",
            bias.len()
        )));
    }
    if stride == 0 {
        return Err(NnError::ShapeMismatch("stride must be >= 1".into()));
    }
    if input.h + 2 * pad < k || input.w + 2 * pad < k {
        return Err(NnError::ShapeMismatch(format!(
            "kernel {k}x{k} larger than padded input {}x{}",
            input.h + 2 * pad,
            input.w + 2 * pad
        )));
    }
    Ok((
        conv_output_len(input.h, k, stride, pad),
        conv_output_len(input.w, k, stride, pad),
    ))
}

/// 2-D cross-correlation of a `[ci, h, w]` input with a `[co, ci, k, k]`
/// kernel plus per-channel bias.
pub fn conv2d_forward(
    input: &Tensor3,
    kernel: &[f64],
    co: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Result<Tensor3, NnError> {
    let (oh, ow) = check_conv_shapes(input, kernel, co, k, bias, stride, pad)?;
    let padded = pad_input(input, pad);
    let mut out = Tensor3::zeros(co, oh, ow);
    if k == 3 && stride == 1 {
        conv3x3_s1(&padded, kernel, bias, &mut out);
    } else {
        conv_generic(&padded, kernel, co, k, bias, stride, &mut out);
    }
    Ok(out)
}

fn conv_generic(
    padded: &Tensor3,
    kernel: &[f64],
    co: usize,
    k: usize,
    bias: &[f64],
    stride: usize,
    out: &mut Tensor3,
) {
    let ci_n = padded.c;
    for c_out in 0..co {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut acc = bias[c_out];
                for c_in in 0..ci_n {
                    for ky in 0..k {
                        let in_row = padded.row(c_in, oy * stride + ky);
                        let w_base = ((c_out * ci_n + c_in) * k + ky) * k;
                        for kx in 0..k {
                            acc += kernel[w_base + kx] * in_row[ox * stride + kx];
                        }
                    }
                }
                out.set(c_out, oy, ox, acc);
            }
        }
    }
}

/// Tiled 3x3 stride-1 kernel: one pass over the output row per input
/// channel, eight accumulators per tile so the compiler can vectorize.
fn conv3x3_s1(padded: &Tensor3, kernel: &[f64], bias: &[f64], out: &mut Tensor3) {
    const TILE: usize = 8;
    let ci_n = padded.c;
    let (oh, ow) = (out.h, out.w);
    for c_out in 0..out.c {
        for oy in 0..oh {
            out.row_mut(c_out, oy).fill(bias[c_out]);
        }
        for c_in in 0..ci_n {
            let wb = (c_out * ci_n + c_in) * 9;
            let w9: [f64; 9] = kernel[wb..wb + 9].try_into().unwrap();
            for oy in 0..oh {
                let r0 = padded.row(c_in, oy);
                let r1 = padded.row(c_in, oy + 1);
                let r2 = padded.row(c_in, oy + 2);
                let start = (c_out * oh + oy) * ow;
                let out_row = &mut out.data[start..start + ow];
                let mut ox = 0;
                while ox + TILE <= ow {
                    let mut acc = [0.0f64; TILE];
                    for t in 0..TILE {
                        let x = ox + t;
                        acc[t] = w9[0] * r0[x]
                            + w9[1] * r0[x + 1]
                            + w9[2] * r0[x + 2]
                            + w9[3] * r1[x]
                            + w9[4] * r1[x + 1]
                            + w9[5] * r1[x + 2]
                            + w9[6] * r2[x]
                            + w9[7] * r2[x + 1]
                            + w9[8] * r2[x + 2];
                    }
                    for t in 0..TILE {
                        out_row[ox + t] += acc[t];
                    }
                    ox += TILE;
                }
                while ox < ow {
                    out_row[ox] += w9[0] * r0[ox]
                        + w9[1] * r0[ox + 1]
                        + w9[2] * r0[ox + 2]
                        + w9[3] * r1[ox]
                        + w9[4] * r1[ox + 1]
                        + w9[5] * r1[ox + 2]
                        + w9[6] * r2[ox]
                        + w9[7] * r2[ox + 1]
                        + w9[8] * r2[ox + 2];
                    ox += 1;
                }
            }
        }
    }
}

/// Gradients of a convolution with respect to its input, kernel, and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub dinput: Tensor3,
    pub dkernel: Vec<f64>,
    pub dbias: Vec<f64>,
}

/// Reverse pass of [`conv2d_forward`].
pub fn conv2d_backward(
    input: &Tensor3,
    kernel: &[f64],
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    grad_out: &Tensor3,
) -> Result<ConvGrads, NnError> {
    let bias_probe = vec![0.0; co];
    let (oh, ow) = check_conv_shapes(input, kernel, co, k, &bias_probe, stride, pad)?;
    if grad_out.c != co || grad_out.h != oh || grad_out.w != ow {
        return Err(NnError::ShapeMismatch(format!(
            "grad_out is {}x{}x{}, expected {co}x{oh}x{ow}",
            grad_out.c, grad_out.h, grad_out.w
        )));
    }
    let ci_n = input.c;
    let padded = pad_input(input, pad);

    let mut dbias = vec![0.0; co];
    for c_out in 0..co {
        for oy in 0..oh {
            dbias[c_out] += grad_out.row(c_out, oy).iter().sum::<f64>();
        }
    }

    // d kernel: correlation of grad_out with the padded input.
    let mut dkernel = vec![0.0; kernel.len()];
    for c_out in 0..co {
        for c_in in 0..ci_n {
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let g_row = grad_out.row(c_out, oy);
                        let in_row = padded.row(c_in, oy * stride + ky);
                        if stride == 1 {
                            let shifted = &in_row[kx..kx + ow];
                            acc += g_row
                                .iter()
                                .zip(shifted)
                                .map(|(g, v)| g * v)
                                .sum::<f64>();
                        } else {
                            for ox in 0..ow {
                                acc += g_row[ox] * in_row[ox * stride + kx];
                            }
                        }
                    }
                    dkernel[((c_out * ci_n + c_in) * k + ky) * k + kx] = acc;
                }
            }
        }
    }

    // d input: full correlation of grad_out with the axis-flipped,
    // channel-transposed kernel (stride 1), or a scatter loop otherwise.
    let dinput = if stride == 1 {
        let mut kflip = vec![0.0; kernel.len()];
        for c_out in 0..co {
            for c_in in 0..ci_n {
                for ky in 0..k {
                    for kx in 0..k {
                        kflip[((c_in * co + c_out) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                            kernel[((c_out * ci_n + c_in) * k + ky) * k + kx];
                    }
                }
            }
        }
        let zero_bias = vec![0.0; ci_n];
        let flip_pad = k - 1 - pad;
        let g_padded = pad_input(grad_out, flip_pad);
        let mut dinput = Tensor3::zeros(ci_n, input.h, input.w);
        if k == 3 {
            conv3x3_s1(&g_padded, &kflip, &zero_bias, &mut dinput);
        } else {
            conv_generic(&g_padded, &kflip, ci_n, k, &zero_bias, 1, &mut dinput);
        }
        dinput
    } else {
        let mut dpadded = Tensor3::zeros(ci_n, padded.h, padded.w);
        for c_out in 0..co {
            for c_in in 0..ci_n {
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = kernel[((c_out * ci_n + c_in) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let g_row = grad_out.row(c_out, oy);
                            let d_row = dpadded.row_mut(c_in, oy * stride + ky);
                            for ox in 0..ow {
                                d_row[ox * stride + kx] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        }
        let mut dinput = Tensor3::zeros(ci_n, input.h, input.w);
        for c_in in 0..ci_n {
            for y in 0..input.h {
                dinput
                    .row_mut(c_in, y)
                    .copy_from_slice(&dpadded.row(c_in, y + pad)[pad..pad + input.w]);
            }
        }
        dinput
    };

    Ok(ConvGrads {
        dinput,
        dkernel,
        dbias,
    })
}

pub fn relu(input: &Tensor3) -> Tensor3 {
    Tensor3 {
        c: input.c,
        h: input.h,
        w: input.w,
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn relu_backward(input: &Tensor3, grad_out: &Tensor3) -> Result<Tensor3, NnError> {
    if !input.same_shape(grad_out) {
        return Err(NnError::ShapeMismatch("relu grad shape".into()));
    }
    Ok(Tensor3 {
        c: input.c,
        h: input.h,
        w: input.w,
        data: input
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    })
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the flat
/// input index of each selected element (first maximum in scan order).
pub fn max_pool2d_forward(input: &Tensor3) -> Result<(Tensor3, Vec<u32>), NnError> {
    if input.h < 2 || input.w < 2 {
        return Err(NnError::ShapeMismatch(format!(
            "max pool needs at least 2x2 input, got {}x{}",
            input.h, input.w
        )));
    }
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Tensor3::zeros(input.c, oh, ow);
    let mut argmax = vec![0u32; input.c * oh * ow];
    for c in 0..input.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (y, x) = (2 * oy + dy, 2 * ox + dx);
                        let idx = (c * input.h + y) * input.w + x;
                        let v = input.data[idx];
                        if v > best {
                            best = v;
                            best_idx = idx as u32;
                        }
                    }
                }
                out.set(c, oy, ox, best);
                argmax[(c * oh + oy) * ow + ox] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool2d_backward(
    input_shape: (usize, usize, usize),
    argmax: &[u32],
    grad_out: &Tensor3,
) -> Result<Tensor3, NnError> {
    let (c, h, w) = input_shape;
    if grad_out.len() != argmax.len() || grad_out.c != c {
        return Err(NnError::ShapeMismatch("max pool grad shape".into()));
    }
    let mut dinput = Tensor3::zeros(c, h, w);
    for (i, &g) in grad_out.data.iter().enumerate() {
        dinput.data[argmax[i] as usize] += g;
    }
    Ok(dinput)
}

/// Per-channel mean over the spatial extent.
pub fn global_average_pool(input: &Tensor3) -> Vec<f64> {
    let n = (input.h * input.w) as f64;
    (0..input.c)
        .map(|c| {
            let start = c * input.h * input.w;
            input.data[start..start + input.h * input.w].iter().sum::<f64>() / n
        })
        .collect()
}

pub fn global_average_pool_backward(
    input_shape: (usize, usize, usize),
    grad_out: &[f64],
) -> Result<Tensor3, NnError> {
    let (c, h, w) = input_shape;
    if grad_out.len() != c {
        return Err(NnError::ShapeMismatch("gap grad shape".into()));
    }
    let mut dinput = Tensor3::zeros(c, h, w);
    let n = (h * w) as f64;
    for ch in 0..c {
        let g = grad_out[ch] / n;
        let start = ch * h * w;
        dinput.data[start..start + h * w].fill(g);
    }
    Ok(dinput)
}

/// Dense layer `y = W x + b` with `W` stored row-major `[out, in]`.
pub fn fc_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Result<Vec<f64>, NnError> {
    let out_n = bias.len();
    if out_n == 0 || weight.len() != out_n * x.len() {
        return Err(NnError::ShapeMismatch(format!(
            "fc weight has {} values, expected {}",
            weight.len(),
            out_n * x.len()
        )));
    }
    Ok((0..out_n)
        .map(|o| {
            let row = &weight[o * x.len()..(o + 1) * x.len()];
            bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect())
}

/// Reverse pass of [`fc_forward`]: returns `(dx, dweight, dbias)`.
pub fn fc_backward(
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), NnError> {
    let out_n = grad_out.len();
    if weight.len() != out_n * x.len() {
        return Err(NnError::ShapeMismatch("fc grad shape".into()));
    }
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    for o in 0..out_n {
        let row = &weight[o * x.len()..(o + 1) * x.len()];
        let g = grad_out[o];
        for i in 0..x.len() {
            dx[i] += g * row[i];
            dw[o * x.len() + i] = g * x[i];
        }
    }
    Ok((dx, dw, grad_out.to_vec()))
}

/// Stack two tensors along the channel axis.
pub fn channel_concat(a: &Tensor3, b: &Tensor3) -> Result<Tensor3, NnError> {
    if a.h != b.h || a.w != b.w {
        return Err(NnError::ShapeMismatch(format!(
            "concat spatial dims {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Tensor3::from_vec(a.c + b.c, a.h, a.w, data))
}

/// Split a concat gradient back into the two channel groups.
pub fn channel_concat_backward(
    c_first: usize,
    grad_out: &Tensor3,
) -> Result<(Tensor3, Tensor3), NnError> {
    if c_first >= grad_out.c {
        return Err(NnError::ShapeMismatch("concat split point".into()));
    }
    let plane = grad_out.h * grad_out.w;
    let split = c_first * plane;
    Ok((
        Tensor3::from_vec(c_first, grad_out.h, grad_out.w, grad_out.data[..split].to_vec()),
        Tensor3::from_vec(
            grad_out.c - c_first,
            grad_out.h,
            grad_out.w,
            grad_out.data[split..].to_vec(),
        ),
    ))
}
