//! Forward and backward kernels. All functions are pure; outputs are checked
//! for non-finite values before being returned.

use super::{Real, Result, Tensor, TensorError};

/// Output spatial size of a convolution, requiring exact division.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = (size + 2 * pad)
        .checked_sub(kernel)
        .ok_or_else(|| TensorError::Config {
            op: "conv2d",
            detail: format!("kernel {kernel} larger than padded input {}", size + 2 * pad),
        })?;
    if span % stride != 0 {
        return Err(TensorError::Config {
            op: "conv2d",
            detail: format!("({size} + 2*{pad} - {kernel}) is not divisible by stride {stride}"),
        });
    }
    Ok(span / stride + 1)
}

struct ConvGeometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        input.expect_rank(4, "conv2d")?;
        kernels.expect_rank(4, "conv2d")?;
        let [n, c, h, w] = [input.shape[0], input.shape[1], input.shape[2], input.shape[3]];
        let [f, kc, kh, kw] = [kernels.shape[0], kernels.shape[1], kernels.shape[2], kernels.shape[3]];
        if kc != c {
            return Err(TensorError::Dimension {
                op: "conv2d",
                detail: format!("input has {c} channels, kernels expect {kc}"),
            });
        }
        if kh != kw || kh % 2 == 0 {
            return Err(TensorError::Config {
                op: "conv2d",
                detail: format!("kernel must be square with odd size, got {kh}x{kw}"),
            });
        }
        if stride == 0 {
            return Err(TensorError::Config {
                op: "conv2d",
                detail: "stride must be at least 1".into(),
            });
        }
        let ho = conv_output_size(h, kh, stride, pad)?;
        let wo = conv_output_size(w, kw, stride, pad)?;
        Ok(ConvGeometry {
            n,
            c,
            h,
            w,
            f,
            k: kh,
            ho,
            wo,
            stride,
            pad,
        })
    }

    /// Range of output indices whose tap `offset` lands inside `[0, size)`.
    fn valid_range(&self, offset: usize, size: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > offset {
            (self.pad - offset).div_ceil(s)
        } else {
            0
        };
        let hi = if size + self.pad > offset {
            ((size - 1 + self.pad - offset) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Cross-correlation of `input[N,C,H,W]` with `kernels[F,C,K,K]`, no bias.
pub fn conv2d_forward<T: Real>(input: &Tensor<T>, kernels: &Tensor<T>, stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, kernels, stride, pad)?;
    let mut out = Tensor::zeros(&[g.n, g.f, g.ho, g.wo]);
    let (x, k) = (input.data(), kernels.data());
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    for n in 0..g.n {
        for f in 0..g.f {
            let out_plane = &mut out.data[(n * g.f + f) * plane_out..][..plane_out];
            for c in 0..g.c {
                let in_plane = &x[(n * g.c + c) * plane_in..][..plane_in];
                for ky in 0..g.k {
                    let (oy0, oy1) = g.valid_range(ky, g.h, g.ho);
                    for kx in 0..g.k {
                        let wgt = k[((f * g.c + c) * g.k + ky) * g.k + kx];
                        let (ox0, ox1) = g.valid_range(kx, g.w, g.wo);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let in_row = &in_plane[iy * g.w..][..g.w];
                            let out_row = &mut out_plane[oy * g.wo..][..g.wo];
                            for ox in ox0..ox1 {
                                out_row[ox] = out_row[ox] + wgt * in_row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out.check_finite("conv2d_forward")?;
    Ok(out)
}

/// Gradients of a convolution with respect to its input (optional) and kernels.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    let g = ConvGeometry::new(input, kernels, stride, pad)?;
    if grad_out.shape() != [g.n, g.f, g.ho, g.wo] {
        return Err(TensorError::Dimension {
            op: "conv2d_backward",
            detail: format!("gradient shape {:?} does not match output", grad_out.shape()),
        });
    }
    let mut grad_k = Tensor::zeros(kernels.shape());
    let mut grad_in = want_input_grad.then(|| Tensor::zeros(input.shape()));
    let (x, k, go) = (input.data(), kernels.data(), grad_out.data());
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    for n in 0..g.n {
        for f in 0..g.f {
            let go_plane = &go[(n * g.f + f) * plane_out..][..plane_out];
            for c in 0..g.c {
                let in_off = (n * g.c + c) * plane_in;
                let in_plane = &x[in_off..][..plane_in];
                for ky in 0..g.k {
                    let (oy0, oy1) = g.valid_range(ky, g.h, g.ho);
                    for kx in 0..g.k {
                        let kidx = ((f * g.c + c) * g.k + ky) * g.k + kx;
                        let (ox0, ox1) = g.valid_range(kx, g.w, g.wo);
                        let mut acc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let in_row = &in_plane[iy * g.w..][..g.w];
                            let go_row = &go_plane[oy * g.wo..][..g.wo];
                            for ox in ox0..ox1 {
                                acc = acc + go_row[ox] * in_row[ox * g.stride + kx - g.pad];
                            }
                        }
                        grad_k.data[kidx] = grad_k.data[kidx] + acc;
                        if let Some(gi) = grad_in.as_mut() {
                            let wgt = k[kidx];
                            let gi_plane = &mut gi.data[in_off..][..plane_in];
                            for oy in oy0..oy1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let go_row = &go_plane[oy * g.wo..][..g.wo];
                                let gi_row = &mut gi_plane[iy * g.w..][..g.w];
                                for (ox, &go) in (ox0..ox1).zip(&go_row[ox0..ox1]) {
                                    let ix = ox * g.stride + kx - g.pad;
                                    gi_row[ix] = gi_row[ix] + wgt * go;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    grad_k.check_finite("conv2d_backward")?;
    if let Some(gi) = &grad_in {
        gi.check_finite("conv2d_backward")?;
    }
    Ok((grad_in, grad_k))
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Pass-through where the input was strictly positive, zero elsewhere
/// (including at exactly zero).
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(TensorError::Dimension {
            op: "relu_backward",
            detail: format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor {
        shape: input.shape.clone(),
        data,
    })
}

/// `[N,F,H,W] -> [N,F]` spatial mean.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    input.expect_rank(4, "global_avg_pool")?;
    let [n, f, h, w] = [input.shape[0], input.shape[1], input.shape[2], input.shape[3]];
    if h == 0 || w == 0 {
        return Err(TensorError::Dimension {
            op: "global_avg_pool",
            detail: "empty spatial extent".into(),
        });
    }
    let area = h * w;
    let scale = T::lit(1.0 / area as f64);
    let data = input
        .data()
        .chunks_exact(area)
        .map(|plane| plane.iter().copied().sum::<T>() * scale)
        .collect();
    Ok(Tensor {
        shape: vec![n, f],
        data,
    })
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input_shape.len() != 4 || grad_out.shape() != &input_shape[..2] {
        return Err(TensorError::Dimension {
            op: "global_avg_pool_backward",
            detail: format!("{input_shape:?} vs {:?}", grad_out.shape()),
        });
    }
    let area = input_shape[2] * input_shape[3];
    let scale = T::lit(1.0 / area as f64);
    let mut data = Vec::with_capacity(grad_out.len() * area);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * scale, area));
    }
    Ok(Tensor {
        shape: input_shape.to_vec(),
        data,
    })
}

/// `input[N,D] · weights[D,M] + bias[M]`.
pub fn linear<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, m) = linear_dims(input, weights, bias)?;
    let mut out = Tensor::zeros(&[n, m]);
    for (row, out_row) in input.data().chunks_exact(d).zip(out.data.chunks_exact_mut(m)) {
        out_row.copy_from_slice(bias.data());
        for (&xi, w_row) in row.iter().zip(weights.data().chunks_exact(m)) {
            for (o, &wij) in out_row.iter_mut().zip(w_row) {
                *o = *o + xi * wij;
            }
        }
    }
    out.check_finite("linear")?;
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    input.expect_rank(2, "linear_backward")?;
    weights.expect_rank(2, "linear_backward")?;
    let (n, d, m) = (input.shape[0], input.shape[1], weights.shape[1]);
    if weights.shape[0] != d || grad_out.shape() != [n, m] {
        return Err(TensorError::Dimension {
            op: "linear_backward",
            detail: format!(
                "input {:?}, weights {:?}, grad {:?}",
                input.shape(),
                weights.shape(),
                grad_out.shape()
            ),
        });
    }
    let mut gx = Tensor::zeros(&[n, d]);
    let mut gw = Tensor::zeros(&[d, m]);
    let mut gb = Tensor::zeros(&[m]);
    for ((x_row, g_row), gx_row) in input
        .data()
        .chunks_exact(d)
        .zip(grad_out.data().chunks_exact(m))
        .zip(gx.data.chunks_exact_mut(d))
    {
        for (b, &g) in gb.data.iter_mut().zip(g_row) {
            *b = *b + g;
        }
        for (((&xi, gxi), w_row), gw_row) in x_row
            .iter()
            .zip(gx_row.iter_mut())
            .zip(weights.data().chunks_exact(m))
            .zip(gw.data.chunks_exact_mut(m))
        {
            let mut acc = T::zero();
            for ((&g, &wij), gwij) in g_row.iter().zip(w_row).zip(gw_row.iter_mut()) {
                acc = acc + g * wij;
                *gwij = *gwij + xi * g;
            }
            *gxi = acc;
        }
    }
    Ok((gx, gw, gb))
}

fn linear_dims<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    input.expect_rank(2, "linear")?;
    weights.expect_rank(2, "linear")?;
    bias.expect_rank(1, "linear")?;
    let (n, d) = (input.shape[0], input.shape[1]);
    let m = weights.shape[1];
    if weights.shape[0] != d || bias.shape[0] != m {
        return Err(TensorError::Dimension {
            op: "linear",
            detail: format!(
                "input {:?}, weights {:?}, bias {:?}",
                input.shape(),
                weights.shape(),
                bias.shape()
            ),
        });
    }
    Ok((n, d, m))
}

/// Mean softmax cross-entropy over the batch, with its gradient on the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    logits.expect_rank(2, "softmax_cross_entropy")?;
    let (n, m) = (logits.shape[0], logits.shape[1]);
    if labels.len() != n || n == 0 {
        return Err(TensorError::Dimension {
            op: "softmax_cross_entropy",
            detail: format!("{n} rows of logits, {} labels", labels.len()),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= m) {
        return Err(TensorError::LabelOutOfRange { label, classes: m });
    }
    let inv_n = T::lit(1.0 / n as f64);
    let mut grad = Tensor::zeros(&[n, m]);
    let mut loss = T::zero();
    for ((row, g_row), &label) in logits
        .data()
        .chunks_exact(m)
        .zip(grad.data.chunks_exact_mut(m))
        .zip(labels)
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (g, &z) in g_row.iter_mut().zip(row) {
            *g = (z - max).exp();
            denom = denom + *g;
        }
        loss = loss + (denom.ln() - (row[label] - max));
        for g in g_row.iter_mut() {
            *g = *g / denom * inv_n;
        }
        g_row[label] = g_row[label] - inv_n;
    }
    let loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(TensorError::NonFinite {
            op: "softmax_cross_entropy",
        });
    }
    grad.check_finite("softmax_cross_entropy")?;
    Ok((loss, grad))
}

/// `sum((pred - target)^2)` and its gradient on `pred`.
pub fn squared_error<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(TensorError::Dimension {
            op: "squared_error",
            detail: format!("{:?} vs {:?}", pred.shape(), target.shape()),
        });
    }
    let two = T::lit(2.0);
    let diff: Vec<T> = pred.data().iter().zip(target.data()).map(|(&p, &t)| p - t).collect();
    let loss = diff.iter().map(|&d| d * d).sum::<T>();
    if !loss.is_finite() {
        return Err(TensorError::NonFinite { op: "squared_error" });
    }
    let grad = Tensor {
        shape: pred.shape.clone(),
        data: diff.into_iter().map(|d| two * d).collect(),
    };
    Ok((loss, grad))
}

/// Index of the largest value in each row; ties go to the lower index.
pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    let m = t.shape().last().copied().unwrap_or(1).max(1);
    t.data()
        .chunks_exact(m)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                )
                .0
        })
        .collect()
}
