use super::Tensor;
use crate::error::{dim_err, Result};

/// Valid-mode 2-D cross-correlation of one input plane with `F` square
/// kernels. `filters` has shape `[F, n, n]`; the result is
/// `[F, rows - n + 1, cols - n + 1]`.
pub fn conv2d_valid(input: &Tensor, filters: &Tensor) -> Result<Tensor> {
    let (rows, cols) = input.dims2()?;
    let (f, n) = kernel_dims(filters)?;
    if n > rows || n > cols {
        return Err(dim_err(format!(
            "kernel {n}x{n} larger than input {rows}x{cols}"
        )));
    }
    let (out_r, out_c) = (rows - n + 1, cols - n + 1);
    let x = input.data();
    let w = filters.data();
    let mut out = vec![0.0; f * out_r * out_c];
    for k in 0..f {
        let kern = &w[k * n * n..(k + 1) * n * n];
        for i in 0..out_r {
            for j in 0..out_c {
                let mut acc = 0.0;
                for a in 0..n {
                    let xrow = &x[(i + a) * cols + j..(i + a) * cols + j + n];
                    for b in 0..n {
                        acc += kern[a * n + b] * xrow[b];
                    }
                }
                out[(k * out_r + i) * out_c + j] = acc;
            }
        }
    }
    Tensor::new(vec![f, out_r, out_c], out)
}

/// Gradients of [`conv2d_valid`] given the upstream gradient `dout`
/// (same shape as the forward output). Returns `(dfilters, dinput)`.
pub fn conv2d_valid_backward(
    input: &Tensor,
    filters: &Tensor,
    dout: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (rows, cols) = input.dims2()?;
    let (f, n) = kernel_dims(filters)?;
    let (out_r, out_c) = (rows + 1 - n, cols + 1 - n);
    if dout.shape() != [f, out_r, out_c] {
        return Err(dim_err(format!(
            "conv2d backward: dout {:?} vs expected [{f}, {out_r}, {out_c}]",
            dout.shape()
        )));
    }
    let x = input.data();
    let w = filters.data();
    let g = dout.data();
    let mut dw = vec![0.0; w.len()];
    let mut dx = vec![0.0; x.len()];
    for k in 0..f {
        for i in 0..out_r {
            for j in 0..out_c {
                let gv = g[(k * out_r + i) * out_c + j];
                if gv == 0.0 {
                    continue;
                }
                for a in 0..n {
                    for b in 0..n {
                        let xi = (i + a) * cols + j + b;
                        dw[k * n * n + a * n + b] += gv * x[xi];
                        dx[xi] += gv * w[k * n * n + a * n + b];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(filters.shape().to_vec(), dw)?,
        Tensor::new(input.shape().to_vec(), dx)?,
    ))
}

fn kernel_dims(filters: &Tensor) -> Result<(usize, usize)> {
    match filters.shape()[..] {
        [f, a, b] if a == b && f >= 1 && a >= 1 => Ok((f, a)),
        _ => Err(dim_err(format!(
            "filters must be [F, n, n], got {:?}",
            filters.shape()
        ))),
    }
}

/// Wide (zero-padded) 1-D convolution over time. `seq` is `[T, D]`,
/// `filters` is `[F, w, D]`, `bias` is `[F]`. Output position `p` in
/// `0..T+w-1` sees input rows `p-w+1 ..= p`; the result is the
/// pre-activation `[T + w - 1, F]`.
pub fn conv1d_wide(seq: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (t, d) = seq.dims2()?;
    let (f, w) = conv1d_dims(filters, d, bias)?;
    let out_len = t + w - 1;
    let x = seq.data();
    let k = filters.data();
    let mut out = vec![0.0; out_len * f];
    for p in 0..out_len {
        for fi in 0..f {
            let mut acc = bias.data()[fi];
            for a in 0..w {
                // input row p - (w-1) + a
                let Some(row) = (p + a).checked_sub(w - 1) else {
                    continue;
                };
                if row >= t {
                    continue;
                }
                let krow = &k[(fi * w + a) * d..(fi * w + a + 1) * d];
                acc += super::dot(krow, &x[row * d..(row + 1) * d]);
            }
            out[p * f + fi] = acc;
        }
    }
    Tensor::new(vec![out_len, f], out)
}

#[derive(Debug, Clone)]
pub struct Conv1dGrads {
    pub filters: Tensor,
    pub bias: Tensor,
    pub input: Tensor,
}

/// Backward pass of [`conv1d_wide`] for an upstream gradient on the
/// pre-activation output.
pub fn conv1d_wide_backward(
    seq: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    dout: &Tensor,
) -> Result<Conv1dGrads> {
    let (t, d) = seq.dims2()?;
    let (f, w) = conv1d_dims(filters, d, bias)?;
    let out_len = t + w - 1;
    if dout.shape() != [out_len, f] {
        return Err(dim_err(format!(
            "conv1d backward: dout {:?} vs expected [{out_len}, {f}]",
            dout.shape()
        )));
    }
    let x = seq.data();
    let k = filters.data();
    let g = dout.data();
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; f];
    let mut dx = vec![0.0; x.len()];
    for p in 0..out_len {
        for fi in 0..f {
            let gv = g[p * f + fi];
            if gv == 0.0 {
                continue;
            }
            db[fi] += gv;
            for a in 0..w {
                let Some(row) = (p + a).checked_sub(w - 1) else {
                    continue;
                };
                if row >= t {
                    continue;
                }
                let base = (fi * w + a) * d;
                for c in 0..d {
                    dk[base + c] += gv * x[row * d + c];
                    dx[row * d + c] += gv * k[base + c];
                }
            }
        }
    }
    Ok(Conv1dGrads {
        filters: Tensor::new(filters.shape().to_vec(), dk)?,
        bias: Tensor::vector(db),
        input: Tensor::new(seq.shape().to_vec(), dx)?,
    })
}

fn conv1d_dims(filters: &Tensor, d: usize, bias: &Tensor) -> Result<(usize, usize)> {
    match filters.shape()[..] {
        [f, w, fd] if fd == d && w >= 1 && bias.len() == f => Ok((f, w)),
        _ => Err(dim_err(format!(
            "filters {:?} / bias {:?} incompatible with input width {d}",
            filters.shape(),
            bias.shape()
        ))),
    }
}
