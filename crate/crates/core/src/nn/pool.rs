use std::cmp::Ordering;

use super::Tensor;
use crate::error::{arg_err, dim_err, Result};

/// Element-wise max across the filter axis of `[F, R, C]` maps. Returns the
/// pooled `[R, C]` map and, per cell, the winning filter (lowest index on
/// ties).
pub fn max_over_filters(maps: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (f, r, c) = match maps.shape()[..] {
        [f, r, c] if f >= 1 => (f, r, c),
        _ => {
            return Err(dim_err(format!(
                "expected [F, R, C] maps, got {:?}",
                maps.shape()
            )))
        }
    };
    let plane = r * c;
    let x = maps.data();
    let mut out = x[..plane].to_vec();
    let mut arg = vec![0usize; plane];
    for k in 1..f {
        for cell in 0..plane {
            let v = x[k * plane + cell];
            if v > out[cell] {
                out[cell] = v;
                arg[cell] = k;
            }
        }
    }
    Ok((Tensor::new(vec![r, c], out)?, arg))
}

/// Routes each cell's gradient to the filter that won the forward max.
pub fn max_over_filters_backward(argmax: &[usize], n_filters: usize, dout: &Tensor) -> Tensor {
    let plane = dout.len();
    let mut shape = vec![n_filters];
    shape.extend_from_slice(dout.shape());
    let mut g = Tensor::zeros(&shape);
    let gd = g.data_mut();
    for (cell, (&k, &d)) in argmax.iter().zip(dout.data()).enumerate() {
        gd[k * plane + cell] += d;
    }
    g
}

/// Source of one k-max output: an input position, or zero padding when the
/// row is shorter than `k`.
pub type KmaxSlot = Option<usize>;

/// The `k` largest values of `row` in descending order, ties resolved in
/// favour of the lower index. Rows shorter than `k` are padded with zeros.
pub fn kmax_pool(row: &[f64], k: usize) -> Result<(Vec<f64>, Vec<KmaxSlot>)> {
    if k == 0 {
        return Err(arg_err("k-max pooling needs k >= 1"));
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut values = Vec::with_capacity(k);
    let mut slots = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        values.push(row[i]);
        slots.push(Some(i));
    }
    while values.len() < k {
        values.push(0.0);
        slots.push(None);
    }
    Ok((values, slots))
}

pub fn kmax_pool_backward(slots: &[KmaxSlot], row_len: usize, dout: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; row_len];
    for (slot, d) in slots.iter().zip(dout) {
        if let Some(i) = slot {
            g[*i] += d;
        }
    }
    g
}

/// Average over `w` consecutive rows with stride 1: `[L, D] -> [L-w+1, D]`.
pub fn windowed_avg_pool(seq: &Tensor, w: usize) -> Result<Tensor> {
    let (len, d) = seq.dims2()?;
    if w == 0 || w > len {
        return Err(dim_err(format!("pool width {w} invalid for length {len}")));
    }
    let out_len = len - w + 1;
    let x = seq.data();
    let scale = 1.0 / w as f64;
    let mut out = vec![0.0; out_len * d];
    for t in 0..out_len {
        let o = &mut out[t * d..(t + 1) * d];
        for p in t..t + w {
            for (oc, xc) in o.iter_mut().zip(&x[p * d..(p + 1) * d]) {
                *oc += xc;
            }
        }
        o.iter_mut().for_each(|v| *v *= scale);
    }
    Tensor::new(vec![out_len, d], out)
}

pub fn windowed_avg_pool_backward(len: usize, w: usize, dout: &Tensor) -> Result<Tensor> {
    let (out_len, d) = dout.dims2()?;
    if out_len + w != len + 1 {
        return Err(dim_err(format!(
            "pool backward: {out_len} outputs cannot come from length {len} with width {w}"
        )));
    }
    let scale = 1.0 / w as f64;
    let g = dout.data();
    let mut dx = vec![0.0; len * d];
    for t in 0..out_len {
        for p in t..t + w {
            for c in 0..d {
                dx[p * d + c] += g[t * d + c] * scale;
            }
        }
    }
    Tensor::new(vec![len, d], dx)
}

/// Mean of the rows of `[T, F]` whose mask entry is true.
pub fn masked_mean(seq: &Tensor, mask: &[bool]) -> Result<Vec<f64>> {
    let (t, f) = seq.dims2()?;
    if mask.len() != t {
        return Err(dim_err(format!("mask length {} vs {t} rows", mask.len())));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(arg_err("mean over an all-masked sequence"));
    }
    let mut out = vec![0.0; f];
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (o, x) in out.iter_mut().zip(seq.row(i)) {
            *o += x;
        }
    }
    let scale = 1.0 / count as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

pub fn masked_mean_backward(mask: &[bool], dout: &[f64]) -> Tensor {
    let count = mask.iter().filter(|&&m| m).count().max(1);
    let f = dout.len();
    let mut g = Tensor::zeros(&[mask.len(), f]);
    let scale = 1.0 / count as f64;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (gv, d) in g.row_mut(i).iter_mut().zip(dout) {
            *gv = d * scale;
        }
    }
    g
}
