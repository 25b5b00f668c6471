//! Differentiable operations on [`Tensor`].

use super::kernels::*;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum MmKind {
    /// a[.,m,k] * b[.,k,n] -> [.,m,n]
    Nn,
    /// a[.,m,n] * b[.,k,n]^T -> [.,m,k]
    Nt,
    /// a[.,m,k]^T * b[.,m,n] -> [.,k,n]
    Tn,
}

/// Broadcast batched matrix product on raw buffers.
fn batched_mm(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    kind: MmKind,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let ar = a_shape.len();
    let br = b_shape.len();
    if ar < 2 || br < 2 {
        return Err(Error::Dimension(format!(
            "matmul requires rank >= 2 operands, got {:?} and {:?}",
            a_shape, b_shape
        )));
    }
    let (a0, a1) = (a_shape[ar - 2], a_shape[ar - 1]);
    let (b0, b1) = (b_shape[br - 2], b_shape[br - 1]);
    let (m, k, n, out0, out1) = match kind {
        MmKind::Nn => {
            if a1 != b0 {
                return Err(Error::Dimension(format!(
                    "matmul inner axes disagree: {:?} x {:?}",
                    a_shape, b_shape
                )));
            }
            (a0, a1, b1, a0, b1)
        }
        MmKind::Nt => {
            if a1 != b1 {
                return Err(Error::Dimension(format!(
                    "matmul(NT) inner axes disagree: {:?} x {:?}",
                    a_shape, b_shape
                )));
            }
            (a0, a1, b0, a0, b0)
        }
        MmKind::Tn => {
            if a0 != b0 {
                return Err(Error::Dimension(format!(
                    "matmul(TN) inner axes disagree: {:?} x {:?}",
                    a_shape, b_shape
                )));
            }
            (a0, a1, b1, a1, b1)
        }
    };
    let a_lead = &a_shape[..ar - 2];
    let b_lead = &b_shape[..br - 2];
    let batch_shape = broadcast_shape(a_lead, b_lead).ok_or_else(|| {
        Error::Dimension(format!(
            "matmul batch axes not broadcastable: {:?} x {:?}",
            a_shape, b_shape
        ))
    })?;
    let a_mat = a0 * a1;
    let b_mat = b0 * b1;
    let out_mat = out0 * out1;
    let n_batches: usize = batch_shape.iter().product();
    let mut out_shape = batch_shape.clone();
    out_shape.push(out0);
    out_shape.push(out1);
    let mut out = vec![0.0; n_batches * out_mat];

    if batch_shape.is_empty() {
        run_mm(kind, a, b, &mut out, m, k, n);
        return Ok((out, out_shape));
    }
    let a_strides = broadcast_strides(a_lead, &batch_shape);
    let b_strides = broadcast_strides(b_lead, &batch_shape);
    // offsets are in matrix units here
    let mut offsets = Vec::with_capacity(n_batches);
    for_each_broadcast(&batch_shape, &a_strides, &b_strides, |_, ai, bi| {
        offsets.push((ai, bi));
    });
    for (batch, chunk) in out.chunks_mut(out_mat).enumerate() {
        let (ai, bi) = offsets[batch];
        let asub = &a[ai * a_mat..ai * a_mat + a_mat];
        let bsub = &b[bi * b_mat..bi * b_mat + b_mat];
        run_mm(kind, asub, bsub, chunk, m, k, n);
    }
    Ok((out, out_shape))
}

fn run_mm(kind: MmKind, a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    match kind {
        MmKind::Nn => mm_nn(a, b, c, m, k, n),
        MmKind::Nt => mm_nt(a, b, c, m, k, n),
        MmKind::Tn => mm_tn(a, b, c, m, k, n),
    }
}

/// Sum `g` (laid out as `out_shape`) down to `target_shape`, undoing a
/// broadcast. Trailing axes of the target align with `out_shape`.
fn reduce_to_shape(g: &[f64], out_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if out_shape == target_shape {
        return g.to_vec();
    }
    let target_len: usize = target_shape.iter().product();
    if target_len == 1 {
        return vec![g.iter().sum()];
    }
    let mut out = vec![0.0; target_len];
    let t_strides = broadcast_strides(target_shape, out_shape);
    let zero = vec![0usize; out_shape.len()];
    for_each_broadcast(out_shape, &t_strides, &zero, |o, ti, _| {
        out[ti] += g[o];
    });
    out
}

fn broadcast_eval(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let a_shape = a.shape();
    let b_shape = b.shape();
    let out_shape = broadcast_shape(&a_shape, &b_shape).ok_or_else(|| {
        Error::Dimension(format!(
            "shapes not broadcastable: {:?} vs {:?}",
            a_shape, b_shape
        ))
    })?;
    let data = a.with_data(|ad| {
        b.with_data(|bd| {
            if a_shape == b_shape {
                return ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
            }
            let total: usize = out_shape.iter().product();
            let mut out = vec![0.0; total];
            let a_str = broadcast_strides(&a_shape, &out_shape);
            let b_str = broadcast_strides(&b_shape, &out_shape);
            for_each_broadcast(&out_shape, &a_str, &b_str, |o, ai, bi| {
                out[o] = f(ad[ai], bd[bi]);
            });
            out
        })
    });
    Ok((out_shape, data))
}

impl Tensor {
    /// Elementwise sum with NumPy-style broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (out_shape, data) = broadcast_eval(self, other, |x, y| x + y)?;
        let (a, b) = (self.clone(), other.clone());
        let (os, a_shape, b_shape) = (out_shape.clone(), self.shape(), other.shape());
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                a.accumulate_grad(&reduce_to_shape(g, &os, &a_shape));
                b.accumulate_grad(&reduce_to_shape(g, &os, &b_shape));
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (out_shape, data) = broadcast_eval(self, other, |x, y| x - y)?;
        let (a, b) = (self.clone(), other.clone());
        let (os, a_shape, b_shape) = (out_shape.clone(), self.shape(), other.shape());
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                a.accumulate_grad(&reduce_to_shape(g, &os, &a_shape));
                let mut neg = reduce_to_shape(g, &os, &b_shape);
                for v in neg.iter_mut() {
                    *v = -*v;
                }
                b.accumulate_grad(&neg);
            }),
        ))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (out_shape, data) = broadcast_eval(self, other, |x, y| x * y)?;
        let (a, b) = (self.clone(), other.clone());
        let (os, a_shape, b_shape) = (out_shape.clone(), self.shape(), other.shape());
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = g * broadcast(B), dB = g * broadcast(A)
                let a_str = broadcast_strides(&a_shape, &os);
                let b_str = broadcast_strides(&b_shape, &os);
                let da = a.with_data(|_| {
                    b.with_data(|bd| {
                        let mut full = vec![0.0; g.len()];
                        for_each_broadcast(&os, &a_str, &b_str, |o, _, bi| {
                            full[o] = g[o] * bd[bi];
                        });
                        reduce_to_shape(&full, &os, &a_shape)
                    })
                });
                let db = a.with_data(|ad| {
                    let mut full = vec![0.0; g.len()];
                    for_each_broadcast(&os, &a_str, &b_str, |o, ai, _| {
                        full[o] = g[o] * ad[ai];
                    });
                    reduce_to_shape(&full, &os, &b_shape)
                });
                a.accumulate_grad(&da);
                b.accumulate_grad(&db);
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.with_data(|d| d.iter().map(|&x| x * c).collect());
        let a = self.clone();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let da: Vec<f64> = g.iter().map(|&x| x * c).collect();
                a.accumulate_grad(&da);
            }),
        ))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.with_data(|d| d.iter().map(|&x| x.max(0.0)).collect());
        let a = self.clone();
        let mask: Vec<bool> = self.with_data(|d| d.iter().map(|&x| x > 0.0).collect());
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let da: Vec<f64> = g
                    .iter()
                    .zip(&mask)
                    .map(|(&gi, &m)| if m { gi } else { 0.0 })
                    .collect();
                a.accumulate_grad(&da);
            }),
        ))
    }

    pub fn abs(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.with_data(|d| d.iter().map(|&x| x.abs()).collect());
        let sign: Vec<f64> = self.with_data(|d| d.iter().map(|&x| x.signum() * (x != 0.0) as u8 as f64).collect());
        let a = self.clone();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let da: Vec<f64> = g.iter().zip(&sign).map(|(&gi, &s)| gi * s).collect();
                a.accumulate_grad(&da);
            }),
        ))
    }

    /// Batched matrix product `[..., m, k] x [..., k, n] -> [..., m, n]`,
    /// broadcasting leading axes.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let a_shape = self.shape();
        let b_shape = other.shape();
        let (data, out_shape) = self.with_data(|ad| {
            other.with_data(|bd| batched_mm(ad, &a_shape, bd, &b_shape, MmKind::Nn))
        })?;
        let (a, b) = (self.clone(), other.clone());
        let os = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = dC * B^T, dB = A^T * dC (batch-broadcast reduced)
                let a_sh = a.shape();
                let b_sh = b.shape();
                if a.requires_grad() {
                    let (da, da_shape) = b
                        .with_data(|bd| batched_mm(g, &os, bd, &b_sh, MmKind::Nt))
                        .expect("matmul backward dA");
                    a.accumulate_grad(&reduce_to_shape(&da, &da_shape, &a_sh));
                }
                if b.requires_grad() {
                    let (db, db_shape) = a
                        .with_data(|ad| batched_mm(ad, &a_sh, g, &os, MmKind::Tn))
                        .expect("matmul backward dB");
                    b.accumulate_grad(&reduce_to_shape(&db, &db_shape, &b_sh));
                }
            }),
        ))
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let shape = self.shape();
        let r = shape.len();
        if r < 2 {
            return Err(Error::Dimension(format!(
                "transpose_last2 requires rank >= 2, got {:?}",
                shape
            )));
        }
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let mat = rows * cols;
        let mut out_shape = shape.clone();
        out_shape[r - 2] = cols;
        out_shape[r - 1] = rows;
        let transpose = |src: &[f64], rows: usize, cols: usize| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for (b, chunk) in src.chunks(rows * cols).enumerate() {
                let base = b * rows * cols;
                for i in 0..rows {
                    for j in 0..cols {
                        out[base + j * rows + i] = chunk[i * cols + j];
                    }
                }
            }
            out
        };
        let data = self.with_data(|d| transpose(d, rows, cols));
        let a = self.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let _ = mat;
                a.accumulate_grad(&transpose(g, cols, rows));
            }),
        ))
    }

    /// Numerically stable softmax along `axis`: max-subtraction before
    /// exponentiation, rows sum to one.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax axis {} out of range for shape {:?}",
                axis, shape
            )));
        }
        if self.with_data(|d| d.iter().any(|v| v.is_nan())) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut data = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for t in 0..len {
                    mx = mx.max(data[base + t * inner]);
                }
                let mut sum = 0.0;
                for t in 0..len {
                    let e = (data[base + t * inner] - mx).exp();
                    data[base + t * inner] = e;
                    sum += e;
                }
                for t in 0..len {
                    data[base + t * inner] /= sum;
                }
            }
        }
        let y = data.clone();
        let a = self.clone();
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                // dx = y * (g - sum(g * y)) per slice
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut s = 0.0;
                        for t in 0..len {
                            let idx = base + t * inner;
                            s += g[idx] * y[idx];
                        }
                        for t in 0..len {
                            let idx = base + t * inner;
                            dx[idx] = y[idx] * (g[idx] - s);
                        }
                    }
                }
                a.accumulate_grad(&dx);
            }),
        ))
    }

    /// Layer normalization over the last axis with affine gain/bias.
    /// Population variance, epsilon 1e-5.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        const EPS: f64 = 1e-5;
        let shape = self.shape();
        let c = *shape.last().ok_or_else(|| {
            Error::Dimension("layer_norm requires rank >= 1".into())
        })?;
        if gain.shape() != vec![c] || bias.shape() != vec![c] {
            return Err(Error::Dimension(format!(
                "layer_norm gain/bias must have shape [{}], got {:?} and {:?}",
                c,
                gain.shape(),
                bias.shape()
            )));
        }
        let n_rows = self.numel() / c;
        let mut data = vec![0.0; self.numel()];
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; n_rows];
        self.with_data(|x| {
            gain.with_data(|gd| {
                bias.with_data(|bd| {
                    for (r, row) in x.chunks(c).enumerate() {
                        let mean = row.iter().sum::<f64>() / c as f64;
                        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                            / c as f64;
                        let istd = 1.0 / (var + EPS).sqrt();
                        inv_std[r] = istd;
                        for (j, &v) in row.iter().enumerate() {
                            let h = (v - mean) * istd;
                            xhat[r * c + j] = h;
                            data[r * c + j] = h * gd[j] + bd[j];
                        }
                    }
                })
            })
        });
        let (x_t, g_t, b_t) = (self.clone(), gain.clone(), bias.clone());
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g| {
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                g_t.with_data(|gd| {
                    for r in 0..g.len() / c {
                        let base = r * c;
                        let istd = inv_std[r];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_xhat = 0.0;
                        for j in 0..c {
                            let go = g[base + j];
                            let h = xhat[base + j];
                            dgain[j] += go * h;
                            dbias[j] += go;
                            let dh = go * gd[j];
                            mean_dh += dh;
                            mean_dh_xhat += dh * h;
                        }
                        mean_dh /= c as f64;
                        mean_dh_xhat /= c as f64;
                        for j in 0..c {
                            let h = xhat[base + j];
                            let dh = g[base + j] * gd[j];
                            dx[base + j] = istd * (dh - mean_dh - h * mean_dh_xhat);
                        }
                    }
                });
                x_t.accumulate_grad(&dx);
                g_t.accumulate_grad(&dgain);
                b_t.accumulate_grad(&dbias);
            }),
        ))
    }

    /// Concatenate along `axis`. All other axes must match.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of zero tensors".into()));
        }
        let first = parts[0].shape();
        if axis >= first.len() {
            return Err(Error::Dimension(format!(
                "concat axis {} out of range for shape {:?}",
                axis, first
            )));
        }
        let mut axis_total = 0usize;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::Dimension(format!(
                    "concat shapes incompatible: {:?} vs {:?}",
                    first, s
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let out_row = axis_total * inner;
        let mut data = vec![0.0; outer * out_row];
        let mut offset = 0usize;
        let mut spans = Vec::with_capacity(parts.len());
        for p in parts {
            let span = p.shape()[axis] * inner;
            p.with_data(|d| {
                for o in 0..outer {
                    data[o * out_row + offset..o * out_row + offset + span]
                        .copy_from_slice(&d[o * span..(o + 1) * span]);
                }
            });
            spans.push((offset, span));
            offset += span;
        }
        let owned: Vec<Tensor> = parts.to_vec();
        let owned_bw = owned.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            owned,
            Box::new(move |g| {
                for (p, &(off, span)) in owned_bw.iter().zip(&spans) {
                    if !p.requires_grad() {
                        continue;
                    }
                    let mut dp = vec![0.0; outer * span];
                    for o in 0..outer {
                        dp[o * span..(o + 1) * span]
                            .copy_from_slice(&g[o * out_row + off..o * out_row + off + span]);
                    }
                    p.accumulate_grad(&dp);
                }
            }),
        ))
    }

    /// Contiguous sub-range along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::Dimension(format!(
                "slice [{start}, {}) on axis {axis} invalid for shape {:?}",
                start + len,
                shape
            )));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let in_row = shape[axis] * inner;
        let span = len * inner;
        let off = start * inner;
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * span];
        self.with_data(|d| {
            for o in 0..outer {
                data[o * span..(o + 1) * span]
                    .copy_from_slice(&d[o * in_row + off..o * in_row + off + span]);
            }
        });
        let a = self.clone();
        let total = self.numel();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; total];
                for o in 0..outer {
                    dx[o * in_row + off..o * in_row + off + span]
                        .copy_from_slice(&g[o * span..(o + 1) * span]);
                }
                a.accumulate_grad(&dx);
            }),
        ))
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        super::check_shape(new_shape, self.numel())?;
        let a = self.clone();
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(move |g| a.accumulate_grad(g)),
        ))
    }

    /// Sum of all elements, as a `[1]`-shaped scalar.
    pub fn sum_all(&self) -> Result<Tensor> {
        let s = self.with_data(|d| d.iter().sum::<f64>());
        let a = self.clone();
        let n = self.numel();
        Ok(Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| {
                a.accumulate_grad(&vec![g[0]; n]);
            }),
        ))
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum_all()?.scale(1.0 / n)
    }
}
