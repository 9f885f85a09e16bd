//! Differentiable primitives: forward computation plus backward closure.
//!
//! The set is exactly what the model needs: matmul, elementwise math,
//! concat/slice, softmax/log-softmax with additive bias, layer norm,
//! embedding lookup, strided 2-D convolution, temporal max pooling,
//! dropout, stable logsumexp and scalar reductions.

use super::{numel_of, Tensor};
use crate::error::{Result, SaaError};
use crate::rng::SaaRng;

pub(crate) const LN_EPS: f64 = 1e-6;

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(SaaError::shape(op, format!("expected rank-2 tensor, got shape {:?}", s))),
    }
}

/// C[m,n] = A[m,k] * B[k,n], ikj loop order.
pub(crate) fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] * B[n,k]^T
fn mm_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[m,n] = A[k,m]^T * B[k,n]
fn mm_tn(a: &[f64], k: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

fn unary(t: &Tensor, out: Vec<f64>, back: impl Fn(&[f64], &[Tensor]) + 'static) -> Tensor {
    let shape = t.shape().to_vec();
    Tensor::from_op(out, shape, vec![t.clone()], Box::new(back))
}

impl Tensor {
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2(self, "matmul")?;
        let (k2, n) = dims2(other, "matmul")?;
        if k != k2 {
            return Err(SaaError::shape(
                "matmul",
                format!("inner dims differ: {:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let out = mm(&self.data(), m, k, &other.data(), n);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                parents[0].accumulate_grad(&mm_nt(g, m, n, &b, k));
                parents[1].accumulate_grad(&mm_tn(&a, m, k, g, n));
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = dims2(self, "transpose")?;
        let d = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            vec![n, m],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        dg[i * n + j] = g[j * m + i];
                    }
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(SaaError::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let out: Vec<f64> = self.data().iter().zip(other.data().iter()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                parents[1].accumulate_grad(g);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.add(&other.scale(-1.0))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(SaaError::shape(
                "mul",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let out: Vec<f64> = self.data().iter().zip(other.data().iter()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].to_vec();
                let b = parents[1].to_vec();
                let da: Vec<f64> = g.iter().zip(&b).map(|(gv, bv)| gv * bv).collect();
                let db: Vec<f64> = g.iter().zip(&a).map(|(gv, av)| gv * av).collect();
                parents[0].accumulate_grad(&da);
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v * c).collect();
        unary(self, out, move |g, parents| {
            let dg: Vec<f64> = g.iter().map(|v| v * c).collect();
            parents[0].accumulate_grad(&dg);
        })
    }

    /// [m,n] + [n]: add a bias vector to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = dims2(self, "add_row")?;
        if bias.shape() != [n] {
            return Err(SaaError::shape(
                "add_row",
                format!("matrix {:?} with bias {:?}", self.shape(), bias.shape()),
            ));
        }
        let b = bias.to_vec();
        let out: Vec<f64> = self
            .data()
            .iter()
            .enumerate()
            .map(|(idx, v)| v + b[idx % n])
            .collect();
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(g);
                let mut db = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        db[j] += g[i * n + j];
                    }
                }
                parents[1].accumulate_grad(&db);
            }),
        ))
    }

    /// Concatenate rank-2 tensors along the last (column) axis.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(SaaError::contract("concat_cols", "no inputs"));
        }
        let (m, _) = dims2(&parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = dims2(p, "concat_cols")?;
            if pm != m {
                return Err(SaaError::shape(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", m, pm),
                ));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let d = p.data();
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(&d[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let widths_b = widths.clone();
        Ok(Tensor::from_op(
            out,
            vec![m, total],
            parts.to_vec(),
            Box::new(move |g, parents| {
                let mut off = 0;
                for (p, &w) in parents.iter().zip(&widths_b) {
                    let mut dg = vec![0.0; m * w];
                    for i in 0..m {
                        dg[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + off..i * total + off + w]);
                    }
                    p.accumulate_grad(&dg);
                    off += w;
                }
            }),
        ))
    }

    /// Concatenate rank-2 tensors along the first (row) axis.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(SaaError::contract("concat_rows", "no inputs"));
        }
        let (_, n) = dims2(&parts[0], "concat_rows")?;
        let mut heights = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = dims2(p, "concat_rows")?;
            if pn != n {
                return Err(SaaError::shape(
                    "concat_rows",
                    format!("column counts differ: {} vs {}", n, pn),
                ));
            }
            heights.push(pm);
        }
        let total: usize = heights.iter().sum();
        let mut out = Vec::with_capacity(total * n);
        for p in parts {
            out.extend_from_slice(&p.data());
        }
        let heights_b = heights.clone();
        Ok(Tensor::from_op(
            out,
            vec![total, n],
            parts.to_vec(),
            Box::new(move |g, parents| {
                let mut off = 0;
                for (p, &hh) in parents.iter().zip(&heights_b) {
                    p.accumulate_grad(&g[off * n..(off + hh) * n]);
                    off += hh;
                }
            }),
        ))
    }

    /// Row slice [r0, r1) of a rank-2 tensor.
    pub fn rows(&self, r0: usize, r1: usize) -> Result<Tensor> {
        let (m, n) = dims2(self, "rows")?;
        if r0 >= r1 || r1 > m {
            return Err(SaaError::shape("rows", format!("range {}..{} of {} rows", r0, r1, m)));
        }
        let out = self.data()[r0 * n..r1 * n].to_vec();
        Ok(Tensor::from_op(
            out,
            vec![r1 - r0, n],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; m * n];
                dg[r0 * n..r1 * n].copy_from_slice(g);
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    pub fn row(&self, r: usize) -> Result<Tensor> {
        self.rows(r, r + 1)
    }

    /// Scalar element at a row-major multi-index.
    pub fn at(&self, idx: &[usize]) -> Result<Tensor> {
        if idx.len() != self.shape().len() {
            return Err(SaaError::shape(
                "at",
                format!("index {:?} into shape {:?}", idx, self.shape()),
            ));
        }
        let mut flat = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(self.shape()).enumerate() {
            if ix >= dim {
                return Err(SaaError::shape(
                    "at",
                    format!("index {:?} out of bounds at axis {} for shape {:?}", idx, i, self.shape()),
                ));
            }
            flat = flat * dim + ix;
        }
        let v = self.data()[flat];
        let total = self.numel();
        Ok(Tensor::from_op(
            vec![v],
            vec![],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; total];
                dg[flat] = g[0];
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// Same-layout view with a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != self.numel() {
            return Err(SaaError::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accumulate_grad(g)),
        ))
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.max(0.0)).collect();
        unary(self, out, |g, parents| {
            let x = parents[0].to_vec();
            let dg: Vec<f64> = g.iter().zip(&x).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect();
            parents[0].accumulate_grad(&dg);
        })
    }

    pub fn tanh_t(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.tanh()).collect();
        let y = out.clone();
        unary(self, out, move |g, parents| {
            let dg: Vec<f64> = g.iter().zip(&y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
            parents[0].accumulate_grad(&dg);
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let y = out.clone();
        unary(self, out, move |g, parents| {
            let dg: Vec<f64> = g.iter().zip(&y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
            parents[0].accumulate_grad(&dg);
        })
    }

    pub fn exp_t(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v.exp()).collect();
        let y = out.clone();
        unary(self, out, move |g, parents| {
            let dg: Vec<f64> = g.iter().zip(&y).map(|(gv, yv)| gv * yv).collect();
            parents[0].accumulate_grad(&dg);
        })
    }

    /// Row-wise softmax of a rank-2 tensor, with an optional additive bias
    /// (attention mask / proximity bias) applied pre-softmax. The bias is a
    /// constant: gradient flows only to `self`.
    pub fn softmax_rows(&self, bias: Option<&[f64]>) -> Result<Tensor> {
        let (m, n) = dims2(self, "softmax_rows")?;
        if let Some(b) = bias {
            if b.len() != m * n {
                return Err(SaaError::shape(
                    "softmax_rows",
                    format!("bias length {} for shape {:?}", b.len(), self.shape()),
                ));
            }
        }
        let d = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mut logits: Vec<f64> = row.to_vec();
            if let Some(b) = bias {
                for (l, bv) in logits.iter_mut().zip(&b[i * n..(i + 1) * n]) {
                    *l += bv;
                }
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, l) in out[i * n..(i + 1) * n].iter_mut().zip(&logits) {
                *o = (l - mx).exp();
                sum += *o;
            }
            for o in out[i * n..(i + 1) * n].iter_mut() {
                *o /= sum;
            }
        }
        drop(d);
        let y = out.clone();
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dg[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// Row-wise log-softmax (stable).
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = dims2(self, "log_softmax_rows")?;
        let d = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        drop(d);
        let y = out.clone();
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; m * n];
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..n {
                        dg[i * n + j] = gr[j] - y[i * n + j].exp() * gsum;
                    }
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// Layer normalization over the last axis with learned scale and shift.
    /// A zero-variance row normalizes to zeros before scale/shift.
    pub fn layer_norm_rows(&self, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
        let (m, n) = dims2(self, "layer_norm_rows")?;
        if scale.shape() != [n] || shift.shape() != [n] {
            return Err(SaaError::shape(
                "layer_norm_rows",
                format!(
                    "input {:?} with scale {:?}, shift {:?}",
                    self.shape(),
                    scale.shape(),
                    shift.shape()
                ),
            ));
        }
        let d = self.data();
        let sc = scale.to_vec();
        let sh = shift.to_vec();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let xh = (row[j] - mu) * inv;
                xhat[i * n + j] = xh;
                out[i * n + j] = xh * sc[j] + sh[j];
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), scale.clone(), shift.clone()],
            Box::new(move |g, parents| {
                let sc = parents[1].to_vec();
                let mut dx = vec![0.0; m * n];
                let mut dscale = vec![0.0; n];
                let mut dshift = vec![0.0; n];
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    let xh = &xhat[i * n..(i + 1) * n];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..n {
                        dscale[j] += gr[j] * xh[j];
                        dshift[j] += gr[j];
                        let dxh = gr[j] * sc[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[j];
                    }
                    mean_dxhat /= n as f64;
                    mean_dxhat_xhat /= n as f64;
                    for j in 0..n {
                        let dxh = gr[j] * sc[j];
                        dx[i * n + j] = inv_std[i] * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                    }
                }
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&dscale);
                parents[2].accumulate_grad(&dshift);
            }),
        ))
    }

    /// Stable logsumexp over the last axis: rank-1 input gives a scalar,
    /// rank-2 input gives one value per row. Stays finite for entries as
    /// small as -1e9.
    pub fn logsumexp(&self) -> Result<Tensor> {
        let (m, n, out_shape): (usize, usize, Vec<usize>) = match self.shape() {
            [n] => (1, *n, vec![]),
            [m, n] => (*m, *n, vec![*m]),
            s => {
                return Err(SaaError::shape(
                    "logsumexp",
                    format!("expected rank 1 or 2, got {:?}", s),
                ))
            }
        };
        let d = self.data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out[i] = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        }
        drop(d);
        let lse = out.clone();
        Ok(Tensor::from_op(
            out,
            out_shape,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].to_vec();
                let mut dg = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        dg[i * n + j] = g[i] * (x[i * n + j] - lse[i]).exp();
                    }
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// log(exp(a) + exp(b)) for scalar tensors, stable.
    pub fn logaddexp(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.numel() != 1 || b.numel() != 1 {
            return Err(SaaError::contract("logaddexp", "scalar inputs required"));
        }
        let av = a.item();
        let bv = b.item();
        let mx = av.max(bv);
        let out = mx + ((av - mx).exp() + (bv - mx).exp()).ln();
        Ok(Tensor::from_op(
            vec![out],
            vec![],
            vec![a.clone(), b.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(&[g[0] * (av - out).exp()]);
                parents[1].accumulate_grad(&[g[0] * (bv - out).exp()]);
            }),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let total = self.numel();
        let t = Tensor::from_op(
            vec![s],
            vec![],
            vec![self.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(&vec![g[0]; total]);
            }),
        );
        t
    }

    pub fn mean(&self) -> Tensor {
        let total = self.numel();
        self.sum().scale(1.0 / total as f64)
    }

    /// Negative log-likelihood gather: given [m, V] log-probabilities and m
    /// target ids, returns -sum_i lp[i, t_i] as a scalar.
    pub fn nll_gather(&self, targets: &[usize]) -> Result<Tensor> {
        let (m, v) = dims2(self, "nll_gather")?;
        if targets.len() != m {
            return Err(SaaError::shape(
                "nll_gather",
                format!("{} targets for {} rows", targets.len(), m),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(SaaError::shape("nll_gather", format!("target id {} >= vocab {}", bad, v)));
        }
        let d = self.data();
        let mut s = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            s -= d[i * v + t];
        }
        drop(d);
        let ts = targets.to_vec();
        Ok(Tensor::from_op(
            vec![s],
            vec![],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; m * v];
                for (i, &t) in ts.iter().enumerate() {
                    dg[i * v + t] = -g[0];
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// Embedding lookup: rows of `table` ([V, e]) selected by `ids`.
    pub fn embedding(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let (v, e) = dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(SaaError::shape("embedding", format!("id {} >= table rows {}", bad, v)));
        }
        let d = table.data();
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            out.extend_from_slice(&d[i * e..(i + 1) * e]);
        }
        drop(d);
        let ids_b = ids.to_vec();
        Ok(Tensor::from_op(
            out,
            vec![ids.len(), e],
            vec![table.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; v * e];
                for (row, &i) in ids_b.iter().enumerate() {
                    for j in 0..e {
                        dg[i * e + j] += g[row * e + j];
                    }
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// 2-D convolution with zero same-padding. Input [cin, H, W], weight
    /// [cout, cin, kh, kw], bias [cout], stride (sh, sw); output
    /// [cout, ceil(H/sh), ceil(W/sw)].
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: (usize, usize),
    ) -> Result<Tensor> {
        let (cin, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            s => return Err(SaaError::shape("conv2d", format!("input must be rank 3, got {:?}", s))),
        };
        let (cout, cin2, kh, kw) = match weight.shape() {
            [a, b, c, d] => (*a, *b, *c, *d),
            s => return Err(SaaError::shape("conv2d", format!("weight must be rank 4, got {:?}", s))),
        };
        if cin != cin2 || bias.shape() != [cout] {
            return Err(SaaError::shape(
                "conv2d",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    self.shape(),
                    weight.shape(),
                    bias.shape()
                ),
            ));
        }
        let (sh, sw) = stride;
        if h < 1 || w < 1 {
            return Err(SaaError::contract("conv2d", "input too short"));
        }
        let oh = h.div_ceil(sh);
        let ow = w.div_ceil(sw);
        let pad_h = ((oh - 1) * sh + kh).saturating_sub(h);
        let pad_w = ((ow - 1) * sw + kw).saturating_sub(w);
        let (pt, pl) = (pad_h / 2, pad_w / 2);

        let x = self.data();
        let wt = weight.data();
        let b = bias.data();
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * sh + ky) as isize - pt as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * sw + kx) as isize - pl as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[(ci * h + iy as usize) * w + ix as usize]
                                    * wt[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        drop(x);
        drop(wt);
        drop(b);
        Ok(Tensor::from_op(
            out,
            vec![cout, oh, ow],
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].to_vec();
                let wt = parents[1].to_vec();
                let mut dx = vec![0.0; cin * h * w];
                let mut dw = vec![0.0; cout * cin * kh * kw];
                let mut db = vec![0.0; cout];
                for co in 0..cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[(co * oh + oy) * ow + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            db[co] += gv;
                            for ci in 0..cin {
                                for ky in 0..kh {
                                    let iy = (oy * sh + ky) as isize - pt as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ix = (ox * sw + kx) as isize - pl as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = (ci * h + iy as usize) * w + ix as usize;
                                        let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                        dx[xi] += gv * wt[wi];
                                        dw[wi] += gv * x[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                parents[0].accumulate_grad(&dx);
                parents[1].accumulate_grad(&dw);
                parents[2].accumulate_grad(&db);
            }),
        ))
    }

    /// Layout change [C, H, W] -> [H, C*W]: one row per time step, channels
    /// and features flattened together (front-end "flatten and project").
    pub fn chw_to_rows(&self) -> Result<Tensor> {
        let (c, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            s => return Err(SaaError::shape("chw_to_rows", format!("rank-3 input expected, got {:?}", s))),
        };
        let d = self.data();
        let mut out = vec![0.0; c * h * w];
        for ci in 0..c {
            for t in 0..h {
                for f in 0..w {
                    out[t * (c * w) + ci * w + f] = d[(ci * h + t) * w + f];
                }
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            vec![h, c * w],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; c * h * w];
                for ci in 0..c {
                    for t in 0..h {
                        for f in 0..w {
                            dg[(ci * h + t) * w + f] = g[t * (c * w) + ci * w + f];
                        }
                    }
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// Inverse of `chw_to_rows`: [H, C*W] -> [C, H, W].
    pub fn rows_to_chw(&self, c: usize, w: usize) -> Result<Tensor> {
        let (h, cw) = dims2(self, "rows_to_chw")?;
        if cw != c * w {
            return Err(SaaError::shape(
                "rows_to_chw",
                format!("row width {} != {}*{}", cw, c, w),
            ));
        }
        let d = self.data();
        let mut out = vec![0.0; c * h * w];
        for ci in 0..c {
            for t in 0..h {
                for f in 0..w {
                    out[(ci * h + t) * w + f] = d[t * cw + ci * w + f];
                }
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            vec![c, h, w],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let cw = c * w;
                let mut dg = vec![0.0; c * h * w];
                for ci in 0..c {
                    for t in 0..h {
                        for f in 0..w {
                            dg[t * cw + ci * w + f] = g[(ci * h + t) * w + f];
                        }
                    }
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// Temporal max pooling over rows of a [T, d] tensor: window = stride,
    /// last window may be short. Output [ceil(T/stride), d].
    pub fn max_pool_rows(&self, stride: usize) -> Result<Tensor> {
        let (m, n) = dims2(self, "max_pool_rows")?;
        if stride == 0 {
            return Err(SaaError::contract("max_pool_rows", "stride must be positive"));
        }
        let om = m.div_ceil(stride);
        let d = self.data();
        let mut out = vec![0.0; om * n];
        let mut argmax = vec![0usize; om * n];
        for o in 0..om {
            let lo = o * stride;
            let hi = ((o + 1) * stride).min(m);
            for j in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = lo;
                for i in lo..hi {
                    if d[i * n + j] > best {
                        best = d[i * n + j];
                        best_i = i;
                    }
                }
                out[o * n + j] = best;
                argmax[o * n + j] = best_i;
            }
        }
        drop(d);
        Ok(Tensor::from_op(
            out,
            vec![om, n],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dg = vec![0.0; m * n];
                for o in 0..om {
                    for j in 0..n {
                        dg[argmax[o * n + j] * n + j] += g[o * n + j];
                    }
                }
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }

    /// Inverted dropout: in train mode, zeroes each element with probability
    /// p and scales survivors by 1/(1-p) so eval needs no rescale. In eval
    /// mode this is the identity.
    pub fn dropout(&self, p: f64, train: bool, rng: &mut SaaRng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(SaaError::contract("dropout", format!("p={} outside [0,1)", p)));
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape().to_vec();
        Ok(Tensor::from_op(
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let dg: Vec<f64> = g.iter().zip(&mask).map(|(gv, m)| gv * m).collect();
                parents[0].accumulate_grad(&dg);
            }),
        ))
    }
}
