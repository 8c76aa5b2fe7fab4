//! Differentiable tensor operations.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(Error::Dimension(format!(
                "add: shape {:?} vs {:?}",
                sa, sb
            )));
        }
        let a = self.inner.borrow();
        let b = other.inner.borrow();
        let data: Vec<T> = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
        drop(a);
        drop(b);
        Ok(Tensor::from_op(
            sa,
            data,
            vec![self.clone(), other.clone()],
            Box::new(|out| {
                let g = out.grad.as_ref().unwrap();
                vec![Some(g.clone()), Some(g.clone())]
            }),
        ))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(Error::Dimension(format!(
                "mul: shape {:?} vs {:?}",
                sa, sb
            )));
        }
        let data: Vec<T> = {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect()
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            sa,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let bv = pb.inner.borrow();
                let av = pa.inner.borrow();
                let ga: Vec<T> = g.iter().zip(&bv.data).map(|(&gi, &y)| gi * y).collect();
                let gb: Vec<T> = g.iter().zip(&av.data).map(|(&gi, &x)| gi * x).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let data: Vec<T> = self.inner.borrow().data.iter().map(|&x| x * c).collect();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                vec![Some(g.iter().map(|&gi| gi * c).collect())]
            }),
        )
    }

    /// Adds a length-d bias vector to every row of a [.., d] tensor.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.shape();
        let d = *shape.last().ok_or_else(|| {
            Error::Dimension("add_bias: input has no dimensions".into())
        })?;
        let bshape = bias.shape();
        if bshape != [d] {
            return Err(Error::Dimension(format!(
                "add_bias: bias shape {:?} does not match last dim {}",
                bshape, d
            )));
        }
        let data: Vec<T> = {
            let a = self.inner.borrow();
            let b = bias.inner.borrow();
            a.data
                .iter()
                .enumerate()
                .map(|(i, &x)| x + b.data[i % d])
                .collect()
        };
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let mut gb = vec![T::zero(); d];
                for (i, &gi) in g.iter().enumerate() {
                    gb[i % d] += gi;
                }
                vec![Some(g.clone()), Some(gb)]
            }),
        ))
    }

    /// Standard matrix product of [m,k] x [k,n].
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul: incompatible shapes {:?} x {:?}",
                sa, sb
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            mat_mul(&a.data, &b.data, m, k, n)
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let a = pa.inner.borrow();
                let b = pb.inner.borrow();
                // dA = dC @ B^T, dB = A^T @ dC
                let ga = mat_mul_nt(g, &b.data, m, n, k);
                let gb = mat_mul_tn(&a.data, g, m, k, n);
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Batched matrix product of [b,m,k] x [b,k,n].
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Dimension(format!(
                "bmm: incompatible shapes {:?} x {:?}",
                sa, sb
            )));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let data = {
            let a = self.inner.borrow();
            let b = other.inner.borrow();
            let mut out = Vec::with_capacity(bt * m * n);
            for i in 0..bt {
                out.extend(mat_mul(
                    &a.data[i * m * k..(i + 1) * m * k],
                    &b.data[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                ));
            }
            out
        };
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![bt, m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let a = pa.inner.borrow();
                let b = pb.inner.borrow();
                let mut ga = Vec::with_capacity(bt * m * k);
                let mut gb = Vec::with_capacity(bt * k * n);
                for i in 0..bt {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    ga.extend(mat_mul_nt(gi, &b.data[i * k * n..(i + 1) * k * n], m, n, k));
                    gb.extend(mat_mul_tn(&a.data[i * m * k..(i + 1) * m * k], gi, m, k, n));
                }
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose2d(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("transpose2d: shape {:?}", s)));
        }
        let (m, n) = (s[0], s[1]);
        let a = self.inner.borrow();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = a.data[i * n + j];
            }
        }
        drop(a);
        Ok(Tensor::from_op(
            vec![n, m],
            data,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let mut ga = vec![T::zero(); m * n];
                for j in 0..n {
                    for i in 0..m {
                        ga[i * n + j] = g[j * m + i];
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// View with a new shape of identical element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::Dimension(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        let data = self.inner.borrow().data.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            data,
            vec![self.clone()],
            Box::new(|out| vec![Some(out.grad.as_ref().unwrap().clone())]),
        ))
    }

    /// Permutes the axes of a 3-D tensor.
    pub fn permute3(&self, perm: [usize; 3]) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 {
            return Err(Error::Dimension(format!("permute3: shape {:?}", s)));
        }
        {
            let mut sorted = perm;
            sorted.sort_unstable();
            if sorted != [0, 1, 2] {
                return Err(Error::Config(format!("permute3: invalid perm {:?}", perm)));
            }
        }
        let out_shape = vec![s[perm[0]], s[perm[1]], s[perm[2]]];
        let in_strides = [s[1] * s[2], s[2], 1];
        let out_strides_wrt_in = [
            in_strides[perm[0]],
            in_strides[perm[1]],
            in_strides[perm[2]],
        ];
        let a = self.inner.borrow();
        let mut data = Vec::with_capacity(a.data.len());
        for i in 0..out_shape[0] {
            for j in 0..out_shape[1] {
                for k in 0..out_shape[2] {
                    data.push(
                        a.data[i * out_strides_wrt_in[0]
                            + j * out_strides_wrt_in[1]
                            + k * out_strides_wrt_in[2]],
                    );
                }
            }
        }
        drop(a);
        let os = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let mut ga = vec![T::zero(); g.len()];
                let mut idx = 0;
                for i in 0..os[0] {
                    for j in 0..os[1] {
                        for k in 0..os[2] {
                            ga[i * out_strides_wrt_in[0]
                                + j * out_strides_wrt_in[1]
                                + k * out_strides_wrt_in[2]] = g[idx];
                            idx += 1;
                        }
                    }
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Concatenates 2-D tensors along axis 0. All must share the column count.
    pub fn concat_rows(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows: empty input".into()));
        }
        let cols = {
            let s = parts[0].shape();
            if s.len() != 2 {
                return Err(Error::Dimension(format!("concat_rows: shape {:?}", s)));
            }
            s[1]
        };
        let mut rows = 0;
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.len() != 2 || s[1] != cols {
                return Err(Error::Dimension(format!(
                    "concat_rows: shape {:?} vs {} columns",
                    s, cols
                )));
            }
            rows += s[0];
            row_counts.push(s[0]);
            data.extend(p.inner.borrow().data.iter().copied());
        }
        Ok(Tensor::from_op(
            vec![rows, cols],
            data,
            parts.to_vec(),
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let mut grads = Vec::with_capacity(row_counts.len());
                let mut offset = 0;
                for &rc in &row_counts {
                    grads.push(Some(g[offset..offset + rc * cols].to_vec()));
                    offset += rc * cols;
                }
                grads
            }),
        ))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("slice_rows: shape {:?}", s)));
        }
        if start >= end || end > s[0] {
            return Err(Error::Index(format!(
                "slice_rows: {}..{} of {} rows",
                start, end, s[0]
            )));
        }
        let (rows, cols) = (s[0], s[1]);
        let data = self.inner.borrow().data[start * cols..end * cols].to_vec();
        Ok(Tensor::from_op(
            vec![end - start, cols],
            data,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let mut ga = vec![T::zero(); rows * cols];
                ga[start * cols..end * cols].copy_from_slice(g);
                vec![Some(ga)]
            }),
        ))
    }

    /// Row-wise softmax over the last dimension, stabilized by max
    /// subtraction. Works on any rank; every slice along the last axis is
    /// treated as one row.
    pub fn softmax_rows(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        let d = *s.last().unwrap_or(&0);
        if d == 0 {
            return Err(Error::Dimension(
                "softmax_rows: empty last dimension".into(),
            ));
        }
        let data: Vec<T> = {
            let a = self.inner.borrow();
            let mut out = Vec::with_capacity(a.data.len());
            for row in a.data.chunks(d) {
                let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
                let sum: T = exps.iter().fold(T::zero(), |acc, &e| acc + e);
                out.extend(exps.iter().map(|&e| e / sum));
            }
            out
        };
        Ok(Tensor::from_op(
            s,
            data,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let y = &out.data;
                let mut ga = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(d).zip(y.chunks(d)) {
                    let dot: T = grow
                        .iter()
                        .zip(yrow)
                        .fold(T::zero(), |acc, (&gi, &yi)| acc + gi * yi);
                    ga.extend(grow.iter().zip(yrow).map(|(&gi, &yi)| yi * (gi - dot)));
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::of_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = T::of_f64(0.044715);
        let half = T::of_f64(0.5);
        let data: Vec<T> = self
            .inner
            .borrow()
            .data
            .iter()
            .map(|&x| {
                let u = c * (x + k * x * x * x);
                half * x * (T::one() + u.tanh())
            })
            .collect();
        let p = self.clone();
        Tensor::from_op(
            self.shape(),
            data,
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let a = p.inner.borrow();
                let three = T::of_f64(3.0);
                let ga: Vec<T> = g
                    .iter()
                    .zip(&a.data)
                    .map(|(&gi, &x)| {
                        let u = c * (x + k * x * x * x);
                        let t = u.tanh();
                        let du = c * (T::one() + three * k * x * x);
                        gi * (half * (T::one() + t) + half * x * (T::one() - t * t) * du)
                    })
                    .collect();
                vec![Some(ga)]
            }),
        )
    }

    /// Layer normalization over the last dimension with learned gain/bias.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let s = self.shape();
        let d = *s.last().ok_or_else(|| {
            Error::Dimension("layer_norm: input has no dimensions".into())
        })?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::Dimension(format!(
                "layer_norm: gamma/beta must be [{}], got {:?}/{:?}",
                d,
                gamma.shape(),
                beta.shape()
            )));
        }
        let epsv = T::of_f64(eps);
        let dv = T::of_f64(d as f64);
        let (data, xhat, inv_std) = {
            let a = self.inner.borrow();
            let gm = gamma.inner.borrow();
            let bt = beta.inner.borrow();
            let mut out = Vec::with_capacity(a.data.len());
            let mut xhat = Vec::with_capacity(a.data.len());
            let mut inv_std = Vec::with_capacity(a.data.len() / d);
            for row in a.data.chunks(d) {
                let mean = row.iter().fold(T::zero(), |s, &x| s + x) / dv;
                let var = row
                    .iter()
                    .fold(T::zero(), |s, &x| s + (x - mean) * (x - mean))
                    / dv;
                let istd = T::one() / (var + epsv).sqrt();
                inv_std.push(istd);
                for (j, &x) in row.iter().enumerate() {
                    let xh = (x - mean) * istd;
                    xhat.push(xh);
                    out.push(xh * gm.data[j] + bt.data[j]);
                }
            }
            (out, xhat, inv_std)
        };
        let gamma_p = gamma.clone();
        Ok(Tensor::from_op(
            s,
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let gm = gamma_p.inner.borrow();
                let mut gx = Vec::with_capacity(g.len());
                let mut ggamma = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                for (r, grow) in g.chunks(d).enumerate() {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let istd = inv_std[r];
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for j in 0..d {
                        let dxh = grow[j] * gm.data[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xh[j];
                        ggamma[j] += grow[j] * xh[j];
                        gbeta[j] += grow[j];
                    }
                    mean_dxhat /= dv;
                    mean_dxhat_xhat /= dv;
                    for j in 0..d {
                        let dxh = grow[j] * gm.data[j];
                        gx.push(istd * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat));
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            }),
        ))
    }

    /// Gathers rows of an embedding table: result[i] = table[ids[i]].
    pub fn embedding(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("embedding: table shape {:?}", s)));
        }
        let (vocab, d) = (s[0], s[1]);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index(format!(
                    "embedding: id {} out of vocab {}",
                    id, vocab
                )));
            }
        }
        let data = {
            let t = table.inner.borrow();
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                out.extend_from_slice(&t.data[id * d..(id + 1) * d]);
            }
            out
        };
        let ids_owned = ids.to_vec();
        Ok(Tensor::from_op(
            vec![ids.len(), d],
            data,
            vec![table.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap();
                let mut gt = vec![T::zero(); vocab * d];
                for (i, &id) in ids_owned.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g[i * d + j];
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Mean negative log-likelihood of `targets` at `positions` of a
    /// [seq, vocab] logit matrix, with log-sum-exp stabilization.
    pub fn cross_entropy(&self, targets: &[usize], positions: &[usize]) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "cross_entropy: logits shape {:?}",
                s
            )));
        }
        let (seq, vocab) = (s[0], s[1]);
        if targets.len() != positions.len() {
            return Err(Error::Contract(format!(
                "cross_entropy: {} targets vs {} positions",
                targets.len(),
                positions.len()
            )));
        }
        if positions.is_empty() {
            return Err(Error::Contract("cross_entropy: no positions".into()));
        }
        for &p in positions {
            if p >= seq {
                return Err(Error::Index(format!(
                    "cross_entropy: position {} out of sequence {}",
                    p, seq
                )));
            }
        }
        for &t in targets {
            if t >= vocab {
                return Err(Error::Index(format!(
                    "cross_entropy: target id {} out of vocab {}",
                    t, vocab
                )));
            }
        }
        let count = T::of_f64(positions.len() as f64);
        let loss = {
            let a = self.inner.borrow();
            let mut total = T::zero();
            for (&p, &t) in positions.iter().zip(targets) {
                let row = &a.data[p * vocab..(p + 1) * vocab];
                let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                let lse = row
                    .iter()
                    .fold(T::zero(), |s, &x| s + (x - max).exp())
                    .ln()
                    + max;
                total += lse - row[t];
            }
            total / count
        };
        let positions_owned = positions.to_vec();
        let targets_owned = targets.to_vec();
        let p = self.clone();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Box::new(move |out| {
                let gout = out.grad.as_ref().unwrap()[0];
                let a = p.inner.borrow();
                let mut ga = vec![T::zero(); a.data.len()];
                for (&pos, &t) in positions_owned.iter().zip(&targets_owned) {
                    let row = &a.data[pos * vocab..(pos + 1) * vocab];
                    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                    let exps: Vec<T> = row.iter().map(|&x| (x - max).exp()).collect();
                    let sum: T = exps.iter().fold(T::zero(), |acc, &e| acc + e);
                    let grow = &mut ga[pos * vocab..(pos + 1) * vocab];
                    for (j, &e) in exps.iter().enumerate() {
                        grow[j] += gout * (e / sum) / count;
                    }
                    grow[t] -= gout / count;
                }
                vec![Some(ga)]
            }),
        ))
    }

    /// Adds a large negative constant to attention scores at padded key
    /// positions. `key_mask[j]` is 1 for real tokens and 0 for [PAD].
    /// Scores are [heads, q_len, k_len]; gradient passes through untouched.
    pub fn add_key_mask(&self, key_mask: &[T]) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 || s[2] != key_mask.len() {
            return Err(Error::Dimension(format!(
                "add_key_mask: scores {:?} vs mask length {}",
                s,
                key_mask.len()
            )));
        }
        let k_len = s[2];
        let neg = T::of_f64(-1e9);
        let data: Vec<T> = self
            .inner
            .borrow()
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if key_mask[i % k_len] > T::zero() {
                    x
                } else {
                    x + neg
                }
            })
            .collect();
        Ok(Tensor::from_op(
            s,
            data,
            vec![self.clone()],
            Box::new(|out| vec![Some(out.grad.as_ref().unwrap().clone())]),
        ))
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self
            .inner
            .borrow()
            .data
            .iter()
            .fold(T::zero(), |s, &x| s + x);
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |out| {
                let g = out.grad.as_ref().unwrap()[0];
                vec![Some(vec![g; n])]
            }),
        )
    }
}

fn mat_mul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// a [m,n] times b^T where b is [k,n]; result [m,k].
fn mat_mul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * k + j] = acc;
        }
    }
    out
}

/// a^T times b where a is [m,k] and b is [m,n]; result [k,n].
fn mat_mul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
