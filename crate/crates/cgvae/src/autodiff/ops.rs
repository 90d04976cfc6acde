//! Differentiable operations recorded on the [`Tape`].
//!
//! Broadcasting is deliberately narrow: two operands combine elementwise
//! when their shapes are identical, when one side is a single element
//! (scalar broadcast), or when the smaller shape is a trailing suffix of
//! the larger (e.g. a `[F]` bias over `[E,F]` rows). Anything fancier is
//! rejected so every backward rule stays auditable.

use std::sync::Arc;

use super::{BackFn, Tape, Tensor};
use crate::error::{Error, Result};

/// Convenience alias used by graph-aggregation call sites.
pub type SegmentIds = Vec<usize>;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // max(x,0) + ln(1+exp(-|x|)) avoids overflow on both tails
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// How the smaller operand of a binary op maps onto the larger.
#[derive(Clone, Copy, PartialEq)]
enum Spread {
    Same,
    /// `b` repeats along leading dims of `a` with this period.
    BOverA(usize),
    /// `a` repeats along leading dims of `b`.
    AOverB(usize),
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn spread(a: &Tensor, b: &Tensor) -> Result<(Vec<usize>, Spread)> {
    if a.shape() == b.shape() {
        return Ok((a.shape().to_vec(), Spread::Same));
    }
    if b.len() == 1 || is_suffix(b.shape(), a.shape()) {
        return Ok((a.shape().to_vec(), Spread::BOverA(b.len().max(1))));
    }
    if a.len() == 1 || is_suffix(a.shape(), b.shape()) {
        return Ok((b.shape().to_vec(), Spread::AOverB(a.len().max(1))));
    }
    Err(Error::Broadcast(format!(
        "shapes {:?} and {:?} are not identical, scalar, or trailing-suffix compatible",
        a.shape(),
        b.shape()
    )))
}

impl Tape {
    fn binary(
        &self,
        a: &Tensor,
        b: &Tensor,
        f: fn(f64, f64) -> f64,
        dfa: fn(f64, f64) -> f64,
        dfb: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (shape, pattern) = spread(a, b)?;
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let n = shape.iter().product::<usize>();
        let mut out = Vec::with_capacity(n);
        match pattern {
            Spread::Same => {
                for i in 0..n {
                    out.push(f(ad[i], bd[i]));
                }
            }
            Spread::BOverA(p) => {
                for i in 0..n {
                    out.push(f(ad[i], bd[i % p]));
                }
            }
            Spread::AOverB(p) => {
                for i in 0..n {
                    out.push(f(ad[i % p], bd[i]));
                }
            }
        }
        let mut res = Tensor::new(out, &shape)?;
        let (ga, gb) = (Arc::clone(&ad), Arc::clone(&bd));
        let back: BackFn = Box::new(move |g, sink| {
            let (al, bl) = (ga.len(), gb.len());
            let mut da = vec![0.0; al];
            let mut db = vec![0.0; bl];
            match pattern {
                Spread::Same => {
                    for i in 0..g.len() {
                        da[i] = g[i] * dfa(ga[i], gb[i]);
                        db[i] = g[i] * dfb(ga[i], gb[i]);
                    }
                }
                Spread::BOverA(p) => {
                    for i in 0..g.len() {
                        da[i] = g[i] * dfa(ga[i], gb[i % p]);
                        db[i % p] += g[i] * dfb(ga[i], gb[i % p]);
                    }
                }
                Spread::AOverB(p) => {
                    for i in 0..g.len() {
                        da[i % p] += g[i] * dfa(ga[i % p], gb[i]);
                        db[i] = g[i] * dfb(ga[i % p], gb[i]);
                    }
                }
            }
            sink(0, da);
            sink(1, db);
        });
        self.record(&mut res, &[a, b], back);
        Ok(res)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary(a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if b.data().iter().any(|&y| y == 0.0) {
            return Err(Error::Domain("division by zero".to_string()));
        }
        self.binary(a, b, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    fn unary(
        &self,
        a: &Tensor,
        f: fn(f64) -> f64,
        df: fn(f64) -> f64,
    ) -> Result<Tensor> {
        let ad = Arc::clone(&a.data);
        let out: Vec<f64> = ad.iter().map(|&x| f(x)).collect();
        let mut res = Tensor::new(out, a.shape())?;
        let back: BackFn = Box::new(move |g, sink| {
            let da = g.iter().zip(ad.iter()).map(|(&gi, &x)| gi * df(x)).collect();
            sink(0, da);
        });
        self.record(&mut res, &[a], back);
        Ok(res)
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, f64::exp, f64::exp)
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor> {
        if a.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("log of non-positive value".to_string()));
        }
        self.unary(a, f64::ln, |x| 1.0 / x)
    }

    /// `x · sigmoid(x)`, the activation used throughout the model.
    pub fn swish(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(
            a,
            |x| x * sigmoid(x),
            |x| {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            },
        )
    }

    pub fn softplus(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, softplus, sigmoid)
    }

    pub fn relu(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn neg(&self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, |x| -x, |_| -1.0)
    }

    pub fn add_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.add(a, &Tensor::scalar(c))
    }

    pub fn mul_scalar(&self, a: &Tensor, c: f64) -> Result<Tensor> {
        self.mul(a, &Tensor::scalar(c))
    }

    /// Multiply each trailing slice of `a` by the matching element of `s`:
    /// `s` must have exactly the shape of `a` minus its last axis
    /// (per-channel scaling of vectors, per-row weighting of coordinates).
    pub fn scale(&self, a: &Tensor, s: &Tensor) -> Result<Tensor> {
        let rank = a.shape().len();
        if rank == 0 || s.shape() != &a.shape()[..rank - 1] {
            return Err(Error::Broadcast(format!(
                "scale: scaler shape {:?} must equal {:?} minus its last axis",
                s.shape(),
                a.shape()
            )));
        }
        let last = a.shape()[rank - 1];
        let (ad, sd) = (Arc::clone(&a.data), Arc::clone(&s.data));
        let mut out = Vec::with_capacity(ad.len());
        for (i, &x) in ad.iter().enumerate() {
            out.push(x * sd[i / last]);
        }
        let mut res = Tensor::new(out, a.shape())?;
        let back: BackFn = Box::new(move |g, sink| {
            let mut da = vec![0.0; ad.len()];
            let mut ds = vec![0.0; sd.len()];
            for (i, &gi) in g.iter().enumerate() {
                let r = i / last;
                da[i] = gi * sd[r];
                ds[r] += gi * ad[i];
            }
            sink(0, da);
            sink(1, ds);
        });
        self.record(&mut res, &[a, s], back);
        Ok(res)
    }

    /// Dense 2-D matrix product. Backward: `dA = g·Bᵀ`, `dB = Aᵀ·g`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!(
                "matmul: incompatible shapes {:?} and {:?}",
                sa, sb
            )));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for kk in 0..k {
                let av = ad[i * k + kk];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[kk * p..kk * p + p];
                let orow = &mut out[i * p..i * p + p];
                for j in 0..p {
                    orow[j] += av * brow[j];
                }
            }
        }
        let mut res = Tensor::new(out, &[m, p])?;
        let back: BackFn = Box::new(move |g, sink| {
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for kk in 0..k {
                    let mut acc = 0.0;
                    let grow = &g[i * p..i * p + p];
                    let brow = &bd[kk * p..kk * p + p];
                    for j in 0..p {
                        acc += grow[j] * brow[j];
                    }
                    da[i * k + kk] = acc;
                }
            }
            sink(0, da);
            let mut db = vec![0.0; k * p];
            for i in 0..m {
                let grow = &g[i * p..i * p + p];
                for kk in 0..k {
                    let av = ad[i * k + kk];
                    if av == 0.0 {
                        continue;
                    }
                    let drow = &mut db[kk * p..kk * p + p];
                    for j in 0..p {
                        drow[j] += av * grow[j];
                    }
                }
            }
            sink(1, db);
        });
        self.record(&mut res, &[a, b], back);
        Ok(res)
    }

    /// Sum rows of `values` into `num_segments` output rows by id.
    /// Empty segments stay zero. Backward gathers the output cotangent
    /// back through the same ids.
    pub fn segment_sum(
        &self,
        values: &Tensor,
        ids: &[usize],
        num_segments: usize,
    ) -> Result<Tensor> {
        let shape = values.shape();
        if shape.is_empty() || shape[0] != ids.len() {
            return Err(Error::Shape(format!(
                "segment_sum: {} ids for leading dim of {:?}",
                ids.len(),
                shape
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&s| s >= num_segments) {
            return Err(Error::Index(format!(
                "segment id {} out of range 0..{}",
                bad, num_segments
            )));
        }
        let tail: usize = shape[1..].iter().product();
        let vd = Arc::clone(&values.data);
        let mut out = vec![0.0; num_segments * tail];
        for (e, &s) in ids.iter().enumerate() {
            let src = &vd[e * tail..(e + 1) * tail];
            let dst = &mut out[s * tail..(s + 1) * tail];
            for (d, v) in dst.iter_mut().zip(src.iter()) {
                *d += v;
            }
        }
        let mut out_shape = vec![num_segments];
        out_shape.extend_from_slice(&shape[1..]);
        let mut res = Tensor::new(out, &out_shape)?;
        let ids_vec = ids.to_vec();
        let n_rows = ids.len();
        let back: BackFn = Box::new(move |g, sink| {
            let mut dv = vec![0.0; n_rows * tail];
            for (e, &s) in ids_vec.iter().enumerate() {
                dv[e * tail..(e + 1) * tail]
                    .copy_from_slice(&g[s * tail..(s + 1) * tail]);
            }
            sink(0, dv);
        });
        self.record(&mut res, &[values], back);
        Ok(res)
    }

    /// Select rows by index (repeats allowed). Backward scatter-adds,
    /// so repeated indices accumulate gradient.
    pub fn gather_rows(&self, values: &Tensor, idx: &[usize]) -> Result<Tensor> {
        let shape = values.shape();
        if shape.is_empty() {
            return Err(Error::Shape("gather_rows on a scalar".to_string()));
        }
        let rows = shape[0];
        if let Some(&bad) = idx.iter().find(|&&r| r >= rows) {
            return Err(Error::Index(format!(
                "row index {} out of range 0..{}",
                bad, rows
            )));
        }
        let tail: usize = shape[1..].iter().product();
        let vd = Arc::clone(&values.data);
        let mut out = Vec::with_capacity(idx.len() * tail);
        for &r in idx {
            out.extend_from_slice(&vd[r * tail..(r + 1) * tail]);
        }
        let mut out_shape = vec![idx.len()];
        out_shape.extend_from_slice(&shape[1..]);
        let mut res = Tensor::new(out, &out_shape)?;
        let idx_vec = idx.to_vec();
        let back: BackFn = Box::new(move |g, sink| {
            let mut dv = vec![0.0; rows * tail];
            for (e, &r) in idx_vec.iter().enumerate() {
                let src = &g[e * tail..(e + 1) * tail];
                let dst = &mut dv[r * tail..(r + 1) * tail];
                for (d, v) in dst.iter_mut().zip(src.iter()) {
                    *d += v;
                }
            }
            sink(0, dv);
        });
        self.record(&mut res, &[values], back);
        Ok(res)
    }

    fn check_vec3(t: &Tensor, what: &str) -> Result<()> {
        if t.shape().last() != Some(&3) {
            return Err(Error::Shape(format!(
                "{}: trailing dimension must be 3, got {:?}",
                what,
                t.shape()
            )));
        }
        Ok(())
    }

    /// Row-wise cross product over the trailing axis of 3.
    pub fn cross(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::check_vec3(a, "cross")?;
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "cross: shapes {:?} and {:?} differ",
                a.shape(),
                b.shape()
            )));
        }
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let mut out = vec![0.0; ad.len()];
        for i in (0..ad.len()).step_by(3) {
            out[i] = ad[i + 1] * bd[i + 2] - ad[i + 2] * bd[i + 1];
            out[i + 1] = ad[i + 2] * bd[i] - ad[i] * bd[i + 2];
            out[i + 2] = ad[i] * bd[i + 1] - ad[i + 1] * bd[i];
        }
        let mut res = Tensor::new(out, a.shape())?;
        // Triple-product rule: d⟨g, a×b⟩ gives da = b×g and db = g×a.
        let back: BackFn = Box::new(move |g, sink| {
            let mut da = vec![0.0; ad.len()];
            let mut db = vec![0.0; bd.len()];
            for i in (0..ad.len()).step_by(3) {
                da[i] = bd[i + 1] * g[i + 2] - bd[i + 2] * g[i + 1];
                da[i + 1] = bd[i + 2] * g[i] - bd[i] * g[i + 2];
                da[i + 2] = bd[i] * g[i + 1] - bd[i + 1] * g[i];
                db[i] = g[i + 1] * ad[i + 2] - g[i + 2] * ad[i + 1];
                db[i + 1] = g[i + 2] * ad[i] - g[i] * ad[i + 2];
                db[i + 2] = g[i] * ad[i + 1] - g[i + 1] * ad[i];
            }
            sink(0, da);
            sink(1, db);
        });
        self.record(&mut res, &[a, b], back);
        Ok(res)
    }

    /// Row-wise dot product; the trailing axis of 3 is contracted away.
    pub fn dot3(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::check_vec3(a, "dot3")?;
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "dot3: shapes {:?} and {:?} differ",
                a.shape(),
                b.shape()
            )));
        }
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let rows = ad.len() / 3;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let i = r * 3;
            out.push(ad[i] * bd[i] + ad[i + 1] * bd[i + 1] + ad[i + 2] * bd[i + 2]);
        }
        let out_shape = &a.shape()[..a.shape().len() - 1];
        let mut res = Tensor::new(out, out_shape)?;
        let back: BackFn = Box::new(move |g, sink| {
            let mut da = vec![0.0; ad.len()];
            let mut db = vec![0.0; bd.len()];
            for (r, &gr) in g.iter().enumerate() {
                let i = r * 3;
                for k in 0..3 {
                    da[i + k] = gr * bd[i + k];
                    db[i + k] = gr * ad[i + k];
                }
            }
            sink(0, da);
            sink(1, db);
        });
        self.record(&mut res, &[a, b], back);
        Ok(res)
    }

    /// Row-wise Euclidean norm of the trailing axis of 3. The forward
    /// value is exact; the backward rule divides by
    /// `sqrt(‖v‖² + NORM_GRAD_EPS)` so zero vectors do not produce NaN.
    pub fn norm3(&self, a: &Tensor) -> Result<Tensor> {
        Self::check_vec3(a, "norm3")?;
        let ad = Arc::clone(&a.data);
        let rows = ad.len() / 3;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let i = r * 3;
            out.push((ad[i] * ad[i] + ad[i + 1] * ad[i + 1] + ad[i + 2] * ad[i + 2]).sqrt());
        }
        let out_shape = &a.shape()[..a.shape().len() - 1];
        let mut res = Tensor::new(out, out_shape)?;
        let back: BackFn = Box::new(move |g, sink| {
            let mut da = vec![0.0; ad.len()];
            for (r, &gr) in g.iter().enumerate() {
                let i = r * 3;
                let sq = ad[i] * ad[i] + ad[i + 1] * ad[i + 1] + ad[i + 2] * ad[i + 2];
                let inv = 1.0 / (sq + super::NORM_GRAD_EPS).sqrt();
                for k in 0..3 {
                    da[i + k] = gr * ad[i + k] * inv;
                }
            }
            sink(0, da);
        });
        self.record(&mut res, &[a], back);
        Ok(res)
    }

    /// Reduce every element to one scalar.
    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        let ad = Arc::clone(&a.data);
        let total: f64 = ad.iter().sum();
        let mut res = Tensor::new(vec![total], &[])?;
        let n = ad.len();
        let back: BackFn = Box::new(move |g, sink| {
            sink(0, vec![g[0]; n]);
        });
        self.record(&mut res, &[a], back);
        Ok(res)
    }

    /// Stack tensors along the leading axis (tails must match).
    pub fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat_rows of nothing".to_string()))?;
        let tail_shape = &first.shape()[1..];
        let tail: usize = tail_shape.iter().product();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape().len() != first.shape().len() || &p.shape()[1..] != tail_shape {
                return Err(Error::Shape(format!(
                    "concat_rows: trailing shape {:?} does not match {:?}",
                    &p.shape()[1..],
                    tail_shape
                )));
            }
            rows += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut out_shape = vec![rows];
        out_shape.extend_from_slice(tail_shape);
        let mut res = Tensor::new(data, &out_shape)?;
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[0] * tail).collect();
        let back: BackFn = Box::new(move |g, sink| {
            let mut start = 0;
            for (slot, &len) in sizes.iter().enumerate() {
                sink(slot, g[start..start + len].to_vec());
                start += len;
            }
        });
        let parents: Vec<&Tensor> = parts.to_vec();
        self.record(&mut res, &parents, back);
        Ok(res)
    }

    /// Concatenate two rank-2 tensors along the column axis.
    pub fn concat_cols(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Shape(format!(
                "concat_cols: shapes {:?} and {:?}",
                sa, sb
            )));
        }
        let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (Arc::clone(&a.data), Arc::clone(&b.data));
        let mut out = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            out.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        let mut res = Tensor::new(out, &[rows, ca + cb])?;
        let back: BackFn = Box::new(move |g, sink| {
            let mut da = vec![0.0; rows * ca];
            let mut db = vec![0.0; rows * cb];
            let w = ca + cb;
            for r in 0..rows {
                da[r * ca..(r + 1) * ca].copy_from_slice(&g[r * w..r * w + ca]);
                db[r * cb..(r + 1) * cb].copy_from_slice(&g[r * w + ca..(r + 1) * w]);
            }
            sink(0, da);
            sink(1, db);
        });
        self.record(&mut res, &[a, b], back);
        Ok(res)
    }

    /// 2-D transpose. Backward transposes the cotangent back.
    pub fn transpose2(&self, a: &Tensor) -> Result<Tensor> {
        let s = a.shape();
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose2 on shape {:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let ad = Arc::clone(&a.data);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ad[i * c + j];
            }
        }
        let mut res = Tensor::new(out, &[c, r])?;
        let back: BackFn = Box::new(move |g, sink| {
            let mut da = vec![0.0; r * c];
            for j in 0..c {
                for i in 0..r {
                    da[i * c + j] = g[j * r + i];
                }
            }
            sink(0, da);
        });
        self.record(&mut res, &[a], back);
        Ok(res)
    }

    /// Reinterpret the flat data under a new shape of equal size.
    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != a.len() {
            return Err(Error::Shape(format!(
                "reshape: {:?} ({} elements) to {:?} ({})",
                a.shape(),
                a.len(),
                shape,
                numel
            )));
        }
        let mut res = Tensor::new(a.data().to_vec(), shape)?;
        let back: BackFn = Box::new(move |g, sink| {
            sink(0, g.to_vec());
        });
        self.record(&mut res, &[a], back);
        Ok(res)
    }

    /// Channel-wise outer product `out[r,f,:] = w[r,f] · e[r,:]` used for
    /// the geometric-basis term of the decoder convolution.
    pub fn outer3(&self, w: &Tensor, e: &Tensor) -> Result<Tensor> {
        let (sw, se) = (w.shape(), e.shape());
        if sw.len() != 2 || se.len() != 2 || se[1] != 3 || sw[0] != se[0] {
            return Err(Error::Shape(format!(
                "outer3: want [R,F] and [R,3], got {:?} and {:?}",
                sw, se
            )));
        }
        let (rows, f) = (sw[0], sw[1]);
        let (wd, ed) = (Arc::clone(&w.data), Arc::clone(&e.data));
        let mut out = Vec::with_capacity(rows * f * 3);
        for r in 0..rows {
            let ev = &ed[r * 3..r * 3 + 3];
            for c in 0..f {
                let s = wd[r * f + c];
                out.extend_from_slice(&[s * ev[0], s * ev[1], s * ev[2]]);
            }
        }
        let mut res = Tensor::new(out, &[rows, f, 3])?;
        let back: BackFn = Box::new(move |g, sink| {
            let mut dw = vec![0.0; rows * f];
            let mut de = vec![0.0; rows * 3];
            for r in 0..rows {
                let ev = &ed[r * 3..r * 3 + 3];
                for c in 0..f {
                    let base = (r * f + c) * 3;
                    let gv = &g[base..base + 3];
                    dw[r * f + c] = gv[0] * ev[0] + gv[1] * ev[1] + gv[2] * ev[2];
                    let s = wd[r * f + c];
                    de[r * 3] += s * gv[0];
                    de[r * 3 + 1] += s * gv[1];
                    de[r * 3 + 2] += s * gv[2];
                }
            }
            sink(0, dw);
            sink(1, de);
        });
        self.record(&mut res, &[w, e], back);
        Ok(res)
    }

    /// Mix vector channels per node: `out[n,f,:] = Σ_g w[f,g] · v[n,g,:]`.
    pub fn channel_mix(&self, w: &Tensor, v: &Tensor) -> Result<Tensor> {
        let (sw, sv) = (w.shape(), v.shape());
        if sw.len() != 2 || sv.len() != 3 || sv[2] != 3 || sw[1] != sv[1] {
            return Err(Error::Shape(format!(
                "channel_mix: want [F,G] and [N,G,3], got {:?} and {:?}",
                sw, sv
            )));
        }
        let (fdim, gdim, nodes) = (sw[0], sw[1], sv[0]);
        let (wd, vd) = (Arc::clone(&w.data), Arc::clone(&v.data));
        let mut out = vec![0.0; nodes * fdim * 3];
        for n in 0..nodes {
            for fi in 0..fdim {
                let mut acc = [0.0; 3];
                for gi in 0..gdim {
                    let s = wd[fi * gdim + gi];
                    if s == 0.0 {
                        continue;
                    }
                    let vv = &vd[(n * gdim + gi) * 3..(n * gdim + gi) * 3 + 3];
                    acc[0] += s * vv[0];
                    acc[1] += s * vv[1];
                    acc[2] += s * vv[2];
                }
                out[(n * fdim + fi) * 3..(n * fdim + fi) * 3 + 3].copy_from_slice(&acc);
            }
        }
        let mut res = Tensor::new(out, &[nodes, fdim, 3])?;
        let back: BackFn = Box::new(move |g, sink| {
            let mut dw = vec![0.0; fdim * gdim];
            let mut dv = vec![0.0; nodes * gdim * 3];
            for n in 0..nodes {
                for fi in 0..fdim {
                    let gv = &g[(n * fdim + fi) * 3..(n * fdim + fi) * 3 + 3];
                    for gi in 0..gdim {
                        let vv = &vd[(n * gdim + gi) * 3..(n * gdim + gi) * 3 + 3];
                        dw[fi * gdim + gi] +=
                            gv[0] * vv[0] + gv[1] * vv[1] + gv[2] * vv[2];
                        let s = wd[fi * gdim + gi];
                        let dvv = &mut dv[(n * gdim + gi) * 3..(n * gdim + gi) * 3 + 3];
                        dvv[0] += s * gv[0];
                        dvv[1] += s * gv[1];
                        dvv[2] += s * gv[2];
                    }
                }
            }
            sink(0, dw);
            sink(1, dv);
        });
        self.record(&mut res, &[w, v], back);
        Ok(res)
    }
}
