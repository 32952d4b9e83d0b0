//! Differentiable tensor operations.
//!
//! All loop orders are fixed so single-threaded runs are bit-reproducible.
//! Matrix kernels use the axpy (ikj) form, which the compiler vectorizes
//! without reassociating any floating-point reduction.

use crate::error::{Error, Result};
use crate::numerics::tensor::{Element, Tensor};

/// Row norms at or below this floor are treated as degenerate embeddings.
pub const NORM_FLOOR: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Raw kernels
// ---------------------------------------------------------------------------

/// c += a(m×k) · b(k×n)
pub(crate) fn mm_nn<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aik * bv;
            }
        }
    }
}

/// c += aᵀ(k×m) · b(k×n), i.e. c[i,j] += Σ_kk a[kk,i]·b[kk,j]
pub(crate) fn mm_tn<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for kk in 0..k {
        let arow = &a[kk * m..(kk + 1) * m];
        let brow = &b[kk * n..(kk + 1) * n];
        for (i, &aki) in arow.iter().enumerate() {
            if aki == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + aki * bv;
            }
        }
    }
}

/// c += a(m×k) · bᵀ where b is (n×k): transposes `b` then runs `mm_nn`.
pub(crate) fn mm_nt<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(b.len(), n * k);
    let mut bt = vec![T::zero(); k * n];
    for j in 0..n {
        for kk in 0..k {
            bt[kk * n + j] = b[j * k + kk];
        }
    }
    mm_nn(a, &bt, c, m, k, n);
}

fn dims2<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dimension(format!("{what}: expected 2-d tensor, got {s:?}"))),
    }
}

fn dims4<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [b, c, h, w] => Ok((*b, *c, *h, *w)),
        s => Err(Error::Dimension(format!("{what}: expected 4-d tensor, got {s:?}"))),
    }
}

fn same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// a(M×K) · b(K×N).
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, ka) = dims2(a, "matmul lhs")?;
    let (kb, n) = dims2(b, "matmul rhs")?;
    if ka != kb {
        return Err(Error::Dimension(format!(
            "matmul: inner dimensions {ka} and {kb} differ"
        )));
    }
    let mut out = vec![T::zero(); m * n];
    mm_nn(&a.data(), &b.data(), &mut out, m, ka, n);
    Tensor::from_op(
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _out, parents| {
            let (a, b) = (&parents[0], &parents[1]);
            if a.tracked() {
                a.accumulate_grad_with(m * ka, |da| mm_nt(g, &b.data(), da, m, n, ka));
            }
            if b.tracked() {
                b.accumulate_grad_with(ka * n, |db| mm_tn(&a.data(), g, db, ka, m, n));
            }
        }),
    )
}

/// a(M×K) · b(N×K)ᵀ → M×N. Rowwise inner products of `a` against `b`.
pub fn matmul_nt<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, ka) = dims2(a, "matmul_nt lhs")?;
    let (n, kb) = dims2(b, "matmul_nt rhs")?;
    if ka != kb {
        return Err(Error::Dimension(format!(
            "matmul_nt: inner dimensions {ka} and {kb} differ"
        )));
    }
    let mut out = vec![T::zero(); m * n];
    mm_nt(&a.data(), &b.data(), &mut out, m, ka, n);
    Tensor::from_op(
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _out, parents| {
            let (a, b) = (&parents[0], &parents[1]);
            if a.tracked() {
                a.accumulate_grad_with(m * ka, |da| mm_nn(g, &b.data(), da, m, n, ka));
            }
            if b.tracked() {
                b.accumulate_grad_with(n * ka, |db| mm_tn(g, &a.data(), db, n, m, ka));
            }
        }),
    )
}

// ---------------------------------------------------------------------------
// Elementwise and affine
// ---------------------------------------------------------------------------

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "add")?;
    let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _out, parents| {
            for p in parents {
                if p.tracked() {
                    p.accumulate_grad(g);
                }
            }
        }),
    )
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "sub")?;
    let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x - y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _out, parents| {
            if parents[0].tracked() {
                parents[0].accumulate_grad(g);
            }
            if parents[1].tracked() {
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                parents[1].accumulate_grad(&neg);
            }
        }),
    )
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "mul")?;
    let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _out, parents| {
            let (a, b) = (&parents[0], &parents[1]);
            if a.tracked() {
                let da: Vec<T> = g.iter().zip(b.data().iter()).map(|(&gv, &bv)| gv * bv).collect();
                a.accumulate_grad(&da);
            }
            if b.tracked() {
                let db: Vec<T> = g.iter().zip(a.data().iter()).map(|(&gv, &av)| gv * av).collect();
                b.accumulate_grad(&db);
            }
        }),
    )
}

/// Multiplication by a compile-time constant.
pub fn scale<T: Element>(a: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    let c = T::of(factor);
    let out: Vec<T> = a.data().iter().map(|&x| x * c).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |g, _out, parents| {
            if parents[0].tracked() {
                let da: Vec<T> = g.iter().map(|&v| v * c).collect();
                parents[0].accumulate_grad(&da);
            }
        }),
    )
}

/// Rectified linear unit; the gradient at exactly 0 is 0.
pub fn relu<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let z = T::zero();
    let out: Vec<T> = a.data().iter().map(|&x| if x > z { x } else { z }).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(move |g, _out, parents| {
            let p = &parents[0];
            if p.tracked() {
                let da: Vec<T> = g
                    .iter()
                    .zip(p.data().iter())
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                p.accumulate_grad(&da);
            }
        }),
    )
}

pub fn exp<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let out: Vec<T> = a.data().iter().map(|&x| x.exp()).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(|g, out, parents| {
            if parents[0].tracked() {
                let da: Vec<T> = g.iter().zip(out.iter()).map(|(&gv, &y)| gv * y).collect();
                parents[0].accumulate_grad(&da);
            }
        }),
    )
}

/// Natural logarithm; inputs must be strictly positive.
pub fn log<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.data().iter().any(|&x| x <= T::zero()) {
        return Err(Error::Domain("log: nonpositive input".to_string()));
    }
    let out: Vec<T> = a.data().iter().map(|&x| x.ln()).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        Box::new(|g, _out, parents| {
            let p = &parents[0];
            if p.tracked() {
                let da: Vec<T> = g.iter().zip(p.data().iter()).map(|(&gv, &x)| gv / x).collect();
                p.accumulate_grad(&da);
            }
        }),
    )
}

/// x(N×C) + bias(C) broadcast over rows.
pub fn add_bias_row<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = dims2(x, "add_bias_row")?;
    if bias.shape() != [c] {
        return Err(Error::Dimension(format!(
            "add_bias_row: bias shape {:?} does not match row width {c}",
            bias.shape()
        )));
    }
    let bd = bias.data_vec();
    let out: Vec<T> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + bd[i % c])
        .collect();
    Tensor::from_op(
        vec![n, c],
        out,
        vec![x.clone(), bias.clone()],
        Box::new(move |g, _out, parents| {
            if parents[0].tracked() {
                parents[0].accumulate_grad(g);
            }
            if parents[1].tracked() {
                parents[1].accumulate_grad_with(c, |db| {
                    for row in 0..n {
                        for j in 0..c {
                            db[j] = db[j] + g[row * c + j];
                        }
                    }
                });
            }
        }),
    )
}

/// x(B×F×H×W) + bias(F) broadcast over batch and spatial positions.
pub fn add_channel_bias<T: Element>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, f, h, w) = dims4(x, "add_channel_bias")?;
    if bias.shape() != [f] {
        return Err(Error::Dimension(format!(
            "add_channel_bias: bias shape {:?} does not match {f} channels",
            bias.shape()
        )));
    }
    let hw = h * w;
    let bd = bias.data_vec();
    let xd = x.data();
    let mut out = Vec::with_capacity(xd.len());
    for bi in 0..b {
        for fi in 0..f {
            let base = (bi * f + fi) * hw;
            for i in 0..hw {
                out.push(xd[base + i] + bd[fi]);
            }
        }
    }
    drop(xd);
    Tensor::from_op(
        vec![b, f, h, w],
        out,
        vec![x.clone(), bias.clone()],
        Box::new(move |g, _out, parents| {
            if parents[0].tracked() {
                parents[0].accumulate_grad(g);
            }
            if parents[1].tracked() {
                parents[1].accumulate_grad_with(f, |db| {
                    for bi in 0..b {
                        for fi in 0..f {
                            let base = (bi * f + fi) * hw;
                            let mut s = T::zero();
                            for i in 0..hw {
                                s = s + g[base + i];
                            }
                            db[fi] = db[fi] + s;
                        }
                    }
                });
            }
        }),
    )
}

// ---------------------------------------------------------------------------
// Reductions and selections
// ---------------------------------------------------------------------------

pub fn sum_all<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let mut s = T::zero();
    for &v in a.data().iter() {
        s = s + v;
    }
    let n = a.numel();
    Tensor::from_op(
        vec![],
        vec![s],
        vec![a.clone()],
        Box::new(move |g, _out, parents| {
            if parents[0].tracked() {
                parents[0].accumulate_grad(&vec![g[0]; n]);
            }
        }),
    )
}

pub fn mean_all<T: Element>(a: &Tensor<T>) -> Result<Tensor<T>> {
    scale(&sum_all(a)?, 1.0 / a.numel() as f64)
}

/// Rowwise inner products of two N×d tensors → N.
pub fn rows_dot<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "rows_dot")?;
    let (n, d) = dims2(a, "rows_dot")?;
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = T::zero();
        for j in 0..d {
            s = s + ad[i * d + j] * bd[i * d + j];
        }
        out.push(s);
    }
    drop(ad);
    drop(bd);
    Tensor::from_op(
        vec![n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _out, parents| {
            let (a, b) = (&parents[0], &parents[1]);
            if a.tracked() {
                a.accumulate_grad_with(n * d, |da| {
                    let bd = b.data();
                    for i in 0..n {
                        for j in 0..d {
                            da[i * d + j] = da[i * d + j] + g[i] * bd[i * d + j];
                        }
                    }
                });
            }
            if b.tracked() {
                b.accumulate_grad_with(n * d, |db| {
                    let ad = a.data();
                    for i in 0..n {
                        for j in 0..d {
                            db[i * d + j] = db[i * d + j] + g[i] * ad[i * d + j];
                        }
                    }
                });
            }
        }),
    )
}

/// Picks x[i, idx[i]] for each row → N.
pub fn gather_cols<T: Element>(x: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let (n, c) = dims2(x, "gather_cols")?;
    if idx.len() != n {
        return Err(Error::Dimension(format!(
            "gather_cols: {} indices for {n} rows",
            idx.len()
        )));
    }
    if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
        return Err(Error::Data(format!("gather_cols: index {bad} out of range 0..{c}")));
    }
    let xd = x.data();
    let out: Vec<T> = idx.iter().enumerate().map(|(i, &j)| xd[i * c + j]).collect();
    drop(xd);
    let idx_owned = idx.to_vec();
    Tensor::from_op(
        vec![n],
        out,
        vec![x.clone()],
        Box::new(move |g, _out, parents| {
            if parents[0].tracked() {
                parents[0].accumulate_grad_with(n * c, |dx| {
                    for (i, &j) in idx_owned.iter().enumerate() {
                        dx[i * c + j] = dx[i * c + j] + g[i];
                    }
                });
            }
        }),
    )
}

/// Column concatenation of 2-d tensors sharing a row count.
pub fn concat_cols<T: Element>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::Dimension("concat_cols: no inputs".to_string()));
    }
    let (n, _) = dims2(&parts[0], "concat_cols")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (rn, w) = dims2(p, "concat_cols")?;
        if rn != n {
            return Err(Error::Dimension(format!(
                "concat_cols: row counts {n} and {rn} differ"
            )));
        }
        widths.push(w);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for i in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            let pd = p.data();
            out.extend_from_slice(&pd[i * w..(i + 1) * w]);
        }
    }
    let widths_b = widths.clone();
    Tensor::from_op(
        vec![n, total],
        out,
        parts.to_vec(),
        Box::new(move |g, _out, parents| {
            let mut offset = 0usize;
            for (p, &w) in parents.iter().zip(&widths_b) {
                if p.tracked() {
                    p.accumulate_grad_with(n * w, |dp| {
                        for i in 0..n {
                            for j in 0..w {
                                dp[i * w + j] = dp[i * w + j] + g[i * total + offset + j];
                            }
                        }
                    });
                }
                offset += w;
            }
        }),
    )
}

/// Copies into a new shape with the same element count.
pub fn reshape<T: Element>(x: &Tensor<T>, new_shape: &[usize]) -> Result<Tensor<T>> {
    let numel: usize = new_shape.iter().product();
    if numel != x.numel() {
        return Err(Error::Dimension(format!(
            "reshape: {:?} -> {:?} changes element count",
            x.shape(),
            new_shape
        )));
    }
    Tensor::from_op(
        new_shape.to_vec(),
        x.data_vec(),
        vec![x.clone()],
        Box::new(|g, _out, parents| {
            if parents[0].tracked() {
                parents[0].accumulate_grad(g);
            }
        }),
    )
}

// ---------------------------------------------------------------------------
// Normalization and log-sum-exp
// ---------------------------------------------------------------------------

/// Scales each row of x(N×d) to unit Euclidean norm.
pub fn l2_normalize_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = dims2(x, "l2_normalize_rows")?;
    let floor = T::of(NORM_FLOOR);
    let xd = x.data();
    let mut out = vec![T::zero(); n * d];
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = &xd[i * d..(i + 1) * d];
        let mut sq = T::zero();
        for &v in row {
            sq = sq + v * v;
        }
        let norm = sq.sqrt();
        if norm <= floor {
            return Err(Error::DegenerateEmbedding(format!(
                "row {i} has norm {norm} at or below the floor {NORM_FLOOR}"
            )));
        }
        for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
            *o = v / norm;
        }
        norms.push(norm);
    }
    drop(xd);
    Tensor::from_op(
        vec![n, d],
        out,
        vec![x.clone()],
        Box::new(move |g, out, parents| {
            let p = &parents[0];
            if p.tracked() {
                // dx_i = (g_i - y_i <y_i, g_i>) / ||x_i||
                p.accumulate_grad_with(n * d, |dx| {
                    for i in 0..n {
                        let y = &out[i * d..(i + 1) * d];
                        let gi = &g[i * d..(i + 1) * d];
                        let mut dot = T::zero();
                        for (yv, gv) in y.iter().zip(gi) {
                            dot = dot + *yv * *gv;
                        }
                        for j in 0..d {
                            dx[i * d + j] =
                                dx[i * d + j] + (gi[j] - y[j] * dot) / norms[i];
                        }
                    }
                });
            }
        }),
    )
}

/// log Σ_j exp(x_ij) per row, computed with a max shift.
pub fn log_sum_exp_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, m) = dims2(x, "log_sum_exp_rows")?;
    masked_log_sum_exp_rows(x, &vec![true; m])
}

/// Row log-sum-exp over the columns where `col_mask[i*m + j]` (or, when the
/// mask has exactly `m` entries, `col_mask[j]`) is true. Each row must keep
/// at least one column.
pub fn masked_log_sum_exp_rows<T: Element>(x: &Tensor<T>, col_mask: &[bool]) -> Result<Tensor<T>> {
    let (n, m) = dims2(x, "masked_log_sum_exp_rows")?;
    let per_row = if col_mask.len() == m {
        false
    } else if col_mask.len() == n * m {
        true
    } else {
        return Err(Error::Dimension(format!(
            "masked_log_sum_exp_rows: mask length {} matches neither {m} nor {}",
            col_mask.len(),
            n * m
        )));
    };
    let mask_at =
        move |i: usize, j: usize, mask: &[bool]| if per_row { mask[i * m + j] } else { mask[j] };

    let xd = x.data();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut max: Option<T> = None;
        for j in 0..m {
            if mask_at(i, j, col_mask) {
                let v = xd[i * m + j];
                max = Some(match max {
                    Some(c) if c >= v => c,
                    _ => v,
                });
            }
        }
        let max = max.ok_or_else(|| {
            Error::Domain(format!("masked_log_sum_exp_rows: row {i} has no active column"))
        })?;
        let mut s = T::zero();
        for j in 0..m {
            if mask_at(i, j, col_mask) {
                s = s + (xd[i * m + j] - max).exp();
            }
        }
        out.push(max + s.ln());
    }
    drop(xd);
    let mask_owned = col_mask.to_vec();
    Tensor::from_op(
        vec![n],
        out,
        vec![x.clone()],
        Box::new(move |g, out, parents| {
            let p = &parents[0];
            if p.tracked() {
                p.accumulate_grad_with(n * m, |dx| {
                    let xd = p.data();
                    for i in 0..n {
                        for j in 0..m {
                            if mask_at(i, j, &mask_owned) {
                                let w = (xd[i * m + j] - out[i]).exp();
                                dx[i * m + j] = dx[i * m + j] + g[i] * w;
                            }
                        }
                    }
                });
            }
        }),
    )
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

fn im2col<T: Element>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    // cols is (c*k*k) × (oh*ow)
    let ohw = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ohw;
                for oy in 0..oh {
                    let iy = oy + ky;
                    let dst = row + oy * ow;
                    if iy < pad || iy >= h + pad {
                        for v in &mut cols[dst..dst + ow] {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let iy = iy - pad;
                    for ox in 0..ow {
                        let ix = ox + kx;
                        cols[dst + ox] = if ix < pad || ix >= w + pad {
                            T::zero()
                        } else {
                            img[(ci * h + iy) * w + (ix - pad)]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    img: &mut [T],
) {
    let ohw = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * ohw;
                for oy in 0..oh {
                    let iy = oy + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    for ox in 0..ow {
                        let ix = ox + kx;
                        if ix < pad || ix >= w + pad {
                            continue;
                        }
                        let dst = (ci * h + iy) * w + (ix - pad);
                        img[dst] = img[dst] + cols[row + oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation of x(B×C×H×W) with w(F×C×k×k) and zero padding.
pub fn conv2d<T: Element>(x: &Tensor<T>, weight: &Tensor<T>, padding: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x, "conv2d input")?;
    let (f, wc, kh, kw) = dims4(weight, "conv2d kernel")?;
    if kh != kw {
        return Err(Error::Dimension(format!("conv2d: kernel {kh}×{kw} is not square")));
    }
    let k = kh;
    if k % 2 == 0 {
        return Err(Error::Domain(format!("conv2d: kernel size {k} must be odd")));
    }
    if wc != c {
        return Err(Error::Dimension(format!(
            "conv2d: input has {c} channels, kernel expects {wc}"
        )));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::Dimension(format!(
            "conv2d: kernel {k} larger than padded input {h}×{w} (pad {padding})"
        )));
    }
    let oh = h + 2 * padding - k + 1;
    let ow = w + 2 * padding - k + 1;
    let ckk = c * k * k;
    let ohw = oh * ow;

    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![T::zero(); b * f * ohw];
    let mut cols = vec![T::zero(); ckk * ohw];
    for bi in 0..b {
        let img = &xd[bi * c * h * w..(bi + 1) * c * h * w];
        im2col(img, c, h, w, k, padding, oh, ow, &mut cols);
        mm_nn(&wd, &cols, &mut out[bi * f * ohw..(bi + 1) * f * ohw], f, ckk, ohw);
    }
    drop(xd);
    drop(wd);

    Tensor::from_op(
        vec![b, f, oh, ow],
        out,
        vec![x.clone(), weight.clone()],
        Box::new(move |g, _out, parents| {
            let (x, weight) = (&parents[0], &parents[1]);
            let xd = x.data();
            let mut cols = vec![T::zero(); ckk * ohw];
            if weight.tracked() {
                weight.accumulate_grad_with(f * ckk, |dw| {
                    for bi in 0..b {
                        let img = &xd[bi * c * h * w..(bi + 1) * c * h * w];
                        im2col(img, c, h, w, k, padding, oh, ow, &mut cols);
                        mm_nt(&g[bi * f * ohw..(bi + 1) * f * ohw], &cols, dw, f, ohw, ckk);
                    }
                });
            }
            if x.tracked() {
                let wd = weight.data();
                x.accumulate_grad_with(b * c * h * w, |dx| {
                    let mut dcols = vec![T::zero(); ckk * ohw];
                    for bi in 0..b {
                        for v in dcols.iter_mut() {
                            *v = T::zero();
                        }
                        mm_tn(&wd, &g[bi * f * ohw..(bi + 1) * f * ohw], &mut dcols, ckk, f, ohw);
                        col2im_add(
                            &dcols,
                            c,
                            h,
                            w,
                            k,
                            padding,
                            oh,
                            ow,
                            &mut dx[bi * c * h * w..(bi + 1) * c * h * w],
                        );
                    }
                });
            }
        }),
    )
}

/// 2×2 average pooling with stride 2; spatial dimensions must be even.
pub fn avg_pool2d<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x, "avg_pool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "avg_pool2d: spatial dims {h}×{w} must be even"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for bc in 0..b * c {
        let plane = &xd[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, xcol) = (oy * 2, ox * 2);
                let s = plane[y * w + xcol]
                    + plane[y * w + xcol + 1]
                    + plane[(y + 1) * w + xcol]
                    + plane[(y + 1) * w + xcol + 1];
                out.push(s * quarter);
            }
        }
    }
    drop(xd);
    Tensor::from_op(
        vec![b, c, oh, ow],
        out,
        vec![x.clone()],
        Box::new(move |g, _out, parents| {
            let p = &parents[0];
            if p.tracked() {
                p.accumulate_grad_with(b * c * h * w, |dx| {
                    for bc in 0..b * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(bc * oh + oy) * ow + ox] * quarter;
                                let (y, xcol) = (oy * 2, ox * 2);
                                let base = bc * h * w;
                                dx[base + y * w + xcol] = dx[base + y * w + xcol] + gv;
                                dx[base + y * w + xcol + 1] = dx[base + y * w + xcol + 1] + gv;
                                dx[base + (y + 1) * w + xcol] = dx[base + (y + 1) * w + xcol] + gv;
                                dx[base + (y + 1) * w + xcol + 1] =
                                    dx[base + (y + 1) * w + xcol + 1] + gv;
                            }
                        }
                    }
                });
            }
        }),
    )
}

/// Mean over all spatial positions: B×C×H×W → B×C.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x, "global_avg_pool")?;
    let hw = h * w;
    let inv = T::of(1.0 / hw as f64);
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c);
    for bc in 0..b * c {
        let mut s = T::zero();
        for &v in &xd[bc * hw..(bc + 1) * hw] {
            s = s + v;
        }
        out.push(s * inv);
    }
    drop(xd);
    Tensor::from_op(
        vec![b, c],
        out,
        vec![x.clone()],
        Box::new(move |g, _out, parents| {
            let p = &parents[0];
            if p.tracked() {
                p.accumulate_grad_with(b * c * hw, |dx| {
                    for bc in 0..b * c {
                        let gv = g[bc] * inv;
                        for v in &mut dx[bc * hw..(bc + 1) * hw] {
                            *v = *v + gv;
                        }
                    }
                });
            }
        }),
    )
}

/// Mean softmax cross-entropy of logits(B×C) against integer labels.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, _) = dims2(logits, "cross_entropy")?;
    if labels.len() != n {
        return Err(Error::Data(format!(
            "cross_entropy: {} labels for {n} rows",
            labels.len()
        )));
    }
    let lse = log_sum_exp_rows(logits)?;
    let picked = gather_cols(logits, labels)?;
    mean_all(&sub(&lse, &picked)?)
}
