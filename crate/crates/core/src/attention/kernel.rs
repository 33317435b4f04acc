//! Multi-head scaled dot-product attention.
//!
//! [`attend`] walks only the allowed key spans of each query row, so its
//! cost is proportional to the number of allowed pairs. [`attend_dense`]
//! materialises the full score matrix and masks it with the additive
//! sentinel; it is the reference the sparse kernel is checked against.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{dot, masked_softmax_rows, AllowMatrix, Element, Storage, Tensor};

/// Work (pair·dim) below which the kernel stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

struct Dims {
    queries: usize,
    keys: usize,
    model: usize,
    heads: usize,
}

fn check(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&dyn AllowMatrix>, heads: usize) -> Result<Dims> {
    let (lq, d) = q.dims2()?;
    let (lk, dk) = k.dims2()?;
    if dk != d {
        return Err(Error::shape("attend(q,k)", q.shape(), k.shape()));
    }
    if v.shape() != k.shape() {
        return Err(Error::shape("attend(k,v)", k.shape(), v.shape()));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim(format!("model dim {d} not divisible by {heads} heads")));
    }
    if let Some(m) = mask {
        if m.query_len() != lq || m.key_len() != lk {
            return Err(Error::shape("attend(mask)", &[lq, lk], &[m.query_len(), m.key_len()]));
        }
    }
    Ok(Dims {
        queries: lq,
        keys: lk,
        model: d,
        heads,
    })
}

/// Per-head scaled dot-product attention; output has the shape of `q`.
///
/// `mask == None` lets every query see every key.
pub fn attend(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&dyn AllowMatrix>, heads: usize) -> Result<Tensor> {
    let dims = check(q, k, v, mask, heads)?;
    let spans = |i: usize| -> Vec<Range<usize>> {
        match mask {
            Some(m) => m.key_spans(i),
            None if dims.keys > 0 => vec![0..dims.keys],
            None => Vec::new(),
        }
    };
    let data = match (q.storage(), k.storage(), v.storage()) {
        (Storage::F32(a), Storage::F32(b), Storage::F32(c)) => Storage::F32(sparse_kernel(a, b, c, &dims, &spans)?),
        (Storage::F64(a), Storage::F64(b), Storage::F64(c)) => Storage::F64(sparse_kernel(a, b, c, &dims, &spans)?),
        _ => return Err(Error::PrecisionMismatch("attend")),
    };
    match data {
        Storage::F32(v) => Tensor::from_vec(vec![dims.queries, dims.model], v),
        Storage::F64(v) => Tensor::from_vec(vec![dims.queries, dims.model], v),
    }
}

/// Query rows per tile. Rows of a tile that share key spans stream each
/// key/value row once; every row still reduces over keys in ascending order.
const TILE: usize = 16;

fn sparse_kernel<T: Element>(
    q: &[T],
    k: &[T],
    v: &[T],
    dims: &Dims,
    spans: &(dyn Fn(usize) -> Vec<Range<usize>> + Sync),
) -> Result<Vec<T>> {
    let d = dims.model;
    let dh = d / dims.heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::zero(); dims.queries * d];

    // rows first..first+n share `spans`; `o` holds their outputs
    let group = |first: usize, spans: &[Range<usize>], o: &mut [T]| -> Result<()> {
        let n = o.len() / d;
        let width: usize = spans.iter().map(|s| s.len()).sum();
        if width == 0 {
            return Err(Error::Structural(format!("attention row {first} has no allowed keys")));
        }
        let mut probs = vec![T::zero(); n * width];
        for h in 0..dims.heads {
            let cols = h * dh..(h + 1) * dh;
            let mut idx = 0;
            for span in spans {
                for j in span.clone() {
                    let kr = &k[j * d + cols.start..j * d + cols.end];
                    for r in 0..n {
                        let i = first + r;
                        probs[r * width + idx] = dot(&q[i * d + cols.start..i * d + cols.end], kr) * scale;
                    }
                    idx += 1;
                }
            }
            for p in probs.chunks_mut(width) {
                let max = p.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for x in p.iter_mut() {
                    *x = (*x - max).exp();
                    sum = sum + *x;
                }
                for x in p.iter_mut() {
                    *x = *x / sum;
                }
            }
            let mut idx = 0;
            for span in spans {
                for j in span.clone() {
                    let vr = &v[j * d + cols.start..j * d + cols.end];
                    for r in 0..n {
                        let p = probs[r * width + idx];
                        for (a, &x) in o[r * d + cols.start..r * d + cols.end].iter_mut().zip(vr) {
                            *a = *a + p * x;
                        }
                    }
                    idx += 1;
                }
            }
        }
        Ok(())
    };

    let tile = |(t, o): (usize, &mut [T])| -> Result<()> {
        let first = t * TILE;
        let rows = o.len() / d;
        let mut start = 0;
        while start < rows {
            let s = spans(first + start);
            let mut end = start + 1;
            while end < rows && spans(first + end) == s {
                end += 1;
            }
            group(first + start, &s, &mut o[start * d..end * d])?;
            start = end;
        }
        Ok(())
    };

    if dims.queries * dims.keys * d >= PAR_THRESHOLD {
        out.par_chunks_mut(TILE * d).enumerate().try_for_each(tile)?;
    } else {
        out.chunks_mut(TILE * d).enumerate().try_for_each(tile)?;
    }
    Ok(out)
}

/// Dense masked attention: full score matrix, additive mask, row softmax.
pub fn attend_dense(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&dyn AllowMatrix>, heads: usize) -> Result<Tensor> {
    let dims = check(q, k, v, mask, heads)?;
    let dh = dims.model / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.columns(cols.clone())?;
        let kh = k.columns(cols.clone())?;
        let vh = v.columns(cols)?;
        let scores = qh.matmul_t(&kh)?.scale(scale);
        let probs = masked_softmax_rows(&scores, mask)?;
        outputs.push(probs.matmul(&vh)?);
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    Tensor::concat_columns(&refs)
}
