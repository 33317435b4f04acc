//! Dense row-major tensors with a runtime precision tag.
//!
//! Storage is either `f32` or `f64`; every kernel is written once, generic
//! over [`Element`], and dispatched on the storage variant. Mixed-precision
//! operands are rejected rather than silently promoted.

use std::fmt;
use std::iter::Sum;
use std::ops::Range;

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Work (multiply-adds) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 15;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::F32 => f.write_str("f32"),
            Precision::F64 => f.write_str("f64"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

#[derive(Clone, PartialEq)]
pub enum Storage {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl From<Vec<f32>> for Storage {
    fn from(v: Vec<f32>) -> Self {
        Storage::F32(v)
    }
}

impl From<Vec<f64>> for Storage {
    fn from(v: Vec<f64>) -> Self {
        Storage::F64(v)
    }
}

impl Storage {
    fn len(&self) -> usize {
        match self {
            Storage::F32(v) => v.len(),
            Storage::F64(v) => v.len(),
        }
    }
}

/// Scalar types a [`Tensor`] can hold.
pub trait Element: Float + Sum + Send + Sync + fmt::Debug + 'static {
    const PRECISION: Precision;
    fn wrap(values: Vec<Self>) -> Storage;
    fn view(storage: &Storage) -> Option<&[Self]>;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;
    fn wrap(values: Vec<f32>) -> Storage {
        Storage::F32(values)
    }
    fn view(storage: &Storage) -> Option<&[f32]> {
        match storage {
            Storage::F32(v) => Some(v),
            Storage::F64(_) => None,
        }
    }
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;
    fn wrap(values: Vec<f64>) -> Storage {
        Storage::F64(values)
    }
    fn view(storage: &Storage) -> Option<&[f64]> {
        match storage {
            Storage::F64(v) => Some(v),
            Storage::F32(_) => None,
        }
    }
    fn from_f64(x: f64) -> f64 {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

macro_rules! unary {
    ($t:expr, |$d:ident| $body:expr) => {
        match &$t.data {
            Storage::F32($d) => Storage::from($body),
            Storage::F64($d) => Storage::from($body),
        }
    };
}

macro_rules! binary {
    ($a:expr, $b:expr, $op:literal, |$x:ident, $y:ident| $body:expr) => {
        match (&$a.data, &$b.data) {
            (Storage::F32($x), Storage::F32($y)) => Storage::from($body),
            (Storage::F64($x), Storage::F64($y)) => Storage::from($body),
            _ => return Err(Error::PrecisionMismatch($op)),
        }
    };
}

/// Allow/deny relation over a (query, key) grid.
pub trait AllowMatrix: Sync {
    fn query_len(&self) -> usize;
    fn key_len(&self) -> usize;
    fn allowed(&self, query: usize, key: usize) -> bool;

    /// Maximal runs of allowed keys for one query, ascending.
    fn key_spans(&self, query: usize) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for key in 0..self.key_len() {
            match (self.allowed(query, key), start) {
                (true, None) => start = Some(key),
                (false, Some(s)) => {
                    spans.push(s..key);
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..self.key_len());
        }
        spans
    }
}

/// Explicit boolean mask, mostly for tests and ad-hoc row views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    queries: usize,
    keys: usize,
    bits: Vec<bool>,
}

impl DenseMask {
    pub fn new(queries: usize, keys: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != queries * keys {
            return Err(Error::dim(format!(
                "mask of {queries}x{keys} needs {} entries, got {}",
                queries * keys,
                bits.len()
            )));
        }
        Ok(Self { queries, keys, bits })
    }

    pub fn all(queries: usize, keys: usize) -> Self {
        Self {
            queries,
            keys,
            bits: vec![true; queries * keys],
        }
    }

    pub fn from_matrix(m: &dyn AllowMatrix) -> Self {
        let (q, k) = (m.query_len(), m.key_len());
        let bits = (0..q)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .map(|(i, j)| m.allowed(i, j))
            .collect();
        Self { queries: q, keys: k, bits }
    }
}

impl AllowMatrix for DenseMask {
    fn query_len(&self) -> usize {
        self.queries
    }
    fn key_len(&self) -> usize {
        self.keys
    }
    fn allowed(&self, query: usize, key: usize) -> bool {
        self.bits[query * self.keys + key]
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Storage,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", self.precision(), self.shape)
    }
}

impl Tensor {
    /// Builds a tensor from `f64` values, rounding to the requested precision.
    pub fn new(shape: Vec<usize>, values: Vec<f64>, precision: Precision) -> Result<Self> {
        check_len(&shape, values.len())?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::dim(format!("non-finite value at flat index {pos}")));
        }
        let data = match precision {
            Precision::F32 => Storage::F32(values.into_iter().map(|v| v as f32).collect()),
            Precision::F64 => Storage::F64(values),
        };
        Ok(Self { shape, data })
    }

    pub fn from_vec<T: Element>(shape: Vec<usize>, values: Vec<T>) -> Result<Self>
    {
        check_len(&shape, values.len())?;
        Ok(Self {
            shape,
            data: T::wrap(values),
        })
    }

    pub fn zeros(shape: Vec<usize>, precision: Precision) -> Self {
        Self::full(shape, 0.0, precision)
    }

    pub fn full(shape: Vec<usize>, value: f64, precision: Precision) -> Self {
        let n = shape.iter().product();
        let data = match precision {
            Precision::F32 => Storage::F32(vec![value as f32; n]),
            Precision::F64 => Storage::F64(vec![value; n]),
        };
        Self { shape, data }
    }

    pub fn eye(n: usize, precision: Precision) -> Self {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Self::new(vec![n, n], v, precision).expect("identity is well-formed")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn precision(&self) -> Precision {
        match self.data {
            Storage::F32(_) => Precision::F32,
            Storage::F64(_) => Precision::F64,
        }
    }

    pub fn storage(&self) -> &Storage {
        &self.data
    }

    pub fn as_slice<T: Element>(&self) -> Option<&[T]>
    {
        T::view(&self.data)
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            Storage::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Storage::F64(v) => v.clone(),
        }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            Storage::F32(v) => v.clone(),
            Storage::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.shape.len() {
            return Err(Error::dim(format!(
                "index rank {} for tensor of rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
            flat = flat * n + i;
        }
        Ok(match &self.data {
            Storage::F32(v) => v[flat] as f64,
            Storage::F64(v) => v[flat],
        })
    }

    pub fn is_finite(&self) -> bool {
        match &self.data {
            Storage::F32(v) => v.iter().all(|x| x.is_finite()),
            Storage::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    pub fn cast(&self, precision: Precision) -> Tensor {
        if precision == self.precision() {
            return self.clone();
        }
        let data = match precision {
            Precision::F32 => Storage::F32(self.to_f32_vec()),
            Precision::F64 => Storage::F64(self.to_f64_vec()),
        };
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        check_len(&shape, self.len())?;
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!("expected rank-2 tensor, got {:?}", self.shape))),
        }
    }

    /// `self · other` for rank-2 operands.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let data = binary!(self, other, "matmul", |a, b| matmul_kernel(a, b, m, k, n));
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    /// `self · otherᵀ`; the layout used by linear layers and attention scores.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (n, k2) = other.dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul_t", &self.shape, &other.shape));
        }
        let data = binary!(self, other, "matmul_t", |a, b| matmul_t_kernel(a, b, m, k, n));
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let data = unary!(self, |v| {
            let mut out = Vec::with_capacity(v.len());
            for j in 0..c {
                for i in 0..r {
                    out.push(v[i * c + j]);
                }
            }
            out
        });
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    fn zip_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same(other, "add")?;
        let data = binary!(self, other, "add", |a, b| a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| x + y)
            .collect::<Vec<_>>());
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same(other, "sub")?;
        let data = binary!(self, other, "sub", |a, b| a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| x - y)
            .collect::<Vec<_>>());
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_same(other, "mul")?;
        let data = binary!(self, other, "mul", |a, b| a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| x * y)
            .collect::<Vec<_>>());
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = unary!(self, |v| scale_kernel(v, factor));
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = unary!(self, |v| map_kernel(v, &f));
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Adds `row` (length = last dim) to every row.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let d = self.last_dim()?;
        if row.shape != [d] {
            return Err(Error::shape("add_row", &self.shape, &row.shape));
        }
        let data = binary!(self, row, "add_row", |a, b| a
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[i % d])
            .collect::<Vec<_>>());
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Multiplies every row elementwise by `row`.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        let d = self.last_dim()?;
        if row.shape != [d] {
            return Err(Error::shape("mul_row", &self.shape, &row.shape));
        }
        let data = binary!(self, row, "mul_row", |a, b| a
            .iter()
            .enumerate()
            .map(|(i, &x)| x * b[i % d])
            .collect::<Vec<_>>());
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    fn last_dim(&self) -> Result<usize> {
        match self.shape.last() {
            Some(&d) if d > 0 => Ok(d),
            _ => Err(Error::dim(format!(
                "last dimension must be positive, shape {:?}",
                self.shape
            ))),
        }
    }

    /// Normalises over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let d = self.last_dim()?;
        if gain.shape != [d] || bias.shape != [d] {
            return Err(Error::shape("layer_norm", &self.shape, &gain.shape));
        }
        let normed = self.layer_norm_plain()?;
        let data = match (&normed.data, &gain.data, &bias.data) {
            (Storage::F32(x), Storage::F32(g), Storage::F32(b)) => {
                Storage::from(affine_rows(x, g, b))
            }
            (Storage::F64(x), Storage::F64(g), Storage::F64(b)) => {
                Storage::from(affine_rows(x, g, b))
            }
            _ => return Err(Error::PrecisionMismatch("layer_norm")),
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Layer norm without the affine step.
    pub fn layer_norm_plain(&self) -> Result<Tensor> {
        let d = self.last_dim()?;
        let data = unary!(self, |v| layer_norm_kernel(v, d));
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn gelu(&self) -> Tensor {
        let data = unary!(self, |v| v.iter().map(|&x| gelu_scalar(x)).collect::<Vec<_>>());
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn silu(&self) -> Tensor {
        let data = unary!(self, |v| silu_kernel(v));
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Rows `range` of a rank-2 tensor.
    pub fn rows(&self, range: Range<usize>) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if range.start > range.end || range.end > r {
            return Err(Error::Index {
                index: range.end,
                len: r,
            });
        }
        let data = unary!(self, |v| v[range.start * c..range.end * c].to_vec());
        Ok(Tensor {
            shape: vec![range.len(), c],
            data,
        })
    }

    /// Columns `range` of a rank-2 tensor.
    pub fn columns(&self, range: Range<usize>) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if range.start > range.end || range.end > c {
            return Err(Error::Index {
                index: range.end,
                len: c,
            });
        }
        let w = range.len();
        let data = unary!(self, |v| {
            let mut out = Vec::with_capacity(r * w);
            for i in 0..r {
                out.extend_from_slice(&v[i * c + range.start..i * c + range.end]);
            }
            out
        });
        Ok(Tensor {
            shape: vec![r, w],
            data,
        })
    }

    /// Stacks rank-2 tensors with equal column count along the first axis.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows of zero tensors"))?;
        let (_, c) = first.dims2()?;
        let precision = first.precision();
        let mut rows = 0;
        for p in parts {
            let (r, c2) = p.dims2()?;
            if c2 != c {
                return Err(Error::shape("concat_rows", &first.shape, &p.shape));
            }
            if p.precision() != precision {
                return Err(Error::PrecisionMismatch("concat_rows"));
            }
            rows += r;
        }
        let data = match precision {
            Precision::F32 => Storage::F32(
                parts
                    .iter()
                    .flat_map(|p| p.as_slice::<f32>().unwrap().iter().copied())
                    .collect(),
            ),
            Precision::F64 => Storage::F64(
                parts
                    .iter()
                    .flat_map(|p| p.as_slice::<f64>().unwrap().iter().copied())
                    .collect(),
            ),
        };
        Ok(Tensor {
            shape: vec![rows, c],
            data,
        })
    }

    /// Joins rank-2 tensors with equal row count side by side.
    pub fn concat_columns(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_columns of zero tensors"))?;
        let (r, _) = first.dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r2, c) = p.dims2()?;
            if r2 != r {
                return Err(Error::shape("concat_columns", &first.shape, &p.shape));
            }
            if p.precision() != first.precision() {
                return Err(Error::PrecisionMismatch("concat_columns"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        fn gather<T: Element>(parts: &[&Tensor], widths: &[usize], rows: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(rows * widths.iter().sum::<usize>());
            for i in 0..rows {
                for (p, &w) in parts.iter().zip(widths) {
                    let s = p.as_slice::<T>().expect("precision checked");
                    out.extend_from_slice(&s[i * w..(i + 1) * w]);
                }
            }
            out
        }
        let data = match first.precision() {
            Precision::F32 => Storage::F32(gather::<f32>(parts, &widths, r)),
            Precision::F64 => Storage::F64(gather::<f64>(parts, &widths, r)),
        };
        Ok(Tensor {
            shape: vec![r, total],
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .to_f64_vec()
            .iter()
            .zip(other.to_f64_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn sum(&self) -> f64 {
        self.to_f64_vec().iter().sum()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::dim(format!(
            "shape {shape:?} needs {expected} elements, got {len}"
        )));
    }
    Ok(())
}

/// Dot product with eight independent accumulators; fixed summation order.
#[inline]
pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out += alpha * x`.
#[inline]
pub(crate) fn axpy<T: Float>(out: &mut [T], alpha: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = *o + alpha * v;
    }
}

fn matmul_kernel<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T>
{
    let mut out = vec![T::zero(); m * n];
    if n == 0 {
        return out;
    }
    let row = |(i, o): (usize, &mut [T])| {
        for kk in 0..k {
            axpy(o, a[i * k + kk], &b[kk * n..(kk + 1) * n]);
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

fn matmul_t_kernel<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T>
{
    let mut out = vec![T::zero(); m * n];
    if n == 0 {
        return out;
    }
    let row = |(i, o): (usize, &mut [T])| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, slot) in o.iter_mut().enumerate() {
            *slot = dot(ar, &b[j * k..(j + 1) * k]);
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

fn scale_kernel<T: Element>(v: &[T], factor: f64) -> Vec<T>
{
    let f = T::from_f64(factor);
    v.iter().map(|&x| x * f).collect()
}

fn layer_norm_kernel<T: Element>(v: &[T], d: usize) -> Vec<T>
{
    let eps = T::from_f64(LAYER_NORM_EPS);
    let n = T::from_f64(d as f64);
    let mut out = Vec::with_capacity(v.len());
    for row in v.chunks_exact(d) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
        let inv = (var + eps).sqrt().recip();
        out.extend(row.iter().map(|&x| (x - mean) * inv));
    }
    out
}

fn affine_rows<T: Element>(x: &[T], gain: &[T], bias: &[T]) -> Vec<T>
{
    let d = gain.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| v * gain[i % d] + bias[i % d])
        .collect()
}

/// tanh approximation of GELU.
fn map_kernel<T: Element>(v: &[T], f: &dyn Fn(f64) -> f64) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(f(x.to_f64()))).collect()
}

fn silu_kernel<T: Element>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x / (T::one() + (-x).exp())).collect()
}

pub fn gelu_scalar<T: Float>(x: T) -> T {
    let c = T::from(0.797_884_560_802_865_4).unwrap(); // sqrt(2/pi)
    let k = T::from(0.044_715).unwrap();
    let half = T::from(0.5).unwrap();
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

/// Row-wise softmax where denied positions get probability exactly zero.
///
/// `mask == None` allows every position. A row with no allowed position is
/// a structural error: valid token layouts never produce one.
pub fn masked_softmax_rows(scores: &Tensor, mask: Option<&dyn AllowMatrix>) -> Result<Tensor> {
    let (q, k) = scores.dims2()?;
    if let Some(m) = mask {
        if m.query_len() != q || m.key_len() != k {
            return Err(Error::shape(
                "masked_softmax_rows",
                &[q, k],
                &[m.query_len(), m.key_len()],
            ));
        }
    }
    let data = match &scores.data {
        Storage::F32(v) => Storage::from(softmax_kernel(v, q, k, mask)?),
        Storage::F64(v) => Storage::from(softmax_kernel(v, q, k, mask)?),
    };
    Ok(Tensor {
        shape: vec![q, k],
        data,
    })
}

fn softmax_kernel<T: Element>(
    v: &[T],
    q: usize,
    k: usize,
    mask: Option<&dyn AllowMatrix>,
) -> Result<Vec<T>>
{
    let mut out = vec![T::zero(); q * k];
    for i in 0..q {
        let row = &v[i * k..(i + 1) * k];
        // additive sentinel: denied -> -inf, allowed -> +0
        let biased: Vec<T> = row
            .iter()
            .enumerate()
            .map(|(j, &s)| match mask {
                Some(m) if !m.allowed(i, j) => T::neg_infinity(),
                _ => s + T::zero(),
            })
            .collect();
        let max = biased.iter().copied().fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            return Err(Error::Structural(format!(
                "attention row {i} has no allowed keys"
            )));
        }
        let o = &mut out[i * k..(i + 1) * k];
        let mut sum = T::zero();
        for (slot, &s) in o.iter_mut().zip(&biased) {
            let e = if s == T::neg_infinity() {
                T::zero()
            } else {
                (s - max).exp()
            };
            *slot = e;
            sum = sum + e;
        }
        for slot in o.iter_mut() {
            *slot = *slot / sum;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t2(r: usize, c: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![r, c], v.to_vec(), Precision::F64).unwrap()
    }

    fn random(r: usize, c: usize, seed: u64, p: Precision) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![r, c], v, p).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let x = random(3, 5, 1, Precision::F64);
        assert_eq!(Tensor::eye(3, Precision::F64).matmul(&x).unwrap(), x);

        let a = t2(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(a.matmul(&Tensor::eye(2, Precision::F64)).unwrap(), a);
        let b = t2(2, 2, &[5., 6., 7., 8.]);
        assert_eq!(
            a.matmul(&b).unwrap().to_f64_vec(),
            vec![19., 22., 43., 50.]
        );
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let a = Tensor::zeros(vec![2, 3], Precision::F32);
        let b = Tensor::zeros(vec![2, 3], Precision::F32);
        let err = a.matmul(&b).unwrap_err();
        match err {
            Error::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mixed_precision_rejected() {
        let a = Tensor::zeros(vec![2, 2], Precision::F32);
        let b = Tensor::zeros(vec![2, 2], Precision::F64);
        assert!(matches!(a.add(&b), Err(Error::PrecisionMismatch(_))));
    }

    #[test]
    fn matmul_t_matches_matmul_of_transpose() {
        let a = random(4, 7, 2, Precision::F64);
        let b = random(5, 7, 3, Precision::F64);
        let lhs = a.matmul_t(&b).unwrap();
        let rhs = a.matmul(&b.transpose().unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-14);
    }

    #[test]
    fn matmul_associative() {
        for (p, tol) in [(Precision::F32, 1e-4), (Precision::F64, 1e-10)] {
            let a = random(8, 8, 10, p);
            let b = random(8, 8, 11, p);
            let c = random(8, 8, 12, p);
            let l = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let r = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            assert!(l.max_abs_diff(&r).unwrap() <= tol, "{p}");
        }
    }

    #[test]
    fn matmul_independent_of_thread_count() {
        let a = random(64, 96, 5, Precision::F32);
        let b = random(96, 80, 6, Precision::F32);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let x = one.install(|| a.matmul(&b).unwrap());
        let y = four.install(|| a.matmul(&b).unwrap());
        assert_eq!(x.as_slice::<f32>(), y.as_slice::<f32>());
    }

    #[test]
    fn softmax_examples() {
        let s = t2(1, 4, &[0.3; 4]);
        let p = masked_softmax_rows(&s, None).unwrap();
        for v in p.to_f64_vec() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }

        let s = t2(1, 2, &[0.0, 1000.0]);
        let m = DenseMask::new(1, 2, vec![true, false]).unwrap();
        let p = masked_softmax_rows(&s, Some(&m)).unwrap();
        assert_eq!(p.to_f64_vec(), vec![1.0, 0.0]);

        let s = t2(1, 2, &[0.0, 3f64.ln()]);
        let p = masked_softmax_rows(&s, None).unwrap().to_f64_vec();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_empty_row_is_structural_error() {
        let s = t2(2, 2, &[1., 2., 3., 4.]);
        let m = DenseMask::new(2, 2, vec![true, true, false, false]).unwrap();
        assert!(matches!(
            masked_softmax_rows(&s, Some(&m)),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::full(vec![3], 1.0, Precision::F64);
        let zero = Tensor::zeros(vec![3], Precision::F64);
        let c = Tensor::full(vec![2, 3], 7.5, Precision::F64);
        assert!(c
            .layer_norm(&one, &zero)
            .unwrap()
            .to_f64_vec()
            .iter()
            .all(|&v| v == 0.0));

        let x = Tensor::new(vec![2], vec![1.0, -1.0], Precision::F64).unwrap();
        let g = Tensor::full(vec![2], 1.0, Precision::F64);
        let b = Tensor::zeros(vec![2], Precision::F64);
        let y = x.layer_norm(&g, &b).unwrap().to_f64_vec();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(y[1], -1.0, epsilon = 1e-4);

        let x = random(4, 3, 9, Precision::F64);
        let bias = Tensor::new(vec![3], vec![0.5, -2.0, 3.0], Precision::F64).unwrap();
        let y = x.layer_norm(&zero, &bias).unwrap();
        for row in y.to_f64_vec().chunks(3) {
            assert_eq!(row, &[0.5, -2.0, 3.0]);
        }
    }

    #[test]
    fn layer_norm_zero_width_is_dimension_error() {
        let x = Tensor::zeros(vec![2, 0], Precision::F64);
        let g = Tensor::zeros(vec![0], Precision::F64);
        assert!(matches!(x.layer_norm(&g, &g), Err(Error::Dimension(_))));
    }

    #[test]
    fn gelu_examples() {
        let x = Tensor::new(vec![3], vec![0.0, 1.0, 20.0], Precision::F64).unwrap();
        let y = x.gelu().to_f64_vec();
        assert_eq!(y[0], 0.0);
        assert_abs_diff_eq!(y[1], 0.8412, epsilon = 1e-3);
        assert_abs_diff_eq!(y[2], 20.0, epsilon = 1e-9);
    }

    #[test]
    fn constructor_rejects_bad_len_and_nan() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3], Precision::F32).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN], Precision::F32).is_err());
    }

    #[test]
    fn key_spans_group_runs() {
        let m = DenseMask::new(1, 6, vec![true, true, false, true, false, true]).unwrap();
        assert_eq!(m.key_spans(0), vec![0..2, 3..4, 5..6]);
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(
            vals in proptest::collection::vec(-30.0f64..30.0, 12),
            bits in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let mut bits = bits;
            for r in 0..3 { bits[r * 4] = true; }
            let s = Tensor::new(vec![3, 4], vals, Precision::F64).unwrap();
            let m = DenseMask::new(3, 4, bits.clone()).unwrap();
            let p = masked_softmax_rows(&s, Some(&m)).unwrap().to_f64_vec();
            for r in 0..3 {
                let row = &p[r * 4..(r + 1) * 4];
                prop_assert!(row.iter().all(|&x| x >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                for c in 0..4 {
                    if !bits[r * 4 + c] { prop_assert_eq!(row[c], 0.0); }
                }
            }
        }

        #[test]
        fn ops_are_deterministic(seed in 0u64..1000) {
            let a = random(5, 6, seed, Precision::F32);
            let b = random(6, 4, seed + 1, Precision::F32);
            let x = a.matmul(&b).unwrap().gelu().layer_norm_plain().unwrap();
            let y = a.matmul(&b).unwrap().gelu().layer_norm_plain().unwrap();
            prop_assert_eq!(x.as_slice::<f32>(), y.as_slice::<f32>());
        }
    }
}
