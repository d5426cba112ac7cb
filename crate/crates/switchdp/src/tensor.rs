//! Dense tensor kernel: shaped `f64` arrays in row-major order.
//!
//! Everything in the crate is built on this module. Tensors are rank ≤ 4,
//! always contiguous, always `f64`. There are no strided views; operations
//! that need a different layout copy.

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an explicit shape of rank ≤ 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from a shape and flat row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::InvalidParameter(format!(
                "tensor rank must be 1..=4, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("{n} elements for shape {shape:?}"),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Identity matrix of extent `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret as a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k] = v;
    }

    /// Row `i` of a rank-2 tensor.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Contiguous slice for index `(i, j)` of a rank-3 tensor.
    #[inline]
    pub fn slice3(&self, i: usize, j: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 3);
        let w = self.shape[2];
        let base = (i * self.shape[1] + j) * w;
        &self.data[base..base + w]
    }

    #[inline]
    pub fn slice3_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        debug_assert_eq!(self.rank(), 3);
        let w = self.shape[2];
        let base = (i * self.shape[1] + j) * w;
        &mut self.data[base..base + w]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    /// Sum of squared entries.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn as_matrix<'a>(t: &'a Tensor, context: &'static str) -> Result<(usize, usize, &'a [f64])> {
    match t.rank() {
        2 => Ok((t.shape[0], t.shape[1], t.data())),
        // Leading dimensions fold into rows; the batched product over
        // [..., k] x [k, n] is exactly the flat product.
        3 | 4 => {
            let k = *t.shape.last().unwrap();
            Ok((t.len() / k, k, t.data()))
        }
        _ => Err(Error::shape(context, "rank 2..=4", format!("rank {}", t.rank()))),
    }
}

/// `A · B` for `A [m,k]`, `B [k,n]`. A tensor of rank > 2 on the left is
/// treated as `[prod(leading), k]` and the result keeps the flat shape.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka, ad) = as_matrix(a, "matmul lhs")?;
    if b.rank() != 2 {
        return Err(Error::shape("matmul rhs", "rank 2", format!("rank {}", b.rank())));
    }
    let (kb, n) = (b.shape[0], b.shape[1]);
    if ka != kb {
        return Err(Error::shape(
            "matmul",
            format!("inner extents equal ({ka})"),
            format!("{kb}"),
        ));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bkj;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `A · Bᵀ` for `A [m,k]`, `B [n,k]` → `[m,n]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka, ad) = as_matrix(a, "matmul_nt lhs")?;
    if b.rank() != 2 {
        return Err(Error::shape("matmul_nt rhs", "rank 2", format!("rank {}", b.rank())));
    }
    let (n, kb) = (b.shape[0], b.shape[1]);
    if ka != kb {
        return Err(Error::shape(
            "matmul_nt",
            format!("inner extents equal ({ka})"),
            format!("{kb}"),
        ));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &ad[i * ka..(i + 1) * ka];
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = 0.0;
            for k in 0..ka {
                acc += arow[k] * brow[k];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `Aᵀ · B` for `A [c,m]`, `B [c,n]` → `[m,n]`.
///
/// Accumulates rank-1 products in ascending `c` order, which makes the result
/// bit-identical to summing the per-row outer products one at a time.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, m, ad) = as_matrix(a, "matmul_tn lhs")?;
    let (cb, n, bd) = as_matrix(b, "matmul_tn rhs")?;
    if ca != cb {
        return Err(Error::shape(
            "matmul_tn",
            format!("leading extents equal ({ca})"),
            format!("{cb}"),
        ));
    }
    let mut out = vec![0.0; m * n];
    accumulate_outer(&mut out, ad, bd, ca, m, n);
    Tensor::from_vec(&[m, n], out)
}

/// `out[i,j] += Σ_c a[c,i]·b[c,j]`, folding rows in ascending `c` order.
pub(crate) fn accumulate_outer(out: &mut [f64], a: &[f64], b: &[f64], c: usize, m: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    for ci in 0..c {
        let arow = &a[ci * m..(ci + 1) * m];
        let brow = &b[ci * n..(ci + 1) * n];
        for (i, &ai) in arow.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bj) in orow.iter_mut().zip(brow.iter()) {
                *o += ai * bj;
            }
        }
    }
}

/// Numerically stable softmax over the last axis.
pub fn softmax(logits: &Tensor) -> Tensor {
    let n = *logits.shape().last().unwrap();
    let mut out = logits.clone();
    for row in out.data.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Index of the maximum entry, lowest index winning ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}
