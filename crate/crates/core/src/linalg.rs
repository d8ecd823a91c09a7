//! Dense matrices over Z_q.
//!
//! Elimination is fully deterministic: pivots are taken leftmost column
//! first, topmost eligible row first, with no reordering heuristics. The
//! normal-form transform and the disclosed values derived from it depend on
//! this ordering, so it must not change.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::field::{Modulus, ZqScalar};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ZqMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
    q: Modulus,
}

impl fmt::Debug for ZqMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ZqMatrix<{}x{} mod {}>[", self.rows, self.cols, self.q)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{:?}", self.row_slice(i))?;
        }
        write!(f, "]")
    }
}

impl ZqMatrix {
    /// Builds a matrix from row-major data, reducing every entry mod q.
    pub fn new(rows: usize, cols: usize, data: Vec<u64>, q: Modulus) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        let data = data.into_iter().map(|v| v % q.value()).collect();
        ZqMatrix { rows, cols, data, q }
    }

    pub fn from_i64(rows: usize, cols: usize, data: &[i64], q: Modulus) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        ZqMatrix {
            rows,
            cols,
            data: data.iter().map(|&v| q.reduce(v)).collect(),
            q,
        }
    }

    pub fn from_rows(rows: &[Vec<i64>], q: Modulus) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let flat: Vec<i64> = rows.iter().flatten().copied().collect();
        Self::from_i64(rows.len(), cols, &flat, q)
    }

    pub fn column(values: &[u64], q: Modulus) -> Self {
        Self::new(values.len(), 1, values.to_vec(), q)
    }

    pub fn row_vector(values: &[u64], q: Modulus) -> Self {
        Self::new(1, values.len(), values.to_vec(), q)
    }

    pub fn scalar(s: ZqScalar) -> Self {
        Self::new(1, 1, vec![s.value()], s.modulus())
    }

    pub fn zeros(rows: usize, cols: usize, q: Modulus) -> Self {
        ZqMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
            q,
        }
    }

    pub fn identity(n: usize, q: Modulus) -> Self {
        let mut m = Self::zeros(n, n, q);
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn modulus(&self) -> Modulus {
        self.q
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn entry(&self, i: usize, j: usize) -> ZqScalar {
        ZqScalar::new(self.get(i, j), self.q)
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u64) {
        assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v % self.q.value();
    }

    pub fn row_slice(&self, i: usize) -> &[u64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row(&self, i: usize) -> ZqMatrix {
        self.submatrix(i..i + 1, 0..self.cols)
    }

    pub fn col(&self, j: usize) -> ZqMatrix {
        self.submatrix(0..self.rows, j..j + 1)
    }

    /// Entries of a single-column or single-row matrix.
    pub fn to_vec(&self) -> Vec<u64> {
        assert!(self.rows <= 1 || self.cols <= 1, "not a vector");
        self.data.clone()
    }

    /// Centered lifts of all entries, row-major.
    pub fn lifted(&self) -> Vec<i64> {
        self.data.iter().map(|&v| self.q.lift(v)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn submatrix(&self, rows: Range<usize>, cols: Range<usize>) -> ZqMatrix {
        assert!(rows.end <= self.rows && cols.end <= self.cols);
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            data.extend_from_slice(&self.data[i * self.cols + cols.start..i * self.cols + cols.end]);
        }
        ZqMatrix {
            rows: rows.len(),
            cols: cols.len(),
            data,
            q: self.q,
        }
    }

    pub fn transpose(&self) -> ZqMatrix {
        let mut t = ZqMatrix::zeros(self.cols, self.rows, self.q);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    fn same_modulus(&self, other: &ZqMatrix) -> Result<()> {
        if self.q != other.q {
            return Err(Error::ModulusMismatch(self.q.value(), other.q.value()));
        }
        Ok(())
    }

    /// Stacks matrices on top of each other. All parts need the same column
    /// count; zero-row parts are allowed.
    pub fn vstack(parts: &[&ZqMatrix]) -> Result<ZqMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::DimensionMismatch("vstack of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            first.same_modulus(p)?;
            if p.cols != first.cols {
                return Err(Error::DimensionMismatch(format!(
                    "vstack: {} vs {} columns",
                    first.cols, p.cols
                )));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(ZqMatrix {
            rows,
            cols: first.cols,
            data,
            q: first.q,
        })
    }

    pub fn hstack(parts: &[&ZqMatrix]) -> Result<ZqMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::DimensionMismatch("hstack of nothing".into()))?;
        let rows = first.rows;
        for p in parts {
            first.same_modulus(p)?;
            if p.rows != rows {
                return Err(Error::DimensionMismatch(format!("hstack: {} vs {} rows", rows, p.rows)));
            }
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row_slice(i));
            }
        }
        Ok(ZqMatrix {
            rows,
            cols,
            data,
            q: first.q,
        })
    }

    pub fn matmul(&self, rhs: &ZqMatrix) -> Result<ZqMatrix> {
        self.same_modulus(rhs)?;
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let q = self.q.value() as u128;
        let mut out = vec![0u64; self.rows * rhs.cols];
        // Row-times-matrix accumulation in u128; q < 2^62 leaves room for
        // 16 unreduced products before the running sum is folded.
        let mut acc = vec![0u128; rhs.cols];
        for i in 0..self.rows {
            acc.iter_mut().for_each(|a| *a = 0);
            for (k, &a) in self.row_slice(i).iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let a = a as u128;
                for (dst, &b) in acc.iter_mut().zip(rhs.row_slice(k)) {
                    *dst += a * b as u128;
                }
                if k % 15 == 14 {
                    acc.iter_mut().for_each(|x| *x %= q);
                }
            }
            for (o, a) in out[i * rhs.cols..(i + 1) * rhs.cols].iter_mut().zip(&acc) {
                *o = (a % q) as u64;
            }
        }
        Ok(ZqMatrix {
            rows: self.rows,
            cols: rhs.cols,
            data: out,
            q: self.q,
        })
    }

    fn zip_with(&self, rhs: &ZqMatrix, f: impl Fn(u64, u64) -> u64) -> Result<ZqMatrix> {
        self.same_modulus(rhs)?;
        if self.shape() != rhs.shape() {
            return Err(Error::DimensionMismatch(format!(
                "elementwise: {:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(ZqMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
            q: self.q,
        })
    }

    pub fn add(&self, rhs: &ZqMatrix) -> Result<ZqMatrix> {
        let q = self.q;
        self.zip_with(rhs, |a, b| q.add(a, b))
    }

    pub fn sub(&self, rhs: &ZqMatrix) -> Result<ZqMatrix> {
        let q = self.q;
        self.zip_with(rhs, |a, b| q.sub(a, b))
    }

    pub fn neg(&self) -> ZqMatrix {
        let q = self.q;
        ZqMatrix {
            data: self.data.iter().map(|&a| q.neg(a)).collect(),
            ..self.clone()
        }
    }

    pub fn scale(&self, s: u64) -> ZqMatrix {
        let q = self.q;
        let s = s % q.value();
        ZqMatrix {
            data: self.data.iter().map(|&a| q.mul(a, s)).collect(),
            ..self.clone()
        }
    }

    /// `M^t mod q`, with `M^0 = I`.
    pub fn pow(&self, mut t: u64) -> Result<ZqMatrix> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch("pow of a non-square matrix".into()));
        }
        let mut acc = ZqMatrix::identity(self.rows, self.q);
        let mut base = self.clone();
        while t > 0 {
            if t & 1 == 1 {
                acc = acc.matmul(&base)?;
            }
            t >>= 1;
            if t > 0 {
                base = base.matmul(&base)?;
            }
        }
        Ok(acc)
    }

    /// Reduced row echelon form and the pivot columns, in order.
    pub fn rref(&self) -> (ZqMatrix, Vec<usize>) {
        let q = self.q;
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut prow = 0;
        for c in 0..m.cols {
            if prow == m.rows {
                break;
            }
            let Some(r) = (prow..m.rows).find(|&r| m.get(r, c) != 0) else {
                continue;
            };
            if r != prow {
                for j in 0..m.cols {
                    m.data.swap(r * m.cols + j, prow * m.cols + j);
                }
            }
            let inv = q.inv(m.get(prow, c)).expect("pivot is nonzero");
            for j in 0..m.cols {
                let v = q.mul(m.get(prow, j), inv);
                m.data[prow * m.cols + j] = v;
            }
            for i in 0..m.rows {
                if i == prow {
                    continue;
                }
                let f = m.get(i, c);
                if f == 0 {
                    continue;
                }
                for j in 0..m.cols {
                    let v = q.sub(m.get(i, j), q.mul(f, m.get(prow, j)));
                    m.data[i * m.cols + j] = v;
                }
            }
            pivots.push(c);
            prow += 1;
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    /// Gauss-Jordan inverse over Z_q.
    pub fn inverse(&self) -> Result<ZqMatrix> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch("inverse of a non-square matrix".into()));
        }
        let n = self.rows;
        let aug = ZqMatrix::hstack(&[self, &ZqMatrix::identity(n, self.q)])?;
        let (red, pivots) = aug.rref();
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return Err(Error::Singular);
        }
        Ok(red.submatrix(0..n, n..2 * n))
    }

    /// Basis of the right null space `{x : M x = 0}`, one basis vector per row.
    pub fn null_space(&self) -> ZqMatrix {
        let q = self.q;
        let (red, pivots) = self.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        let mut basis = ZqMatrix::zeros(free.len(), self.cols, q);
        for (k, &f) in free.iter().enumerate() {
            basis.set(k, f, 1);
            for (r, &p) in pivots.iter().enumerate() {
                basis.set(k, p, q.neg(red.get(r, f)));
            }
        }
        basis
    }
}

/// Rows `v` with `v G = 0`, for a column `G` (n x 1). Returns `n - 1`
/// independent rows when `G != 0` and the identity rows when `G = 0`.
pub fn left_kernel_basis(g: &ZqMatrix) -> Result<ZqMatrix> {
    if g.cols() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "left kernel expects an n x 1 column, got {:?}",
            g.shape()
        )));
    }
    Ok(g.transpose().null_space())
}

/// Completes `partial` to a basis of the row space of `kernel`, returning
/// only the added rows (taken from `kernel` in order).
pub fn extend_to_basis(partial: &ZqMatrix, kernel: &ZqMatrix) -> Result<ZqMatrix> {
    let q = kernel.modulus();
    if partial.rows() > 0 {
        partial.same_modulus(kernel)?;
        if partial.cols() != kernel.cols() {
            return Err(Error::DimensionMismatch(format!(
                "extend_to_basis: {} vs {} columns",
                partial.cols(),
                kernel.cols()
            )));
        }
    }
    let width = kernel.cols();
    let partial = if partial.rows() == 0 {
        ZqMatrix::zeros(0, width, q)
    } else {
        partial.clone()
    };
    let target_rank = kernel.rank();
    if partial.rank() != partial.rows() || ZqMatrix::vstack(&[&partial, kernel])?.rank() != target_rank {
        return Err(Error::DependentInput);
    }
    let mut current = partial;
    let mut added: Vec<usize> = Vec::new();
    let mut rank = current.rank();
    for i in 0..kernel.rows() {
        if rank == target_rank {
            break;
        }
        let candidate = ZqMatrix::vstack(&[&current, &kernel.row(i)])?;
        let r = candidate.rank();
        if r > rank {
            current = candidate;
            rank = r;
            added.push(i);
        }
    }
    let rows: Vec<ZqMatrix> = added.iter().map(|&i| kernel.row(i)).collect();
    if rows.is_empty() {
        return Ok(ZqMatrix::zeros(0, width, q));
    }
    ZqMatrix::vstack(&rows.iter().collect::<Vec<_>>())
}

pub fn matmul(a: &ZqMatrix, b: &ZqMatrix) -> Result<ZqMatrix> {
    a.matmul(b)
}

pub fn mat_inverse(m: &ZqMatrix) -> Result<ZqMatrix> {
    m.inverse()
}

pub fn mat_pow(m: &ZqMatrix, t: u64) -> Result<ZqMatrix> {
    m.pow(t)
}
