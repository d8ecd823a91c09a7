//! Structure of SISO linear systems over Z_q.
//!
//! For `x(t+1) = F x + G y`, `r = H x + J y` this module computes the
//! relative degree, the change of coordinates `[z; v] = T x` that splits the
//! state into an input-driven chain `v` and the zero-dynamics `z`, the
//! inputs that hold the output at zero, and the "equivalent input" that
//! reproduces the same output from a reduced initial state.
//!
//! Sequences of inputs and outputs are plain `u64` residues mod q.

use crate::error::{Error, Result};
use crate::field::{Modulus, ZqScalar};
use crate::linalg::{extend_to_basis, left_kernel_basis, ZqMatrix};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemZq {
    f: ZqMatrix,
    g: ZqMatrix,
    h: ZqMatrix,
    j: ZqScalar,
}

impl SystemZq {
    pub fn new(f: ZqMatrix, g: ZqMatrix, h: ZqMatrix, j: ZqScalar) -> Result<Self> {
        let n = f.rows();
        if f.cols() != n || g.shape() != (n, 1) || h.shape() != (1, n) {
            return Err(Error::DimensionMismatch(format!(
                "system: F {:?}, G {:?}, H {:?}",
                f.shape(),
                g.shape(),
                h.shape()
            )));
        }
        let q = f.modulus();
        for m in [g.modulus(), h.modulus(), j.modulus()] {
            if m != q {
                return Err(Error::ModulusMismatch(q.value(), m.value()));
            }
        }
        Ok(SystemZq { f, g, h, j })
    }

    pub fn f(&self) -> &ZqMatrix {
        &self.f
    }
    pub fn g(&self) -> &ZqMatrix {
        &self.g
    }
    pub fn h(&self) -> &ZqMatrix {
        &self.h
    }
    pub fn j(&self) -> ZqScalar {
        self.j
    }
    pub fn n(&self) -> usize {
        self.f.rows()
    }
    pub fn modulus(&self) -> Modulus {
        self.f.modulus()
    }

    /// One step: returns `(x(t+1), r(t))`.
    pub fn step(&self, x: &ZqMatrix, y: u64) -> Result<(ZqMatrix, u64)> {
        let q = self.modulus();
        let r = q.add(self.h.matmul(x)?.get(0, 0), q.mul(self.j.value(), y));
        let next = self.f.matmul(x)?.add(&self.g.scale(y))?;
        Ok((next, r))
    }

    /// Output trajectory `r(t) = S(x0, {y(0..=t)})` for every supplied input.
    pub fn outputs(&self, x0: &ZqMatrix, inputs: &[u64]) -> Result<Vec<u64>> {
        let mut x = x0.clone();
        let mut out = Vec::with_capacity(inputs.len());
        for &y in inputs {
            let (next, r) = self.step(&x, y)?;
            out.push(r);
            x = next;
        }
        Ok(out)
    }
}

/// Smallest `d` with `H F^(d-1) G != 0` when `J = 0`; zero when `J != 0`.
pub fn relative_degree(sys: &SystemZq) -> Result<usize> {
    if !sys.j.is_zero() {
        return Ok(0);
    }
    let mut hf = sys.h.clone();
    for d in 1..=sys.n() {
        if hf.matmul(&sys.g)?.get(0, 0) != 0 {
            return Ok(d);
        }
        hf = hf.matmul(&sys.f)?;
    }
    Err(Error::NoRelativeDegree)
}

/// Byrnes-Isidori normal form of a [`SystemZq`].
///
/// For `nu = 0` the blocks follow the degenerate convention `T1 = I`,
/// `F1 = F - G J^-1 H`, `psi = H`, `g = J`, with `T2`, `V2`, `F2`, `phi`
/// empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalForm {
    system: SystemZq,
    nu: usize,
    t1: ZqMatrix,
    t2: ZqMatrix,
    v1: ZqMatrix,
    v2: ZqMatrix,
    f1: ZqMatrix,
    f2: ZqMatrix,
    psi: ZqMatrix,
    phi: ZqMatrix,
    g: ZqScalar,
    g_inv: ZqScalar,
}

impl NormalForm {
    pub fn new(system: &SystemZq) -> Result<Self> {
        let nu = relative_degree(system)?;
        build_transform(system, nu)
    }

    pub fn system(&self) -> &SystemZq {
        &self.system
    }
    pub fn nu(&self) -> usize {
        self.nu
    }
    pub fn n(&self) -> usize {
        self.system.n()
    }
    pub fn modulus(&self) -> Modulus {
        self.system.modulus()
    }
    pub fn t1(&self) -> &ZqMatrix {
        &self.t1
    }
    pub fn t2(&self) -> &ZqMatrix {
        &self.t2
    }
    pub fn v1(&self) -> &ZqMatrix {
        &self.v1
    }
    pub fn v2(&self) -> &ZqMatrix {
        &self.v2
    }
    pub fn f1(&self) -> &ZqMatrix {
        &self.f1
    }
    pub fn f2(&self) -> &ZqMatrix {
        &self.f2
    }
    pub fn psi(&self) -> &ZqMatrix {
        &self.psi
    }
    pub fn phi(&self) -> &ZqMatrix {
        &self.phi
    }
    pub fn g(&self) -> ZqScalar {
        self.g
    }
    pub fn g_inv(&self) -> ZqScalar {
        self.g_inv
    }

    /// `T = [T1; T2]`.
    pub fn transform(&self) -> ZqMatrix {
        ZqMatrix::vstack(&[&self.t1, &self.t2]).expect("T1 and T2 share width n")
    }

    /// `V = [V1, V2] = T^-1`.
    pub fn inverse_transform(&self) -> ZqMatrix {
        ZqMatrix::hstack(&[&self.v1, &self.v2]).expect("V1 and V2 share height n")
    }

    /// `(z, v) = (T1 x, T2 x)`.
    pub fn coordinates(&self, x: &ZqMatrix) -> Result<(ZqMatrix, ZqMatrix)> {
        Ok((self.t1.matmul(x)?, self.t2.matmul(x)?))
    }

    /// `g^-1 psi z`, the zero-dynamics correction added to an input.
    pub fn correction(&self, z: &ZqMatrix) -> Result<u64> {
        let q = self.modulus();
        Ok(q.mul(self.g_inv.value(), self.psi.matmul(z)?.get(0, 0)))
    }

    /// Zero-dynamics step `z -> F1 z`.
    pub fn advance_zero_dynamics(&self, z: &ZqMatrix) -> Result<ZqMatrix> {
        self.f1.matmul(z)
    }

    /// One step of the system in normal-form coordinates; returns
    /// `(z(t+1), v(t+1), r(t))`.
    pub fn step(&self, z: &ZqMatrix, v: &ZqMatrix, y: u64) -> Result<(ZqMatrix, ZqMatrix, u64)> {
        let q = self.modulus();
        if z.shape() != (self.n() - self.nu, 1) || v.shape() != (self.nu, 1) {
            return Err(Error::DimensionMismatch(format!(
                "normal form step: z {:?}, v {:?} for nu = {}",
                z.shape(),
                v.shape(),
                self.nu
            )));
        }
        let gy = q.mul(self.g.value(), y);
        if self.nu == 0 {
            // r = H z + J y, z+ = F1 z + G J^-1 r
            let r = q.add(self.psi.matmul(z)?.get(0, 0), gy);
            let z_next = self
                .f1
                .matmul(z)?
                .add(&self.system.g.scale(q.mul(self.g_inv.value(), r)))?;
            return Ok((z_next, v.clone(), r));
        }
        let r = v.get(0, 0);
        let z_next = self.f1.matmul(z)?.add(&self.f2.matmul(v)?)?;
        let last = q.add(q.add(self.psi.matmul(z)?.get(0, 0), self.phi.matmul(v)?.get(0, 0)), gy);
        let mut shifted: Vec<u64> = v.data()[1..].to_vec();
        shifted.push(last);
        Ok((z_next, ZqMatrix::column(&shifted, q), r))
    }

    /// Input `y(t) = -g^-1 psi F1^t T1 x0` keeping the output at zero.
    pub fn zero_output_input(&self, x0: &ZqMatrix, t: u64) -> Result<u64> {
        if !self.t2.matmul(x0)?.is_zero() {
            return Err(Error::NonzeroInitialOutput);
        }
        let z = self.f1.pow(t)?.matmul(&self.t1.matmul(x0)?)?;
        Ok(self.modulus().neg(self.correction(&z)?))
    }

    /// The first `steps` zero-output inputs, iterating the zero-dynamics
    /// instead of forming matrix powers.
    pub fn zero_output_inputs(&self, x0: &ZqMatrix, steps: usize) -> Result<Vec<u64>> {
        if !self.t2.matmul(x0)?.is_zero() {
            return Err(Error::NonzeroInitialOutput);
        }
        let q = self.modulus();
        let mut z = self.t1.matmul(x0)?;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            out.push(q.neg(self.correction(&z)?));
            z = self.f1.matmul(&z)?;
        }
        Ok(out)
    }

    /// `(v0, y')` with `S(x0, y) = S(V2 v0, y')`; `v0 = T2 x0` and
    /// `y'(t) = y(t) + g^-1 psi F1^t T1 x0`.
    pub fn equivalent_info(&self, x0: &ZqMatrix, inputs: &[u64]) -> Result<(ZqMatrix, Vec<u64>)> {
        let q = self.modulus();
        let v0 = self.t2.matmul(x0)?;
        let mut z = self.t1.matmul(x0)?;
        let mut out = Vec::with_capacity(inputs.len());
        for &y in inputs {
            out.push(q.add(y % q.value(), self.correction(&z)?));
            z = self.f1.matmul(&z)?;
        }
        Ok((v0, out))
    }

    /// Initial state `V2 v0` of the reduced system.
    pub fn reduced_initial_state(&self, v0: &ZqMatrix) -> Result<ZqMatrix> {
        self.v2.matmul(v0)
    }

    /// Recovers `v0` and every computable equivalent input from an output
    /// sequence: `y'(t)` needs `r` through index `t + nu`, so `r.len() - nu`
    /// inputs are returned.
    pub fn equivalent_inputs_from_residue(&self, r: &[u64]) -> Result<(ZqMatrix, Vec<u64>)> {
        let q = self.modulus();
        let nu = self.nu;
        if r.len() < nu {
            return Err(Error::InsufficientHistory {
                needed: nu,
                available: r.len(),
            });
        }
        let v0 = ZqMatrix::column(&r[..nu], q);
        let count = r.len() - nu;
        let mut out = Vec::with_capacity(count);
        // w(t) = sum_{tau < t} F1^(t-1-tau) F2 v(tau)
        let mut w = ZqMatrix::zeros(self.n() - nu, 1, q);
        for t in 0..count {
            let v_t = ZqMatrix::column(&r[t..t + nu], q);
            let mut acc = q.sub(r[t + nu] % q.value(), self.phi.matmul(&v_t)?.get(0, 0));
            acc = q.sub(acc, self.psi.matmul(&w)?.get(0, 0));
            let y = q.mul(self.g_inv.value(), acc);
            out.push(y);
            w = if nu == 0 {
                // x+ = (F - G J^-1 H) x + G J^-1 r
                let r_t = q.mul(self.g_inv.value(), r[t] % q.value());
                self.f1.matmul(&w)?.add(&self.system.g.scale(r_t))?
            } else {
                self.f1.matmul(&w)?.add(&self.f2.matmul(&v_t)?)?
            };
        }
        Ok((v0, out))
    }

    /// Single-index form of [`equivalent_inputs_from_residue`](Self::equivalent_inputs_from_residue).
    pub fn residue_to_equivalent_input(&self, r: &[u64], t: usize) -> Result<(ZqMatrix, u64)> {
        let needed = t + self.nu + 1;
        if r.len() < needed {
            return Err(Error::InsufficientHistory {
                needed,
                available: r.len(),
            });
        }
        let (v0, ys) = self.equivalent_inputs_from_residue(&r[..needed])?;
        Ok((v0, ys[t]))
    }
}

/// Builds the normal form for a known relative degree `nu`.
pub fn build_transform(sys: &SystemZq, nu: usize) -> Result<NormalForm> {
    let q = sys.modulus();
    let n = sys.n();
    if nu == 0 {
        let g_inv = sys.j.inv().map_err(|_| Error::NoRelativeDegree)?;
        let gjh = sys.g.matmul(&sys.h)?.scale(g_inv.value());
        return Ok(NormalForm {
            system: sys.clone(),
            nu: 0,
            t1: ZqMatrix::identity(n, q),
            t2: ZqMatrix::zeros(0, n, q),
            v1: ZqMatrix::identity(n, q),
            v2: ZqMatrix::zeros(n, 0, q),
            f1: sys.f.sub(&gjh)?,
            f2: ZqMatrix::zeros(n, 0, q),
            psi: sys.h.clone(),
            phi: ZqMatrix::zeros(1, 0, q),
            g: sys.j,
            g_inv,
        });
    }
    if nu > n {
        return Err(Error::NoRelativeDegree);
    }
    // rows H F^i for i < nu
    let mut rows = Vec::with_capacity(nu);
    let mut hf = sys.h.clone();
    for _ in 0..nu {
        rows.push(hf.clone());
        hf = hf.matmul(&sys.f)?;
    }
    let hf_nu = hf;
    let t2 = ZqMatrix::vstack(&rows.iter().collect::<Vec<_>>())?;
    let g_val = rows[nu - 1].matmul(&sys.g)?.get(0, 0);
    if g_val == 0 || !t2.submatrix(0..nu - 1, 0..n).matmul(&sys.g)?.is_zero() {
        return Err(Error::InvalidParameter(format!("{nu} is not the relative degree")));
    }
    let g = ZqScalar::new(g_val, q);
    let kernel = left_kernel_basis(&sys.g)?;
    let partial = t2.submatrix(0..nu - 1, 0..n);
    let t1 = extend_to_basis(&partial, &kernel)?;
    debug_assert_eq!(t1.rows(), n - nu);
    let t = ZqMatrix::vstack(&[&t1, &t2])?;
    let v = t.inverse()?;
    let v1 = v.submatrix(0..n, 0..n - nu);
    let v2 = v.submatrix(0..n, n - nu..n);
    let t1f = t1.matmul(&sys.f)?;
    Ok(NormalForm {
        system: sys.clone(),
        nu,
        f1: t1f.matmul(&v1)?,
        f2: t1f.matmul(&v2)?,
        psi: hf_nu.matmul(&v1)?,
        phi: hf_nu.matmul(&v2)?,
        t1,
        t2,
        v1,
        v2,
        g,
        g_inv: g.inv()?,
    })
}
