//! Observer-based controller to encrypted-controller parameters.
//!
//! The controller
//!
//! ```text
//! xhat+ = A xhat + B u + L (y - C xhat),  u = K xhat,  r = y - C xhat
//! ```
//!
//! is rewritten with its own residue as an extra input,
//! `xhat+ = (A+BK-LC+RC) xhat + (L-R) y + R r`, which holds for any `R`.
//! `R` and a change of coordinates `T` are then chosen so the state matrix
//! becomes an integer companion matrix, and all parameters are scaled into
//! `Z_q`. Rounding is half away from zero throughout.

pub mod real;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Modulus, ZqScalar};
use crate::linalg::ZqMatrix;
use crate::lwe::{Ciphertext, CiphertextKind};
use crate::zero_dynamics::SystemZq;

use real::{controllability, matrix_to_rows, min_singular_value, numerical_rank, observability, rows_to_matrix};

/// Rank tolerance on singular values.
pub const RANK_TOL: f64 = 1e-8;
/// Allowed deviation of `T F T^-1` from the nearest integer matrix.
pub const INTEGRALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: RowDVector<f64>,
    pub x0: DVector<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: RowDVector<f64>, x0: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n || b.len() != n || c.len() != n || x0.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "plant: A {}x{}, B {}, C {}, x0 {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len(),
                x0.len()
            )));
        }
        if numerical_rank(&controllability(&a, &b), RANK_TOL) < n {
            return Err(Error::InvalidParameter("(A, B) is not controllable".into()));
        }
        if numerical_rank(&observability(&a, &c), RANK_TOL) < n {
            return Err(Error::InvalidParameter("(A, C) is not observable".into()));
        }
        Ok(PlantModel { a, b, c, x0 })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverController {
    pub k: RowDVector<f64>,
    pub l: DVector<f64>,
    pub xhat0: DVector<f64>,
}

impl ObserverController {
    pub fn new(k: RowDVector<f64>, l: DVector<f64>, xhat0: DVector<f64>) -> Self {
        ObserverController { k, l, xhat0 }
    }

    /// Checks dimensions, closed-loop stability and observability of
    /// `(A+BK, C)`.
    pub fn validate(&self, plant: &PlantModel) -> Result<()> {
        let n = plant.n();
        if self.k.len() != n || self.l.len() != n || self.xhat0.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "controller: K {}, L {}, xhat0 {} for n = {n}",
                self.k.len(),
                self.l.len(),
                self.xhat0.len()
            )));
        }
        let rho = real::spectral_radius(&closed_loop_matrix(plant, self));
        if rho >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "closed loop is not stable (spectral radius {rho})"
            )));
        }
        let m = &plant.a + &plant.b * &self.k;
        let smin = min_singular_value(&observability(&m, &plant.c));
        if smin <= RANK_TOL {
            return Err(Error::ObservabilityFailure(smin));
        }
        Ok(())
    }
}

/// State matrix of the loop in coordinates `[x; xhat]`.
pub fn closed_loop_matrix(plant: &PlantModel, ctrl: &ObserverController) -> DMatrix<f64> {
    let n = plant.n();
    let bk = &plant.b * &ctrl.k;
    let lc = &ctrl.l * &plant.c;
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    m.view_mut((0, n), (n, n)).copy_from(&bk);
    m.view_mut((n, 0), (n, n)).copy_from(&lc);
    m.view_mut((n, n), (n, n)).copy_from(&(&plant.a + &bk - &lc));
    m
}

/// Coordinates `T` and residue gain `R` making `T (A+BK-LC+RC) T^-1` integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RealizationFile", into = "RealizationFile")]
pub struct IntegerRealization {
    t: DMatrix<f64>,
    t_inv: DMatrix<f64>,
    r: DVector<f64>,
    f_int: Vec<i64>,
    target: Vec<i64>,
}

#[derive(Serialize, Deserialize)]
struct RealizationFile {
    t: Vec<Vec<f64>>,
    r: Vec<f64>,
    f_int: Vec<Vec<i64>>,
    target_charpoly: Vec<i64>,
}

impl From<IntegerRealization> for RealizationFile {
    fn from(ir: IntegerRealization) -> Self {
        let n = ir.n();
        RealizationFile {
            t: matrix_to_rows(&ir.t),
            r: ir.r.iter().copied().collect(),
            f_int: ir.f_int.chunks(n).map(<[i64]>::to_vec).collect(),
            target_charpoly: ir.target,
        }
    }
}

impl TryFrom<RealizationFile> for IntegerRealization {
    type Error = Error;

    fn try_from(file: RealizationFile) -> Result<Self> {
        let t = rows_to_matrix(&file.t).ok_or_else(|| Error::Format("ragged T".into()))?;
        let n = t.nrows();
        if t.ncols() != n
            || file.r.len() != n
            || file.f_int.len() != n
            || file.f_int.iter().any(|row| row.len() != n)
            || file.target_charpoly.len() != n
        {
            return Err(Error::Format("realization dimensions disagree".into()));
        }
        let t_inv = t.clone().try_inverse().ok_or(Error::Singular)?;
        Ok(IntegerRealization {
            t,
            t_inv,
            r: DVector::from_vec(file.r),
            f_int: file.f_int.concat(),
            target: file.target_charpoly,
        })
    }
}

impl IntegerRealization {
    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn t_inv(&self) -> &DMatrix<f64> {
        &self.t_inv
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    /// Row-major integer state matrix.
    pub fn f_int(&self) -> &[i64] {
        &self.f_int
    }

    pub fn f_int_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.f_int[i * n + j] as f64)
    }

    /// Coefficients `c0..c(n-1)` of `l^n + c(n-1) l^(n-1) + ... + c0`.
    pub fn target_charpoly(&self) -> &[i64] {
        &self.target
    }
}

/// Builds `(T, R)` in observable canonical coordinates.
///
/// `L' = L - R` is chosen by Ackermann's formula so that `A+BK-L'C` has the
/// target characteristic polynomial; `T` is the observability matrix of
/// `(A+BK-L'C, C)`, which makes `T F T^-1` the companion matrix of the
/// target and `C T^-1 = e1`.
pub fn integerize(
    plant: &PlantModel,
    ctrl: &ObserverController,
    target_charpoly: &[i64],
) -> Result<IntegerRealization> {
    let n = plant.n();
    if target_charpoly.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "target polynomial has {} coefficients, expected {n}",
            target_charpoly.len()
        )));
    }
    if ctrl.k.len() != n || ctrl.l.len() != n {
        return Err(Error::DimensionMismatch("controller gains".into()));
    }
    let m = &plant.a + &plant.b * &ctrl.k;
    let obs = observability(&m, &plant.c);
    let smin = min_singular_value(&obs);
    if smin <= RANK_TOL {
        return Err(Error::ObservabilityFailure(smin));
    }
    let coeffs: Vec<f64> = target_charpoly.iter().map(|&c| c as f64).collect();
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let obs_inv = obs.try_inverse().ok_or(Error::ObservabilityFailure(smin))?;
    let l_prime = real::monic_poly_eval(&m, &coeffs) * obs_inv * e_n;
    let r = &ctrl.l - &l_prime;
    let f = &m - &l_prime * &plant.c;
    let t = observability(&f, &plant.c);
    let t_inv = t.clone().try_inverse().ok_or(Error::Singular)?;
    let tft = &t * &f * &t_inv;
    let mut f_int = Vec::with_capacity(n * n);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = tft[(i, j)];
            worst = worst.max((v - v.round()).abs());
            f_int.push(v.round() as i64);
        }
    }
    if worst.is_nan() || worst >= INTEGRALITY_TOL {
        return Err(Error::NotIntegral(worst));
    }
    Ok(IntegerRealization {
        t,
        t_inv,
        r,
        f_int,
        target: target_charpoly.to_vec(),
    })
}

/// Quantization step `r`, parameter scale `s = 1/s_inv` and message scale
/// `L = 1/l_inv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub r: f64,
    pub s_inv: u64,
    pub l_inv: u64,
}

impl Scales {
    pub fn new(r: f64, s_inv: u64, l_inv: u64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidParameter(format!("quantization step r = {r}")));
        }
        if s_inv == 0 || l_inv == 0 {
            return Err(Error::InvalidParameter("1/s and 1/L must be positive integers".into()));
        }
        Ok(Scales { r, s_inv, l_inv })
    }

    pub fn s(&self) -> f64 {
        1.0 / self.s_inv as f64
    }

    pub fn scale_l(&self) -> f64 {
        1.0 / self.l_inv as f64
    }

    /// `L r s^2`, the factor mapping a lifted controller output back to
    /// real units.
    pub fn restore_factor(&self) -> f64 {
        self.r / (self.l_inv as f64 * (self.s_inv as f64).powi(2))
    }

    /// Chooses scales for a target accuracy `epsilon`.
    ///
    /// `nominal` holds signal bounds of the unencrypted loop in normal
    /// operation and sets the accuracy: `r = epsilon / 10`, and `1/s` is the
    /// smallest power of two with `s * state <= epsilon / 40`. `worst` also
    /// covers abnormal operation (attacks) and only has to fit: every scaled
    /// signal must stay below `q / 8`, a factor 4 of headroom over the `q / 2`
    /// wraparound limit. If it does not fit even at `1/L = 1`, `1/s` is
    /// halved until it does, giving up accuracy before failing. `1/L` is then
    /// the largest power of two, at most 2^30, that fits.
    pub fn size(nominal: &SignalBounds, worst: &SignalBounds, q: Modulus, epsilon: f64) -> Result<Scales> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {epsilon}")));
        }
        let r = epsilon / 10.0;
        let mut s_inv: u64 = 1;
        while nominal.state / s_inv as f64 > epsilon / 40.0 && s_inv < 1 << 24 {
            s_inv *= 2;
        }
        let bounds = nominal.max(worst);
        let limit = q.value() as f64 / 8.0;
        let (quantity, magnitude) = loop {
            let (quantity, magnitude) = Scales { r, s_inv, l_inv: 1 }.largest_scaled(&bounds);
            // J = 1/s^2 must itself fit
            let (quantity, magnitude) = match (s_inv as f64).powi(2) {
                j if j > magnitude => ("J", j),
                _ => (quantity, magnitude),
            };
            if magnitude < limit || s_inv == 1 {
                break (quantity, magnitude);
            }
            s_inv /= 2;
        };
        if magnitude >= limit {
            return Err(too_small(quantity, magnitude, q));
        }
        let mut l_inv: u64 = 1;
        while l_inv < 1 << 30 && 2.0 * l_inv as f64 * magnitude < limit {
            l_inv *= 2;
        }
        Scales::new(r, s_inv, l_inv)
    }

    /// Largest scaled magnitude at `1/L = 1` and its name.
    fn largest_scaled(&self, b: &SignalBounds) -> (&'static str, f64) {
        let s2 = (self.s_inv as f64).powi(2);
        [
            ("controller state", b.state * self.s_inv as f64 / self.r),
            ("control input u", b.input * s2 / self.r),
            ("residue", b.residue * s2 / self.r),
            ("measurement y", b.measurement / self.r),
        ]
        .into_iter()
        .fold(("residue", 0.0), |acc, x| if x.1 > acc.1 { x } else { acc })
    }
}

/// Worst-case magnitudes in real units: `state` bounds entries of `T xhat`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalBounds {
    pub state: f64,
    pub input: f64,
    pub residue: f64,
    pub measurement: f64,
}

impl SignalBounds {
    /// Entrywise maximum.
    pub fn max(&self, other: &SignalBounds) -> SignalBounds {
        SignalBounds {
            state: self.state.max(other.state),
            input: self.input.max(other.input),
            residue: self.residue.max(other.residue),
            measurement: self.measurement.max(other.measurement),
        }
    }
}

fn too_small(quantity: &str, magnitude: f64, q: Modulus) -> Error {
    Error::ModulusTooSmall {
        quantity: quantity.to_string(),
        magnitude,
        required: 2.0 * magnitude,
        q: q.value(),
    }
}

/// Rounds half away from zero and reduces, rejecting values that would wrap.
pub fn round_into(v: f64, q: Modulus, quantity: &str) -> Result<u64> {
    let rounded = v.round();
    check_magnitude(rounded, q, quantity)?;
    Ok(q.reduce_i128(rounded as i128))
}

fn check_magnitude(v: f64, q: Modulus, quantity: &str) -> Result<()> {
    if !v.is_finite() || v.abs() >= q.value() as f64 / 2.0 {
        return Err(too_small(quantity, v.abs(), q));
    }
    Ok(())
}

fn round_matrix(m: &DMatrix<f64>, q: Modulus, quantity: &str) -> Result<ZqMatrix> {
    let mut data = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(round_into(m[(i, j)], q, quantity)?);
        }
    }
    Ok(ZqMatrix::new(m.nrows(), m.ncols(), data, q))
}

/// Controller parameters over `Z_q`:
///
/// ```text
/// F = T F T^-1             G = round(T (L - R) / s)   H = round(-C T^-1 / s)
/// J = 1 / s^2              R = round(T R / s)         P = round(K T^-1 / s)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsFile", into = "ParamsFile")]
pub struct ScaledParams {
    f: ZqMatrix,
    g: ZqMatrix,
    h: ZqMatrix,
    j: ZqScalar,
    r: ZqMatrix,
    p: ZqMatrix,
    scales: Scales,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    q: Modulus,
    scales: Scales,
    f: Vec<Vec<i64>>,
    g: Vec<i64>,
    h: Vec<i64>,
    j: i64,
    r: Vec<i64>,
    p: Vec<i64>,
}

impl From<ScaledParams> for ParamsFile {
    fn from(sp: ScaledParams) -> Self {
        let n = sp.n();
        ParamsFile {
            q: sp.modulus(),
            scales: sp.scales,
            f: sp.f.lifted().chunks(n).map(<[i64]>::to_vec).collect(),
            g: sp.g.lifted(),
            h: sp.h.lifted(),
            j: sp.j.lift(),
            r: sp.r.lifted(),
            p: sp.p.lifted(),
        }
    }
}

impl TryFrom<ParamsFile> for ScaledParams {
    type Error = Error;

    fn try_from(file: ParamsFile) -> Result<Self> {
        let q = file.q;
        let n = file.f.len();
        if file.f.iter().any(|row| row.len() != n) || [&file.g, &file.h, &file.r, &file.p].iter().any(|v| v.len() != n)
        {
            return Err(Error::Format("parameter dimensions disagree".into()));
        }
        let scales = Scales::new(file.scales.r, file.scales.s_inv, file.scales.l_inv)?;
        Ok(ScaledParams {
            f: ZqMatrix::from_i64(n, n, &file.f.concat(), q),
            g: ZqMatrix::from_i64(n, 1, &file.g, q),
            h: ZqMatrix::from_i64(1, n, &file.h, q),
            j: ZqScalar::new(q.reduce(file.j), q),
            r: ZqMatrix::from_i64(n, 1, &file.r, q),
            p: ZqMatrix::from_i64(1, n, &file.p, q),
            scales,
        })
    }
}

impl ScaledParams {
    pub fn n(&self) -> usize {
        self.f.rows()
    }
    pub fn modulus(&self) -> Modulus {
        self.f.modulus()
    }
    pub fn scales(&self) -> Scales {
        self.scales
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
    pub fn r(&self) -> &ZqMatrix {
        &self.r
    }
    pub fn p(&self) -> &ZqMatrix {
        &self.p
    }

    /// The measurement-driven part `(F, G, H, J)` that inputs are encrypted
    /// against.
    pub fn system(&self) -> Result<SystemZq> {
        SystemZq::new(self.f.clone(), self.g.clone(), self.h.clone(), self.j)
    }
}

pub fn scale_params(
    ir: &IntegerRealization,
    ctrl: &ObserverController,
    plant: &PlantModel,
    scales: Scales,
    q: Modulus,
) -> Result<ScaledParams> {
    let n = ir.n();
    if plant.n() != n || ctrl.l.len() != n || ctrl.k.len() != n {
        return Err(Error::DimensionMismatch("realization and model disagree".into()));
    }
    let s_inv = scales.s_inv as f64;
    let mut f = Vec::with_capacity(n * n);
    for &v in &ir.f_int {
        check_magnitude(v as f64, q, "F")?;
        f.push(q.reduce(v));
    }
    let j = (scales.s_inv as u128) * (scales.s_inv as u128);
    if j as f64 >= q.value() as f64 / 2.0 {
        return Err(too_small("J", j as f64, q));
    }
    let g = &ir.t * (&ctrl.l - &ir.r) * s_inv;
    let h = -(&plant.c * &ir.t_inv) * s_inv;
    let r = &ir.t * &ir.r * s_inv;
    let p = &ctrl.k * &ir.t_inv * s_inv;
    Ok(ScaledParams {
        f: ZqMatrix::new(n, n, f, q),
        g: round_matrix(&DMatrix::from_column_slice(n, 1, g.as_slice()), q, "G")?,
        h: round_matrix(&DMatrix::from_row_slice(1, n, h.as_slice()), q, "H")?,
        j: ZqScalar::new(j as u64, q),
        r: round_matrix(&DMatrix::from_column_slice(n, 1, r.as_slice()), q, "R")?,
        p: round_matrix(&DMatrix::from_row_slice(1, n, p.as_slice()), q, "P")?,
        scales,
    })
}

/// `(1/L) round(T xhat0 / (r s)) mod q`.
pub fn quantize_initial_state(
    xhat0: &DVector<f64>,
    ir: &IntegerRealization,
    scales: Scales,
    q: Modulus,
) -> Result<ZqMatrix> {
    if xhat0.len() != ir.n() {
        return Err(Error::DimensionMismatch("initial controller state".into()));
    }
    let scaled = &ir.t * xhat0 * (scales.s_inv as f64 / scales.r);
    let mut data = Vec::with_capacity(scaled.len());
    for &v in scaled.iter() {
        data.push(scale_up(v, scales.l_inv, q, "initial controller state")?);
    }
    Ok(ZqMatrix::column(&data, q))
}

/// `(1/L) round(y / r) mod q`.
pub fn quantize_measurement(y: f64, scales: Scales, q: Modulus) -> Result<ZqScalar> {
    Ok(ZqScalar::new(
        scale_up(y / scales.r, scales.l_inv, q, "measurement y")?,
        q,
    ))
}

fn scale_up(v: f64, l_inv: u64, q: Modulus, quantity: &str) -> Result<u64> {
    let rounded = v.round();
    let total = rounded * l_inv as f64;
    check_magnitude(total, q, quantity)?;
    Ok(q.reduce_i128(rounded as i128 * l_inv as i128))
}

/// `L r s^2 lift(r1)`, computed from the disclosed element alone.
pub fn restore_residue(r1: ZqScalar, scales: Scales) -> f64 {
    r1.lift() as f64 * scales.restore_factor()
}

/// `L r s^2 lift(u)` for a decrypted controller output.
pub fn restore_input(u_dec: ZqScalar, scales: Scales) -> f64 {
    u_dec.lift() as f64 * scales.restore_factor()
}

/// Integer division rounding half away from zero.
pub fn div_round(a: i128, b: i128) -> i128 {
    assert!(b > 0, "divisor must be positive");
    let q = a.abs() / b;
    let rem = a.abs() % b;
    let m = if 2 * rem >= b { q + 1 } else { q };
    if a < 0 {
        -m
    } else {
        m
    }
}

/// Trivial row `[round(s^2 lift(r1)), 0, ..., 0]` of width `N + 2`, fed back
/// into the controller state as the residue input.
pub fn residue_feedback_ciphertext(r1: ZqScalar, scales: Scales, dim: usize) -> Ciphertext {
    let q = r1.modulus();
    let s2 = (scales.s_inv as i128) * (scales.s_inv as i128);
    let v = q.reduce_i128(div_round(r1.lift() as i128, s2));
    let mut body = ZqMatrix::zeros(1, dim + 2, q);
    body.set(0, 0, v);
    Ciphertext::from_body(body, CiphertextKind::Modified).expect("width matches")
}
