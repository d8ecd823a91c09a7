//! Closed-loop simulation: plant, encrypted controller, unencrypted
//! reference controller, residue detector and ciphertext forgery.
//!
//! The encrypted loop and the reference loop drive two separate copies of
//! the plant from the same initial state, so their traces can be compared
//! step by step. Attacks are applied to both: to ciphertexts in the
//! encrypted loop, and to the corresponding real signal in the reference.

pub mod detector;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::codec::real::numerical_rank;
use crate::codec::{
    closed_loop_matrix, integerize, quantize_initial_state, quantize_measurement, residue_feedback_ciphertext,
    restore_input, round_into, scale_params, IntegerRealization, ObserverController, PlantModel, ScaledParams, Scales,
    SignalBounds, RANK_TOL,
};
use crate::encryptor::{decrypt_mod, disclosed_residue, EncryptorSession};
use crate::error::{Error, Result};
use crate::field::Modulus;
use crate::linalg::ZqMatrix;
use crate::lwe::{encrypt, hom_matmul, keygen, Ciphertext, RngStream};
use crate::par::{map_slice, Parallelism};

pub use detector::{detect, Detection, Detector};

/// States larger than this are reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Threshold = this factor times the largest attack-free reference residue.
pub const THRESHOLD_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackKind {
    /// Adds a trivial encryption of the bias to each measurement ciphertext.
    MeasurementBias,
    /// Re-sends the measurement ciphertext from `lag` steps earlier.
    MeasurementReplay { lag: usize },
    /// Adds a trivial encryption of the bias to each controller output.
    OutputBias,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackMagnitude {
    Absolute(f64),
    /// Multiple of the detector threshold.
    ThresholdMultiple(f64),
}

impl AttackMagnitude {
    pub fn resolve(self, theta: f64) -> f64 {
        match self {
            AttackMagnitude::Absolute(v) => v,
            AttackMagnitude::ThresholdMultiple(k) => k * theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub start: usize,
    /// Exclusive; `None` keeps the attack on until the end.
    pub stop: Option<usize>,
    pub magnitude: AttackMagnitude,
}

impl AttackSpec {
    pub fn active(&self, t: usize) -> bool {
        t >= self.start && self.stop.is_none_or(|s| t < s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleChoice {
    Fixed(Scales),
    /// Sized from a reference run for the given residue accuracy.
    Sized {
        epsilon: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CryptoParams {
    pub q: Modulus,
    pub dimension: usize,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub plant: PlantModel,
    pub controller: ObserverController,
    pub target_charpoly: Vec<i64>,
    pub scales: ScaleChoice,
    pub crypto: CryptoParams,
    pub horizon: usize,
    /// `None` calibrates from an attack-free reference run.
    pub threshold: Option<f64>,
    pub attack: Option<AttackSpec>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if let Some(theta) = self.threshold {
            if !(theta.is_finite() && theta >= 0.0) {
                return Err(Error::InvalidParameter(format!("threshold {theta}")));
            }
        }
        if self.crypto.dimension == 0 {
            return Err(Error::InvalidParameter("key dimension must be positive".into()));
        }
        if !(self.crypto.sigma.is_finite() && self.crypto.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma {}", self.crypto.sigma)));
        }
        if let ScaleChoice::Sized { epsilon } = self.scales {
            if !(epsilon.is_finite() && epsilon > 0.0) {
                return Err(Error::InvalidParameter(format!("epsilon {epsilon}")));
            }
        }
        if let Some(AttackSpec {
            kind: AttackKind::MeasurementReplay { lag: 0 },
            ..
        }) = self.attack
        {
            return Err(Error::InvalidParameter("replay lag must be positive".into()));
        }
        self.controller.validate(&self.plant)
    }
}

/// `x+ = A x + B u`, `y = C x`.
pub fn step_plant(plant: &PlantModel, x: &DVector<f64>, u: f64, t: usize) -> Result<(DVector<f64>, f64)> {
    let y = (&plant.c * x)[0];
    let next = &plant.a * x + &plant.b * u;
    if !y.is_finite() || next.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::NonFinite(t));
    }
    Ok((next, y))
}

/// Unencrypted observer-based controller; returns `(xhat+, u, r)`.
pub fn step_reference_controller(
    plant: &PlantModel,
    ctrl: &ObserverController,
    xhat: &DVector<f64>,
    y: f64,
) -> (DVector<f64>, f64, f64) {
    let u = (&ctrl.k * xhat)[0];
    let r = y - (&plant.c * xhat)[0];
    let next = &plant.a * xhat + &plant.b * u + &ctrl.l * r;
    (next, u, r)
}

/// `x+ = F x + G y + R rfb`, `u = P x`, `r = H x + J y`, all over
/// ciphertexts. Returns `(x+, u, r)`.
pub fn step_encrypted_controller(
    xct: &Ciphertext,
    yct: &Ciphertext,
    rfb: &Ciphertext,
    params: &ScaledParams,
) -> Result<(Ciphertext, Ciphertext, Ciphertext)> {
    if xct.rows() != params.n() || yct.rows() != 1 || rfb.rows() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "controller step: state {} rows, input {}, feedback {}",
            xct.rows(),
            yct.rows(),
            rfb.rows()
        )));
    }
    let j = ZqMatrix::scalar(params.j());
    let next = hom_matmul(params.f(), xct)?
        .add(&hom_matmul(params.g(), yct)?)?
        .add(&hom_matmul(params.r(), rfb)?)?;
    let u = hom_matmul(params.p(), xct)?;
    let r = hom_matmul(params.h(), xct)?.add(&hom_matmul(&j, yct)?)?;
    Ok((next, u, r))
}

/// Encrypted controller state machine. Holds no key.
#[derive(Debug, Clone)]
pub struct EncryptedController {
    params: ScaledParams,
    x: Ciphertext,
}

impl EncryptedController {
    pub fn new(params: ScaledParams, x0: Ciphertext) -> Result<Self> {
        if x0.rows() != params.n() || x0.modulus() != params.modulus() {
            return Err(Error::DimensionMismatch("initial controller ciphertext".into()));
        }
        Ok(EncryptedController { params, x: x0 })
    }

    pub fn state(&self) -> &Ciphertext {
        &self.x
    }

    pub fn params(&self) -> &ScaledParams {
        &self.params
    }

    /// Consumes one measurement ciphertext; returns `(u, r)` ciphertexts.
    /// The residue's disclosed element is fed back as a trivial ciphertext.
    pub fn step(&mut self, yct: &Ciphertext) -> Result<(Ciphertext, Ciphertext)> {
        let j = ZqMatrix::scalar(self.params.j());
        let r = hom_matmul(self.params.h(), &self.x)?.add(&hom_matmul(&j, yct)?)?;
        let rfb = residue_feedback_ciphertext(disclosed_residue(&r), self.params.scales(), self.x.dim());
        let (next, u, _) = step_encrypted_controller(&self.x, yct, &rfb, &self.params)?;
        self.x = next;
        Ok((u, r))
    }
}

/// Adds the trivial encryption `[delta, 0, ..., 0]`; needs no key.
pub fn inject_attack(ct: &Ciphertext, delta: &ZqMatrix) -> Result<Ciphertext> {
    if delta.shape() != (ct.rows(), 1) {
        return Err(Error::DimensionMismatch(format!(
            "attack vector {:?} for {} ciphertext rows",
            delta.shape(),
            ct.rows()
        )));
    }
    ct.add(&Ciphertext::trivial(delta, ct.dim(), ct.kind())?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ReferenceStep {
    y_seen: f64,
    u_applied: f64,
    r: f64,
}

/// Plant plus unencrypted controller, with the attack applied to real signals.
struct ReferenceLoop<'a> {
    plant: &'a PlantModel,
    ctrl: &'a ObserverController,
    attack: Option<(AttackSpec, f64)>,
    x: DVector<f64>,
    xhat: DVector<f64>,
    y_history: Vec<f64>,
}

impl<'a> ReferenceLoop<'a> {
    fn new(plant: &'a PlantModel, ctrl: &'a ObserverController, attack: Option<(AttackSpec, f64)>) -> Self {
        ReferenceLoop {
            plant,
            ctrl,
            attack,
            x: plant.x0.clone(),
            xhat: ctrl.xhat0.clone(),
            y_history: Vec::new(),
        }
    }

    fn step(&mut self, t: usize) -> Result<ReferenceStep> {
        let y = (&self.plant.c * &self.x)[0];
        self.y_history.push(y);
        let active = self.attack.filter(|(a, _)| a.active(t));
        let y_seen = match active {
            Some((
                AttackSpec {
                    kind: AttackKind::MeasurementBias,
                    ..
                },
                d,
            )) => y + d,
            Some((
                AttackSpec {
                    kind: AttackKind::MeasurementReplay { lag },
                    ..
                },
                _,
            )) if t >= lag => self.y_history[t - lag],
            _ => y,
        };
        let (xhat, u, r) = step_reference_controller(self.plant, self.ctrl, &self.xhat, y_seen);
        let u_applied = match active {
            Some((
                AttackSpec {
                    kind: AttackKind::OutputBias,
                    ..
                },
                d,
            )) => u + d,
            _ => u,
        };
        let (x, _) = step_plant(self.plant, &self.x, u_applied, t)?;
        self.x = x;
        self.xhat = xhat;
        Ok(ReferenceStep { y_seen, u_applied, r })
    }
}

/// Runs the reference loop and records the magnitudes the encoding has to
/// accommodate. `state` is measured in the integer-realization coordinates.
pub fn reference_bounds(
    plant: &PlantModel,
    ctrl: &ObserverController,
    t: &DMatrix<f64>,
    horizon: usize,
    attack: Option<(AttackSpec, f64)>,
) -> Result<SignalBounds> {
    let mut lp = ReferenceLoop::new(plant, ctrl, attack);
    let mut b = SignalBounds::default();
    for step in 0..horizon {
        b.state = b.state.max((t * &lp.xhat).amax());
        let s = lp.step(step)?;
        b.input = b.input.max(s.u_applied.abs()).max((&ctrl.k * &lp.xhat)[0].abs());
        b.residue = b.residue.max(s.r.abs());
        b.measurement = b.measurement.max(s.y_seen.abs());
    }
    b.state = b.state.max((t * &lp.xhat).amax());
    Ok(b)
}

/// `THRESHOLD_FACTOR` times the largest residue of an attack-free reference run.
pub fn calibrate_threshold(plant: &PlantModel, ctrl: &ObserverController, horizon: usize) -> Result<f64> {
    let mut lp = ReferenceLoop::new(plant, ctrl, None);
    let mut worst = 0.0f64;
    for t in 0..horizon {
        worst = worst.max(lp.step(t)?.r.abs());
    }
    Ok(THRESHOLD_FACTOR * worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: usize,
    pub y: f64,
    pub u_enc: f64,
    pub u_ref: f64,
    pub r_disclosed: f64,
    pub r_ref: f64,
    pub alarm: bool,
    pub attack_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub horizon: usize,
    pub q: u64,
    pub dimension: usize,
    pub sigma: f64,
    pub scales: Scales,
    pub theta: f64,
    pub attack_magnitude: Option<f64>,
    pub max_residue_gap: f64,
    pub max_input_gap: f64,
    pub alarms: usize,
    pub first_alarm: Option<usize>,
    /// Alarms raised before the attack starts (all alarms if there is none).
    pub false_alarms: usize,
    /// Steps from attack onset to the first alarm at or after it.
    pub detection_delay: Option<usize>,
    /// Encryptions of the controller state. The loop encrypts it once and
    /// never re-encrypts.
    pub state_encryptions: usize,
    pub input_encryptions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub records: Vec<TraceRecord>,
    pub summary: TraceSummary,
}

/// Everything derived from a config before the loop starts.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub realization: IntegerRealization,
    pub params: ScaledParams,
    pub theta: f64,
    pub attack: Option<(AttackSpec, f64)>,
}

pub fn prepare_scenario(cfg: &ScenarioConfig) -> Result<PreparedScenario> {
    cfg.validate()?;
    let (plant, ctrl) = (&cfg.plant, &cfg.controller);
    let realization = integerize(plant, ctrl, &cfg.target_charpoly)?;
    let theta = match cfg.threshold {
        Some(t) => t,
        None => calibrate_threshold(plant, ctrl, cfg.horizon)?,
    };
    let attack = cfg.attack.map(|a| (a, a.magnitude.resolve(theta)));
    let scales = match cfg.scales {
        ScaleChoice::Fixed(s) => s,
        ScaleChoice::Sized { epsilon } => {
            let nominal = reference_bounds(plant, ctrl, realization.t(), cfg.horizon, None)?;
            let worst = match attack {
                Some(_) => reference_bounds(plant, ctrl, realization.t(), cfg.horizon, attack)?,
                None => nominal,
            };
            Scales::size(&nominal, &worst, cfg.crypto.q, epsilon)?
        }
    };
    let params = scale_params(&realization, ctrl, plant, scales, cfg.crypto.q)?;
    Ok(PreparedScenario {
        realization,
        params,
        theta,
        attack,
    })
}

fn check_fits(v: f64, q: Modulus, quantity: &str) -> Result<()> {
    round_into(v, q, quantity).map(|_| ())
}

/// Runs the encrypted and the reference loop side by side.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimTrace> {
    let prep = prepare_scenario(cfg)?;
    let (plant, ctrl) = (&cfg.plant, &cfg.controller);
    let CryptoParams {
        q,
        dimension,
        sigma,
        seed,
    } = cfg.crypto;
    let scales = prep.params.scales();
    let restore = scales.restore_factor();
    let t_mat = prep.realization.t();

    let sk = keygen(dimension, q, sigma, &mut RngStream::derive(seed, 0))?;
    let mut session = EncryptorSession::open(sk.clone(), &prep.params.system()?, RngStream::derive(seed, 1))?;
    let x0 = quantize_initial_state(&ctrl.xhat0, &prep.realization, scales, q)?;
    let x0ct = session.encrypt_initial_state(&x0)?;
    let state_encryptions = 1;
    let mut controller = EncryptedController::new(prep.params.clone(), x0ct)?;
    let detector = Detector::new(prep.theta, scales)?;
    let mut reference = ReferenceLoop::new(plant, ctrl, prep.attack);

    let attack_delta = match prep.attack {
        Some((
            AttackSpec {
                kind: AttackKind::MeasurementBias,
                ..
            },
            d,
        )) => Some(ZqMatrix::column(&[quantize_measurement(d, scales, q)?.value()], q)),
        Some((
            AttackSpec {
                kind: AttackKind::OutputBias,
                ..
            },
            d,
        )) => Some(ZqMatrix::column(&[round_into(d / restore, q, "output attack")?], q)),
        _ => None,
    };
    let mut sent: Vec<Ciphertext> = Vec::new();

    let mut x = plant.x0.clone();
    let mut records = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        let state_scale = scales.l_inv as f64 * scales.s_inv as f64 / scales.r;
        check_fits((t_mat * &reference.xhat).amax() * state_scale, q, "controller state")?;

        let y = (&plant.c * &x)[0];
        let yct = session.encrypt_input(quantize_measurement(y, scales, q)?.value())?;
        let active = prep.attack.filter(|(a, _)| a.active(t)).map(|(a, _)| a.kind);
        let y_sent = match (active, &attack_delta) {
            (Some(AttackKind::MeasurementBias), Some(d)) => inject_attack(&yct, d)?,
            (Some(AttackKind::MeasurementReplay { lag }), _) if t >= lag => sent[t - lag].clone(),
            _ => yct.clone(),
        };
        if matches!(
            prep.attack,
            Some((
                AttackSpec {
                    kind: AttackKind::MeasurementReplay { .. },
                    ..
                },
                _
            ))
        ) {
            sent.push(yct);
        }

        let (uct, rct) = controller.step(&y_sent)?;
        let detection = detector.observe(&rct);
        let uct = match (active, &attack_delta) {
            (Some(AttackKind::OutputBias), Some(d)) => inject_attack(&uct, d)?,
            _ => uct,
        };
        let u_enc = restore_input(decrypt_mod(&uct, &sk)?.entry(0, 0), scales);
        let (x_next, _) = step_plant(plant, &x, u_enc, t)?;

        let rs = reference.step(t)?;
        check_fits(rs.u_applied / restore, q, "control input u")?;
        check_fits(rs.r / restore, q, "residue")?;

        records.push(TraceRecord {
            t,
            y,
            u_enc,
            u_ref: rs.u_applied,
            r_disclosed: detection.residue,
            r_ref: rs.r,
            alarm: detection.alarm,
            attack_active: active.is_some(),
        });
        x = x_next;
    }

    let summary = summarize(&records, cfg, &prep, state_encryptions, session.step());
    Ok(SimTrace { records, summary })
}

fn summarize(
    records: &[TraceRecord],
    cfg: &ScenarioConfig,
    prep: &PreparedScenario,
    state_encryptions: usize,
    input_encryptions: u64,
) -> TraceSummary {
    let max_gap = |f: fn(&TraceRecord) -> f64| records.iter().map(f).fold(0.0, f64::max);
    let attack_start = prep.attack.map(|(a, _)| a.start);
    let first_alarm = records.iter().find(|r| r.alarm).map(|r| r.t);
    TraceSummary {
        horizon: cfg.horizon,
        q: cfg.crypto.q.value(),
        dimension: cfg.crypto.dimension,
        sigma: cfg.crypto.sigma,
        scales: prep.params.scales(),
        theta: prep.theta,
        attack_magnitude: prep.attack.map(|(_, d)| d),
        max_residue_gap: max_gap(|r| (r.r_disclosed - r.r_ref).abs()),
        max_input_gap: max_gap(|r| (r.u_enc - r.u_ref).abs()),
        alarms: records.iter().filter(|r| r.alarm).count(),
        first_alarm,
        false_alarms: records
            .iter()
            .filter(|r| r.alarm && attack_start.is_none_or(|s| r.t < s))
            .count(),
        detection_delay: attack_start.and_then(|s| records.iter().find(|r| r.alarm && r.t >= s).map(|r| r.t - s)),
        state_encryptions,
        input_encryptions,
    }
}

/// Ciphertexts the loop sends before its first step, for inspection.
#[derive(Debug, Clone)]
pub struct OpeningCiphertexts {
    pub initial_state: Ciphertext,
    pub measurement: Ciphertext,
    /// Conventional encryption of the same quantized first measurement.
    pub measurement_conventional: Ciphertext,
}

/// Re-derives the first ciphertexts of [`run_scenario`] from the same seeds,
/// so they are byte-identical to what the loop sent.
pub fn opening_ciphertexts(cfg: &ScenarioConfig) -> Result<OpeningCiphertexts> {
    let prep = prepare_scenario(cfg)?;
    let CryptoParams {
        q,
        dimension,
        sigma,
        seed,
    } = cfg.crypto;
    let scales = prep.params.scales();
    let sk = keygen(dimension, q, sigma, &mut RngStream::derive(seed, 0))?;
    let mut session = EncryptorSession::open(sk.clone(), &prep.params.system()?, RngStream::derive(seed, 1))?;
    let x0 = quantize_initial_state(&cfg.controller.xhat0, &prep.realization, scales, q)?;
    let initial_state = session.encrypt_initial_state(&x0)?;
    let y0 = quantize_measurement((&cfg.plant.c * &cfg.plant.x0)[0], scales, q)?.value();
    let measurement = session.encrypt_input(y0)?;
    let measurement_conventional = encrypt(&ZqMatrix::column(&[y0], q), &sk, &mut RngStream::derive(seed, 2))?;
    Ok(OpeningCiphertexts {
        initial_state,
        measurement,
        measurement_conventional,
    })
}

/// Independent scenarios, each with its own seed-derived randomness.
pub fn run_scenarios(cfgs: &[ScenarioConfig], mode: Parallelism) -> Vec<Result<SimTrace>> {
    map_slice(cfgs, mode, run_scenario)
}

pub const CSV_HEADER: [&str; 8] = [
    "t",
    "y",
    "u_enc",
    "u_ref",
    "r_disclosed",
    "r_ref",
    "alarm",
    "attack_active",
];

fn float(v: f64) -> String {
    format!("{:.16e}", v + 0.0)
}

/// CSV with [`CSV_HEADER`]; reals in scientific notation with 17
/// significant digits, booleans as 0/1.
pub fn write_csv<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &trace.records {
        w.write_record([
            r.t.to_string(),
            float(r.y),
            float(r.u_enc),
            float(r.u_ref),
            float(r.r_disclosed),
            float(r.r_ref),
            u8::from(r.alarm).to_string(),
            u8::from(r.attack_active).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Ranks of the observability matrices from the residue to the loop state
/// `[x; xhat]` and to the estimation error `x - xhat`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidueObservability {
    pub n: usize,
    pub loop_rank: usize,
    pub error_rank: usize,
}

pub fn residue_observability(plant: &PlantModel, ctrl: &ObserverController) -> ResidueObservability {
    let n = plant.n();
    let m = closed_loop_matrix(plant, ctrl);
    // r = C x - C xhat
    let mut out = nalgebra::RowDVector::zeros(2 * n);
    for j in 0..n {
        out[j] = plant.c[j];
        out[n + j] = -plant.c[j];
    }
    let e = &plant.a - &ctrl.l * &plant.c;
    ResidueObservability {
        n,
        loop_rank: numerical_rank(&crate::codec::real::observability(&m, &out), RANK_TOL),
        error_rank: numerical_rank(&crate::codec::real::observability(&e, &plant.c), RANK_TOL),
    }
}

#[cfg(test)]
mod tests;
