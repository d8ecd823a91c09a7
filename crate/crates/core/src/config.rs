//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! horizon = 1000          # steps, >= 1
//! seed = 7                # optional, default 0; --seed overrides
//! epsilon = 1e-3          # optional residue accuracy used to size scales
//! threshold = 0.5         # optional; default calibrates from the reference loop
//!
//! [plant]
//! a = [[1.0, 0.1], [0.0, 1.0]]
//! b = [0.005, 0.1]
//! c = [1.0, 0.0]
//! x0 = [0.1, 0.0]
//!
//! [controller]
//! k = [-6.0, -4.7]
//! l = [1.1, 3.0]
//! xhat0 = [0.0, 0.0]
//! target_charpoly = [0, 0]   # optional, c0..c(n-1) of the monic target
//!
//! [scales]                   # optional; sized from epsilon when absent
//! r = 1e-4
//! s_inv = 4096
//! l_inv = 16
//!
//! [crypto]                   # optional; each field defaults from the profile
//! q = 281474976710677        # prime, or q_bits = 48 for the next prime >= 2^48
//! dimension = 1024
//! sigma = 3.2
//!
//! [attack]                   # optional
//! kind = "measurement_bias"  # or "measurement_replay", "output_bias"
//! start = 500
//! stop = 600                 # optional, exclusive
//! magnitude_theta = 10.0     # or magnitude = 5.0 in output units
//! lag = 10                   # replay only
//! ```

use std::path::Path;

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::codec::real::rows_to_matrix;
use crate::codec::{ObserverController, PlantModel, Scales};
use crate::error::{Error, Result};
use crate::field::Modulus;
use crate::sim::{AttackKind, AttackMagnitude, AttackSpec, CryptoParams, ScaleChoice, ScenarioConfig};

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small, noise-free parameters for fast checks.
    #[default]
    Test,
    /// Desk-scale cryptographic parameters.
    Demo,
}

impl Profile {
    pub fn dimension(self) -> usize {
        match self {
            Profile::Test => 4,
            Profile::Demo => 1024,
        }
    }

    pub fn sigma(self) -> f64 {
        match self {
            Profile::Test => 0.0,
            Profile::Demo => 3.2,
        }
    }

    pub fn modulus(self) -> Modulus {
        Modulus::next_prime_at_least(1 << 48).expect("a prime exists just above 2^48")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub horizon: usize,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub threshold: Option<f64>,
    pub plant: PlantSection,
    pub controller: ControllerSection,
    pub scales: Option<Scales>,
    pub crypto: Option<CryptoSection>,
    pub attack: Option<AttackSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub target_charpoly: Option<Vec<i64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CryptoSection {
    pub q: Option<u64>,
    pub q_bits: Option<u32>,
    pub dimension: Option<usize>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKindName {
    MeasurementBias,
    MeasurementReplay,
    OutputBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKindName,
    pub start: usize,
    pub stop: Option<usize>,
    pub magnitude: Option<f64>,
    pub magnitude_theta: Option<f64>,
    pub lag: Option<usize>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl CryptoSection {
    fn resolve(&self, profile: Profile, seed: u64) -> Result<CryptoParams> {
        let q = match (self.q, self.q_bits) {
            (Some(_), Some(_)) => return Err(config_err("crypto: give q or q_bits, not both")),
            (Some(q), None) => Modulus::new(q)?,
            (None, Some(bits)) if (2..62).contains(&bits) => Modulus::next_prime_at_least(1 << bits)?,
            (None, Some(bits)) => return Err(config_err(format!("crypto: q_bits = {bits} outside 2..62"))),
            (None, None) => profile.modulus(),
        };
        Ok(CryptoParams {
            q,
            dimension: self.dimension.unwrap_or(profile.dimension()),
            sigma: self.sigma.unwrap_or(profile.sigma()),
            seed,
        })
    }
}

impl AttackSection {
    fn resolve(&self) -> Result<AttackSpec> {
        let kind = match (self.kind, self.lag) {
            (AttackKindName::MeasurementReplay, Some(lag)) => AttackKind::MeasurementReplay { lag },
            (AttackKindName::MeasurementReplay, None) => return Err(config_err("attack: replay needs lag")),
            (_, Some(_)) => return Err(config_err("attack: lag only applies to measurement_replay")),
            (AttackKindName::MeasurementBias, None) => AttackKind::MeasurementBias,
            (AttackKindName::OutputBias, None) => AttackKind::OutputBias,
        };
        let magnitude = match (self.magnitude, self.magnitude_theta, kind) {
            (Some(m), None, _) => AttackMagnitude::Absolute(m),
            (None, Some(k), _) => AttackMagnitude::ThresholdMultiple(k),
            (None, None, AttackKind::MeasurementReplay { .. }) => AttackMagnitude::Absolute(0.0),
            _ => return Err(config_err("attack: give exactly one of magnitude, magnitude_theta")),
        };
        if self.stop.is_some_and(|s| s <= self.start) {
            return Err(config_err("attack: stop must be after start"));
        }
        Ok(AttackSpec {
            kind,
            start: self.start,
            stop: self.stop,
            magnitude,
        })
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Builds a validated scenario; `seed` overrides the file's seed.
    pub fn resolve(&self, profile: Profile, seed: Option<u64>) -> Result<ScenarioConfig> {
        let p = &self.plant;
        let a = rows_to_matrix(&p.a).ok_or_else(|| config_err("plant.a is ragged"))?;
        let plant = PlantModel::new(
            a,
            DVector::from_vec(p.b.clone()),
            RowDVector::from_vec(p.c.clone()),
            DVector::from_vec(p.x0.clone()),
        )?;
        let c = &self.controller;
        let controller = ObserverController::new(
            RowDVector::from_vec(c.k.clone()),
            DVector::from_vec(c.l.clone()),
            DVector::from_vec(c.xhat0.clone()),
        );
        let target_charpoly = c.target_charpoly.clone().unwrap_or_else(|| vec![0; plant.n()]);
        let scales = match (self.scales, self.epsilon) {
            (Some(_), Some(_)) => return Err(config_err("give [scales] or epsilon, not both")),
            (Some(s), None) => ScaleChoice::Fixed(Scales::new(s.r, s.s_inv, s.l_inv)?),
            (None, e) => ScaleChoice::Sized {
                epsilon: e.unwrap_or(DEFAULT_EPSILON),
            },
        };
        let seed = seed.or(self.seed).unwrap_or(0);
        let cfg = ScenarioConfig {
            plant,
            controller,
            target_charpoly,
            scales,
            crypto: self.crypto.clone().unwrap_or_default().resolve(profile, seed)?,
            horizon: self.horizon,
            threshold: self.threshold,
            attack: self.attack.as_ref().map(AttackSection::resolve).transpose()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_scenario(path: &Path, profile: Profile, seed: Option<u64>) -> Result<ScenarioConfig> {
    ScenarioFile::load(path)?.resolve(profile, seed)
}
