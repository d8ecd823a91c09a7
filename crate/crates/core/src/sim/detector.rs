//! Threshold alarm on the disclosed residue.
//!
//! Works from the encrypted residue row and the public scales only; nothing
//! here can reach a secret key.

use crate::codec::{restore_residue, Scales};
use crate::encryptor::disclosed_residue;
use crate::error::{Error, Result};
use crate::lwe::Ciphertext;

/// `|r| > theta`.
pub fn detect(r_restored: f64, theta: f64) -> bool {
    r_restored.abs() > theta
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub residue: f64,
    pub alarm: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    theta: f64,
    scales: Scales,
}

impl Detector {
    pub fn new(theta: f64, scales: Scales) -> Result<Self> {
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(Error::InvalidParameter(format!("threshold {theta}")));
        }
        Ok(Detector { theta, scales })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn observe(&self, rct: &Ciphertext) -> Detection {
        let residue = restore_residue(disclosed_residue(rct), self.scales);
        Detection {
            residue,
            alarm: detect(residue, self.theta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold() {
        assert!(!detect(0.0, 0.1));
        assert!(detect(0.2, 0.1));
        assert!(detect(-0.2, 0.1));
        assert!(!detect(0.1, 0.1));
        assert!(Detector::new(-1.0, Scales::new(1.0, 1, 1).unwrap()).is_err());
    }
}
