//! Residue-disclosing dynamic LWE encryption and an encrypted
//! observer-based control loop with key-free anomaly detection.

pub mod codec;
pub mod config;
pub mod encryptor;
pub mod error;
pub mod field;
pub mod linalg;
pub mod lwe;
pub mod par;
pub mod sim;
pub mod verify;
pub mod zero_dynamics;

pub use error::{Error, Result};
pub use field::{Modulus, ZqScalar};
pub use linalg::ZqMatrix;
