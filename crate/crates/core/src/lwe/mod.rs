//! LWE encryption over Z_q with additive homomorphism.
//!
//! A conventional ciphertext of an n-dimensional message is the n x (N+1)
//! matrix `[v + A sk + e, A]`. Modified ciphertexts (see
//! [`crate::encryptor`]) append one disclosed column, giving width N+2.

mod sampler;
pub mod wire;

pub use sampler::{sample_gaussian, DiscreteGaussian, RngStream};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Modulus;
use crate::linalg::ZqMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    sk: Vec<u64>,
    q: Modulus,
    noise: DiscreteGaussian,
}

impl SecretKey {
    pub fn from_parts(sk: Vec<u64>, q: Modulus, sigma: f64) -> Result<Self> {
        if sk.is_empty() {
            return Err(Error::InvalidParameter("key dimension N must be >= 1".into()));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma = {sigma}")));
        }
        let sk = sk.into_iter().map(|v| v % q.value()).collect();
        Ok(SecretKey {
            sk,
            q,
            noise: DiscreteGaussian::new(sigma),
        })
    }

    pub fn values(&self) -> &[u64] {
        &self.sk
    }

    /// Key dimension N.
    pub fn dim(&self) -> usize {
        self.sk.len()
    }

    pub fn modulus(&self) -> Modulus {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.noise.sigma()
    }

    pub fn noise(&self) -> &DiscreteGaussian {
        &self.noise
    }

    /// `sk` as an N x 1 column.
    pub fn column(&self) -> ZqMatrix {
        ZqMatrix::column(&self.sk, self.q)
    }

    pub fn to_file(&self) -> KeyFile {
        KeyFile {
            q: self.q.value(),
            dimension: self.sk.len(),
            sigma: self.sigma(),
            sk: self.sk.clone(),
        }
    }
}

/// On-disk JSON form of a secret key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    pub q: u64,
    pub dimension: usize,
    pub sigma: f64,
    pub sk: Vec<u64>,
}

impl TryFrom<KeyFile> for SecretKey {
    type Error = Error;
    fn try_from(k: KeyFile) -> Result<Self> {
        if k.sk.len() != k.dimension {
            return Err(Error::Format(format!(
                "key has {} entries, header says {}",
                k.sk.len(),
                k.dimension
            )));
        }
        SecretKey::from_parts(k.sk, Modulus::new(k.q)?, k.sigma)
    }
}

pub fn keygen(dim: usize, q: Modulus, sigma: f64, rng: &mut RngStream) -> Result<SecretKey> {
    let sk = (0..dim).map(|_| rng.uniform_zq(q)).collect();
    SecretKey::from_parts(sk, q, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CiphertextKind {
    Conventional,
    Modified,
}

impl CiphertextKind {
    /// Columns beyond the N mask columns.
    pub fn extra_columns(self) -> usize {
        match self {
            CiphertextKind::Conventional => 1,
            CiphertextKind::Modified => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CiphertextKind::Conventional => "conventional",
            CiphertextKind::Modified => "modified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    body: ZqMatrix,
    kind: CiphertextKind,
}

impl Ciphertext {
    pub fn from_body(body: ZqMatrix, kind: CiphertextKind) -> Result<Self> {
        if body.cols() <= kind.extra_columns() {
            return Err(Error::WidthMismatch {
                width: body.cols(),
                dim: 0,
                kind: kind.name(),
            });
        }
        Ok(Ciphertext { body, kind })
    }

    /// Key-free encryption `[delta, 0, ..., 0]` of a column of values.
    pub fn trivial(values: &ZqMatrix, dim: usize, kind: CiphertextKind) -> Result<Self> {
        if values.cols() != 1 {
            return Err(Error::DimensionMismatch("trivial ciphertext needs a column".into()));
        }
        let rest = ZqMatrix::zeros(values.rows(), dim + kind.extra_columns() - 1, values.modulus());
        Ciphertext::from_body(ZqMatrix::hstack(&[values, &rest])?, kind)
    }

    pub fn zero(rows: usize, dim: usize, kind: CiphertextKind, q: Modulus) -> Self {
        Ciphertext {
            body: ZqMatrix::zeros(rows, dim + kind.extra_columns(), q),
            kind,
        }
    }

    pub fn body(&self) -> &ZqMatrix {
        &self.body
    }

    pub fn kind(&self) -> CiphertextKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.body.rows()
    }

    pub fn width(&self) -> usize {
        self.body.cols()
    }

    /// Key dimension N implied by the width and kind.
    pub fn dim(&self) -> usize {
        self.width() - self.kind.extra_columns()
    }

    pub fn modulus(&self) -> Modulus {
        self.body.modulus()
    }

    /// The masked-message column.
    pub fn first_column(&self) -> ZqMatrix {
        self.body.col(0)
    }

    /// The N random mask columns.
    pub fn mask(&self) -> ZqMatrix {
        self.body.submatrix(0..self.rows(), 1..1 + self.dim())
    }

    /// The disclosed column of a modified ciphertext.
    pub fn disclosed_column(&self) -> Option<ZqMatrix> {
        match self.kind {
            CiphertextKind::Modified => Some(self.body.col(self.width() - 1)),
            CiphertextKind::Conventional => None,
        }
    }

    pub fn add(&self, other: &Ciphertext) -> Result<Ciphertext> {
        if self.kind != other.kind {
            return Err(Error::WidthMismatch {
                width: other.width(),
                dim: self.dim(),
                kind: self.kind.name(),
            });
        }
        Ok(Ciphertext {
            body: self.body.add(&other.body)?,
            kind: self.kind,
        })
    }

    pub(crate) fn check_key(&self, sk: &SecretKey, kind: CiphertextKind) -> Result<()> {
        if self.kind != kind || self.width() != sk.dim() + kind.extra_columns() {
            return Err(Error::WidthMismatch {
                width: self.width(),
                dim: sk.dim(),
                kind: kind.name(),
            });
        }
        if self.modulus() != sk.modulus() {
            return Err(Error::ModulusMismatch(self.modulus().value(), sk.modulus().value()));
        }
        Ok(())
    }
}

/// Randomness consumed by one encryption: the uniform mask `A` (n x N) and
/// the error vector `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptionNoise {
    pub mask: ZqMatrix,
    pub error: Vec<i64>,
}

impl EncryptionNoise {
    pub fn sample(rows: usize, sk: &SecretKey, rng: &mut RngStream) -> Self {
        let mask = rng.uniform_matrix(rows, sk.dim(), sk.modulus());
        let error = (0..rows).map(|_| sk.noise().sample(rng)).collect();
        EncryptionNoise { mask, error }
    }

    pub fn zero(rows: usize, sk: &SecretKey) -> Self {
        EncryptionNoise {
            mask: ZqMatrix::zeros(rows, sk.dim(), sk.modulus()),
            error: vec![0; rows],
        }
    }

    /// `B = A sk + e mod q`, as a column.
    pub fn body_offset(&self, sk: &SecretKey) -> Result<ZqMatrix> {
        let q = sk.modulus();
        let a_sk = self.mask.matmul(&sk.column())?;
        let e = ZqMatrix::from_i64(self.error.len(), 1, &self.error, q);
        a_sk.add(&e)
    }
}

/// `[v + A sk + e, A] mod q` with the given randomness.
pub fn encrypt_with(v: &ZqMatrix, sk: &SecretKey, noise: &EncryptionNoise) -> Result<Ciphertext> {
    if v.cols() != 1 || noise.mask.rows() != v.rows() || noise.error.len() != v.rows() {
        return Err(Error::DimensionMismatch(format!(
            "encrypt: message {:?}, mask {:?}, error {}",
            v.shape(),
            noise.mask.shape(),
            noise.error.len()
        )));
    }
    let first = v.add(&noise.body_offset(sk)?)?;
    Ciphertext::from_body(ZqMatrix::hstack(&[&first, &noise.mask])?, CiphertextKind::Conventional)
}

pub fn encrypt(v: &ZqMatrix, sk: &SecretKey, rng: &mut RngStream) -> Result<Ciphertext> {
    let noise = EncryptionNoise::sample(v.rows(), sk, rng);
    encrypt_with(v, sk, &noise)
}

/// `c [1; -sk] mod q`.
pub fn decrypt(c: &Ciphertext, sk: &SecretKey) -> Result<ZqMatrix> {
    c.check_key(sk, CiphertextKind::Conventional)?;
    let q = sk.modulus();
    let mut dec = vec![1u64];
    dec.extend(sk.values().iter().map(|&s| q.neg(s)));
    c.body().matmul(&ZqMatrix::column(&dec, q))
}

/// `K c mod q`; the ciphertext kind is preserved.
pub fn hom_matmul(k: &ZqMatrix, c: &Ciphertext) -> Result<Ciphertext> {
    Ok(Ciphertext {
        body: k.matmul(c.body())?,
        kind: c.kind(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(q: u64, n: usize, sigma: f64, seed: u64) -> (SecretKey, RngStream) {
        let mut rng = RngStream::new(seed);
        let sk = keygen(n, Modulus::new(q).unwrap(), sigma, &mut rng).unwrap();
        (sk, rng)
    }

    #[test]
    fn keygen_range_and_determinism() {
        let (a, _) = setup(97, 4, 0.0, 7);
        let (b, _) = setup(97, 4, 0.0, 7);
        assert_eq!(a.dim(), 4);
        assert!(a.values().iter().all(|&v| v < 97));
        assert_eq!(a, b);
    }

    #[test]
    fn keygen_uniform_mean() {
        let q = Modulus::next_prime_at_least(1 << 60).unwrap();
        let mut rng = RngStream::new(11);
        let mut sum = 0f64;
        let mut count = 0usize;
        while count < 10_000 {
            let sk = keygen(512, q, 3.2, &mut rng).unwrap();
            for &v in sk.values() {
                sum += v as f64;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let expect = (q.value() - 1) as f64 / 2.0;
        assert!((mean - expect).abs() < 0.05 * expect);
    }

    #[test]
    fn single_entry_construction() {
        let q = Modulus::new(97).unwrap();
        let sk = SecretKey::from_parts(vec![13], q, 0.0).unwrap();
        let noise = EncryptionNoise {
            mask: ZqMatrix::new(1, 1, vec![40], q),
            error: vec![0],
        };
        let c = encrypt_with(&ZqMatrix::column(&[5], q), &sk, &noise).unwrap();
        assert_eq!(c.body().get(0, 0), (5 + 40 * 13) % 97);
        assert_eq!(c.body().get(0, 1), 40);
    }

    #[test]
    fn decrypt_roundtrip_and_error_recovery() {
        let (sk, mut rng) = setup(97, 4, 0.0, 1);
        let q = sk.modulus();
        let zero = ZqMatrix::zeros(3, 1, q);
        assert!(decrypt(&encrypt(&zero, &sk, &mut rng).unwrap(), &sk).unwrap().is_zero());
        let v = ZqMatrix::column(&[5, 96, 0], q);
        assert_eq!(decrypt(&encrypt(&v, &sk, &mut rng).unwrap(), &sk).unwrap(), v);

        let (sk, mut rng) = setup(97, 4, 3.2, 2);
        for _ in 0..200 {
            let c = encrypt(&v, &sk, &mut rng).unwrap();
            let diff = decrypt(&c, &sk).unwrap().sub(&v).unwrap();
            // e re-derived as first column minus A sk minus v
            let a_sk = c.mask().matmul(&sk.column()).unwrap();
            let e = c.first_column().sub(&a_sk).unwrap().sub(&v).unwrap();
            assert_eq!(diff, e);
            assert!(diff.lifted().iter().all(|x| x.abs() <= sk.noise().bound()));
        }
    }

    #[test]
    fn decrypt_rejects_modified() {
        let (sk, _) = setup(97, 4, 0.0, 1);
        let c = Ciphertext::zero(1, 4, CiphertextKind::Modified, sk.modulus());
        assert!(matches!(decrypt(&c, &sk), Err(Error::WidthMismatch { .. })));
    }

    #[test]
    fn homomorphic_products() {
        let (sk, mut rng) = setup(97, 4, 0.0, 3);
        let q = sk.modulus();
        let v = rng.uniform_matrix(3, 1, q);
        let c = encrypt(&v, &sk, &mut rng).unwrap();
        assert_eq!(hom_matmul(&ZqMatrix::identity(3, q), &c).unwrap(), c);
        assert!(decrypt(&hom_matmul(&ZqMatrix::zeros(2, 3, q), &c).unwrap(), &sk)
            .unwrap()
            .is_zero());
        for _ in 0..50 {
            let k1 = rng.uniform_matrix(2, 3, q);
            let k2 = rng.uniform_matrix(4, 2, q);
            let chained = hom_matmul(&k2, &hom_matmul(&k1, &c).unwrap()).unwrap();
            let plain = k2.matmul(&k1).unwrap().matmul(&v).unwrap();
            assert_eq!(decrypt(&chained, &sk).unwrap(), plain);
        }
        let bad = ZqMatrix::zeros(2, 2, q);
        assert!(matches!(hom_matmul(&bad, &c), Err(Error::DimensionMismatch(_))));
    }
}
