//! Residue-disclosing dynamic encryption.
//!
//! An [`EncryptorSession`] encrypts the initial state and the inputs of a
//! known linear system `(F, G, H, J)` so that, when the system is evaluated
//! over the ciphertexts, the first element of the encrypted output equals
//! the plaintext output exactly. The trick is to split each LWE offset
//! `B = A sk + e` into a masking part and a disclosed part carried in one
//! extra column; the disclosed parts are generated by the zero-dynamics of
//! the system, so their contribution to the output is identically zero.
//!
//! Ciphertexts have width N+2: `[masked message, A, disclosed]`, decrypted by
//! `c [1; -sk; 1]`.

use crate::error::{Error, Result};
use crate::field::ZqScalar;
use crate::linalg::ZqMatrix;
use crate::lwe::{hom_matmul, Ciphertext, CiphertextKind, EncryptionNoise, RngStream, SecretKey};
use crate::zero_dynamics::{NormalForm, SystemZq};

#[derive(Debug, Clone)]
pub struct EncryptorSession {
    sk: SecretKey,
    nf: NormalForm,
    x_noise: EncryptionNoise,
    bx: ZqMatrix,
    z: ZqMatrix,
    t: u64,
    initial_encrypted: bool,
    rng: RngStream,
}

impl EncryptorSession {
    /// Samples `A_x`, `e_x` and starts the masking zero-dynamics at
    /// `z(0) = T1 B_x`.
    pub fn open(sk: SecretKey, system: &SystemZq, mut rng: RngStream) -> Result<Self> {
        let nf = NormalForm::new(system)?;
        let x_noise = EncryptionNoise::sample(system.n(), &sk, &mut rng);
        Self::open_with_noise(sk, nf, x_noise, rng)
    }

    /// Opens a session with caller-chosen initial-state randomness. Used to
    /// compare against conventional encryption under matched randomness.
    pub fn open_with_noise(sk: SecretKey, nf: NormalForm, x_noise: EncryptionNoise, rng: RngStream) -> Result<Self> {
        if nf.modulus() != sk.modulus() {
            return Err(Error::ModulusMismatch(nf.modulus().value(), sk.modulus().value()));
        }
        if x_noise.mask.shape() != (nf.n(), sk.dim()) || x_noise.error.len() != nf.n() {
            return Err(Error::DimensionMismatch("initial-state noise shape".into()));
        }
        let bx = x_noise.body_offset(&sk)?;
        let z = nf.t1().matmul(&bx)?;
        Ok(EncryptorSession {
            sk,
            nf,
            x_noise,
            bx,
            z,
            t: 0,
            initial_encrypted: false,
            rng,
        })
    }

    pub fn normal_form(&self) -> &NormalForm {
        &self.nf
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.sk
    }

    /// `B_x = A_x sk + e_x`.
    pub fn bx(&self) -> &ZqMatrix {
        &self.bx
    }

    pub fn initial_noise(&self) -> &EncryptionNoise {
        &self.x_noise
    }

    /// Current masking state `z(t)`.
    pub fn masking_state(&self) -> &ZqMatrix {
        &self.z
    }

    /// Number of inputs encrypted so far.
    pub fn step(&self) -> u64 {
        self.t
    }

    pub fn initial_encrypted(&self) -> bool {
        self.initial_encrypted
    }

    /// `V2 T2 B_x`, the disclosed column of the initial-state ciphertext.
    pub fn disclosed_initial(&self) -> Result<ZqMatrix> {
        self.nf.v2().matmul(&self.nf.t2().matmul(&self.bx)?)
    }

    /// `[x0 + B_x - V2 T2 B_x, A_x, V2 T2 B_x]`. Allowed once, before any input.
    pub fn encrypt_initial_state(&mut self, x0: &ZqMatrix) -> Result<Ciphertext> {
        if self.initial_encrypted {
            return Err(Error::SessionOrderViolation("initial state already encrypted"));
        }
        if self.t != 0 {
            return Err(Error::SessionOrderViolation("inputs already encrypted"));
        }
        if x0.shape() != (self.nf.n(), 1) {
            return Err(Error::DimensionMismatch(format!(
                "initial state {:?}, expected {}x1",
                x0.shape(),
                self.nf.n()
            )));
        }
        let disclosed = self.disclosed_initial()?;
        let first = x0.add(&self.bx)?.sub(&disclosed)?;
        let body = ZqMatrix::hstack(&[&first, &self.x_noise.mask, &disclosed])?;
        self.initial_encrypted = true;
        Ciphertext::from_body(body, CiphertextKind::Modified)
    }

    pub fn encrypt_input(&mut self, y: u64) -> Result<Ciphertext> {
        let noise = EncryptionNoise::sample(1, &self.sk, &mut self.rng);
        self.encrypt_input_with(y, &noise)
    }

    /// `[y + B_y - B'_y, A_y, B'_y]` with `B'_y = B_y + g^-1 psi z(t)`, then
    /// `z <- F1 z`.
    pub fn encrypt_input_with(&mut self, y: u64, noise: &EncryptionNoise) -> Result<Ciphertext> {
        if !self.initial_encrypted {
            return Err(Error::SessionOrderViolation("initial state must be encrypted first"));
        }
        if noise.mask.shape() != (1, self.sk.dim()) || noise.error.len() != 1 {
            return Err(Error::DimensionMismatch("input noise shape".into()));
        }
        let q = self.sk.modulus();
        let by = noise.body_offset(&self.sk)?.get(0, 0);
        let by_prime = q.add(by, self.nf.correction(&self.z)?);
        let first = q.sub(q.add(y % q.value(), by), by_prime);
        let body = ZqMatrix::hstack(&[
            &ZqMatrix::column(&[first], q),
            &noise.mask,
            &ZqMatrix::column(&[by_prime], q),
        ])?;
        self.z = self.nf.advance_zero_dynamics(&self.z)?;
        self.t += 1;
        Ciphertext::from_body(body, CiphertextKind::Modified)
    }

    /// The next `steps` values of `g^-1 psi z(t)`. They do not depend on any
    /// message and can be computed ahead of time.
    pub fn precompute_corrections(&self, steps: usize) -> Result<Vec<u64>> {
        let mut z = self.z.clone();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            out.push(self.nf.correction(&z)?);
            z = self.nf.advance_zero_dynamics(&z)?;
        }
        Ok(out)
    }
}

/// `c [1; -sk; 1] mod q` for a width-(N+2) ciphertext.
pub fn decrypt_mod(c: &Ciphertext, sk: &SecretKey) -> Result<ZqMatrix> {
    c.check_key(sk, CiphertextKind::Modified)?;
    let q = sk.modulus();
    let mut dec = vec![1u64];
    dec.extend(sk.values().iter().map(|&s| q.neg(s)));
    dec.push(1);
    c.body().matmul(&ZqMatrix::column(&dec, q))
}

/// First element of an encrypted residue row: the disclosed residue.
pub fn disclosed_residue(rct: &Ciphertext) -> ZqScalar {
    rct.body().entry(0, 0)
}

/// One step of `x+ = F x + G y`, `r = H x + J y` over ciphertexts.
pub fn encrypted_step(system: &SystemZq, xct: &Ciphertext, yct: &Ciphertext) -> Result<(Ciphertext, Ciphertext)> {
    let j = ZqMatrix::scalar(system.j());
    let rct = hom_matmul(system.h(), xct)?.add(&hom_matmul(&j, yct)?)?;
    let next = hom_matmul(system.f(), xct)?.add(&hom_matmul(system.g(), yct)?)?;
    Ok((next, rct))
}

/// Encrypted residue rows for a whole input sequence.
pub fn encrypted_residues(system: &SystemZq, x0ct: &Ciphertext, yct: &[Ciphertext]) -> Result<Vec<Ciphertext>> {
    let mut x = x0ct.clone();
    let mut out = Vec::with_capacity(yct.len());
    for y in yct {
        let (next, r) = encrypted_step(system, &x, y)?;
        out.push(r);
        x = next;
    }
    Ok(out)
}

/// What an observer of modified ciphertexts sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModifiedTranscript {
    pub initial: Ciphertext,
    pub inputs: Vec<Ciphertext>,
}

/// What an observer of conventional ciphertexts sees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConventionalTranscript {
    pub initial: Ciphertext,
    pub inputs: Vec<Ciphertext>,
}

/// The publicly visible last columns of a modified transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisclosedTranscript {
    /// `V2 T2 B_x`.
    pub v0_disclosed: ZqMatrix,
    /// `B'_y(t)` for each input.
    pub by_prime: Vec<u64>,
}

impl ModifiedTranscript {
    pub fn disclosed(&self) -> Result<DisclosedTranscript> {
        let last = |c: &Ciphertext| {
            c.disclosed_column().ok_or(Error::WidthMismatch {
                width: c.width(),
                dim: c.dim(),
                kind: "modified",
            })
        };
        Ok(DisclosedTranscript {
            v0_disclosed: last(&self.initial)?,
            by_prime: self
                .inputs
                .iter()
                .map(|c| last(c).map(|col| col.get(0, 0)))
                .collect::<Result<_>>()?,
        })
    }
}

fn fold_last_column(c: &Ciphertext) -> Result<Ciphertext> {
    let d = c.disclosed_column().ok_or(Error::WidthMismatch {
        width: c.width(),
        dim: c.dim(),
        kind: "modified",
    })?;
    let first = c.first_column().add(&d)?;
    Ciphertext::from_body(ZqMatrix::hstack(&[&first, &c.mask()])?, CiphertextKind::Conventional)
}

fn first_elements(cts: &[Ciphertext], pad: usize) -> Vec<u64> {
    cts.iter()
        .map(|c| c.body().get(0, 0))
        .chain(std::iter::repeat_n(0, pad))
        .collect()
}

/// Modified transcript -> (conventional transcript, residues).
///
/// The residue sequence has `inputs + nu` entries: with relative degree nu
/// the output at `t + nu` depends on inputs up to `t` only.
pub fn to_conventional(nf: &NormalForm, modified: &ModifiedTranscript) -> Result<(ConventionalTranscript, Vec<u64>)> {
    let system = nf.system();
    let initial = fold_last_column(&modified.initial)?;
    let inputs = modified
        .inputs
        .iter()
        .map(fold_last_column)
        .collect::<Result<Vec<_>>>()?;
    let residues = system.outputs(
        &modified.initial.first_column(),
        &first_elements(&modified.inputs, nf.nu()),
    )?;
    Ok((ConventionalTranscript { initial, inputs }, residues))
}

/// (conventional transcript, residues) -> modified transcript.
pub fn to_modified(
    nf: &NormalForm,
    conventional: &ConventionalTranscript,
    residues: &[u64],
) -> Result<ModifiedTranscript> {
    let system = nf.system();
    let q = nf.modulus();
    let steps = conventional.inputs.len();
    let needed = steps + nf.nu();
    if residues.len() < needed {
        return Err(Error::InsufficientHistory {
            needed,
            available: residues.len(),
        });
    }
    // S(B_x, {B_y}) = S(x0 + B_x, {y + B_y}) - S(x0, {y})
    let total = system.outputs(
        &conventional.initial.first_column(),
        &first_elements(&conventional.inputs, nf.nu()),
    )?;
    let offsets: Vec<u64> = total
        .iter()
        .zip(residues)
        .map(|(&a, &r)| q.sub(a, r % q.value()))
        .collect();
    let (v0, by_prime) = nf.equivalent_inputs_from_residue(&offsets)?;
    let disclosed = nf.reduced_initial_state(&v0)?;
    let rebuild = |c: &Ciphertext, d: &ZqMatrix| -> Result<Ciphertext> {
        if c.kind() != CiphertextKind::Conventional {
            return Err(Error::WidthMismatch {
                width: c.width(),
                dim: c.dim(),
                kind: "conventional",
            });
        }
        let first = c.first_column().sub(d)?;
        Ciphertext::from_body(ZqMatrix::hstack(&[&first, &c.mask(), d])?, CiphertextKind::Modified)
    };
    let initial = rebuild(&conventional.initial, &disclosed)?;
    let inputs = conventional
        .inputs
        .iter()
        .zip(&by_prime)
        .map(|(c, &b)| rebuild(c, &ZqMatrix::column(&[b], q)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModifiedTranscript { initial, inputs })
}
