//! Randomized property suites behind `resdisc verify`.
//!
//! Each suite runs its trials through [`map_indexed`], one derived
//! [`RngStream`] per trial, so reports do not depend on the parallelism
//! mode.

use serde::Serialize;

use crate::config::Profile;
use crate::encryptor::{
    decrypt_mod, disclosed_residue, encrypted_residues, to_conventional, to_modified, EncryptorSession,
    ModifiedTranscript,
};
use crate::field::{Modulus, ZqScalar};
use crate::linalg::ZqMatrix;
use crate::lwe::{decrypt, encrypt_with, hom_matmul, keygen, EncryptionNoise, RngStream};
use crate::par::{map_indexed, Parallelism};
use crate::sim::{run_scenario, AttackKind, AttackMagnitude, AttackSpec, ScenarioConfig};
use crate::zero_dynamics::{NormalForm, SystemZq};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub trials: usize,
    pub profile: Profile,
    pub parallelism: Parallelism,
    /// Adds a property that is wrong on purpose, to exercise the failure path.
    pub canary: bool,
}

type Trial = fn(&mut RngStream, Profile) -> std::result::Result<(), String>;

fn run_suite(name: &'static str, tag: u64, trials: usize, opts: &VerifyOptions, f: Trial) -> PropertyReport {
    let seed = opts.seed ^ (tag << 40);
    let outcomes = map_indexed(trials, opts.parallelism, |i| {
        let mut rng = RngStream::derive(seed, i as u64);
        f(&mut rng, opts.profile).map_err(|e| format!("trial {i}: {e}"))
    });
    let mut failures = outcomes.into_iter().filter_map(|o| o.err()).peekable();
    let first_failure = failures.peek().cloned();
    PropertyReport {
        name,
        trials,
        failures: failures.count(),
        first_failure,
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn small_modulus(rng: &mut RngStream) -> Modulus {
    Modulus::new(if rng.below(2) == 0 { 11 } else { 97 }).expect("prime")
}

/// Random single-input single-output system over `Z_q` whose relative
/// degree is drawn uniformly from `0..=n`. Systems with `nu > 0` are built in
/// normal-form coordinates and then hidden behind a random change of basis.
pub fn random_system(rng: &mut RngStream, n: usize, q: Modulus) -> (SystemZq, NormalForm) {
    let nu = rng.below(n as u64 + 1) as usize;
    loop {
        let f = rng.uniform_matrix(n, n, q);
        let sys = if nu == 0 {
            let j = 1 + rng.below(q.value() - 1);
            SystemZq::new(
                f,
                rng.uniform_matrix(n, 1, q),
                rng.uniform_matrix(1, n, q),
                ZqScalar::new(j, q),
            )
        } else {
            let m = n - nu;
            let mut f = f;
            for i in m..n - 1 {
                for j in 0..n {
                    f.set(i, j, u64::from(j == i + 1));
                }
            }
            let mut g = ZqMatrix::zeros(n, 1, q);
            g.set(n - 1, 0, 1 + rng.below(q.value() - 1));
            let mut h = ZqMatrix::zeros(1, n, q);
            h.set(0, m, 1);
            let p = rng.uniform_matrix(n, n, q);
            let Ok(p_inv) = p.inverse() else { continue };
            let mul = |a: &ZqMatrix, b: &ZqMatrix| a.matmul(b).expect("shapes agree");
            SystemZq::new(
                mul(&mul(&p_inv, &f), &p),
                mul(&p_inv, &g),
                mul(&h, &p),
                ZqScalar::zero(q),
            )
        }
        .expect("shapes agree");
        if let Ok(nf) = NormalForm::new(&sys) {
            if nf.nu() == nu {
                return (sys, nf);
            }
        }
    }
}

fn lwe_correctness(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = Modulus::new(97).expect("prime");
    for sigma in [0.0, 1.0] {
        let sk = keygen(4, q, sigma, rng).map_err(|e| e.to_string())?;
        let v = rng.uniform_matrix(3, 1, q);
        let noise = EncryptionNoise::sample(3, &sk, rng);
        let c = encrypt_with(&v, &sk, &noise).map_err(|e| e.to_string())?;
        let got = decrypt(&c, &sk).map_err(|e| e.to_string())?;
        let e = ZqMatrix::from_i64(3, 1, &noise.error, q);
        check(got == v.add(&e).expect("same shape"), || {
            format!("sigma {sigma}: {got:?} vs {v:?} + e")
        })?;
    }
    Ok(())
}

fn homomorphism(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = Modulus::new(97).expect("prime");
    let sk = keygen(4, q, 1.0, rng).map_err(|e| e.to_string())?;
    let v = rng.uniform_matrix(3, 1, q);
    let k = rng.uniform_matrix(2, 3, q);
    let noise = EncryptionNoise::sample(3, &sk, rng);
    let c = encrypt_with(&v, &sk, &noise).map_err(|e| e.to_string())?;
    let got = decrypt(&hom_matmul(&k, &c).map_err(|e| e.to_string())?, &sk).map_err(|e| e.to_string())?;
    let plain = k
        .matmul(&v.add(&ZqMatrix::from_i64(3, 1, &noise.error, q)).expect("shape"))
        .expect("shape");
    check(got == plain, || "K Enc(v) does not decrypt to K (v + e)".into())
}

fn normal_form(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = small_modulus(rng);
    let n = 1 + rng.below(4) as usize;
    let (sys, nf) = random_system(rng, n, q);
    let nu = nf.nu();
    let t = nf.transform();
    let v = nf.inverse_transform();
    check(t.matmul(&v).expect("square") == ZqMatrix::identity(n, q), || {
        "T V != I".into()
    })?;
    if nu > 0 {
        // T G = [0; g e_nu], T F V = [[F1, F2]; [shift]; [psi, phi]]
        let tg = t.matmul(sys.g()).expect("shape");
        let mut expected = ZqMatrix::zeros(n, 1, q);
        expected.set(n - 1, 0, nf.g().value());
        check(tg == expected, || format!("T G = {tg:?}"))?;
        let tfv = t.matmul(sys.f()).and_then(|m| m.matmul(&v)).expect("shape");
        let m = n - nu;
        let mut expected = ZqMatrix::zeros(n, n, q);
        for i in 0..m {
            for j in 0..m {
                expected.set(i, j, nf.f1().get(i, j));
            }
            for j in 0..nu {
                expected.set(i, m + j, nf.f2().get(i, j));
            }
        }
        for i in 0..nu - 1 {
            expected.set(m + i, m + i + 1, 1);
        }
        for j in 0..m {
            expected.set(n - 1, j, nf.psi().get(0, j));
        }
        for j in 0..nu {
            expected.set(n - 1, m + j, nf.phi().get(0, j));
        }
        check(tfv == expected, || format!("T F V = {tfv:?}, expected {expected:?}"))?;
    }
    let mut x = rng.uniform_matrix(n, 1, q);
    let (mut z, mut vv) = nf.coordinates(&x).expect("shape");
    for step in 0..20 {
        let y = rng.uniform_zq(q);
        let (x_next, r) = sys.step(&x, y).expect("shape");
        let (z_next, v_next, r_nf) = nf.step(&z, &vv, y).expect("shape");
        check(r == r_nf, || format!("step {step}: output {r} vs {r_nf}"))?;
        let tx = t.matmul(&x_next).expect("shape");
        let zv = ZqMatrix::vstack(&[&z_next, &v_next]).expect("shape");
        check(tx == zv, || format!("step {step}: T x != [z; v]"))?;
        x = x_next;
        z = z_next;
        vv = v_next;
    }
    Ok(())
}

fn zero_output(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = small_modulus(rng);
    let n = 1 + rng.below(4) as usize;
    let (sys, nf) = random_system(rng, n, q);
    // x0 with T2 x0 = 0: x0 = V1 z0
    let v1 = nf.inverse_transform().submatrix(0..n, 0..n - nf.nu());
    let x0 = v1.matmul(&rng.uniform_matrix(n - nf.nu(), 1, q)).expect("shape");
    let ys = nf.zero_output_inputs(&x0, 50).map_err(|e| e.to_string())?;
    let r = sys.outputs(&x0, &ys).expect("shape");
    check(r.iter().all(|&v| v == 0), || {
        "zero-output inputs give a nonzero output".into()
    })?;
    let k = rng.below(50 - nf.nu() as u64) as usize;
    let mut bad = ys.clone();
    bad[k] = q.add(bad[k], 1 + rng.below(q.value() - 1));
    let r = sys.outputs(&x0, &bad).expect("shape");
    check(r[..=k + nf.nu()].iter().any(|&v| v != 0), || {
        format!("perturbing step {k} left r at zero")
    })
}

fn equivalent_information(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = small_modulus(rng);
    let n = 1 + rng.below(4) as usize;
    let (sys, nf) = random_system(rng, n, q);
    let x0 = rng.uniform_matrix(n, 1, q);
    let ys: Vec<u64> = (0..30).map(|_| rng.uniform_zq(q)).collect();
    let (v0, yp) = nf.equivalent_info(&x0, &ys).map_err(|e| e.to_string())?;
    let lhs = sys.outputs(&x0, &ys).expect("shape");
    let rhs = sys
        .outputs(&nf.reduced_initial_state(&v0).expect("shape"), &yp)
        .expect("shape");
    check(lhs == rhs, || "S(x0, y) != S(V2 v0, y')".into())
}

fn residue_disclosure(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = Modulus::new(97).expect("prime");
    let n = 1 + rng.below(4) as usize;
    let (sys, _) = random_system(rng, n, q);
    for sigma in [0.0, 1.0] {
        let sk = keygen(4, q, sigma, rng).map_err(|e| e.to_string())?;
        let mut s = EncryptorSession::open(sk, &sys, RngStream::derive(rng.seed(), rng.below(1 << 40)))
            .map_err(|e| e.to_string())?;
        let x0 = rng.uniform_matrix(n, 1, q);
        let ys: Vec<u64> = (0..30).map(|_| rng.uniform_zq(q)).collect();
        let x0ct = s.encrypt_initial_state(&x0).map_err(|e| e.to_string())?;
        let yct: Vec<_> = ys
            .iter()
            .map(|&y| s.encrypt_input(y))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let rct = encrypted_residues(&sys, &x0ct, &yct).map_err(|e| e.to_string())?;
        let plain = sys.outputs(&x0, &ys).expect("shape");
        for (t, (c, &r)) in rct.iter().zip(&plain).enumerate() {
            check(disclosed_residue(c).value() == r, || format!("sigma {sigma}, step {t}"))?;
        }
    }
    Ok(())
}

fn modified_vs_conventional(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = Modulus::new(97).expect("prime");
    let n = 1 + rng.below(4) as usize;
    let (sys, nf) = random_system(rng, n, q);
    let sk = keygen(4, q, 1.0, rng).map_err(|e| e.to_string())?;
    let noise = EncryptionNoise::sample(n, &sk, rng);
    let mut s =
        EncryptorSession::open_with_noise(sk.clone(), nf, noise.clone(), rng.clone()).map_err(|e| e.to_string())?;
    let x0 = rng.uniform_matrix(n, 1, q);
    let a = decrypt_mod(&s.encrypt_initial_state(&x0).map_err(|e| e.to_string())?, &sk).map_err(|e| e.to_string())?;
    let b = decrypt(&encrypt_with(&x0, &sk, &noise).map_err(|e| e.to_string())?, &sk).map_err(|e| e.to_string())?;
    check(a == b, || "initial state".into())?;
    let _ = sys;
    let y = rng.uniform_zq(q);
    let noise = EncryptionNoise::sample(1, &sk, rng);
    let cm = s.encrypt_input_with(y, &noise).map_err(|e| e.to_string())?;
    let cc = encrypt_with(&ZqMatrix::column(&[y], q), &sk, &noise).map_err(|e| e.to_string())?;
    let k = rng.uniform_matrix(2, 1, q);
    let a = decrypt_mod(&hom_matmul(&k, &cm).map_err(|e| e.to_string())?, &sk).map_err(|e| e.to_string())?;
    let b = decrypt(&hom_matmul(&k, &cc).map_err(|e| e.to_string())?, &sk).map_err(|e| e.to_string())?;
    check(a == b, || "K-multiplied input".into())
}

fn transcript_bijection(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = Modulus::new(97).expect("prime");
    let n = 1 + rng.below(4) as usize;
    let (sys, nf) = random_system(rng, n, q);
    let sk = keygen(4, q, 1.0, rng).map_err(|e| e.to_string())?;
    let mut s = EncryptorSession::open(sk, &sys, rng.clone()).map_err(|e| e.to_string())?;
    let initial = s
        .encrypt_initial_state(&rng.uniform_matrix(n, 1, q))
        .map_err(|e| e.to_string())?;
    let inputs = (0..30)
        .map(|_| s.encrypt_input(rng.uniform_zq(q)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let modified = ModifiedTranscript { initial, inputs };
    let (conv, residues) = to_conventional(&nf, &modified).map_err(|e| e.to_string())?;
    let back = to_modified(&nf, &conv, &residues).map_err(|e| e.to_string())?;
    check(back == modified, || "round trip changed the transcript".into())
}

fn canary(rng: &mut RngStream, _: Profile) -> std::result::Result<(), String> {
    let q = Modulus::new(97).expect("prime");
    let sk = keygen(4, q, 0.0, rng).map_err(|e| e.to_string())?;
    let v = rng.uniform_matrix(1, 1, q);
    let c = encrypt_with(&v, &sk, &EncryptionNoise::sample(1, &sk, rng)).map_err(|e| e.to_string())?;
    // deliberately wrong expectation
    let wrong = v.add(&ZqMatrix::column(&[1], q)).expect("shape");
    check(decrypt(&c, &sk).map_err(|e| e.to_string())? == wrong, || {
        "canary tripped as intended".into()
    })
}

fn loop_config(profile: Profile, seed: u64, attack: Option<AttackSpec>) -> ScenarioConfig {
    let file = crate::config::ScenarioFile::parse(include_str!("../fixtures/demo.toml")).expect("fixture parses");
    let mut cfg = file.resolve(profile, Some(seed)).expect("fixture resolves");
    cfg.attack = attack;
    cfg
}

fn residue_bound(rng: &mut RngStream, profile: Profile) -> std::result::Result<(), String> {
    let cfg = loop_config(profile, rng.below(1 << 32), None);
    let trace = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let s = &trace.summary;
    check(s.max_residue_gap <= 1e-3, || {
        format!("residue gap {:e}", s.max_residue_gap)
    })?;
    check(s.max_input_gap <= 1e-2, || format!("input gap {:e}", s.max_input_gap))?;
    check(s.state_encryptions == 1, || {
        format!("{} state encryptions", s.state_encryptions)
    })
}

fn detection(rng: &mut RngStream, profile: Profile) -> std::result::Result<(), String> {
    let attack = AttackSpec {
        kind: AttackKind::MeasurementBias,
        start: 500,
        stop: None,
        magnitude: AttackMagnitude::ThresholdMultiple(10.0),
    };
    let cfg = loop_config(profile, rng.below(1 << 32), Some(attack));
    let trace = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let s = &trace.summary;
    check(s.false_alarms == 0, || {
        format!("{} alarms before onset", s.false_alarms)
    })?;
    check(s.detection_delay.is_some_and(|d| d <= 2), || {
        format!("delay {:?}", s.detection_delay)
    })
}

/// Runs every suite. Algebraic suites use `trials` trials each; the two
/// closed-loop suites are heavier and use one run per 100 trials (at least
/// one).
pub fn run_all(opts: &VerifyOptions) -> Vec<PropertyReport> {
    let t = opts.trials;
    let loops = if t == 0 { 0 } else { t.div_ceil(100) };
    let mut suites: Vec<(&'static str, usize, Trial)> = vec![
        ("lwe decryption recovers message plus error", t, lwe_correctness),
        ("decryption commutes with matrix multiplication", t, homomorphism),
        ("normal-form identities and trajectories", t, normal_form),
        ("zero-output inputs hold the output at zero", t, zero_output),
        (
            "equivalent information reproduces the output",
            t,
            equivalent_information,
        ),
        (
            "first residue element equals the plaintext output",
            t,
            residue_disclosure,
        ),
        (
            "modified and conventional decryption agree",
            t,
            modified_vs_conventional,
        ),
        ("transcript bijection round-trips", t, transcript_bijection),
        ("closed-loop residue and input accuracy", loops, residue_bound),
        ("bias attack raises the alarm", loops, detection),
    ];
    if opts.canary {
        suites.push(("canary (must fail)", t.max(1), canary));
    }
    suites
        .into_iter()
        .enumerate()
        .map(|(i, (name, n, f))| run_suite(name, i as u64 + 1, n, opts, f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(trials: usize, canary: bool) -> VerifyOptions {
        VerifyOptions {
            seed: 5,
            trials,
            profile: Profile::Test,
            parallelism: Parallelism::Parallel,
            canary,
        }
    }

    #[test]
    fn suites_pass_and_canary_fails() {
        let reports = run_all(&opts(20, true));
        let (canary, rest) = reports.split_last().unwrap();
        for r in rest {
            assert!(r.passed(), "{r:?}");
        }
        assert!(!canary.passed());
    }

    #[test]
    fn zero_trials_is_vacuous() {
        let reports = run_all(&opts(0, false));
        assert!(reports.iter().all(|r| r.trials == 0 && r.passed()));
    }

    #[test]
    fn modes_agree() {
        let mut o = opts(10, false);
        let a = run_all(&o);
        o.parallelism = Parallelism::Sequential;
        assert_eq!(a, run_all(&o));
    }
}
