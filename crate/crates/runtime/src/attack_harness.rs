//! Repeated forgery trials against the Zhu scheme (expected to succeed) and
//! the verifiable scheme (expected to be rejected).

use std::collections::HashMap;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sknn_core::attack::{self, ObservedToken};
use sknn_core::numerics::Scaled;
use sknn_core::paillier::Keypair;
use sknn_core::vsknn::{self, VerifyKey};
use sknn_core::zhu::{self, DataKey, EncPoint, QueryUser, SchemeDims, ZhuEncQuery};

use crate::dataset::{plaintext_knn, Dataset};
use crate::wire::Scheme;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackConfig {
    pub scheme: Scheme,
    /// Trials cycle through these dimensions.
    pub dims: Vec<usize>,
    pub trials: usize,
    pub m: usize,
    pub k: usize,
    pub key_bits: u64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { scheme: Scheme::Zhu, dims: vec![2, 5, 10], trials: 500, m: 1000, k: 5, key_bits: 512, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AttackReport {
    pub scheme: Option<Scheme>,
    pub trials: usize,
    /// Zhu: forged kNN equals plaintext kNN. Verifiable scheme: forged token accepted.
    pub successes: usize,
    /// Trials in which some basis token's GCD was a proper multiple of its `beta`.
    pub gcd_false_positive_trials: usize,
    pub successes_in_false_positive_trials: usize,
    /// Verifiable scheme only.
    pub forgery_attempts: usize,
    pub beta_revealed_sessions: usize,
    pub sessions: usize,
    pub mean_forge_time: f64,
    pub basis_time: f64,
    pub failed_trials: Vec<usize>,
}

impl AttackReport {
    pub fn clean_trials(&self) -> usize {
        self.trials - self.gcd_false_positive_trials
    }

    pub fn clean_successes(&self) -> usize {
        self.successes - self.successes_in_false_positive_trials
    }
}

pub fn unit_query(d: usize, i: Option<usize>) -> Vec<Scaled> {
    let mut q = vec![Scaled::zero(); d];
    if let Some(i) = i {
        q[i] = Scaled::one();
    }
    q
}

fn random_query<R: Rng>(d: usize, rng: &mut R) -> Vec<Scaled> {
    (0..d).map(|_| Scaled::new(rng.gen_range(-100_000..=100_000), 2)).collect()
}

/// One honest Zhu session run by a query user with a fresh Paillier key;
/// also returns the owner's `beta` for ground truth.
pub fn zhu_session<R: Rng>(key: &DataKey, q: &[Scaled], key_bits: u64, rng: &mut R) -> zhu::Result<(ZhuEncQuery, BigInt)> {
    let (t, b) = zhu::encrypt_query_local(key, q, 0, key_bits, rng)?;
    Ok((t, b.beta))
}

struct ZhuTable {
    key: DataKey,
    db: Vec<EncPoint>,
    ds: Dataset,
}

pub fn run_zhu(cfg: &AttackConfig) -> anyhow::Result<AttackReport> {
    anyhow::ensure!(!cfg.dims.is_empty() && cfg.trials > 0, "need at least one dimension and one trial");
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut tables = HashMap::new();
    for &d in &cfg.dims {
        let key = DataKey::generate(SchemeDims::new(d, 2, 2)?, &mut rng)?;
        let ds = Dataset::synthetic(cfg.m, d, 1000, 2, cfg.seed ^ d as u64);
        let db = key.encrypt_points(&ds.points, cfg.seed)?;
        tables.insert(d, ZhuTable { key, db, ds });
    }
    let mut report = AttackReport { scheme: Some(Scheme::Zhu), trials: cfg.trials, ..Default::default() };
    let (mut forge_total, mut basis_total) = (Duration::ZERO, Duration::ZERO);
    for trial in 0..cfg.trials {
        let d = cfg.dims[trial % cfg.dims.len()];
        let t = &tables[&d];
        let mut betas = Vec::with_capacity(d + 1);
        let start = Instant::now();
        let mut oracle = |q: &[Scaled]| {
            zhu_session(&t.key, q, cfg.key_bits, &mut rng).map(|(tok, beta)| {
                betas.push(beta);
                tok
            })
        };
        let basis = attack::acquire_basis(&mut oracle, d)?;
        basis_total += start.elapsed();
        report.sessions += d + 1;

        let q = random_query(d, &mut rng);
        let start = Instant::now();
        let forged = attack::forge_query(&basis, &q)?;
        forge_total += start.elapsed();

        let false_positive = basis.extracted.iter().zip(&betas).any(|(g, b)| g.mantissa() != b);
        let ok = zhu::knn(&t.db, &forged.vec, cfg.k)? == plaintext_knn(&t.ds, &q, cfg.k)?;
        report.successes += ok as usize;
        if false_positive {
            report.gcd_false_positive_trials += 1;
            report.successes_in_false_positive_trials += ok as usize;
        }
        if !ok {
            report.failed_trials.push(trial);
        }
    }
    report.mean_forge_time = forge_total.as_secs_f64() / cfg.trials as f64;
    report.basis_time = basis_total.as_secs_f64() / cfg.trials as f64;
    Ok(report)
}

/// Honest verifiable-scheme token from a session with a fresh Paillier key.
pub fn vsknn_session<R: Rng>(
    key: &DataKey,
    vk: &VerifyKey,
    q: &[Scaled],
    key_bits: u64,
    rng: &mut R,
) -> anyhow::Result<ObservedToken> {
    let qu = QueryUser::new(Keypair::generate(key_bits, rng)?, q.len(), 0);
    let req = qu.request(q, rng)?;
    let (reply, secrets) = vsknn::query_step2_3(key, vk, &req, rng)?;
    Ok(ObservedToken { token: vsknn::query_step4(&qu, &reply)?, beta: secrets.blinding.beta })
}

pub fn run_vsknn(cfg: &AttackConfig) -> anyhow::Result<AttackReport> {
    anyhow::ensure!(!cfg.dims.is_empty() && cfg.trials > 0, "need at least one dimension and one trial");
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut keys = HashMap::new();
    for &d in &cfg.dims {
        keys.insert(d, vsknn::keygen(SchemeDims::new(d, 2, 2)?, vsknn::DEFAULT_CHECK_LEN, &mut rng)?);
    }
    let mut report = AttackReport { scheme: Some(Scheme::Vsknn), trials: cfg.trials, ..Default::default() };
    let (mut forge_total, mut basis_total) = (Duration::ZERO, Duration::ZERO);
    for trial in 0..cfg.trials {
        let d = cfg.dims[trial % cfg.dims.len()];
        let (dk, vk) = &keys[&d];
        let start = Instant::now();
        let basis = std::iter::once(None)
            .chain((0..d).map(Some))
            .map(|i| vsknn_session(dk, vk, &unit_query(d, i), cfg.key_bits, &mut rng))
            .collect::<anyhow::Result<Vec<_>>>()?;
        basis_total += start.elapsed();
        let q = random_query(d, &mut rng);
        let start = Instant::now();
        let r = attack::attack_vsknn_negative(&basis, &q, |t| vsknn::verify(vk, t).is_ok())?;
        forge_total += start.elapsed();
        report.sessions += r.sessions;
        report.forgery_attempts += r.attempts;
        report.beta_revealed_sessions += r.beta_revealed;
        report.successes += r.accepted;
        if r.accepted > 0 {
            report.failed_trials.push(trial);
        }
    }
    report.mean_forge_time = forge_total.as_secs_f64() / cfg.trials as f64;
    report.basis_time = basis_total.as_secs_f64() / cfg.trials as f64;
    Ok(report)
}

pub fn run(cfg: &AttackConfig) -> anyhow::Result<AttackReport> {
    match cfg.scheme {
        Scheme::Zhu => run_zhu(cfg),
        Scheme::Vsknn => run_vsknn(cfg),
        Scheme::Aspe => anyhow::bail!("the forgery targets the Paillier-based query protocols only"),
    }
}
