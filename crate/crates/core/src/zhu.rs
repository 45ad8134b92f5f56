//! The Zhu et al. scheme: permuted, randomized point layout and a
//! cooperative query encryption in which the data owner applies its key
//! matrix to Paillier-encrypted query coordinates.
//!
//! Layouts (before the permutation `pi`):
//!
//! ```text
//! p_dot = (S_1 - 2p_1, ..., S_d - 2p_d, S_{d+1} + ||p||^2, tau, v)
//! q_dot = (q_1, ..., q_d, 1, R, 0_eps)
//! ```
//!
//! Points are encrypted as `p' = pi(p_dot) * M^-1`, queries as
//! `q' = beta * M * pi(q_dot)^T`, so `p'.q' = beta * (||p||^2 - 2 p.q + S.(q,1) + tau.R)`.
//! Within one query only the first two terms vary per point, hence a larger
//! dot product means a farther point.

use std::cmp::Ordering;

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    self, mat_invert, mat_random_invertible, FracMat, FracVec, Matrix, NumericsError, Perm, Scaled,
    DEFAULT_ENTRY_BOUND,
};
use crate::paillier::{Ciphertext, Keypair, PaillierError, PublicKey};
use crate::select::{par_top_k, RecordId};

/// Range of the per-query blinding factor `beta`.
pub const BETA_MIN: i64 = 2;
pub const BETA_MAX: i64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ZhuError {
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("value {0} has more decimals than the coordinate scale allows")]
    PrecisionLoss(Scaled),
    #[error("norm slot does not match the decrypted coordinates")]
    NormSlotMismatch,
    #[error("ciphertext does not decrypt to a valid layout")]
    Corrupted,
    #[error("k = {k} exceeds database size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("decryption failed: {0}")]
    DecryptFailure(PaillierError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T, E = ZhuError> = std::result::Result<T, E>;

/// Layout dimensions: data dimension `d`, `c` random query slots and `eps`
/// random point slots; `n = d + 1 + c + eps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeDims {
    pub d: usize,
    pub c: usize,
    pub eps: usize,
}

impl SchemeDims {
    pub fn new(d: usize, c: usize, eps: usize) -> Result<Self> {
        if d == 0 || c == 0 || eps == 0 {
            return Err(ZhuError::InvalidKey(format!(
                "dimensions must be positive (d={d}, c={c}, eps={eps})"
            )));
        }
        Ok(SchemeDims { d, c, eps })
    }

    pub fn n(&self) -> usize {
        self.d + 1 + self.c + self.eps
    }
}

/// Bounds for random key material.
#[derive(Clone, Copy, Debug)]
pub struct KeyParams {
    /// Integer entries are drawn from `[-entry_bound, entry_bound]`.
    pub entry_bound: i64,
    /// Decimal scale applied to drawn matrix entries.
    pub matrix_scale: u32,
}

impl Default for KeyParams {
    fn default() -> Self {
        KeyParams {
            entry_bound: DEFAULT_ENTRY_BOUND,
            matrix_scale: 0,
        }
    }
}

fn random_ints<R: Rng + ?Sized>(len: usize, bound: i64, rng: &mut R) -> Vec<Scaled> {
    (0..len)
        .map(|_| Scaled::from_int(rng.gen_range(-bound..=bound)))
        .collect()
}

/// The data owner's secret `{M, pi, S, tau}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataKey {
    pub dims: SchemeDims,
    pub m: Matrix,
    pub m_inv: FracMat,
    pub perm: Perm,
    pub s: Vec<Scaled>,
    pub tau: Vec<Scaled>,
}

pub type ZhuKey = DataKey;

/// Encrypted record as stored by the cloud server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncPoint {
    pub id: RecordId,
    pub vec: FracVec,
}

impl DataKey {
    pub fn generate<R: Rng + ?Sized>(dims: SchemeDims, rng: &mut R) -> Result<Self> {
        Self::generate_with(dims, KeyParams::default(), rng)
    }

    pub fn generate_with<R: Rng + ?Sized>(
        dims: SchemeDims,
        params: KeyParams,
        rng: &mut R,
    ) -> Result<Self> {
        let n = dims.n();
        let b = params.entry_bound;
        let m = mat_random_invertible(n, -b, b, params.matrix_scale, rng)?;
        let perm = Perm::random(n, rng);
        let s = random_ints(dims.d + 1, b, rng);
        let tau = random_ints(dims.c, b, rng);
        Self::from_parts(dims, m, perm, s, tau)
    }

    pub fn from_parts(
        dims: SchemeDims,
        m: Matrix,
        perm: Perm,
        s: Vec<Scaled>,
        tau: Vec<Scaled>,
    ) -> Result<Self> {
        let n = dims.n();
        if m.rows() != n || m.cols() != n {
            return Err(ZhuError::InvalidKey(format!(
                "matrix is {}x{}, layout needs {n}x{n}",
                m.rows(),
                m.cols()
            )));
        }
        if perm.len() != n || s.len() != dims.d + 1 || tau.len() != dims.c {
            return Err(ZhuError::InvalidKey("component lengths do not match dims".into()));
        }
        let m_inv = mat_invert(&m)?;
        Ok(DataKey {
            dims,
            m,
            m_inv,
            perm,
            s,
            tau,
        })
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.dims.d {
            Ok(())
        } else {
            Err(ZhuError::DimensionMismatch {
                expected: self.dims.d,
                got,
            })
        }
    }

    /// Permuted point layout `pi(p_dot)`.
    pub fn point_layout(&self, p: &[Scaled], v: &[Scaled]) -> Result<Vec<Scaled>> {
        self.check_dim(p.len())?;
        if v.len() != self.dims.eps {
            return Err(ZhuError::DimensionMismatch {
                expected: self.dims.eps,
                got: v.len(),
            });
        }
        let two = Scaled::from_int(2);
        let mut layout: Vec<Scaled> = p
            .iter()
            .zip(&self.s)
            .map(|(pi, si)| si - &(&two * pi))
            .collect();
        layout.push(&self.s[self.dims.d] + &numerics::squared_norm(p));
        layout.extend(self.tau.iter().cloned());
        layout.extend(v.iter().cloned());
        Ok(self.perm.apply(&layout)?)
    }

    /// Encrypts with a fresh random `v`.
    pub fn encrypt_point<R: Rng + ?Sized>(
        &self,
        id: RecordId,
        p: &[Scaled],
        rng: &mut R,
    ) -> Result<EncPoint> {
        let v = random_ints(self.dims.eps, DEFAULT_ENTRY_BOUND, rng);
        self.encrypt_point_with_noise(id, p, &v)
    }

    pub fn encrypt_point_with_noise(
        &self,
        id: RecordId,
        p: &[Scaled],
        v: &[Scaled],
    ) -> Result<EncPoint> {
        let layout = self.point_layout(p, v)?;
        Ok(EncPoint {
            id,
            vec: self.m_inv.vec_mul(&layout)?,
        })
    }

    /// Encrypts a whole table in parallel. Point `i` draws its noise from a
    /// stream seeded by `(seed, id)`, so the output does not depend on thread
    /// scheduling.
    pub fn encrypt_points(&self, points: &[(RecordId, Vec<Scaled>)], seed: u64) -> Result<Vec<EncPoint>> {
        points
            .par_iter()
            .map(|(id, p)| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(*id);
                self.encrypt_point(*id, p, &mut rng)
            })
            .collect()
    }

    /// Recovers `p` from `p' * M`, undoing the permutation and the `S`
    /// randomization; the norm slot is cross-checked.
    pub fn decrypt_point(&self, enc: &EncPoint) -> Result<Vec<Scaled>> {
        if enc.vec.len() != self.dims.n() {
            return Err(ZhuError::DimensionMismatch {
                expected: self.dims.n(),
                got: enc.vec.len(),
            });
        }
        let layout = enc.vec.mul_mat(&self.m)?.to_scaled().ok_or(ZhuError::Corrupted)?;
        let plain = self.perm.inverse().apply(&layout)?;
        let two = BigInt::from(2);
        let p = (0..self.dims.d)
            .map(|i| {
                (&self.s[i] - &plain[i])
                    .div_int_exact(&two)
                    .ok_or(ZhuError::Corrupted)
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = &self.s[self.dims.d] + &numerics::squared_norm(&p);
        if plain[self.dims.d] != norm {
            return Err(ZhuError::NormSlotMismatch);
        }
        Ok(p)
    }
}

/// Encrypted query `q' = beta * M * pi(q_dot)^T`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZhuEncQuery {
    pub vec: Vec<Scaled>,
    /// Composite decimal scale of the entries (matrix scale + coordinate scale).
    pub scale: u32,
    /// Decimal scale the query coordinates were encrypted at.
    pub coord_scale: u32,
}

/// Query user's state for one query encryption session.
#[derive(Clone, Debug)]
pub struct QueryUser {
    keypair: Keypair,
    d: usize,
    coord_scale: u32,
}

/// STEP 1 message: public key and encrypted coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEncRequest {
    pub pk: PublicKey,
    pub enc_dims: Vec<Ciphertext>,
    pub coord_scale: u32,
}

/// The data owner's per-query randomness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blinding {
    pub beta: BigInt,
    pub r: Vec<Scaled>,
}

impl Blinding {
    pub fn random<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        Blinding {
            beta: BigInt::from(rng.gen_range(BETA_MIN..=BETA_MAX)),
            r: random_ints(c, DEFAULT_ENTRY_BOUND, rng),
        }
    }
}

/// STEP 2 reply: `A = M * q_bar` under the query user's Paillier key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZhuQueryReply {
    pub a: Vec<Ciphertext>,
    pub scale: u32,
    pub coord_scale: u32,
}

impl QueryUser {
    pub fn new(keypair: Keypair, d: usize, coord_scale: u32) -> Self {
        QueryUser {
            keypair,
            d,
            coord_scale,
        }
    }

    pub fn keypair(&self) -> &Keypair {
        &self.keypair
    }

    pub fn coord_scale(&self) -> u32 {
        self.coord_scale
    }

    /// Encrypts each coordinate's mantissa at the session's coordinate scale.
    pub fn request<R: Rng + ?Sized>(&self, q: &[Scaled], rng: &mut R) -> Result<QueryEncRequest> {
        if q.len() != self.d {
            return Err(ZhuError::DimensionMismatch {
                expected: self.d,
                got: q.len(),
            });
        }
        let mantissas = q
            .iter()
            .map(|x| {
                x.mantissa_at(self.coord_scale)
                    .ok_or_else(|| ZhuError::PrecisionLoss(x.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let seeds: Vec<u64> = mantissas.iter().map(|_| rng.gen()).collect();
        let enc_dims = mantissas
            .par_iter()
            .zip(seeds)
            .map(|(m, seed)| {
                self.keypair
                    .encrypt(m, &mut ChaCha20Rng::seed_from_u64(seed))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(QueryEncRequest {
            pk: self.keypair.pk.clone(),
            enc_dims,
            coord_scale: self.coord_scale,
        })
    }

    /// Decrypts a vector of ciphertexts into decimals at `scale`.
    pub fn decrypt_vector(&self, cts: &[Ciphertext], scale: u32) -> Result<Vec<Scaled>> {
        cts.par_iter()
            .map(|c| {
                self.keypair
                    .decrypt(c)
                    .map(|m| Scaled::new(m, scale))
                    .map_err(ZhuError::DecryptFailure)
            })
            .collect()
    }
}

/// STEP 1: fresh Paillier instance, encrypted coordinates.
pub fn query_step1<R: Rng + ?Sized>(
    q: &[Scaled],
    coord_scale: u32,
    key_bits: u64,
    rng: &mut R,
) -> Result<(QueryUser, QueryEncRequest)> {
    let qu = QueryUser::new(Keypair::generate(key_bits, rng)?, q.len(), coord_scale);
    let req = qu.request(q, rng)?;
    Ok((qu, req))
}

/// Entry of the partially encrypted query vector.
#[derive(Clone, Debug)]
pub(crate) enum Slot {
    Enc(Ciphertext),
    Plain(BigInt),
}

/// Builds `pi(E(q_1)^beta, ..., E(q_d)^beta, beta, tail, 0_eps)` with all
/// plaintext entries as mantissas at the coordinate scale.
pub(crate) fn build_qbar(
    key: &DataKey,
    req: &QueryEncRequest,
    beta: &BigInt,
    tail: &[Scaled],
) -> Result<Vec<Slot>> {
    if req.enc_dims.len() != key.dims.d {
        return Err(ZhuError::DimensionMismatch {
            expected: key.dims.d,
            got: req.enc_dims.len(),
        });
    }
    if beta <= &BigInt::from(0) {
        return Err(ZhuError::InvalidKey("beta must be positive".into()));
    }
    let cs = req.coord_scale;
    let mut slots = req
        .enc_dims
        .par_iter()
        .map(|c| Ok(Slot::Enc(req.pk.hom_scale(c, beta)?)))
        .collect::<Result<Vec<_>>>()?;
    let beta_s = Scaled::from_int(beta.clone());
    slots.push(Slot::Plain(beta_s.mantissa_at(cs).expect("integer")));
    for t in tail {
        let m = t
            .mantissa_at(cs)
            .ok_or_else(|| ZhuError::PrecisionLoss(t.clone()))?;
        slots.push(Slot::Plain(m));
    }
    slots.extend((0..key.dims.eps).map(|_| Slot::Plain(BigInt::from(0))));
    Ok(key.perm.apply(&slots)?)
}

/// Homomorphic `mat * slots`: encrypted slots are exponentiated by the
/// matrix entries, plaintext slots are multiplied in the clear and added
/// through one fresh encryption per row.
pub(crate) fn hom_mat_vec<R: Rng + ?Sized>(
    pk: &PublicKey,
    mat: &[Vec<BigInt>],
    slots: &[Slot],
    rng: &mut R,
) -> Result<Vec<Ciphertext>> {
    let seeds: Vec<u64> = mat.iter().map(|_| rng.gen()).collect();
    mat.par_iter()
        .zip(seeds)
        .map(|(row, seed)| {
            if row.len() != slots.len() {
                return Err(ZhuError::DimensionMismatch {
                    expected: row.len(),
                    got: slots.len(),
                });
            }
            let mut plain = BigInt::from(0);
            let mut terms = Vec::new();
            for (coef, slot) in row.iter().zip(slots) {
                match slot {
                    Slot::Enc(c) => terms.push((c, coef)),
                    Slot::Plain(x) => plain += coef * x,
                }
            }
            let fresh = pk.encrypt(&plain, &mut ChaCha20Rng::seed_from_u64(seed))?;
            if terms.is_empty() {
                return Ok(fresh);
            }
            let combined = pk.hom_lincomb(&terms)?;
            Ok(pk.hom_add(&combined, &fresh)?)
        })
        .collect()
}

/// STEP 2 with fresh `beta` and `R`.
pub fn query_step2<R: Rng + ?Sized>(
    key: &DataKey,
    req: &QueryEncRequest,
    rng: &mut R,
) -> Result<(ZhuQueryReply, Blinding)> {
    let blinding = Blinding::random(key.dims.c, rng);
    let reply = query_step2_with(key, req, &blinding, rng)?;
    Ok((reply, blinding))
}

/// STEP 2 with caller-chosen blinding; `R` enters scaled by `beta`.
pub fn query_step2_with<R: Rng + ?Sized>(
    key: &DataKey,
    req: &QueryEncRequest,
    blinding: &Blinding,
    rng: &mut R,
) -> Result<ZhuQueryReply> {
    if blinding.r.len() != key.dims.c {
        return Err(ZhuError::DimensionMismatch {
            expected: key.dims.c,
            got: blinding.r.len(),
        });
    }
    let beta = Scaled::from_int(blinding.beta.clone());
    let tail: Vec<Scaled> = blinding.r.iter().map(|r| &beta * r).collect();
    let qbar = build_qbar(key, req, &blinding.beta, &tail)?;
    let (m_int, m_scale) = key.m.integer_rows();
    let a = hom_mat_vec(&req.pk, &m_int, &qbar, rng)?;
    Ok(ZhuQueryReply {
        a,
        scale: m_scale + req.coord_scale,
        coord_scale: req.coord_scale,
    })
}

/// STEP 3: decrypt `A` into `q'`.
pub fn query_step3(qu: &QueryUser, reply: &ZhuQueryReply) -> Result<ZhuEncQuery> {
    Ok(ZhuEncQuery {
        vec: qu.decrypt_vector(&reply.a, reply.scale)?,
        scale: reply.scale,
        coord_scale: reply.coord_scale,
    })
}

/// Runs STEPs 1-3 in one process; returns the query and the data owner's
/// blinding (for experiments that need ground truth).
pub fn encrypt_query_local<R: Rng + ?Sized>(
    key: &DataKey,
    q: &[Scaled],
    coord_scale: u32,
    key_bits: u64,
    rng: &mut R,
) -> Result<(ZhuEncQuery, Blinding)> {
    let (qu, req) = query_step1(q, coord_scale, key_bits, rng)?;
    let (reply, blinding) = query_step2(key, &req, rng)?;
    Ok((query_step3(&qu, &reply)?, blinding))
}

/// Which of two encrypted points is nearer; `Less` means `px`. A larger dot
/// product means farther.
pub fn compare(px: &FracVec, py: &FracVec, q: &[Scaled]) -> Result<Ordering> {
    Ok(px.dot(q)?.cmp(&py.dot(q)?))
}

/// Ids of the `k` nearest records under the comparison operator, ties by
/// ascending id.
pub fn knn(db: &[EncPoint], q: &[Scaled], k: usize) -> Result<Vec<RecordId>> {
    if k > db.len() {
        return Err(ZhuError::KTooLarge { k, size: db.len() });
    }
    par_top_k(db, k, |p| Ok((p.id, p.vec.dot(q)?)))
}
