//! Verifiable SkNN: the Zhu layout plus a second key matrix `W` and a
//! per-query check vector `C` sealed into a tag `T`. The cloud server
//! recovers `C` from the query with `W^-1` and accepts only if it matches the
//! tag, so a query user cannot mint valid queries without the data owner.
//!
//! Unlike the Zhu query transform, `R` enters the query unscaled by `beta`,
//! which removes `beta` as a common factor of the query entries.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{mat_invert, mat_random_invertible, FracMat, Matrix, Scaled, DEFAULT_ENTRY_BOUND};
use crate::paillier::Ciphertext;
use crate::select::RecordId;
use crate::symtag::{self, Tag, TagKey};
use crate::zhu::{self, build_qbar, hom_mat_vec, Blinding, DataKey, EncPoint, QueryEncRequest, QueryUser, SchemeDims, Slot, ZhuError};

pub use crate::zhu::DataKey as VsknnDataKey;

/// Default check-vector length.
pub const DEFAULT_CHECK_LEN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VsknnError {
    #[error("fake query")]
    FakeQuery,
    #[error("k = {k} exceeds database size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error(transparent)]
    Protocol(#[from] ZhuError),
}

pub type Result<T, E = VsknnError> = std::result::Result<T, E>;

/// Verification key shared by the data owner and the cloud server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyKey {
    pub tag_key: TagKey,
    pub w: Matrix,
    pub w_inv: FracMat,
    /// Check-vector length `l`; `W` is `(n + l) x (n + l)`.
    pub l: usize,
}

impl VerifyKey {
    pub fn from_parts(tag_key: TagKey, w: Matrix, l: usize) -> Result<Self> {
        if w.rows() != w.cols() || w.rows() <= l {
            return Err(VsknnError::InvalidKey(format!("W is {}x{} with l = {l}", w.rows(), w.cols())));
        }
        let w_inv = mat_invert(&w).map_err(ZhuError::from)?;
        Ok(VerifyKey { tag_key, w, w_inv, l })
    }

    pub fn eta(&self) -> usize {
        self.w.rows()
    }

    /// Length of the query vector inside the token.
    pub fn n(&self) -> usize {
        self.eta() - self.l
    }
}

/// Generates independent data and verification keys.
pub fn keygen<R: Rng + ?Sized>(dims: SchemeDims, l: usize, rng: &mut R) -> Result<(DataKey, VerifyKey)> {
    if l == 0 {
        return Err(VsknnError::InvalidKey("check vector length must be positive".into()));
    }
    let data = DataKey::generate(dims, rng)?;
    let eta = dims.n() + l;
    let w = mat_random_invertible(eta, -DEFAULT_ENTRY_BOUND, DEFAULT_ENTRY_BOUND, 0, rng).map_err(ZhuError::from)?;
    let tag_key = TagKey::generate(rng);
    Ok((data, VerifyKey::from_parts(tag_key, w, l)?))
}

/// Query token as submitted to the cloud server.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryToken {
    pub q_tilde: Vec<Scaled>,
    pub tag: Tag,
    /// Composite decimal scale of `q_tilde`.
    pub scale_meta: u32,
}

/// Data owner's reply: `B = W * (A || C)` under the query user's key, and the tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsknnQueryReply {
    pub b: Vec<Ciphertext>,
    pub tag: Tag,
    pub scale: u32,
}

/// The data owner's per-session secrets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionSecrets {
    pub blinding: Blinding,
    pub check: Vec<Scaled>,
}

impl SessionSecrets {
    pub fn random<R: Rng + ?Sized>(dims: SchemeDims, l: usize, rng: &mut R) -> Self {
        SessionSecrets {
            blinding: Blinding::random(dims.c, rng),
            check: (0..l)
                .map(|_| Scaled::from_int(rng.gen_range(-DEFAULT_ENTRY_BOUND..=DEFAULT_ENTRY_BOUND)))
                .collect(),
        }
    }
}

/// STEPs 2 and 3 with fresh randomness.
pub fn query_step2_3<R: Rng + ?Sized>(
    key: &DataKey,
    vk: &VerifyKey,
    req: &QueryEncRequest,
    rng: &mut R,
) -> Result<(VsknnQueryReply, SessionSecrets)> {
    let secrets = SessionSecrets::random(key.dims, vk.l, rng);
    let reply = query_step2_3_with(key, vk, req, &secrets, rng)?;
    Ok((reply, secrets))
}

/// STEPs 2 and 3 with caller-chosen `beta`, `R` and `C`.
pub fn query_step2_3_with<R: Rng + ?Sized>(
    key: &DataKey,
    vk: &VerifyKey,
    req: &QueryEncRequest,
    secrets: &SessionSecrets,
    rng: &mut R,
) -> Result<VsknnQueryReply> {
    let Blinding { beta, r } = &secrets.blinding;
    if r.len() != key.dims.c {
        return Err(VsknnError::DimensionMismatch { expected: key.dims.c, got: r.len() });
    }
    if secrets.check.len() != vk.l || vk.n() != key.dims.n() {
        return Err(VsknnError::DimensionMismatch { expected: vk.l, got: secrets.check.len() });
    }
    let qbar = build_qbar(key, req, beta, r)?;
    let (m_int, m_scale) = key.m.integer_rows();
    let a = hom_mat_vec(&req.pk, &m_int, &qbar, rng)?;
    let a_scale = m_scale + req.coord_scale;

    let mut qhat: Vec<Slot> = a.into_iter().map(Slot::Enc).collect();
    for c in &secrets.check {
        let m = c.mantissa_at(a_scale).ok_or_else(|| ZhuError::PrecisionLoss(c.clone()))?;
        qhat.push(Slot::Plain(m));
    }
    let (w_int, w_scale) = vk.w.integer_rows();
    let b = hom_mat_vec(&req.pk, &w_int, &qhat, rng)?;
    Ok(VsknnQueryReply {
        b,
        tag: symtag::seal(&vk.tag_key, &secrets.check, rng),
        scale: w_scale + a_scale,
    })
}

/// STEP 4: decrypt `B` into the token.
pub fn query_step4(qu: &QueryUser, reply: &VsknnQueryReply) -> Result<QueryToken> {
    Ok(QueryToken {
        q_tilde: qu.decrypt_vector(&reply.b, reply.scale)?,
        tag: reply.tag.clone(),
        scale_meta: reply.scale,
    })
}

/// STEPs 1-4 in one process; returns the token and the data owner's secrets.
pub fn encrypt_query_local<R: Rng + ?Sized>(
    key: &DataKey,
    vk: &VerifyKey,
    q: &[Scaled],
    coord_scale: u32,
    key_bits: u64,
    rng: &mut R,
) -> Result<(QueryToken, SessionSecrets)> {
    let (qu, req) = zhu::query_step1(q, coord_scale, key_bits, rng)?;
    let (reply, secrets) = query_step2_3(key, vk, &req, rng)?;
    Ok((query_step4(&qu, &reply)?, secrets))
}

/// Verifiability condition: `W^-1 * q_tilde = (q' || C)` with `C` equal to
/// the sealed check vector. Returns `q'` on success.
pub fn verify(vk: &VerifyKey, token: &QueryToken) -> Result<Vec<Scaled>> {
    if token.q_tilde.len() != vk.eta() {
        return Err(VsknnError::DimensionMismatch { expected: vk.eta(), got: token.q_tilde.len() });
    }
    let sealed = symtag::open(&vk.tag_key, &token.tag).map_err(|_| VsknnError::FakeQuery)?;
    let mut plain = vk
        .w_inv
        .mul_vec(&token.q_tilde)
        .map_err(ZhuError::from)?
        .to_scaled()
        .ok_or(VsknnError::FakeQuery)?;
    let check = plain.split_off(vk.n());
    if check != sealed {
        return Err(VsknnError::FakeQuery);
    }
    Ok(plain)
}

/// Time spent in each phase of one kNN request.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseTimes {
    pub verify: Duration,
    pub scan: Duration,
}

/// Verifies the token, then runs the Zhu top-k scan on the recovered `q'`.
pub fn knn(db: &[EncPoint], token: &QueryToken, k: usize, vk: &VerifyKey) -> Result<Vec<RecordId>> {
    knn_timed(db, token, k, vk).map(|(ids, _)| ids)
}

pub fn knn_timed(
    db: &[EncPoint],
    token: &QueryToken,
    k: usize,
    vk: &VerifyKey,
) -> Result<(Vec<RecordId>, PhaseTimes)> {
    let t0 = Instant::now();
    let q = verify(vk, token)?;
    let verify_time = t0.elapsed();
    if k > db.len() {
        return Err(VsknnError::KTooLarge { k, size: db.len() });
    }
    let t1 = Instant::now();
    let ids = zhu::knn(db, &q, k)?;
    Ok((ids, PhaseTimes { verify: verify_time, scan: t1.elapsed() }))
}

/// Whether `beta` divides the integer GCD of the token's mantissas.
pub fn gcd_reveals(token: &QueryToken, beta: &BigInt) -> bool {
    use num_integer::Integer;
    match crate::numerics::gcd_at_scale(&token.q_tilde, token.scale_meta) {
        Ok(g) => g.mantissa().is_multiple_of(beta),
        Err(_) => false,
    }
}
