//! Asymmetric scalar-product-preserving encryption (Wong et al.).
//!
//! Data owner and query user are one entity sharing the key matrix `M`.
//! Points are encrypted as `p' = (p, -0.5||p||^2) * M` and queries as
//! `q' = M^-1 * r * (q, 1)^T`, so `p'.q' = r * (p.q - 0.5||p||^2)`: a larger
//! dot product means a nearer point.

use std::cmp::{Ordering, Reverse};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    self, dot, mat_invert, mat_random_invertible, FracMat, FracVec, Matrix, NumericsError, Scaled,
    DEFAULT_ENTRY_BOUND,
};
use crate::select::{par_top_k, RecordId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AspeError {
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("query randomizer r must be positive")]
    NonpositiveR,
    #[error("k = {k} exceeds database size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("ciphertext does not decrypt to a valid point")]
    Corrupted,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T, E = AspeError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspeKey {
    pub d: usize,
    pub m: Matrix,
    pub m_inv: FracMat,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspeEncPoint {
    pub id: RecordId,
    pub vec: Vec<Scaled>,
}

impl AspeKey {
    pub fn generate<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        let m = mat_random_invertible(d + 1, -DEFAULT_ENTRY_BOUND, DEFAULT_ENTRY_BOUND, 0, rng)?;
        Self::from_matrix(m)
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        let m_inv = mat_invert(&m)?;
        let d = m.rows().checked_sub(1).ok_or(NumericsError::SingularMatrix)?;
        Ok(AspeKey { d, m, m_inv })
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got == self.d {
            Ok(())
        } else {
            Err(AspeError::DimensionMismatch {
                expected: self.d,
                got,
            })
        }
    }

    /// `(p_1..p_d, -0.5||p||^2) * M`.
    pub fn encrypt_point(&self, p: &[Scaled]) -> Result<Vec<Scaled>> {
        self.check_dim(p.len())?;
        let half = Scaled::new(-5, 1);
        let mut layout = p.to_vec();
        layout.push(&half * &numerics::squared_norm(p));
        Ok(self.m.vec_mul(&layout)?)
    }

    pub fn encrypt_record(&self, id: RecordId, p: &[Scaled]) -> Result<AspeEncPoint> {
        Ok(AspeEncPoint {
            id,
            vec: self.encrypt_point(p)?,
        })
    }

    /// `M^-1 * (r q_1, ..., r q_d, r)^T`.
    pub fn encrypt_query(&self, q: &[Scaled], r: &Scaled) -> Result<FracVec> {
        self.check_dim(q.len())?;
        if r.signum() <= 0 {
            return Err(AspeError::NonpositiveR);
        }
        let mut layout: Vec<Scaled> = q.iter().map(|x| x * r).collect();
        layout.push(r.clone());
        Ok(self.m_inv.mul_vec(&layout)?)
    }

    /// Query encryption with `r` drawn uniformly from `[1, 1000]`.
    pub fn encrypt_query_random<R: Rng + ?Sized>(&self, q: &[Scaled], rng: &mut R) -> Result<FracVec> {
        let r = Scaled::from_int(rng.gen_range(1..=DEFAULT_ENTRY_BOUND));
        self.encrypt_query(q, &r)
    }

    /// `p = p' * M^-1` with the norm slot stripped and cross-checked.
    pub fn decrypt_point(&self, enc: &[Scaled]) -> Result<Vec<Scaled>> {
        self.check_dim(enc.len().wrapping_sub(1))?;
        let layout = self.m_inv.vec_mul(enc)?.to_scaled().ok_or(AspeError::Corrupted)?;
        let (p, norm) = layout.split_at(self.d);
        let expected = &Scaled::new(-5, 1) * &numerics::squared_norm(p);
        if norm[0] != expected {
            return Err(AspeError::Corrupted);
        }
        Ok(p.to_vec())
    }
}

/// Which of two encrypted points is nearer the query; `Less` means `px`.
pub fn compare(px: &[Scaled], py: &[Scaled], q: &FracVec) -> Result<Ordering> {
    let sx = q.dot(px)?;
    let sy = q.dot(py)?;
    // Larger dot product means nearer.
    Ok(sy.cmp(&sx))
}

/// Ids of the `k` nearest records, ties by ascending id.
pub fn knn(db: &[AspeEncPoint], q: &FracVec, k: usize) -> Result<Vec<RecordId>> {
    if k > db.len() {
        return Err(AspeError::KTooLarge { k, size: db.len() });
    }
    par_top_k(db, k, |p| Ok((p.id, Reverse(dot(&q.numer, &p.vec)?))))
}
