//! Query forgery against the Zhu scheme.
//!
//! Every entry of `q' = beta * M * q_dot` is a multiple of `beta`, so the GCD
//! of the entries exposes it (up to a common factor of `M * q_dot`, which is
//! rare). Dividing it out leaves `M * q_dot`, which is linear in `q_dot`.
//! Tokens for `0^d` and the unit vectors `e_i` then combine into a valid
//! encryption of any query, with no further help from the data owner.
//!
//! The same procedure against the verifiable scheme is provided as a
//! negative check: the combined token carries a check vector that matches
//! none of the replayed tags.

use std::fmt::Display;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{gcd_at_scale, max_scale, NumericsError, Scaled};
use crate::vsknn::{self, QueryToken};
use crate::zhu::ZhuEncQuery;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("token has no nonzero entry")]
    AllZero,
    #[error("query encryption session failed: {0}")]
    ProtocolFailure(String),
    #[error("expected a {expected}-dimensional vector, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(NumericsError),
}

impl From<NumericsError> for AttackError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::AllZero => AttackError::AllZero,
            other => AttackError::Numerics(other),
        }
    }
}

pub type Result<T, E = AttackError> = std::result::Result<T, E>;

/// GCD of the mantissas of `q'` at its composite scale, as an integer.
/// Equals `beta` unless `M * q_dot` has a common factor of its own.
pub fn extract_beta(q: &ZhuEncQuery) -> Result<Scaled> {
    Ok(gcd_at_scale(&q.vec, q.scale)?)
}

/// `q' / extract_beta(q')`.
pub fn reduce_token(q: &ZhuEncQuery) -> Result<ZhuEncQuery> {
    let beta = extract_beta(q)?;
    let vec = q
        .vec
        .iter()
        .map(|x| x.div_int_exact(beta.mantissa()).expect("gcd divides every mantissa"))
        .collect();
    Ok(ZhuEncQuery { vec, ..q.clone() })
}

/// Reduced tokens for `0^d` and `e_1 .. e_d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisTokenSet {
    pub d: usize,
    pub zero: ZhuEncQuery,
    pub units: Vec<ZhuEncQuery>,
    /// GCD found in each raw token, `zero` first.
    pub extracted: Vec<Scaled>,
}

/// Anything that runs a full query encryption session for the attacker.
pub trait QueryEncryptionOracle {
    fn encrypt_query(&mut self, q: &[Scaled]) -> Result<ZhuEncQuery>;
}

impl<F, E> QueryEncryptionOracle for F
where
    F: FnMut(&[Scaled]) -> std::result::Result<ZhuEncQuery, E>,
    E: Display,
{
    fn encrypt_query(&mut self, q: &[Scaled]) -> Result<ZhuEncQuery> {
        self(q).map_err(|e| AttackError::ProtocolFailure(e.to_string()))
    }
}

/// Runs `d + 1` honest sessions for `0^d, e_1, .., e_d` and reduces each.
pub fn acquire_basis<O: QueryEncryptionOracle>(oracle: &mut O, d: usize) -> Result<BasisTokenSet> {
    let zero_q = vec![Scaled::zero(); d];
    let raw_zero = oracle.encrypt_query(&zero_q)?;
    let mut extracted = vec![extract_beta(&raw_zero)?];
    let zero = reduce_token(&raw_zero)?;
    let mut units = Vec::with_capacity(d);
    for i in 0..d {
        let mut e = zero_q.clone();
        e[i] = Scaled::one();
        let raw = oracle.encrypt_query(&e)?;
        extracted.push(extract_beta(&raw)?);
        units.push(reduce_token(&raw)?);
    }
    Ok(BasisTokenSet { d, zero, units, extracted })
}

/// Coefficients `(1 - sum q_i, q_1, .., q_d)` on `(0^d, e_1, .., e_d)`.
fn combination(q_new: &[Scaled]) -> Vec<Scaled> {
    let total: Scaled = q_new.iter().sum();
    let mut coef = vec![&Scaled::one() - &total];
    coef.extend(q_new.iter().cloned());
    coef
}

fn combine(tokens: &[&[Scaled]], coef: &[Scaled]) -> Vec<Scaled> {
    let n = tokens[0].len();
    (0..n)
        .map(|j| tokens.iter().zip(coef).map(|(t, c)| c * &t[j]).sum())
        .collect()
}

/// Encryption of `q_new` as the matching linear combination of basis tokens.
pub fn forge_query(basis: &BasisTokenSet, q_new: &[Scaled]) -> Result<ZhuEncQuery> {
    if q_new.len() != basis.d {
        return Err(AttackError::DimensionMismatch { expected: basis.d, got: q_new.len() });
    }
    let mut tokens: Vec<&[Scaled]> = vec![&basis.zero.vec];
    tokens.extend(basis.units.iter().map(|u| u.vec.as_slice()));
    let vec = combine(&tokens, &combination(q_new));
    Ok(ZhuEncQuery {
        scale: max_scale(&vec),
        coord_scale: basis.zero.coord_scale,
        vec,
    })
}

/// Outcome of the forgery attempt against the verifiable scheme.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeReport {
    pub attempts: usize,
    pub accepted: usize,
    /// Honest tokens whose entry GCD is a multiple of the session `beta`.
    pub beta_revealed: usize,
    pub sessions: usize,
}

/// Honest verifiable-scheme token with the session `beta` known to the harness.
#[derive(Clone, Debug)]
pub struct ObservedToken {
    pub token: QueryToken,
    pub beta: BigInt,
}

/// Applies the forgery to tokens from `0^d, e_1, .., e_d` sessions and
/// submits the combined `q_tilde` with each replayed tag. `submit` returns
/// whether the server accepted.
pub fn attack_vsknn_negative<F>(basis: &[ObservedToken], q_new: &[Scaled], mut submit: F) -> Result<NegativeReport>
where
    F: FnMut(&QueryToken) -> bool,
{
    let d = q_new.len();
    if basis.len() != d + 1 {
        return Err(AttackError::DimensionMismatch { expected: d + 1, got: basis.len() });
    }
    let mut report = NegativeReport { sessions: basis.len(), ..Default::default() };
    let mut reduced = Vec::with_capacity(basis.len());
    for obs in basis {
        report.beta_revealed += vsknn::gcd_reveals(&obs.token, &obs.beta) as usize;
        let as_query = ZhuEncQuery {
            vec: obs.token.q_tilde.clone(),
            scale: obs.token.scale_meta,
            coord_scale: 0,
        };
        reduced.push(reduce_token(&as_query)?.vec);
    }
    let tokens: Vec<&[Scaled]> = reduced.iter().map(Vec::as_slice).collect();
    let forged = combine(&tokens, &combination(q_new));
    let scale_meta = max_scale(&forged);
    for obs in basis {
        let candidate = QueryToken { q_tilde: forged.clone(), tag: obs.token.tag.clone(), scale_meta };
        report.attempts += 1;
        report.accepted += submit(&candidate) as usize;
    }
    Ok(report)
}
