//! Secure k-nearest-neighbor query processing over encrypted data.
//!
//! Three schemes share one exact-arithmetic substrate ([`numerics`]):
//!
//! * [`aspe`]: the asymmetric scalar-product-preserving baseline, where the
//!   data owner and query user share one key.
//! * [`zhu`]: the Zhu et al. layout with cooperative, Paillier-assisted query
//!   encryption so the user never sees the key.
//! * [`vsknn`]: the verifiable scheme, which adds a second matrix transform
//!   and an authenticated check-vector tag the cloud server can verify.
//!
//! [`attack`] implements the query-controllability break against [`zhu`]
//! (blinding-factor recovery by GCD, then forgery by linear combination) and
//! the corresponding negative experiment against [`vsknn`].

pub mod aspe;
pub mod attack;
pub mod numerics;
pub mod paillier;
pub mod select;
pub mod symtag;
pub mod vsknn;
pub mod zhu;

pub use numerics::{FracMat, FracVec, Matrix, Perm, Scaled};
