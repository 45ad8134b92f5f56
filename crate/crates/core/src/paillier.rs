//! Paillier additive homomorphic encryption over signed plaintexts.
//!
//! Uses the `g = N + 1` variant. Plaintexts are signed integers encoded as
//! residues mod `N`: values above `N/2` decode as `value - N`.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use num_bigint::{BigInt, BigUint, RandBigInt, Sign, ToBigInt};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default modulus size.
pub const DEFAULT_KEY_BITS: u64 = 1024;

/// Smallest accepted modulus size.
pub const MIN_KEY_BITS: u64 = 512;

const MILLER_RABIN_ROUNDS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaillierError {
    #[error("plaintext magnitude exceeds the signed range of the modulus")]
    PlaintextOutOfRange,
    #[error("ciphertext was produced under a different public key")]
    KeyMismatch,
    #[error("ciphertext is not an element of Z*_(N^2)")]
    InvalidCiphertext,
    #[error("key size must be an even number of bits >= {MIN_KEY_BITS}, got {0}")]
    InvalidKeySize(u64),
}

pub type Result<T, E = PaillierError> = std::result::Result<T, E>;

/// Short hash of a public modulus; every ciphertext carries the fingerprint
/// of the key it was produced under.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint([u8; 8]);

impl Fingerprint {
    fn of(n: &BigUint) -> Self {
        let digest = Sha256::digest(n.to_bytes_be());
        let mut out = [0u8; 8];
        out.copy_from_slice(&digest[..8]);
        Fingerprint(out)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PublicKey {
    n: BigUint,
    nn: BigUint,
    half_n: BigUint,
    fingerprint: Fingerprint,
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl Eq for PublicKey {}

#[derive(Clone)]
pub struct SecretKey {
    p: BigUint,
    q: BigUint,
    pp: BigUint,
    qq: BigUint,
    hp: BigUint,
    hq: BigUint,
    p_inv_q: BigUint,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct Keypair {
    pub pk: PublicKey,
    pub sk: SecretKey,
    pub bits: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    fingerprint: Fingerprint,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.value.to_bytes_be()
    }
}

impl Keypair {
    /// Generates a fresh modulus `N = p*q` from two distinct `bits/2`-bit
    /// primes.
    pub fn generate<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Result<Self> {
        if bits < MIN_KEY_BITS || !bits.is_multiple_of(2) {
            return Err(PaillierError::InvalidKeySize(bits));
        }
        loop {
            let p = random_prime(bits / 2, rng);
            let q = random_prime(bits / 2, rng);
            if p == q {
                continue;
            }
            let n = &p * &q;
            if n.bits() != bits {
                continue;
            }
            let sk = SecretKey::from_primes(p, q);
            let pk = PublicKey::from_modulus(n);
            return Ok(Keypair { pk, sk, bits });
        }
    }
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Self {
        let nn = &n * &n;
        let half_n = &n >> 1;
        let fingerprint = Fingerprint::of(&n);
        PublicKey {
            n,
            nn,
            half_n,
            fingerprint,
        }
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    /// Generator `g = N + 1`.
    pub fn g(&self) -> BigUint {
        &self.n + 1u8
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    /// Largest encodable plaintext magnitude, `(N-1)/2`.
    pub fn max_plaintext(&self) -> &BigUint {
        &self.half_n
    }

    fn encode(&self, m: &BigInt) -> Result<BigUint> {
        if m.magnitude() > &self.half_n {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        let n = self.n.to_bigint().expect("non-negative");
        Ok(m.mod_floor(&n).to_biguint().expect("reduced mod N"))
    }

    fn decode(&self, x: BigUint) -> BigInt {
        if x > self.half_n {
            BigInt::from_biguint(Sign::Plus, x) - BigInt::from_biguint(Sign::Plus, self.n.clone())
        } else {
            BigInt::from_biguint(Sign::Plus, x)
        }
    }

    fn check(&self, c: &Ciphertext) -> Result<()> {
        if c.fingerprint != self.fingerprint {
            Err(PaillierError::KeyMismatch)
        } else {
            Ok(())
        }
    }

    fn wrap(&self, value: BigUint) -> Ciphertext {
        Ciphertext {
            value,
            fingerprint: self.fingerprint,
        }
    }

    fn random_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// `E(m) = (1 + mN) * r^N mod N^2` with fresh `r`.
    pub fn encrypt<R: Rng + ?Sized>(&self, m: &BigInt, rng: &mut R) -> Result<Ciphertext> {
        let encoded = self.encode(m)?;
        let r = self.random_unit(rng);
        let gm = (&encoded * &self.n + 1u8) % &self.nn;
        let rn = r.modpow(&self.n, &self.nn);
        Ok(self.wrap(gm * rn % &self.nn))
    }

    /// Homomorphic addition: `E(m1) * E(m2) = E(m1 + m2)`.
    pub fn hom_add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext> {
        self.check(c1)?;
        self.check(c2)?;
        Ok(self.wrap(&c1.value * &c2.value % &self.nn))
    }

    /// Homomorphic scaling: `E(m)^f = E(f * m)`; negative `f` goes through the
    /// modular inverse of the ciphertext.
    pub fn hom_scale(&self, c: &Ciphertext, f: &BigInt) -> Result<Ciphertext> {
        self.hom_lincomb(&[(c, f)])
    }

    /// `prod_i c_i^{f_i}`, an encryption of `sum_i f_i * m_i`.
    ///
    /// Uses simultaneous exponentiation so all terms share one squaring
    /// chain; the negative-coefficient terms are inverted once at the end.
    pub fn hom_lincomb(&self, terms: &[(&Ciphertext, &BigInt)]) -> Result<Ciphertext> {
        for (c, _) in terms {
            self.check(c)?;
            if c.value.is_zero() || c.value >= self.nn {
                return Err(PaillierError::InvalidCiphertext);
            }
        }
        let pos: Vec<(&BigUint, &BigUint)> = terms
            .iter()
            .filter(|(_, f)| f.is_positive())
            .map(|(c, f)| (&c.value, f.magnitude()))
            .collect();
        let neg: Vec<(&BigUint, &BigUint)> = terms
            .iter()
            .filter(|(_, f)| f.is_negative())
            .map(|(c, f)| (&c.value, f.magnitude()))
            .collect();
        let mut acc = multi_pow(&pos, &self.nn);
        if !neg.is_empty() {
            let denom = multi_pow(&neg, &self.nn);
            let inv = denom.modinv(&self.nn).ok_or(PaillierError::InvalidCiphertext)?;
            acc = acc * inv % &self.nn;
        }
        Ok(self.wrap(acc))
    }

    /// Ciphertext from its wire bytes, bound to this key.
    pub fn ciphertext_from_bytes(&self, bytes: &[u8]) -> Result<Ciphertext> {
        let value = BigUint::from_bytes_be(bytes);
        if value.is_zero() || value >= self.nn {
            return Err(PaillierError::InvalidCiphertext);
        }
        Ok(self.wrap(value))
    }
}

/// `prod base_i^exp_i mod m` with a shared squaring chain.
fn multi_pow(terms: &[(&BigUint, &BigUint)], m: &BigUint) -> BigUint {
    let bits = terms.iter().map(|(_, e)| e.bits()).max().unwrap_or(0);
    let mut acc = BigUint::one();
    for bit in (0..bits).rev() {
        acc = &acc * &acc % m;
        for (b, e) in terms {
            if e.bit(bit) {
                acc = acc * *b % m;
            }
        }
    }
    acc
}

impl SecretKey {
    fn from_primes(p: BigUint, q: BigUint) -> Self {
        let n = &p * &q;
        let pp = &p * &p;
        let qq = &q * &q;
        let hp = Self::h(&p, &pp, &n);
        let hq = Self::h(&q, &qq, &n);
        let p_inv_q = p.modinv(&q).expect("distinct primes");
        SecretKey {
            p,
            q,
            pp,
            qq,
            hp,
            hq,
            p_inv_q,
        }
    }

    /// `L_p(g^(p-1) mod p^2)^-1 mod p` for `g = N + 1`.
    fn h(p: &BigUint, pp: &BigUint, n: &BigUint) -> BigUint {
        let gp = (n + 1u8).modpow(&(p - 1u8), pp);
        let lp = (gp - 1u8) / p;
        lp.modinv(p).expect("L_p(g^(p-1)) is a unit mod p")
    }

    fn partial(&self, c: &BigUint, p: &BigUint, pp: &BigUint, h: &BigUint) -> BigUint {
        let cp = c % pp;
        let dp = cp.modpow(&(p - 1u8), pp);
        let lp = (dp - 1u8) / p;
        lp * h % p
    }

    /// CRT decryption to a signed plaintext.
    pub fn decrypt(&self, pk: &PublicKey, c: &Ciphertext) -> Result<BigInt> {
        pk.check(c)?;
        if c.value.is_zero() || c.value >= pk.nn {
            return Err(PaillierError::InvalidCiphertext);
        }
        let mp = self.partial(&c.value, &self.p, &self.pp, &self.hp);
        let mq = self.partial(&c.value, &self.q, &self.qq, &self.hq);
        // m = mp + p * ((mq - mp) * p^-1 mod q)
        let diff = (mq + &self.q - (&mp % &self.q)) % &self.q;
        let m = mp + &self.p * (diff * &self.p_inv_q % &self.q);
        Ok(pk.decode(m))
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.p, &self.q)
    }
}

impl Keypair {
    pub fn encrypt<R: Rng + ?Sized>(&self, m: &BigInt, rng: &mut R) -> Result<Ciphertext> {
        self.pk.encrypt(m, rng)
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigInt> {
        self.sk.decrypt(&self.pk, c)
    }
}

const SMALL_PRIMES: [u32; 54] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257,
];

/// Random prime with exactly `bits` bits and its top two bits set.
fn random_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    loop {
        let mut cand = rng.gen_biguint(bits);
        cand.set_bit(bits - 1, true);
        cand.set_bit(bits - 2, true);
        cand.set_bit(0, true);
        if is_probable_prime(&cand, rng) {
            return cand;
        }
    }
}

fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if *n == sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let two = BigUint::from(2u8);
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = &x * &x % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn b64_biguint(v: &BigUint) -> String {
    B64.encode(v.to_bytes_be())
}

fn biguint_from_b64(s: &str) -> std::result::Result<BigUint, String> {
    B64.decode(s)
        .map(|b| BigUint::from_bytes_be(&b))
        .map_err(|e| e.to_string())
}

#[derive(Serialize, Deserialize)]
struct PublicKeyWire {
    n: String,
    g: String,
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PublicKeyWire {
            n: b64_biguint(&self.n),
            g: b64_biguint(&self.g()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = PublicKeyWire::deserialize(deserializer)?;
        let n = biguint_from_b64(&wire.n).map_err(serde::de::Error::custom)?;
        let g = biguint_from_b64(&wire.g).map_err(serde::de::Error::custom)?;
        if n.bits() < 16 || g != &n + 1u8 {
            return Err(serde::de::Error::custom("unsupported Paillier public key"));
        }
        Ok(PublicKey::from_modulus(n))
    }
}

#[derive(Serialize, Deserialize)]
struct SecretKeyWire {
    p: String,
    q: String,
}

impl Serialize for SecretKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SecretKeyWire {
            p: b64_biguint(&self.p),
            q: b64_biguint(&self.q),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SecretKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = SecretKeyWire::deserialize(deserializer)?;
        let p = biguint_from_b64(&wire.p).map_err(serde::de::Error::custom)?;
        let q = biguint_from_b64(&wire.q).map_err(serde::de::Error::custom)?;
        if p == q || p.is_zero() || q.is_zero() {
            return Err(serde::de::Error::custom("invalid Paillier secret key"));
        }
        Ok(SecretKey::from_primes(p, q))
    }
}

/// Ciphertext wire form: base64 of the big-endian value plus the key
/// fingerprint.
#[derive(Serialize, Deserialize)]
struct CiphertextWire {
    value: String,
    key: String,
}

impl Serialize for Ciphertext {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        CiphertextWire {
            value: b64_biguint(&self.value),
            key: format!("{:?}", self.fingerprint),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Ciphertext {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = CiphertextWire::deserialize(deserializer)?;
        let value = biguint_from_b64(&wire.value).map_err(serde::de::Error::custom)?;
        if wire.key.len() != 16 {
            return Err(serde::de::Error::custom("bad key fingerprint"));
        }
        let mut fp = [0u8; 8];
        for (i, chunk) in wire.key.as_bytes().chunks(2).enumerate() {
            let hex = std::str::from_utf8(chunk).map_err(serde::de::Error::custom)?;
            fp[i] = u8::from_str_radix(hex, 16).map_err(serde::de::Error::custom)?;
        }
        Ok(Ciphertext {
            value,
            fingerprint: Fingerprint(fp),
        })
    }
}
