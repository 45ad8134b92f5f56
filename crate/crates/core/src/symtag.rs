//! Query validity tags: the data owner seals a query's check vector under a
//! key shared only with the cloud server, which opens it to verify a query.
//!
//! AES-128-GCM; tag wire form is `nonce (12) || ciphertext || auth tag (16)`.

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Key, Nonce};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use num_bigint::BigInt;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::numerics::Scaled;

const NONCE_LEN: usize = 12;
const AUTH_TAG_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("tag failed authentication or is malformed")]
    BadTag,
}

/// 128-bit key shared by the data owner and the cloud server.
#[derive(Clone, PartialEq, Eq)]
pub struct TagKey([u8; 16]);

impl TagKey {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut k = [0u8; 16];
        rng.fill_bytes(&mut k);
        TagKey(k)
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        TagKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    fn cipher(&self) -> Aes128Gcm {
        Aes128Gcm::new(Key::<Aes128Gcm>::from_slice(&self.0))
    }
}

impl std::fmt::Debug for TagKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TagKey(..)")
    }
}

impl Serialize for TagKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&B64.encode(self.0))
    }
}

impl<'de> Deserialize<'de> for TagKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let bytes = B64.decode(s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("tag key must be 16 bytes"))?;
        Ok(TagKey(arr))
    }
}

/// Sealed check vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tag(Vec<u8>);

impl Tag {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Tag(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&B64.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        B64.decode(s).map(Tag).map_err(serde::de::Error::custom)
    }
}

/// Canonical bytes of a vector: `u32` length, then per entry the canonical
/// scale (`u32`), mantissa byte length (`u32`) and two's-complement
/// big-endian mantissa. Equal vectors (by value) give equal bytes.
pub fn encode_vector(v: &[Scaled]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + v.len() * 16);
    out.extend_from_slice(&(v.len() as u32).to_be_bytes());
    for x in v {
        let c = x.canonical();
        let m = c.mantissa().to_signed_bytes_be();
        out.extend_from_slice(&c.scale().to_be_bytes());
        out.extend_from_slice(&(m.len() as u32).to_be_bytes());
        out.extend_from_slice(&m);
    }
    out
}

pub fn decode_vector(bytes: &[u8]) -> Option<Vec<Scaled>> {
    fn take<'a>(b: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
        if b.len() < n {
            return None;
        }
        let (head, tail) = b.split_at(n);
        *b = tail;
        Some(head)
    }
    fn u32_at(b: &mut &[u8]) -> Option<u32> {
        take(b, 4).map(|s| u32::from_be_bytes(s.try_into().expect("4 bytes")))
    }
    let mut b = bytes;
    let len = u32_at(&mut b)? as usize;
    let mut out = Vec::with_capacity(len.min(1 << 16));
    for _ in 0..len {
        let scale = u32_at(&mut b)?;
        let mlen = u32_at(&mut b)? as usize;
        let m = BigInt::from_signed_bytes_be(take(&mut b, mlen)?);
        out.push(Scaled::new(m, scale));
    }
    b.is_empty().then_some(out)
}

/// Seals `check` under `key` with a fresh random nonce.
pub fn seal<R: Rng + ?Sized>(key: &TagKey, check: &[Scaled], rng: &mut R) -> Tag {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ct = key
        .cipher()
        .encrypt(Nonce::from_slice(&nonce), encode_vector(check).as_slice())
        .expect("AES-GCM encryption of a short buffer cannot fail");
    let mut out = nonce.to_vec();
    out.extend(ct);
    Tag(out)
}

/// Opens a tag, failing on any authentication or format error.
pub fn open(key: &TagKey, tag: &Tag) -> Result<Vec<Scaled>, TagError> {
    if tag.0.len() < NONCE_LEN + AUTH_TAG_LEN {
        return Err(TagError::BadTag);
    }
    let (nonce, ct) = tag.0.split_at(NONCE_LEN);
    let plain = key
        .cipher()
        .decrypt(Nonce::from_slice(nonce), ct)
        .map_err(|_| TagError::BadTag)?;
    decode_vector(&plain).ok_or(TagError::BadTag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{int_vec, parse_vec};
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_vector_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let key = TagKey::generate(&mut rng);
        let c = int_vec(&[0, 0]);
        assert_eq!(open(&key, &seal(&key, &c, &mut rng)).unwrap(), c);
    }

    #[test]
    fn fresh_nonce_per_seal() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let key = TagKey::generate(&mut rng);
        let c = int_vec(&[17, -401]);
        let t1 = seal(&key, &c, &mut rng);
        let t2 = seal(&key, &c, &mut rng);
        assert_ne!(t1, t2);
        assert_eq!(open(&key, &t1).unwrap(), c);
        assert_eq!(open(&key, &t2).unwrap(), c);
    }

    #[test]
    fn random_bytes_and_wrong_key_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let key = TagKey::generate(&mut rng);
        for len in [0usize, 5, 28, 40, 64] {
            let mut junk = vec![0u8; len];
            rng.fill_bytes(&mut junk);
            assert_eq!(open(&key, &Tag::from_bytes(junk)), Err(TagError::BadTag));
        }
        let t = seal(&key, &int_vec(&[1, 2]), &mut rng);
        let other = TagKey::generate(&mut rng);
        assert_eq!(open(&other, &t), Err(TagError::BadTag));
        let mut flipped = t.as_bytes().to_vec();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert_eq!(open(&key, &Tag::from_bytes(flipped)), Err(TagError::BadTag));
    }

    #[test]
    fn tags_from_different_sessions_do_not_match() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let key = TagKey::generate(&mut rng);
        let ci = int_vec(&[rng.gen_range(-1000..=1000), rng.gen_range(-1000..=1000)]);
        let cj = int_vec(&[rng.gen_range(-1000..=1000), rng.gen_range(-1000..=1000)]);
        assert_ne!(ci, cj);
        let ti = seal(&key, &ci, &mut rng);
        assert_ne!(open(&key, &ti).unwrap(), cj);
    }

    #[test]
    fn canonical_encoding_is_value_based() {
        let a = parse_vec(&["1.50", "-3"]).unwrap();
        let b = parse_vec(&["1.5", "-3.000"]).unwrap();
        assert_eq!(encode_vector(&a), encode_vector(&b));
        assert_eq!(decode_vector(&encode_vector(&a)).unwrap(), a);
        assert!(decode_vector(&encode_vector(&a)[..5]).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn open_seal_identity(v in prop::collection::vec((any::<i64>(), 0u32..10), 0..6), seed in any::<u64>()) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let key = TagKey::generate(&mut rng);
                let c: Vec<Scaled> = v.into_iter().map(|(m, s)| Scaled::new(m, s)).collect();
                prop_assert_eq!(open(&key, &seal(&key, &c, &mut rng)).unwrap(), c);
            }
        }
    }
}
