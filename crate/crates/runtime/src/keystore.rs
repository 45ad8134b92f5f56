//! Passphrase-protected key files: PBKDF2-HMAC-SHA256 derives an AES-256-GCM
//! key that seals a JSON key bundle.

use std::path::Path;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use sknn_core::vsknn::VerifyKey;
use thiserror::Error;

use crate::roles::OwnerKeys;
use crate::wire::Scheme;

const FORMAT: &str = "sknn-keystore";
const VERSION: u32 = 1;
pub const DEFAULT_ITERATIONS: u32 = 100_000;

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("wrong passphrase or tampered key file")]
    BadPassphrase,
    #[error("key file is corrupt: {0}")]
    CorruptFile(String),
    #[error("role {role:?} holds no keys under {scheme}")]
    NothingToExport { role: Role, scheme: Scheme },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Owner,
    Cloud,
    Query,
}

/// Keys as stored for one party.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum KeyBundle {
    Owner { keys: OwnerKeys },
    Cloud { scheme: Scheme, verify: Option<VerifyKey> },
    /// Query user under ASPE, where it shares the owner's key.
    Query { keys: OwnerKeys },
}

impl KeyBundle {
    pub fn scheme(&self) -> Scheme {
        match self {
            KeyBundle::Owner { keys } | KeyBundle::Query { keys } => keys.scheme(),
            KeyBundle::Cloud { scheme, .. } => *scheme,
        }
    }

    /// What the owner hands to each party. Query users get nothing except
    /// under ASPE; the cloud gets only the verification key.
    pub fn export_for(keys: &OwnerKeys, role: Role) -> Result<KeyBundle, KeystoreError> {
        match (role, keys) {
            (Role::Owner, _) => Ok(KeyBundle::Owner { keys: keys.clone() }),
            (Role::Cloud, _) => Ok(KeyBundle::Cloud { scheme: keys.scheme(), verify: keys.verify_key().cloned() }),
            (Role::Query, OwnerKeys::Aspe { .. }) => Ok(KeyBundle::Query { keys: keys.clone() }),
            (Role::Query, _) => Err(KeystoreError::NothingToExport { role, scheme: keys.scheme() }),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    format: String,
    version: u32,
    iterations: u32,
    salt: String,
    nonce: String,
    ciphertext: String,
}

fn derive(passphrase: &str, salt: &[u8], iterations: u32) -> Aes256Gcm {
    let mut key = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(passphrase.as_bytes(), salt, iterations, &mut key);
    Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key))
}

pub fn seal_bundle<R: Rng + ?Sized>(bundle: &KeyBundle, passphrase: &str, iterations: u32, rng: &mut R) -> Vec<u8> {
    let mut salt = [0u8; 16];
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut salt);
    rng.fill_bytes(&mut nonce);
    let plain = serde_json::to_vec(bundle).expect("key bundles always serialize");
    let ct = derive(passphrase, &salt, iterations)
        .encrypt(Nonce::from_slice(&nonce), plain.as_slice())
        .expect("AES-GCM encryption cannot fail here");
    let file = KeyFile {
        format: FORMAT.into(),
        version: VERSION,
        iterations,
        salt: B64.encode(salt),
        nonce: B64.encode(nonce),
        ciphertext: B64.encode(ct),
    };
    serde_json::to_vec_pretty(&file).expect("key file always serializes")
}

pub fn open_bundle(bytes: &[u8], passphrase: &str) -> Result<KeyBundle, KeystoreError> {
    let corrupt = |m: String| KeystoreError::CorruptFile(m);
    let file: KeyFile = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(corrupt(format!("unknown format {} v{}", file.format, file.version)));
    }
    let salt = B64.decode(&file.salt).map_err(|e| corrupt(e.to_string()))?;
    let nonce = B64.decode(&file.nonce).map_err(|e| corrupt(e.to_string()))?;
    let ct = B64.decode(&file.ciphertext).map_err(|e| corrupt(e.to_string()))?;
    if nonce.len() != 12 || file.iterations == 0 {
        return Err(corrupt("bad nonce or iteration count".into()));
    }
    let plain = derive(passphrase, &salt, file.iterations)
        .decrypt(Nonce::from_slice(&nonce), ct.as_slice())
        .map_err(|_| KeystoreError::BadPassphrase)?;
    serde_json::from_slice(&plain).map_err(|e| corrupt(e.to_string()))
}

pub fn save<R: Rng + ?Sized>(bundle: &KeyBundle, path: impl AsRef<Path>, passphrase: &str, rng: &mut R) -> Result<(), KeystoreError> {
    std::fs::write(path, seal_bundle(bundle, passphrase, DEFAULT_ITERATIONS, rng))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>, passphrase: &str) -> Result<KeyBundle, KeystoreError> {
    open_bundle(&std::fs::read(path)?, passphrase)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use sknn_core::zhu::SchemeDims;

    fn vsknn_keys() -> OwnerKeys {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        OwnerKeys::generate(Scheme::Vsknn, SchemeDims::new(4, 2, 2).unwrap(), 2, &mut rng).unwrap()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("owner.key");
        let bundle = KeyBundle::export_for(&vsknn_keys(), Role::Owner).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        save(&bundle, &path, "hunter2", &mut rng).unwrap();
        assert_eq!(load(&path, "hunter2").unwrap(), bundle);
        assert!(matches!(load(&path, "hunter3"), Err(KeystoreError::BadPassphrase)));
    }

    #[test]
    fn truncated_or_altered_files_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let bundle = KeyBundle::export_for(&vsknn_keys(), Role::Cloud).unwrap();
        let bytes = seal_bundle(&bundle, "pw", 1000, &mut rng);
        assert_eq!(open_bundle(&bytes, "pw").unwrap(), bundle);
        assert!(matches!(open_bundle(&bytes[..bytes.len() / 2], "pw"), Err(KeystoreError::CorruptFile(_))));
        let mut file: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        file["ciphertext"] = "AAAA".into();
        let altered = serde_json::to_vec(&file).unwrap();
        assert!(matches!(open_bundle(&altered, "pw"), Err(KeystoreError::BadPassphrase)));
    }

    #[test]
    fn exports_follow_roles() {
        let keys = vsknn_keys();
        match KeyBundle::export_for(&keys, Role::Cloud).unwrap() {
            KeyBundle::Cloud { scheme, verify } => {
                assert_eq!(scheme, Scheme::Vsknn);
                assert_eq!(verify.as_ref(), keys.verify_key());
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            KeyBundle::export_for(&keys, Role::Query),
            Err(KeystoreError::NothingToExport { .. })
        ));
        let cloud_json = serde_json::to_string(&KeyBundle::export_for(&keys, Role::Cloud).unwrap()).unwrap();
        assert!(!cloud_json.contains("\"perm\""));
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let aspe = OwnerKeys::generate(Scheme::Aspe, SchemeDims::new(3, 1, 1).unwrap(), 1, &mut rng).unwrap();
        assert!(KeyBundle::export_for(&aspe, Role::Query).is_ok());
    }
}
