//! Flag derivation.
//!
//! Flags are `CSC{` + 32 lowercase hex characters + `}`: the first 16 bytes
//! of HMAC-SHA256 keyed with the event secret over the challenge id. Packs
//! therefore carry no secrets.

use std::fmt;

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

use crate::pack::ChallengeId;

pub const MIN_SECRET_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlagError {
    #[error("event secret must be at least {MIN_SECRET_LEN} bytes, got {0}")]
    SecretTooShort(usize),
}

/// Event secret; deliberately not `Debug`-printable.
#[derive(Clone, PartialEq, Eq)]
pub struct EventSecret(Vec<u8>);

impl EventSecret {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, FlagError> {
        let bytes = bytes.into();
        if bytes.len() < MIN_SECRET_LEN {
            return Err(FlagError::SecretTooShort(bytes.len()));
        }
        Ok(EventSecret(bytes))
    }

    /// Secret file contents with trailing whitespace removed.
    pub fn from_file_contents(bytes: &[u8]) -> Result<Self, FlagError> {
        let end = bytes
            .iter()
            .rposition(|b| !b.is_ascii_whitespace())
            .map_or(0, |i| i + 1);
        EventSecret::new(&bytes[..end])
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for EventSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventSecret(<{} bytes>)", self.0.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Flag(String);

impl Flag {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Constant-time comparison against a submitted string.
    pub fn matches(&self, submitted: &str) -> bool {
        let a = self.0.as_bytes();
        let b = submitted.trim().as_bytes();
        if a.len() != b.len() {
            return false;
        }
        a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn derive_flag(secret: &EventSecret, challenge_id: &ChallengeId) -> Flag {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret.as_bytes())
        .expect("HMAC accepts keys of any length");
    mac.update(challenge_id.as_str().as_bytes());
    let digest = mac.finalize().into_bytes();
    Flag(format!("CSC{{{}}}", hex::encode(&digest[..16])))
}
