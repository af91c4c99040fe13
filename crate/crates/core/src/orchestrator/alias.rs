//! Series pseudonyms and seeded random draws.

use data_encoding::BASE32_NOPAD;
use hmac::{Hmac, Mac};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OrchestratorError;
use crate::domain::SeriesId;

type HmacSha256 = Hmac<Sha256>;

const ALIAS_BYTES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesAlias {
    pub challenge_id: String,
    pub alias: String,
    pub true_series: SeriesId,
    pub revealed: bool,
}

/// Keyed, deterministic pseudonym for `series` within `challenge_id`.
/// Without the secret, aliases cannot be linked across challenges.
pub fn make_alias(secret: &[u8], challenge_id: &str, series: &SeriesId) -> String {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(challenge_id.as_bytes());
    mac.update(&[0x1f]);
    mac.update(series.provider.as_bytes());
    mac.update(&[0x1f]);
    mac.update(series.external_id.as_bytes());
    let tag = mac.finalize().into_bytes();
    BASE32_NOPAD.encode(&tag[..ALIAS_BYTES]).to_ascii_lowercase()
}

/// Keyed token used for API keys and other server-issued secrets.
pub fn keyed_token(secret: &[u8], label: &str) -> String {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(label.as_bytes());
    BASE32_NOPAD.encode(&mac.finalize().into_bytes()[..20]).to_ascii_lowercase()
}

/// Stable 64-bit digest of a string, used to derive per-challenge seeds.
pub fn stable_hash(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Draws `k` distinct series uniformly without replacement. The draw depends
/// only on `seed` and the set of eligible series, not on their input order.
pub fn sample_random(
    k: usize,
    seed: u64,
    eligible: &[SeriesId],
    challenge_id: &str,
    secret: &[u8],
) -> Result<Vec<SeriesAlias>, OrchestratorError> {
    if k == 0 {
        return Err(OrchestratorError::InvalidConfig("k must be >= 1".into()));
    }
    let mut pool = eligible.to_vec();
    pool.sort();
    pool.dedup();
    if pool.len() < k {
        return Err(OrchestratorError::InsufficientEligible {
            needed: k,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = pool.partial_shuffle(&mut rng, k);
    Ok(chosen
        .iter()
        .map(|s| SeriesAlias {
            challenge_id: challenge_id.to_string(),
            alias: make_alias(secret, challenge_id, s),
            true_series: s.clone(),
            revealed: false,
        })
        .collect())
}
