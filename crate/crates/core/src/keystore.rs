//! Key-management scaling arithmetic: what a constellation has to
//! store under pre-shared pairwise symmetric keys versus per-party
//! KEM keypairs.
//!
//! A fleet of `n` parties that pre-shares one symmetric key per pair
//! needs n·(n−1)/2 keys, and every new party touches every existing
//! one. Giving each party its own keypair instead keeps the count
//! linear: n keypairs, 2n keys in circulation, and session keys are
//! derived on demand.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kem;

/// Bytes to store one pre-shared symmetric key.
pub const SYMMETRIC_KEY_BYTES: u64 = 32;

/// Bytes to store one KEM keypair (public + secret).
pub const KEYPAIR_BYTES: u64 = (kem::PUBLIC_KEY_LEN + kem::SECRET_KEY_LEN) as u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeystoreError {
    #[error("a fleet of zero parties has nothing to key")]
    ZeroParties,
}

/// Storage demands of both schemes for one fleet size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeystoreRow {
    pub n: u64,
    /// Pre-shared scheme: one symmetric key per unordered pair.
    pub pairwise_keys: u128,
    pub pairwise_bytes: u128,
    /// KEM scheme: one keypair per party…
    pub keypairs: u64,
    /// …which is 2n keys in circulation…
    pub pk_keys: u128,
    /// …stored at public-plus-secret size each.
    pub keypair_bytes: u128,
}

/// n·(n−1)/2 without overflow for any `u64` fleet size.
pub fn pairwise_keys(n: u64) -> u128 {
    let n = n as u128;
    n * (n - 1) / 2
}

/// Work out both schemes' counts and storage for a fleet of `n ≥ 1`.
pub fn analyze(n: u64) -> Result<KeystoreRow, KeystoreError> {
    if n == 0 {
        return Err(KeystoreError::ZeroParties);
    }
    let pairwise = pairwise_keys(n);
    Ok(KeystoreRow {
        n,
        pairwise_keys: pairwise,
        pairwise_bytes: pairwise * SYMMETRIC_KEY_BYTES as u128,
        keypairs: n,
        pk_keys: 2 * n as u128,
        keypair_bytes: n as u128 * KEYPAIR_BYTES as u128,
    })
}

/// One row per requested fleet size, in the given order.
pub fn table(sizes: &[u64]) -> Result<Vec<KeystoreRow>, KeystoreError> {
    sizes.iter().map(|&n| analyze(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_hundred_satellite_fleet_needs_4950_pairwise_keys() {
        let row = analyze(100).unwrap();
        assert_eq!(row.pairwise_keys, 4950);
        assert_eq!(row.pairwise_bytes, 4950 * 32);
        assert_eq!(row.keypairs, 100);
        assert_eq!(row.pk_keys, 200);
        assert_eq!(row.keypair_bytes, 100 * 2432);
    }

    #[test]
    fn small_fleets_are_exact() {
        let one = analyze(1).unwrap();
        assert_eq!(one.pairwise_keys, 0);
        assert_eq!(one.keypairs, 1);
        assert_eq!(one.pk_keys, 2);

        let two = analyze(2).unwrap();
        assert_eq!(two.pairwise_keys, 1);
        assert_eq!(two.keypairs, 2);
        assert_eq!(two.pk_keys, 4);
    }

    #[test]
    fn zero_parties_is_rejected() {
        assert_eq!(analyze(0), Err(KeystoreError::ZeroParties));
        assert!(table(&[10, 0]).is_err());
    }

    #[test]
    fn adding_a_party_adds_a_key_per_existing_party() {
        for n in 2..=10_000u64 {
            assert_eq!(
                pairwise_keys(n),
                pairwise_keys(n - 1) + (n as u128 - 1),
                "n = {n}"
            );
        }
    }

    #[test]
    fn huge_fleets_stay_exact() {
        // A trillion parties: (10²⁴ − 10¹²)/2, far past u64 range.
        let row = analyze(1_000_000_000_000).unwrap();
        assert_eq!(row.pairwise_keys, 499_999_999_999_500_000_000_000);
        assert_eq!(row.pairwise_bytes, row.pairwise_keys * 32);
        assert_eq!(row.pk_keys, 2_000_000_000_000);
    }

    #[test]
    fn table_preserves_request_order() {
        let rows = table(&[100, 2, 7]).unwrap();
        let ns: Vec<u64> = rows.iter().map(|r| r.n).collect();
        assert_eq!(ns, [100, 2, 7]);
    }

    #[test]
    fn crossover_favors_keypairs_for_large_fleets() {
        // Storage parity: n·2432 vs n(n−1)/2·32 — the pairwise scheme
        // overtakes keypair storage once n−1 > 2·2432/32 = 152.
        assert!(analyze(153).unwrap().pairwise_bytes <= analyze(153).unwrap().keypair_bytes);
        assert!(analyze(154).unwrap().pairwise_bytes > analyze(154).unwrap().keypair_bytes);
    }
}
