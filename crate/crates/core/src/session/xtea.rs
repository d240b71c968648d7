//! XTEA, the block cipher the flight-heritage OBC stack ships for link
//! encryption. Kept here as the legacy comparison path: 64-bit blocks,
//! 128-bit key, and the counter-mode wrapper below provides **no
//! authentication whatsoever** — flipping a ciphertext bit flips the
//! plaintext bit silently. That weakness is exactly what the AES-GCM
//! session path is measured against.

pub const BLOCK_LEN: usize = 8;
pub const KEY_LEN: usize = 16;
pub const ROUNDS: u32 = 32;

const DELTA: u32 = 0x9E37_79B9;

fn load_key(key: &[u8; KEY_LEN]) -> [u32; 4] {
    core::array::from_fn(|i| u32::from_be_bytes(key[4 * i..4 * i + 4].try_into().unwrap()))
}

/// Encrypt one 64-bit block (big-endian word packing).
pub fn encrypt_block(key: &[u8; KEY_LEN], block: &[u8; BLOCK_LEN], rounds: u32) -> [u8; BLOCK_LEN] {
    let k = load_key(key);
    let mut v0 = u32::from_be_bytes(block[..4].try_into().unwrap());
    let mut v1 = u32::from_be_bytes(block[4..].try_into().unwrap());
    let mut sum = 0u32;
    for _ in 0..rounds {
        v0 = v0.wrapping_add(
            (((v1 << 4) ^ (v1 >> 5)).wrapping_add(v1)) ^ (sum.wrapping_add(k[(sum & 3) as usize])),
        );
        sum = sum.wrapping_add(DELTA);
        v1 = v1.wrapping_add(
            (((v0 << 4) ^ (v0 >> 5)).wrapping_add(v0))
                ^ (sum.wrapping_add(k[((sum >> 11) & 3) as usize])),
        );
    }
    let mut out = [0u8; BLOCK_LEN];
    out[..4].copy_from_slice(&v0.to_be_bytes());
    out[4..].copy_from_slice(&v1.to_be_bytes());
    out
}

/// Decrypt one 64-bit block.
pub fn decrypt_block(key: &[u8; KEY_LEN], block: &[u8; BLOCK_LEN], rounds: u32) -> [u8; BLOCK_LEN] {
    let k = load_key(key);
    let mut v0 = u32::from_be_bytes(block[..4].try_into().unwrap());
    let mut v1 = u32::from_be_bytes(block[4..].try_into().unwrap());
    let mut sum = DELTA.wrapping_mul(rounds);
    for _ in 0..rounds {
        v1 = v1.wrapping_sub(
            (((v0 << 4) ^ (v0 >> 5)).wrapping_add(v0))
                ^ (sum.wrapping_add(k[((sum >> 11) & 3) as usize])),
        );
        sum = sum.wrapping_sub(DELTA);
        v0 = v0.wrapping_sub(
            (((v1 << 4) ^ (v1 >> 5)).wrapping_add(v1)) ^ (sum.wrapping_add(k[(sum & 3) as usize])),
        );
    }
    let mut out = [0u8; BLOCK_LEN];
    out[..4].copy_from_slice(&v0.to_be_bytes());
    out[4..].copy_from_slice(&v1.to_be_bytes());
    out
}

/// Counter-mode keystream over XTEA: block i encrypts the big-endian
/// counter `nonce + i`, XORed into the data in place. Encryption and
/// decryption are the same operation. Legacy, unauthenticated.
pub fn ctr_crypt(key: &[u8; KEY_LEN], nonce: u64, data: &mut [u8]) {
    for (i, chunk) in data.chunks_mut(BLOCK_LEN).enumerate() {
        let counter = nonce.wrapping_add(i as u64).to_be_bytes();
        let ks = encrypt_block(key, &counter, ROUNDS);
        for (d, k) in chunk.iter_mut().zip(ks) {
            *d ^= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn frozen_block_vectors() {
        // Vectors frozen from the pseudocode oracle in
        // python/xtea_oracle.py (big-endian packing, 32 rounds).
        let cases: [(&str, &str, &str); 3] = [
            (
                "00000000000000000000000000000000",
                "0000000000000000",
                "dee9d4d8f7131ed9",
            ),
            (
                "000102030405060708090a0b0c0d0e0f",
                "4142434445464748",
                "497df3d072612cb5",
            ),
            (
                "2b7e151628aed2a6abf7158809cf4f3c",
                "0123456789abcdef",
                "75303e2bd8310f11",
            ),
        ];
        for (key_hex, pt_hex, ct_hex) in cases {
            let key: [u8; 16] = hex::decode(key_hex).unwrap().try_into().unwrap();
            let pt: [u8; 8] = hex::decode(pt_hex).unwrap().try_into().unwrap();
            let ct = encrypt_block(&key, &pt, ROUNDS);
            assert_eq!(hex::encode(ct), ct_hex);
            assert_eq!(decrypt_block(&key, &ct, ROUNDS), pt);
        }
    }

    #[test]
    fn block_roundtrip_random_keys_and_rounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        for _ in 0..500 {
            let mut key = [0u8; KEY_LEN];
            let mut block = [0u8; BLOCK_LEN];
            rng.fill_bytes(&mut key);
            rng.fill_bytes(&mut block);
            let rounds = rng.gen_range(1..=64);
            let ct = encrypt_block(&key, &block, rounds);
            assert_eq!(decrypt_block(&key, &ct, rounds), block);
        }
    }

    #[test]
    fn ctr_roundtrip_and_partial_blocks() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let mut key = [0u8; KEY_LEN];
        rng.fill_bytes(&mut key);
        for len in [0usize, 1, 7, 8, 9, 100, 333] {
            let mut data = vec![0u8; len];
            rng.fill_bytes(&mut data);
            let orig = data.clone();
            ctr_crypt(&key, 99, &mut data);
            if len > 0 {
                assert_ne!(data, orig);
            }
            ctr_crypt(&key, 99, &mut data);
            assert_eq!(data, orig);
        }
    }

    #[test]
    fn ctr_mode_is_malleable_by_design() {
        // The legacy path's defining weakness: a ciphertext bit flip is an
        // undetected plaintext bit flip.
        let key = [0x42u8; KEY_LEN];
        let mut data = b"critical command".to_vec();
        ctr_crypt(&key, 1, &mut data);
        data[0] ^= 0x01;
        ctr_crypt(&key, 1, &mut data);
        assert_eq!(&data[1..], b"ritical command");
        assert_eq!(data[0], b'c' ^ 0x01);
    }
}
