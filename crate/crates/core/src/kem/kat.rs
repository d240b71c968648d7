//! Known-answer-test machinery: the AES-256-CTR DRBG used by the NIST
//! submission harness, the derived per-vector seeds, and parse/generate/
//! verify support for the `.rsp` vector file format.

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes256;
use thiserror::Error;

use super::{decaps, encaps, keygen, SharedSecret};

/// First 48-byte seed the harness DRBG emits (entropy input 00..2F).
/// Frozen as a guard: if the DRBG drifts, vector generation is wrong even
/// when the vectors are self-consistent.
pub const FIRST_REQUEST_SEED: &str = "061550234D158C5EC95595FE04EF7A25767F2E24CC2BC479D09D86DC9ABCFDE7056A8C266F9EF97ED08541DBD2E1FFA1";

/// The CTR-DRBG from the NIST test harness: AES-256 in counter mode with
/// a 48-byte update after every request.
pub struct NistDrbg {
    key: [u8; 32],
    v: [u8; 16],
}

fn aes256_ecb(key: &[u8; 32], block: &mut [u8; 16]) {
    let cipher = Aes256::new(key.into());
    cipher.encrypt_block(block.into());
}

fn increment(v: &mut [u8; 16]) {
    for b in v.iter_mut().rev() {
        if *b == 0xFF {
            *b = 0;
        } else {
            *b += 1;
            break;
        }
    }
}

impl NistDrbg {
    pub fn new(entropy: &[u8; 48]) -> NistDrbg {
        let mut drbg = NistDrbg {
            key: [0; 32],
            v: [0; 16],
        };
        drbg.update(Some(entropy));
        drbg
    }

    fn update(&mut self, provided: Option<&[u8; 48]>) {
        let mut temp = [0u8; 48];
        for chunk in temp.chunks_exact_mut(16) {
            increment(&mut self.v);
            let mut block = self.v;
            aes256_ecb(&self.key, &mut block);
            chunk.copy_from_slice(&block);
        }
        if let Some(p) = provided {
            for (t, &x) in temp.iter_mut().zip(p) {
                *t ^= x;
            }
        }
        self.key.copy_from_slice(&temp[..32]);
        self.v.copy_from_slice(&temp[32..]);
    }

    /// One `randombytes` request: counter-mode blocks, then a key/V update.
    pub fn fill(&mut self, out: &mut [u8]) {
        for chunk in out.chunks_mut(16) {
            increment(&mut self.v);
            let mut block = self.v;
            aes256_ecb(&self.key, &mut block);
            chunk.copy_from_slice(&block[..chunk.len()]);
        }
        self.update(None);
    }
}

/// The per-vector seeds the harness derives: entropy input 00..2F, then
/// one 48-byte request per vector.
pub fn request_seeds(count: usize) -> Vec<[u8; 48]> {
    let entropy: [u8; 48] = core::array::from_fn(|i| i as u8);
    let mut drbg = NistDrbg::new(&entropy);
    (0..count)
        .map(|_| {
            let mut seed = [0u8; 48];
            drbg.fill(&mut seed);
            seed
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KatVector {
    pub count: usize,
    pub seed: [u8; 48],
    pub pk: Vec<u8>,
    pub sk: Vec<u8>,
    pub ct: Vec<u8>,
    pub ss: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KatError {
    #[error("vector {count}: field {field} does not match")]
    Mismatch { count: usize, field: &'static str },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("file contains no vectors")]
    Empty,
}

/// Generate `count` vectors exactly as the submission harness would:
/// re-seed the DRBG per vector, draw d and z as two separate requests for
/// the keypair, then one request for the encapsulation message seed.
pub fn generate_vectors(count: usize) -> Vec<KatVector> {
    request_seeds(count)
        .into_iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut drbg = NistDrbg::new(&seed);
            let mut d = [0u8; 32];
            let mut z = [0u8; 32];
            let mut m = [0u8; 32];
            drbg.fill(&mut d);
            drbg.fill(&mut z);
            let mut kg_seed = [0u8; 64];
            kg_seed[..32].copy_from_slice(&d);
            kg_seed[32..].copy_from_slice(&z);
            let pair = keygen(&kg_seed).expect("fixed-length seed");
            drbg.fill(&mut m);
            let (ct, ss) = encaps(pair.public_key.as_bytes(), &m).expect("own key is canonical");
            KatVector {
                count: i,
                seed,
                pk: pair.public_key.as_bytes().to_vec(),
                sk: pair.secret_key.as_bytes().to_vec(),
                ct: ct.as_bytes().to_vec(),
                ss: ss.as_bytes().to_vec(),
            }
        })
        .collect()
}

/// Run one vector end to end against this implementation: regenerate the
/// keypair and ciphertext from the seed, compare every field, and check
/// that decapsulation of the recorded ciphertext yields the recorded
/// secret.
pub fn verify_vector(v: &KatVector) -> Result<(), KatError> {
    let mut drbg = NistDrbg::new(&v.seed);
    let mut d = [0u8; 32];
    let mut z = [0u8; 32];
    let mut m = [0u8; 32];
    drbg.fill(&mut d);
    drbg.fill(&mut z);
    let mut kg_seed = [0u8; 64];
    kg_seed[..32].copy_from_slice(&d);
    kg_seed[32..].copy_from_slice(&z);
    let pair = keygen(&kg_seed).expect("fixed-length seed");
    let fail = |field| KatError::Mismatch {
        count: v.count,
        field,
    };
    if pair.public_key.as_bytes() != v.pk.as_slice() {
        return Err(fail("pk"));
    }
    if pair.secret_key.as_bytes() != v.sk.as_slice() {
        return Err(fail("sk"));
    }
    drbg.fill(&mut m);
    let (ct, ss) = encaps(&v.pk, &m).map_err(|_| fail("pk"))?;
    if ct.as_bytes() != v.ct.as_slice() {
        return Err(fail("ct"));
    }
    if ss.as_bytes() != v.ss.as_slice() {
        return Err(fail("ss"));
    }
    let ss_dec = decaps(&v.sk, &v.ct).map_err(|_| fail("sk"))?;
    if ss_dec != SharedSecret(v.ss.clone().try_into().map_err(|_| fail("ss"))?) {
        return Err(fail("ss(decaps)"));
    }
    Ok(())
}

/// Parse a response file: `count = N` / `seed = HEX` / `pk = ...` blocks,
/// comment lines starting with `#`, blank lines between blocks.
pub fn parse_rsp(text: &str) -> Result<Vec<KatVector>, KatError> {
    let mut vectors = Vec::new();
    let mut current: Option<KatVector> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| KatError::Malformed {
            line: lineno,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |msg: String| KatError::Malformed { line: lineno, msg };
        match key {
            "count" => {
                if let Some(v) = current.take() {
                    vectors.push(v);
                }
                let count = value
                    .parse()
                    .map_err(|_| bad(format!("bad count {value:?}")))?;
                current = Some(KatVector {
                    count,
                    seed: [0; 48],
                    pk: Vec::new(),
                    sk: Vec::new(),
                    ct: Vec::new(),
                    ss: Vec::new(),
                });
            }
            "seed" | "pk" | "sk" | "ct" | "ss" => {
                let cur = current
                    .as_mut()
                    .ok_or_else(|| bad(format!("{key} before any count line")))?;
                let bytes =
                    hex::decode(value).map_err(|e| bad(format!("bad hex in {key}: {e}")))?;
                match key {
                    "seed" => {
                        cur.seed = bytes
                            .try_into()
                            .map_err(|_| bad("seed must be 48 bytes".into()))?
                    }
                    "pk" => cur.pk = bytes,
                    "sk" => cur.sk = bytes,
                    "ct" => cur.ct = bytes,
                    "ss" => cur.ss = bytes,
                    _ => unreachable!(),
                }
            }
            other => {
                return Err(bad(format!("unknown field {other:?}")));
            }
        }
    }
    if let Some(v) = current.take() {
        vectors.push(v);
    }
    if vectors.is_empty() {
        return Err(KatError::Empty);
    }
    Ok(vectors)
}

/// Serialize vectors in the response file layout (uppercase hex).
pub fn write_rsp(vectors: &[KatVector]) -> String {
    let mut out = String::from("# Kyber512\n\n");
    for v in vectors {
        out.push_str(&format!("count = {}\n", v.count));
        out.push_str(&format!("seed = {}\n", hex::encode_upper(v.seed)));
        out.push_str(&format!("pk = {}\n", hex::encode_upper(&v.pk)));
        out.push_str(&format!("sk = {}\n", hex::encode_upper(&v.sk)));
        out.push_str(&format!("ct = {}\n", hex::encode_upper(&v.ct)));
        out.push_str(&format!("ss = {}\n\n", hex::encode_upper(&v.ss)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_request_seed_matches_published_value() {
        let seeds = request_seeds(1);
        assert_eq!(hex::encode_upper(seeds[0]), FIRST_REQUEST_SEED);
    }

    #[test]
    fn hundred_seeds_are_distinct() {
        let seeds = request_seeds(100);
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }

    #[test]
    fn generated_vectors_verify_and_roundtrip_through_rsp() {
        let vectors = generate_vectors(3);
        for v in &vectors {
            verify_vector(v).unwrap();
            assert_eq!(v.pk.len(), super::super::PUBLIC_KEY_LEN);
            assert_eq!(v.sk.len(), super::super::SECRET_KEY_LEN);
            assert_eq!(v.ct.len(), super::super::CIPHERTEXT_LEN);
            assert_eq!(v.ss.len(), 32);
        }
        let text = write_rsp(&vectors);
        assert_eq!(parse_rsp(&text).unwrap(), vectors);
    }

    #[test]
    fn verify_detects_a_flipped_field() {
        let mut vectors = generate_vectors(1);
        vectors[0].ss[0] ^= 1;
        assert_eq!(
            verify_vector(&vectors[0]),
            Err(KatError::Mismatch {
                count: 0,
                field: "ss"
            })
        );
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(matches!(parse_rsp(""), Err(KatError::Empty)));
        assert!(matches!(
            parse_rsp("count = 0\nseed = zz\n"),
            Err(KatError::Malformed { .. })
        ));
        assert!(matches!(
            parse_rsp("pk = 00\n"),
            Err(KatError::Malformed { .. })
        ));
        assert!(matches!(
            parse_rsp("hello world\n"),
            Err(KatError::Malformed { .. })
        ));
    }
}
