//! Wall-clock cost of the primitives the link depends on, measured in
//! place so a desk run can say which side of the exchange should hold
//! the long-term key. Timings are informational: they describe the
//! machine that produced them, and nothing downstream gates on them.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csp::{self, Flags, Header, LinkSecurity, Priority};
use crate::kem;
use crate::session::{self, xtea};

/// Fewest iterations any reported statistic may rest on; smaller
/// requests are raised to this.
pub const MIN_ITERATIONS: u32 = 100;

/// Every operation the harness knows, in report order.
pub const ALL_OPS: [&str; 9] = [
    "kem_keygen",
    "kem_encaps",
    "kem_decaps",
    "csp_seal",
    "csp_verify",
    "frame_encrypt",
    "frame_decrypt",
    "xtea_block",
    "derive_keys",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BenchError {
    #[error("unknown operation {0:?}")]
    UnknownOp(String),
}

/// One measured operation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub iterations: u32,
    pub median_ns: u64,
    pub mean_ns: u64,
    pub p95_ns: u64,
    /// Input bytes each iteration processes, for throughput math.
    pub bytes_per_iter: u64,
}

/// A full harness run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Where the numbers came from (OS, architecture).
    pub environment: String,
    pub iterations: u32,
    pub rows: Vec<BenchRow>,
    /// How much more a decapsulation costs than an encapsulation here.
    /// The cheaper side is the one to put on the constrained device.
    pub decaps_over_encaps: Option<f64>,
}

fn summarize(name: &str, bytes_per_iter: u64, mut samples: Vec<u64>) -> BenchRow {
    samples.sort_unstable();
    let n = samples.len();
    let median_ns = samples[n / 2];
    let mean_ns = samples.iter().sum::<u64>() / n as u64;
    let p95_ns = samples[(n * 95 / 100).min(n - 1)];
    BenchRow {
        name: name.to_string(),
        iterations: n as u32,
        median_ns,
        mean_ns,
        p95_ns,
        bytes_per_iter,
    }
}

fn time<R>(iterations: u32, mut op: impl FnMut() -> R) -> Vec<u64> {
    let mut samples = Vec::with_capacity(iterations as usize);
    for _ in 0..iterations {
        let t = Instant::now();
        std::hint::black_box(op());
        samples.push(t.elapsed().as_nanos() as u64);
    }
    samples
}

/// Measure the selected operations (`None` = all) at `iterations`
/// samples each, floored at [`MIN_ITERATIONS`].
pub fn run(ops: Option<&[String]>, iterations: u32) -> Result<BenchReport, BenchError> {
    let iterations = iterations.max(MIN_ITERATIONS);
    let selected: Vec<&str> = match ops {
        None => ALL_OPS.to_vec(),
        Some(names) => {
            let mut picked = Vec::with_capacity(names.len());
            for name in names {
                let known = ALL_OPS
                    .iter()
                    .find(|op| **op == name.as_str())
                    .ok_or_else(|| BenchError::UnknownOp(name.clone()))?;
                picked.push(*known);
            }
            picked
        }
    };

    // Fixtures, prepared outside every timed region.
    let keygen_seed = [7u8; kem::KEYGEN_SEED_LEN];
    let encaps_seed = [9u8; kem::ENCAPS_SEED_LEN];
    let keypair = kem::keygen(&keygen_seed).expect("fixture keygen");
    let (ct, ss) = kem::encaps(keypair.public_key.as_bytes(), &encaps_seed).expect("fixture encaps");

    let hmac_key = [0x5au8; 16];
    let sec = LinkSecurity::with_key(&hmac_key);
    let header = Header {
        priority: Priority::Norm,
        source: 1,
        destination: 10,
        destination_port: 20,
        source_port: 20,
        flags: Flags::default(),
    };
    let payload = [0xa7u8; 192];
    let wire = csp::seal(header, &payload, 200, true, &sec).expect("fixture seal");

    let keys = session::derive_keys(&ss, session::CONTEXT_GROUND_TO_SAT);
    let frame = session::encrypt_frame(&keys, 1, &payload, b"bench");
    let xtea_key = [0x3cu8; xtea::KEY_LEN];
    let block = [0x96u8; xtea::BLOCK_LEN];

    let mut rows = Vec::with_capacity(selected.len());
    for name in selected {
        let (bytes, samples) = match name {
            "kem_keygen" => (
                kem::KEYGEN_SEED_LEN as u64,
                time(iterations, || kem::keygen(&keygen_seed).unwrap()),
            ),
            "kem_encaps" => (
                kem::PUBLIC_KEY_LEN as u64,
                time(iterations, || {
                    kem::encaps(keypair.public_key.as_bytes(), &encaps_seed).unwrap()
                }),
            ),
            "kem_decaps" => (
                kem::CIPHERTEXT_LEN as u64,
                time(iterations, || {
                    kem::decaps(keypair.secret_key.as_bytes(), ct.as_bytes()).unwrap()
                }),
            ),
            "csp_seal" => (
                payload.len() as u64,
                time(iterations, || {
                    csp::seal(header, &payload, 200, true, &sec).unwrap()
                }),
            ),
            "csp_verify" => (
                wire.len() as u64,
                time(iterations, || csp::verify(&wire, &sec, true).unwrap()),
            ),
            "frame_encrypt" => (
                payload.len() as u64,
                time(iterations, || {
                    session::encrypt_frame(&keys, 1, &payload, b"bench")
                }),
            ),
            "frame_decrypt" => (
                payload.len() as u64,
                time(iterations, || {
                    session::decrypt_frame(&keys, &frame, b"bench").unwrap()
                }),
            ),
            "xtea_block" => (
                xtea::BLOCK_LEN as u64,
                time(iterations, || {
                    xtea::encrypt_block(&xtea_key, &block, xtea::ROUNDS)
                }),
            ),
            "derive_keys" => (
                kem::SHARED_SECRET_LEN as u64,
                time(iterations, || {
                    session::derive_keys(&ss, session::CONTEXT_GROUND_TO_SAT)
                }),
            ),
            _ => unreachable!("selection is drawn from ALL_OPS"),
        };
        rows.push(summarize(name, bytes, samples));
    }

    let median_of = |op: &str| {
        rows.iter()
            .find(|r| r.name == op)
            .map(|r| r.median_ns as f64)
    };
    let decaps_over_encaps = match (median_of("kem_decaps"), median_of("kem_encaps")) {
        (Some(d), Some(e)) if e > 0.0 => Some(d / e),
        _ => None,
    };

    Ok(BenchReport {
        environment: format!("{} {}", std::env::consts::OS, std::env::consts::ARCH),
        iterations,
        rows,
        decaps_over_encaps,
    })
}
