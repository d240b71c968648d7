//! Deterministic sampling: uniform matrix expansion by rejection from
//! SHAKE-128 output, and centered binomial noise from SHAKE-256 output.

use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::{Shake128, Shake256};

use super::ring::{fe_sub, Fe, NttPoly, Poly, N, Q};
use super::KemError;

/// Noise width selector. eta = 3 draws from {-3..3}, eta = 2 from {-2..2}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Eta {
    Two,
    Three,
}

impl Eta {
    pub fn value(self) -> usize {
        match self {
            Eta::Two => 2,
            Eta::Three => 3,
        }
    }

    /// Bytes of PRF output one sample pass consumes: 64 * eta.
    pub fn prf_bytes(self) -> usize {
        64 * self.value()
    }
}

/// PRF(seed, nonce) = SHAKE-256(seed || nonce), read to the CBD input
/// length for the given eta.
pub fn prf(seed: &[u8; 32], nonce: u8, eta: Eta) -> Vec<u8> {
    let mut xof = Shake256::default();
    xof.update(seed);
    xof.update(&[nonce]);
    let mut out = vec![0u8; eta.prf_bytes()];
    xof.finalize_xof().read(&mut out);
    out
}

/// Centered binomial distribution: each coefficient is the difference of
/// two eta-bit Hamming weights taken from consecutive bits of `buf`.
pub fn cbd(buf: &[u8], eta: Eta) -> Result<Poly, KemError> {
    let need = eta.prf_bytes();
    if buf.len() < need {
        return Err(KemError::ShortNoiseInput {
            need,
            got: buf.len(),
        });
    }
    let mut c = [0 as Fe; N];
    match eta {
        Eta::Two => {
            // 4 bytes -> 8 coefficients; pairwise bit sums via masked adds.
            for (i, chunk) in buf[..128].chunks_exact(4).enumerate() {
                let t = u32::from_le_bytes(chunk.try_into().unwrap());
                let d = (t & 0x5555_5555) + ((t >> 1) & 0x5555_5555);
                for j in 0..8 {
                    let a = ((d >> (4 * j)) & 0x3) as u16;
                    let b = ((d >> (4 * j + 2)) & 0x3) as u16;
                    c[8 * i + j] = fe_sub(a, b);
                }
            }
        }
        Eta::Three => {
            // 3 bytes -> 4 coefficients; triplet bit sums.
            for (i, chunk) in buf[..192].chunks_exact(3).enumerate() {
                let t = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], 0]);
                let d = (t & 0x0024_9249) + ((t >> 1) & 0x0024_9249) + ((t >> 2) & 0x0024_9249);
                for j in 0..4 {
                    let a = ((d >> (6 * j)) & 0x7) as u16;
                    let b = ((d >> (6 * j + 3)) & 0x7) as u16;
                    c[4 * i + j] = fe_sub(a, b);
                }
            }
        }
    }
    Ok(Poly::from_coeffs(c))
}

/// Noise sampling as used by the scheme: CBD over PRF output.
pub fn sample_noise(seed: &[u8; 32], nonce: u8, eta: Eta) -> Poly {
    cbd(&prf(seed, nonce, eta), eta).expect("prf emits exactly the bytes cbd needs")
}

/// Uniform sampling in the NTT domain by rejection from an XOF stream.
///
/// Each contiguous 3-byte group yields two 12-bit candidates; candidates
/// >= q are discarded. Reads the XOF in 168-byte (SHAKE-128 rate) blocks.
fn sample_uniform(reader: &mut impl XofReader) -> NttPoly {
    let mut c = [0 as Fe; N];
    let mut filled = 0;
    let mut block = [0u8; 168];
    while filled < N {
        reader.read(&mut block);
        for group in block.chunks_exact(3) {
            let v0 = ((group[0] as u16) | ((group[1] as u16) << 8)) & 0x0FFF;
            let v1 = ((group[1] as u16) >> 4) | ((group[2] as u16) << 4);
            if v0 < Q && filled < N {
                c[filled] = v0;
                filled += 1;
            }
            if v1 < Q && filled < N {
                c[filled] = v1;
                filled += 1;
            }
        }
    }
    let mut p = NttPoly::zero();
    p.c = c;
    p
}

/// One matrix entry: Parse(XOF(rho || x || y)).
pub fn sample_matrix_entry(rho: &[u8; 32], x: u8, y: u8) -> NttPoly {
    let mut xof = Shake128::default();
    xof.update(rho);
    xof.update(&[x, y]);
    sample_uniform(&mut xof.finalize_xof())
}

/// Expand the public matrix from rho. Row i, column j absorbs (j, i);
/// the transposed form absorbs (i, j).
pub fn expand_matrix<const K: usize>(rho: &[u8; 32], transposed: bool) -> [[NttPoly; K]; K] {
    core::array::from_fn(|i| {
        core::array::from_fn(|j| {
            if transposed {
                sample_matrix_entry(rho, i as u8, j as u8)
            } else {
                sample_matrix_entry(rho, j as u8, i as u8)
            }
        })
    })
}
