//! Arithmetic in R_q = Z_q[X]/(X^256 + 1) for q = 3329.
//!
//! Polynomials exist in one of two representations: [`Poly`] holds plain
//! coefficients, [`NttPoly`] holds the number-theoretic transform. The
//! distinction is a type, so mixing domains in arithmetic is a compile
//! error rather than a runtime one. Coefficients are kept canonical
//! (reduced to `[0, q)`) at all times.

pub const N: usize = 256;
pub const Q: u16 = 3329;

/// Primitive 256th root of unity mod q.
const ZETA: u32 = 17;

/// 128^-1 mod q, the inverse-NTT scaling factor (seven unscaled butterfly
/// layers accumulate a factor of 128).
const INV_128: u16 = 3303;

const fn pow_mod(base: u32, mut exp: u32) -> u16 {
    let mut acc: u32 = 1;
    let mut b = base % Q as u32;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = (acc * b) % Q as u32;
        }
        b = (b * b) % Q as u32;
        exp >>= 1;
    }
    acc as u16
}

const fn bitrev7(x: u32) -> u32 {
    let mut out = 0;
    let mut i = 0;
    while i < 7 {
        out |= ((x >> i) & 1) << (6 - i);
        i += 1;
    }
    out
}

/// zeta^BitRev7(k) mod q, indexed by butterfly layer position.
const ZETAS: [u16; 128] = {
    let mut t = [0u16; 128];
    let mut k = 0;
    while k < 128 {
        t[k] = pow_mod(ZETA, bitrev7(k as u32));
        k += 1;
    }
    t
};

/// zeta^(2*BitRev7(i)+1) mod q, the twist used by the degree-one base
/// multiplication.
const GAMMAS: [u16; 128] = {
    let mut t = [0u16; 128];
    let mut i = 0;
    while i < 128 {
        t[i] = pow_mod(ZETA, 2 * bitrev7(i as u32) + 1);
        i += 1;
    }
    t
};

/// A field element, always reduced to [0, q).
pub type Fe = u16;

/// Reduce a value in [0, 2q) to canonical form without branching.
#[inline(always)]
fn reduce_once(a: u16) -> Fe {
    let t = a.wrapping_sub(Q);
    t.wrapping_add((t >> 15).wrapping_mul(Q))
}

#[inline(always)]
pub fn fe_add(a: Fe, b: Fe) -> Fe {
    reduce_once(a + b)
}

#[inline(always)]
pub fn fe_sub(a: Fe, b: Fe) -> Fe {
    reduce_once(a.wrapping_sub(b).wrapping_add(Q))
}

const BARRETT_MUL: u64 = 5039; // floor(2^24 / q)
const BARRETT_SHIFT: u32 = 24;

/// Reduce a product (< q^2) with Barrett reduction.
#[inline(always)]
fn barrett(a: u32) -> Fe {
    let quot = ((a as u64 * BARRETT_MUL) >> BARRETT_SHIFT) as u32;
    reduce_once(a.wrapping_sub(quot.wrapping_mul(Q as u32)) as u16)
}

#[inline(always)]
pub fn fe_mul(a: Fe, b: Fe) -> Fe {
    barrett(a as u32 * b as u32)
}

/// Map x in [0, q) to [0, 2^d), rounding half up on (2^d * x) / q.
///
/// q is odd, so the rational part is never exactly one half and the
/// integer formula below is exact.
#[inline]
pub fn compress(x: Fe, d: u8) -> u16 {
    debug_assert!(x < Q);
    let shifted = (x as u32) << d;
    (((shifted + (Q as u32 - 1) / 2) / Q as u32) & ((1u32 << d) - 1)) as u16
}

/// Map y in [0, 2^d) back to a field element, rounding half up on
/// (q * y) / 2^d.
#[inline]
pub fn decompress(y: u16, d: u8) -> Fe {
    debug_assert!(y < (1 << d));
    (((y as u32 * Q as u32) + (1 << (d - 1))) >> d) as Fe
}

/// Worst-case centered round-trip error of compress/decompress at d bits:
/// ceil(q / 2^(d+1)).
pub fn compression_error_bound(d: u8) -> u16 {
    let den = 1u32 << (d + 1);
    ((Q as u32 + den - 1) / den) as u16
}

/// A polynomial in coefficient representation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poly {
    pub(crate) c: [Fe; N],
}

/// A polynomial in NTT representation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NttPoly {
    pub(crate) c: [Fe; N],
}

impl Default for Poly {
    fn default() -> Self {
        Poly { c: [0; N] }
    }
}

impl Default for NttPoly {
    fn default() -> Self {
        NttPoly { c: [0; N] }
    }
}

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_coeffs(c: [Fe; N]) -> Self {
        debug_assert!(c.iter().all(|&x| x < Q));
        Poly { c }
    }

    pub fn coeffs(&self) -> &[Fe; N] {
        &self.c
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = [0; N];
        for ((o, &a), &b) in out.iter_mut().zip(&self.c).zip(&other.c) {
            *o = fe_add(a, b);
        }
        Poly { c: out }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        let mut out = [0; N];
        for ((o, &a), &b) in out.iter_mut().zip(&self.c).zip(&other.c) {
            *o = fe_sub(a, b);
        }
        Poly { c: out }
    }

    /// Forward NTT (Cooley-Tukey butterflies, seven layers).
    pub fn ntt(&self) -> NttPoly {
        let mut c = self.c;
        let mut k = 1;
        let mut len = 128;
        while len >= 2 {
            for start in (0..N).step_by(2 * len) {
                let zeta = ZETAS[k];
                k += 1;
                for j in start..start + len {
                    let t = fe_mul(zeta, c[j + len]);
                    c[j + len] = fe_sub(c[j], t);
                    c[j] = fe_add(c[j], t);
                }
            }
            len /= 2;
        }
        NttPoly { c }
    }
}

impl NttPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn coeffs(&self) -> &[Fe; N] {
        &self.c
    }

    pub fn add(&self, other: &NttPoly) -> NttPoly {
        let mut out = [0; N];
        for ((o, &a), &b) in out.iter_mut().zip(&self.c).zip(&other.c) {
            *o = fe_add(a, b);
        }
        NttPoly { c: out }
    }

    /// Inverse NTT (Gentleman-Sande butterflies, then scale by 128^-1).
    pub fn intt(&self) -> Poly {
        let mut c = self.c;
        let mut k = 127;
        let mut len = 2;
        while len <= 128 {
            for start in (0..N).step_by(2 * len) {
                let zeta = ZETAS[k];
                k -= 1;
                for j in start..start + len {
                    let t = c[j];
                    c[j] = fe_add(t, c[j + len]);
                    c[j + len] = fe_mul(zeta, fe_sub(c[j + len], t));
                }
            }
            len *= 2;
        }
        for x in c.iter_mut() {
            *x = fe_mul(*x, INV_128);
        }
        Poly { c }
    }

    /// Pointwise product in the NTT domain: 128 independent products of
    /// degree-one polynomials modulo X^2 - gamma_i.
    pub fn basemul(&self, other: &NttPoly) -> NttPoly {
        let mut out = [0; N];
        for i in 0..N / 2 {
            let (a0, a1) = (self.c[2 * i], self.c[2 * i + 1]);
            let (b0, b1) = (other.c[2 * i], other.c[2 * i + 1]);
            out[2 * i] = fe_add(fe_mul(a0, b0), fe_mul(fe_mul(a1, b1), GAMMAS[i]));
            out[2 * i + 1] = fe_add(fe_mul(a0, b1), fe_mul(a1, b0));
        }
        NttPoly { c: out }
    }
}

/// 12-bit packing: two coefficients into three bytes, 384 bytes total.
pub const POLY_BYTES: usize = 384;

pub(crate) fn poly_to_bytes(p: &[Fe; N], out: &mut [u8]) {
    debug_assert_eq!(out.len(), POLY_BYTES);
    for (pair, chunk) in p.chunks_exact(2).zip(out.chunks_exact_mut(3)) {
        let (t0, t1) = (pair[0], pair[1]);
        chunk[0] = t0 as u8;
        chunk[1] = ((t0 >> 8) | (t1 << 4)) as u8;
        chunk[2] = (t1 >> 4) as u8;
    }
}

/// Unpack 384 bytes into coefficients, rejecting any 12-bit value >= q.
pub(crate) fn poly_from_bytes_strict(b: &[u8]) -> Option<[Fe; N]> {
    debug_assert_eq!(b.len(), POLY_BYTES);
    let mut c = [0; N];
    for (pair, chunk) in c.chunks_exact_mut(2).zip(b.chunks_exact(3)) {
        let t0 = (chunk[0] as u16) | ((chunk[1] as u16 & 0x0F) << 8);
        let t1 = ((chunk[1] as u16) >> 4) | ((chunk[2] as u16) << 4);
        if t0 >= Q || t1 >= Q {
            return None;
        }
        pair[0] = t0;
        pair[1] = t1;
    }
    Some(c)
}

/// Unpack 384 bytes, reducing out-of-range values instead of rejecting.
pub(crate) fn poly_from_bytes_reduce(b: &[u8]) -> [Fe; N] {
    debug_assert_eq!(b.len(), POLY_BYTES);
    let mut c = [0; N];
    for (pair, chunk) in c.chunks_exact_mut(2).zip(b.chunks_exact(3)) {
        let t0 = (chunk[0] as u16) | ((chunk[1] as u16 & 0x0F) << 8);
        let t1 = ((chunk[1] as u16) >> 4) | ((chunk[2] as u16) << 4);
        pair[0] = barrett(t0 as u32);
        pair[1] = barrett(t1 as u32);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_poly(rng: &mut impl Rng) -> Poly {
        let mut c = [0; N];
        for x in c.iter_mut() {
            *x = rng.gen_range(0..Q);
        }
        Poly { c }
    }

    /// O(n^2) negacyclic schoolbook product, the independent oracle for the
    /// NTT multiplication path.
    pub(crate) fn schoolbook_mul(a: &Poly, b: &Poly) -> Poly {
        let mut acc = [0i64; N];
        for i in 0..N {
            for j in 0..N {
                let prod = a.c[i] as i64 * b.c[j] as i64;
                let k = i + j;
                if k < N {
                    acc[k] += prod;
                } else {
                    acc[k - N] -= prod; // X^256 = -1
                }
            }
        }
        let mut c = [0; N];
        for (o, &v) in c.iter_mut().zip(&acc) {
            *o = v.rem_euclid(Q as i64) as u16;
        }
        Poly { c }
    }

    #[test]
    fn zeta_tables_have_expected_anchors() {
        // Spot values: zeta^0 = 1, zeta^64 = 1729, zeta^1 = 17.
        assert_eq!(ZETAS[0], 1);
        assert_eq!(ZETAS[1], 1729);
        assert_eq!(GAMMAS[0], 17);
        // gamma for i=1 is zeta^(2*64+1) = zeta^129 = -zeta = q - 17.
        assert_eq!(GAMMAS[1], Q - 17);
    }

    #[test]
    fn ntt_of_zero_is_zero() {
        assert_eq!(Poly::zero().ntt(), NttPoly::zero());
    }

    #[test]
    fn ntt_roundtrip_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = random_poly(&mut rng);
            assert_eq!(p.ntt().intt(), p);
        }
    }

    #[test]
    fn ntt_multiplication_matches_schoolbook() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..64 {
            let a = random_poly(&mut rng);
            let b = random_poly(&mut rng);
            let fast = a.ntt().basemul(&b.ntt()).intt();
            assert_eq!(fast, schoolbook_mul(&a, &b));
        }
    }

    #[test]
    fn compress_examples() {
        assert_eq!(compress(0, 10), 0);
        // round(16 * 3328 / 3329) = 16, which wraps to 0 mod 2^4
        assert_eq!(compress(3328, 4), 0);
    }

    #[test]
    fn compression_error_bound_exhaustive() {
        for d in [1u8, 4, 10] {
            let bound = compression_error_bound(d) as i32;
            for x in 0..Q {
                let back = decompress(compress(x, d), d) as i32;
                let mut diff = (back - x as i32).rem_euclid(Q as i32);
                if diff > Q as i32 / 2 {
                    diff -= Q as i32;
                }
                assert!(
                    diff.abs() <= bound,
                    "x={x} d={d} err={} bound={bound}",
                    diff.abs()
                );
            }
        }
    }

    #[test]
    fn barrett_reduces_all_products() {
        // Extremes plus a randomized sweep over the u32 product range.
        assert_eq!(barrett(0), 0);
        assert_eq!(barrett((Q as u32 - 1) * (Q as u32 - 1)), {
            (((Q as u64 - 1) * (Q as u64 - 1)) % Q as u64) as u16
        });
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..100_000 {
            let a = rng.gen_range(0..Q as u32);
            let b = rng.gen_range(0..Q as u32);
            assert_eq!(barrett(a * b) as u64, (a as u64 * b as u64) % Q as u64);
        }
    }

    #[test]
    fn pack_roundtrip_and_strictness() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let p = random_poly(&mut rng);
        let mut buf = [0u8; POLY_BYTES];
        poly_to_bytes(&p.c, &mut buf);
        assert_eq!(poly_from_bytes_strict(&buf), Some(p.c));

        // A 12-bit value of q itself must be rejected by the strict path
        // and reduced to zero by the tolerant one.
        let mut bad = [0u8; POLY_BYTES];
        bad[0] = (Q & 0xFF) as u8;
        bad[1] = (Q >> 8) as u8;
        assert_eq!(poly_from_bytes_strict(&bad), None);
        assert_eq!(poly_from_bytes_reduce(&bad)[0], 0);
    }
}
