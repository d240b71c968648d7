//! The CPA-secure lattice encryption core: module-LWE keygen, encrypt to a
//! 32-byte message under explicit coins, and decrypt.

use sha3::{Digest, Sha3_512};

use super::ring::{
    compress, decompress, poly_from_bytes_reduce, poly_from_bytes_strict, poly_to_bytes, Fe,
    NttPoly, Poly, N, POLY_BYTES,
};
use super::sample::{expand_matrix, sample_noise, Eta};
use super::{KemError, CIPHERTEXT_LEN, K};

pub const PKE_PUBLIC_KEY_LEN: usize = K * POLY_BYTES + 32; // packed t-hat || rho
pub const PKE_SECRET_KEY_LEN: usize = K * POLY_BYTES; // packed s-hat

/// Compression widths for the two ciphertext halves.
pub const DU: u8 = 10;
pub const DV: u8 = 4;

pub const U_BYTES: usize = K * N * DU as usize / 8; // 640
pub const V_BYTES: usize = N * DV as usize / 8; // 128

/// Noise widths: eta1 for secrets and the encryption vector r, eta2 for
/// the ciphertext error terms.
pub const ETA1: Eta = Eta::Three;
pub const ETA2: Eta = Eta::Two;

pub(crate) type NttVec = [NttPoly; K];

fn pack_vec(v: &NttVec, out: &mut [u8]) {
    for (p, chunk) in v.iter().zip(out.chunks_exact_mut(POLY_BYTES)) {
        poly_to_bytes(&p.c, chunk);
    }
}

pub(crate) fn unpack_vec_strict(b: &[u8]) -> Option<NttVec> {
    let mut v = [NttPoly::zero(), NttPoly::zero()];
    for (p, chunk) in v.iter_mut().zip(b.chunks_exact(POLY_BYTES)) {
        p.c = poly_from_bytes_strict(chunk)?;
    }
    Some(v)
}

pub(crate) fn unpack_vec_reduce(b: &[u8]) -> NttVec {
    let mut v = [NttPoly::zero(), NttPoly::zero()];
    for (p, chunk) in v.iter_mut().zip(b.chunks_exact(POLY_BYTES)) {
        p.c = poly_from_bytes_reduce(chunk);
    }
    v
}

/// Matrix-vector product plus error, all in the NTT domain.
fn mat_vec_acc(mat: &[[NttPoly; K]; K], vec: &NttVec, err: Option<&NttVec>) -> NttVec {
    core::array::from_fn(|i| {
        let mut acc = NttPoly::zero();
        for j in 0..K {
            acc = acc.add(&mat[i][j].basemul(&vec[j]));
        }
        if let Some(e) = err {
            acc = acc.add(&e[i]);
        }
        acc
    })
}

/// Map a 32-byte message to a polynomial: each bit becomes 0 or
/// round(q/2) = 1665.
fn poly_from_msg(msg: &[u8; 32]) -> Poly {
    let mut c = [0 as Fe; N];
    for (i, coeff) in c.iter_mut().enumerate() {
        let bit = (msg[i / 8] >> (i % 8)) & 1;
        *coeff = decompress(bit as u16, 1);
    }
    Poly::from_coeffs(c)
}

fn poly_to_msg(p: &Poly) -> [u8; 32] {
    let mut msg = [0u8; 32];
    for (i, &coeff) in p.coeffs().iter().enumerate() {
        msg[i / 8] |= (compress(coeff, 1) as u8) << (i % 8);
    }
    msg
}

fn pack_u(u: &[Poly; K], out: &mut [u8]) {
    debug_assert_eq!(out.len(), U_BYTES);
    // du = 10: four coefficients into five bytes.
    for (p, half) in u.iter().zip(out.chunks_exact_mut(U_BYTES / K)) {
        for (quad, chunk) in p.coeffs().chunks_exact(4).zip(half.chunks_exact_mut(5)) {
            let t: [u16; 4] = core::array::from_fn(|m| compress(quad[m], DU));
            chunk[0] = t[0] as u8;
            chunk[1] = ((t[0] >> 8) | (t[1] << 2)) as u8;
            chunk[2] = ((t[1] >> 6) | (t[2] << 4)) as u8;
            chunk[3] = ((t[2] >> 4) | (t[3] << 6)) as u8;
            chunk[4] = (t[3] >> 2) as u8;
        }
    }
}

fn unpack_u(b: &[u8]) -> [Poly; K] {
    debug_assert_eq!(b.len(), U_BYTES);
    let mut out = [Poly::zero(), Poly::zero()];
    for (p, half) in out.iter_mut().zip(b.chunks_exact(U_BYTES / K)) {
        for (quad, chunk) in p.c.chunks_exact_mut(4).zip(half.chunks_exact(5)) {
            let c = [
                chunk[0] as u16,
                chunk[1] as u16,
                chunk[2] as u16,
                chunk[3] as u16,
                chunk[4] as u16,
            ];
            quad[0] = decompress((c[0] | (c[1] << 8)) & 0x3FF, DU);
            quad[1] = decompress(((c[1] >> 2) | (c[2] << 6)) & 0x3FF, DU);
            quad[2] = decompress(((c[2] >> 4) | (c[3] << 4)) & 0x3FF, DU);
            quad[3] = decompress(((c[3] >> 6) | (c[4] << 2)) & 0x3FF, DU);
        }
    }
    out
}

fn pack_v(v: &Poly, out: &mut [u8]) {
    debug_assert_eq!(out.len(), V_BYTES);
    // dv = 4: two coefficients per byte.
    for (pair, byte) in v.coeffs().chunks_exact(2).zip(out.iter_mut()) {
        *byte = (compress(pair[0], DV) | (compress(pair[1], DV) << 4)) as u8;
    }
}

fn unpack_v(b: &[u8]) -> Poly {
    debug_assert_eq!(b.len(), V_BYTES);
    let mut p = Poly::zero();
    for (pair, &byte) in p.c.chunks_exact_mut(2).zip(b.iter()) {
        pair[0] = decompress((byte & 0x0F) as u16, DV);
        pair[1] = decompress((byte >> 4) as u16, DV);
    }
    p
}

/// Deterministic keypair from a 32-byte seed. Returns (pk, sk) as packed
/// bytes: pk = t-hat || rho, sk = s-hat.
pub(crate) fn keygen(d: &[u8; 32]) -> ([u8; PKE_PUBLIC_KEY_LEN], [u8; PKE_SECRET_KEY_LEN]) {
    let g = Sha3_512::digest(d);
    let rho: [u8; 32] = g[..32].try_into().unwrap();
    let sigma: [u8; 32] = g[32..].try_into().unwrap();

    let a = expand_matrix::<K>(&rho, false);
    let s_hat: NttVec = core::array::from_fn(|i| sample_noise(&sigma, i as u8, ETA1).ntt());
    let e_hat: NttVec = core::array::from_fn(|i| sample_noise(&sigma, (K + i) as u8, ETA1).ntt());
    let t_hat = mat_vec_acc(&a, &s_hat, Some(&e_hat));

    let mut pk = [0u8; PKE_PUBLIC_KEY_LEN];
    pack_vec(&t_hat, &mut pk[..K * POLY_BYTES]);
    pk[K * POLY_BYTES..].copy_from_slice(&rho);

    let mut sk = [0u8; PKE_SECRET_KEY_LEN];
    pack_vec(&s_hat, &mut sk);
    (pk, sk)
}

/// Validated public key contents, unpacked once per operation.
pub(crate) struct UnpackedPk {
    t_hat: NttVec,
    rho: [u8; 32],
}

impl UnpackedPk {
    pub(crate) fn from_parts(t_hat: NttVec, rho: [u8; 32]) -> UnpackedPk {
        UnpackedPk { t_hat, rho }
    }

    /// Strict parse: rejects any coefficient encoding that is not the
    /// canonical representative (12-bit value >= q).
    pub(crate) fn parse(pk: &[u8]) -> Result<UnpackedPk, KemError> {
        if pk.len() != PKE_PUBLIC_KEY_LEN {
            return Err(KemError::BadLength {
                what: "public key",
                need: PKE_PUBLIC_KEY_LEN,
                got: pk.len(),
            });
        }
        let t_hat =
            unpack_vec_strict(&pk[..K * POLY_BYTES]).ok_or(KemError::NonCanonicalKey)?;
        let rho = pk[K * POLY_BYTES..].try_into().unwrap();
        Ok(UnpackedPk { t_hat, rho })
    }
}

/// Encrypt a 32-byte message under explicit coins.
pub(crate) fn encrypt(pk: &UnpackedPk, msg: &[u8; 32], coins: &[u8; 32]) -> [u8; CIPHERTEXT_LEN] {
    let at = expand_matrix::<K>(&pk.rho, true);
    let r_hat: NttVec = core::array::from_fn(|i| sample_noise(coins, i as u8, ETA1).ntt());
    let e1: [Poly; K] = core::array::from_fn(|i| sample_noise(coins, (K + i) as u8, ETA2));
    let e2 = sample_noise(coins, (2 * K) as u8, ETA2);

    let u_hat = mat_vec_acc(&at, &r_hat, None);
    let u: [Poly; K] = core::array::from_fn(|i| u_hat[i].intt().add(&e1[i]));

    let mut tv = NttPoly::zero();
    for i in 0..K {
        tv = tv.add(&pk.t_hat[i].basemul(&r_hat[i]));
    }
    let v = tv.intt().add(&e2).add(&poly_from_msg(msg));

    let mut ct = [0u8; CIPHERTEXT_LEN];
    pack_u(&u, &mut ct[..U_BYTES]);
    pack_v(&v, &mut ct[U_BYTES..]);
    ct
}

/// Decrypt with the packed secret vector. Out-of-range encodings in the
/// secret are reduced, never rejected: this path must be total so that
/// the outer decapsulation stays oblivious to malformed inputs.
pub(crate) fn decrypt(sk: &[u8], ct: &[u8]) -> [u8; 32] {
    debug_assert_eq!(sk.len(), PKE_SECRET_KEY_LEN);
    debug_assert_eq!(ct.len(), CIPHERTEXT_LEN);
    let s_hat = unpack_vec_reduce(sk);
    let u = unpack_u(&ct[..U_BYTES]);
    let v = unpack_v(&ct[U_BYTES..]);

    let mut acc = NttPoly::zero();
    for i in 0..K {
        acc = acc.add(&s_hat[i].basemul(&u[i].ntt()));
    }
    poly_to_msg(&v.sub(&acc.intt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kem::ring::Q;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn encrypt_decrypt_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        for _ in 0..50 {
            let mut d = [0u8; 32];
            let mut msg = [0u8; 32];
            let mut coins = [0u8; 32];
            rng.fill_bytes(&mut d);
            rng.fill_bytes(&mut msg);
            rng.fill_bytes(&mut coins);
            let (pk, sk) = keygen(&d);
            let parsed = UnpackedPk::parse(&pk).unwrap();
            let ct = encrypt(&parsed, &msg, &coins);
            assert_eq!(decrypt(&sk, &ct), msg);
        }
    }

    #[test]
    fn msg_poly_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for _ in 0..100 {
            let mut msg = [0u8; 32];
            rng.fill_bytes(&mut msg);
            assert_eq!(poly_to_msg(&poly_from_msg(&msg)), msg);
        }
        // Bit set -> coefficient round(q/2).
        let mut one = [0u8; 32];
        one[0] = 1;
        assert_eq!(poly_from_msg(&one).coeffs()[0], 1665);
    }

    #[test]
    fn u_pack_is_lossless_on_compressed_values() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let mut u = [Poly::zero(), Poly::zero()];
        for p in u.iter_mut() {
            for c in p.c.iter_mut() {
                // Values already on the decompression lattice survive the
                // pack/unpack cycle exactly.
                *c = decompress(rng.gen_range(0u16..1 << DU), DU);
            }
        }
        let mut buf = [0u8; U_BYTES];
        pack_u(&u, &mut buf);
        assert_eq!(unpack_u(&buf), u);
    }

    #[test]
    fn pk_parse_rejects_non_canonical() {
        let (mut pk, _) = keygen(&[5u8; 32]);
        assert!(UnpackedPk::parse(&pk).is_ok());
        // Force the first 12-bit field to q (non-canonical zero).
        pk[0] = (Q & 0xFF) as u8;
        pk[1] = (pk[1] & 0xF0) | ((Q >> 8) as u8);
        assert!(matches!(
            UnpackedPk::parse(&pk),
            Err(KemError::NonCanonicalKey)
        ));
        assert!(matches!(
            UnpackedPk::parse(&pk[..10]),
            Err(KemError::BadLength { .. })
        ));
    }
}
