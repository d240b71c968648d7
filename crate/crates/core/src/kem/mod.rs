//! Kyber-512 key encapsulation (round-3 parameter set and symmetric
//! primitives), with randomness injected by the caller as fixed-length
//! seeds so every operation is deterministic and replayable.
//!
//! Layout summary: public key 800 bytes (packed t-hat, then the 32-byte
//! matrix seed rho); secret key 1632 bytes (packed s-hat, the public key,
//! H(pk), and the implicit-rejection secret z); ciphertext 768 bytes
//! (compressed u at 10 bits, compressed v at 4 bits); shared secret 32.

pub mod kat;
pub mod ring;
pub mod sample;

mod pke;

use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::{Digest, Sha3_256, Sha3_512, Shake256};
use subtle::{Choice, ConditionallySelectable, ConstantTimeEq};
use zeroize::{Zeroize, ZeroizeOnDrop};

use thiserror::Error;

/// Module rank: two polynomials per vector.
pub const K: usize = 2;

pub const PUBLIC_KEY_LEN: usize = 800;
pub const SECRET_KEY_LEN: usize = 1632;
pub const CIPHERTEXT_LEN: usize = 768;
pub const SHARED_SECRET_LEN: usize = 32;
/// Keygen consumes d (32 bytes, CPA seed) then z (32 bytes, rejection key).
pub const KEYGEN_SEED_LEN: usize = 64;
/// Encapsulation consumes one 32-byte seed, hashed before use.
pub const ENCAPS_SEED_LEN: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KemError {
    #[error("{what}: expected {need} bytes, got {got}")]
    BadLength {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("public key encoding is not canonical")]
    NonCanonicalKey,
    #[error("noise sampler needs {need} input bytes, got {got}")]
    ShortNoiseInput { need: usize, got: usize },
    #[error("unsupported parameter set: {0}")]
    BadParams(&'static str),
}

/// The fixed parameter set. Construction double-checks the values and the
/// byte-length arithmetic they imply; anything but the Kyber-512 numbers
/// is rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KemParams {
    pub n: usize,
    pub q: u16,
    pub k: usize,
    pub eta1: usize,
    pub eta2: usize,
    pub du: u8,
    pub dv: u8,
}

impl KemParams {
    pub fn new(
        n: usize,
        q: u16,
        k: usize,
        eta1: usize,
        eta2: usize,
        du: u8,
        dv: u8,
    ) -> Result<KemParams, KemError> {
        let p = KemParams {
            n,
            q,
            k,
            eta1,
            eta2,
            du,
            dv,
        };
        if p != Self::kyber512() {
            return Err(KemError::BadParams(
                "only the Kyber-512 parameter set is supported",
            ));
        }
        Ok(p)
    }

    pub fn kyber512() -> KemParams {
        KemParams {
            n: ring::N,
            q: ring::Q,
            k: K,
            eta1: 3,
            eta2: 2,
            du: 10,
            dv: 4,
        }
    }

    /// 12 bits per coefficient for k polynomials, plus the matrix seed.
    pub fn public_key_len(&self) -> usize {
        self.k * self.n * 12 / 8 + 32
    }

    /// Packed secret vector, the public key, H(pk), and z.
    pub fn secret_key_len(&self) -> usize {
        self.k * self.n * 12 / 8 + self.public_key_len() + 32 + 32
    }

    /// du bits per u coefficient, dv bits per v coefficient.
    pub fn ciphertext_len(&self) -> usize {
        (self.k * self.n * self.du as usize + self.n * self.dv as usize) / 8
    }
}

/// Packed public key.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn from_bytes(b: &[u8]) -> Result<PublicKey, KemError> {
        // Full strict parse so a malformed key is caught at the boundary.
        pke::UnpackedPk::parse(b)?;
        Ok(PublicKey(b.try_into().unwrap()))
    }
}

impl core::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "PublicKey({}..)", hex::encode(&self.0[..8]))
    }
}

/// Packed secret key. Zeroed on drop; debug output is redacted.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct SecretKey(pub [u8; SECRET_KEY_LEN]);

impl SecretKey {
    pub fn as_bytes(&self) -> &[u8; SECRET_KEY_LEN] {
        &self.0
    }

    pub fn from_bytes(b: &[u8]) -> Result<SecretKey, KemError> {
        let arr: [u8; SECRET_KEY_LEN] = b.try_into().map_err(|_| KemError::BadLength {
            what: "secret key",
            need: SECRET_KEY_LEN,
            got: b.len(),
        })?;
        Ok(SecretKey(arr))
    }

    /// The public key embedded in the secret key.
    pub fn public_key(&self) -> &[u8] {
        &self.0[pke::PKE_SECRET_KEY_LEN..pke::PKE_SECRET_KEY_LEN + PUBLIC_KEY_LEN]
    }
}

impl core::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("SecretKey(redacted)")
    }
}

#[derive(Clone, Debug)]
pub struct KemKeyPair {
    pub public_key: PublicKey,
    pub secret_key: SecretKey,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Ciphertext(pub [u8; CIPHERTEXT_LEN]);

impl Ciphertext {
    pub fn as_bytes(&self) -> &[u8; CIPHERTEXT_LEN] {
        &self.0
    }

    pub fn from_bytes(b: &[u8]) -> Result<Ciphertext, KemError> {
        let arr: [u8; CIPHERTEXT_LEN] = b.try_into().map_err(|_| KemError::BadLength {
            what: "ciphertext",
            need: CIPHERTEXT_LEN,
            got: b.len(),
        })?;
        Ok(Ciphertext(arr))
    }
}

impl core::fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Ciphertext({}..)", hex::encode(&self.0[..8]))
    }
}

/// The 32-byte session secret. Zeroed on drop, compared in constant time,
/// redacted in debug output.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct SharedSecret(pub [u8; SHARED_SECRET_LEN]);

impl SharedSecret {
    pub fn as_bytes(&self) -> &[u8; SHARED_SECRET_LEN] {
        &self.0
    }
}

impl PartialEq for SharedSecret {
    fn eq(&self, other: &Self) -> bool {
        self.0.ct_eq(&other.0).into()
    }
}

impl Eq for SharedSecret {}

impl core::fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("SharedSecret(redacted)")
    }
}

fn h(data: &[u8]) -> [u8; 32] {
    Sha3_256::digest(data).into()
}

fn g(parts: &[&[u8]]) -> ([u8; 32], [u8; 32]) {
    let mut hash = Sha3_512::new();
    for p in parts {
        Digest::update(&mut hash, p);
    }
    let out = hash.finalize();
    (out[..32].try_into().unwrap(), out[32..].try_into().unwrap())
}

fn kdf(parts: &[&[u8]]) -> [u8; SHARED_SECRET_LEN] {
    let mut xof = Shake256::default();
    for p in parts {
        xof.update(p);
    }
    let mut out = [0u8; SHARED_SECRET_LEN];
    xof.finalize_xof().read(&mut out);
    out
}

/// Generate a keypair from a 64-byte seed (d || z).
pub fn keygen(seed: &[u8]) -> Result<KemKeyPair, KemError> {
    let seed: &[u8; KEYGEN_SEED_LEN] = seed.try_into().map_err(|_| KemError::BadLength {
        what: "keygen seed",
        need: KEYGEN_SEED_LEN,
        got: seed.len(),
    })?;
    let d: [u8; 32] = seed[..32].try_into().unwrap();
    let z = &seed[32..];

    let (pk, sk_cpa) = pke::keygen(&d);

    let mut sk = [0u8; SECRET_KEY_LEN];
    sk[..pke::PKE_SECRET_KEY_LEN].copy_from_slice(&sk_cpa);
    sk[pke::PKE_SECRET_KEY_LEN..pke::PKE_SECRET_KEY_LEN + PUBLIC_KEY_LEN].copy_from_slice(&pk);
    sk[1568..1600].copy_from_slice(&h(&pk));
    sk[1600..1632].copy_from_slice(z);

    Ok(KemKeyPair {
        public_key: PublicKey(pk),
        secret_key: SecretKey(sk),
    })
}

/// Encapsulate to a public key using a 32-byte seed for the message.
/// Returns the ciphertext and the shared secret.
pub fn encaps(pk: &[u8], seed: &[u8]) -> Result<(Ciphertext, SharedSecret), KemError> {
    if seed.len() != ENCAPS_SEED_LEN {
        return Err(KemError::BadLength {
            what: "encaps seed",
            need: ENCAPS_SEED_LEN,
            got: seed.len(),
        });
    }
    let parsed = pke::UnpackedPk::parse(pk)?;

    // The seed is hashed before use so a biased caller RNG cannot feed
    // structured messages into the encryption core.
    let m = h(seed);
    let (kbar, coins) = g(&[&m, &h(pk)]);
    let ct = pke::encrypt(&parsed, &m, &coins);
    let ss = kdf(&[&kbar, &h(&ct)]);
    Ok((Ciphertext(ct), SharedSecret(ss)))
}

/// Decapsulate a ciphertext. Malformed-but-well-sized inputs never error:
/// the Fujisaki-Okamoto re-encryption check fails closed onto the
/// implicit-rejection secret, so callers cannot distinguish a bad
/// ciphertext from a bad key by the error surface.
pub fn decaps(sk: &[u8], ct: &[u8]) -> Result<SharedSecret, KemError> {
    if sk.len() != SECRET_KEY_LEN {
        return Err(KemError::BadLength {
            what: "secret key",
            need: SECRET_KEY_LEN,
            got: sk.len(),
        });
    }
    if ct.len() != CIPHERTEXT_LEN {
        return Err(KemError::BadLength {
            what: "ciphertext",
            need: CIPHERTEXT_LEN,
            got: ct.len(),
        });
    }

    let sk_cpa = &sk[..pke::PKE_SECRET_KEY_LEN];
    let pk = &sk[pke::PKE_SECRET_KEY_LEN..pke::PKE_SECRET_KEY_LEN + PUBLIC_KEY_LEN];
    let h_pk = &sk[1568..1600];
    let z = &sk[1600..1632];

    let m_prime = pke::decrypt(sk_cpa, ct);
    let (kbar_prime, coins_prime) = g(&[&m_prime, h_pk]);

    // Re-encrypt. The embedded public key is reduced rather than parsed
    // strictly: this path must not branch on key contents.
    let t_hat = pke::unpack_vec_reduce(&pk[..K * ring::POLY_BYTES]);
    let rho: [u8; 32] = pk[K * ring::POLY_BYTES..].try_into().unwrap();
    let reparsed = pke::UnpackedPk::from_parts(t_hat, rho);
    let ct_prime = pke::encrypt(&reparsed, &m_prime, &coins_prime);

    // Constant-time: compare, then select kbar' or z without branching.
    let ok: Choice = ct.ct_eq(&ct_prime);
    let mut pre = [0u8; 32];
    for (i, b) in pre.iter_mut().enumerate() {
        *b = u8::conditional_select(&z[i], &kbar_prime[i], ok);
    }
    let ss = kdf(&[&pre, &h(ct)]);
    Ok(SharedSecret(ss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn seeded_pair(rng: &mut impl RngCore) -> KemKeyPair {
        let mut seed = [0u8; KEYGEN_SEED_LEN];
        rng.fill_bytes(&mut seed);
        keygen(&seed).unwrap()
    }

    #[test]
    fn params_constructor_pins_the_set() {
        let p = KemParams::new(256, 3329, 2, 3, 2, 10, 4).unwrap();
        assert_eq!(p.public_key_len(), PUBLIC_KEY_LEN);
        assert_eq!(p.secret_key_len(), SECRET_KEY_LEN);
        assert_eq!(p.ciphertext_len(), CIPHERTEXT_LEN);
        assert!(KemParams::new(256, 3329, 3, 2, 2, 10, 4).is_err());
        assert!(KemParams::new(256, 7681, 2, 3, 2, 10, 4).is_err());
    }

    #[test]
    fn roundtrip_produces_matching_secrets() {
        let mut rng = ChaCha12Rng::seed_from_u64(30);
        for _ in 0..50 {
            let pair = seeded_pair(&mut rng);
            let mut eseed = [0u8; ENCAPS_SEED_LEN];
            rng.fill_bytes(&mut eseed);
            let (ct, ss_enc) = encaps(pair.public_key.as_bytes(), &eseed).unwrap();
            let ss_dec = decaps(pair.secret_key.as_bytes(), ct.as_bytes()).unwrap();
            assert_eq!(ss_enc, ss_dec);
        }
    }

    #[test]
    fn deterministic_given_seeds() {
        let seed = [9u8; KEYGEN_SEED_LEN];
        let a = keygen(&seed).unwrap();
        let b = keygen(&seed).unwrap();
        assert_eq!(a.public_key, b.public_key);
        assert_eq!(a.secret_key.as_bytes(), b.secret_key.as_bytes());
        let (ct1, ss1) = encaps(a.public_key.as_bytes(), &[7; 32]).unwrap();
        let (ct2, ss2) = encaps(b.public_key.as_bytes(), &[7; 32]).unwrap();
        assert_eq!(ct1, ct2);
        assert_eq!(ss1, ss2);
    }

    #[test]
    fn tampered_ciphertext_rejects_implicitly() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let pair = seeded_pair(&mut rng);
        let (ct, ss) = encaps(pair.public_key.as_bytes(), &[3; 32]).unwrap();
        let good = decaps(pair.secret_key.as_bytes(), ct.as_bytes()).unwrap();
        assert_eq!(good, ss);

        for _ in 0..32 {
            let mut bad = *ct.as_bytes();
            let pos = rng.gen_range(0..bad.len());
            bad[pos] ^= 1 << rng.gen_range(0..8);
            // Still Ok(_): rejection is implicit, only the secret differs.
            let ss_bad = decaps(pair.secret_key.as_bytes(), &bad).unwrap();
            assert_ne!(ss_bad, ss);
        }
    }

    #[test]
    fn implicit_rejection_is_deterministic_per_key() {
        // The rejection secret depends on z and the ciphertext, so the
        // same bad ciphertext rejects to the same value twice, and a
        // different key rejects to a different value.
        let pair_a = keygen(&[1u8; 64]).unwrap();
        let pair_b = keygen(&[2u8; 64]).unwrap();
        let (ct, _) = encaps(pair_a.public_key.as_bytes(), &[0; 32]).unwrap();
        let mut bad = *ct.as_bytes();
        bad[0] ^= 0xFF;
        let r1 = decaps(pair_a.secret_key.as_bytes(), &bad).unwrap();
        let r2 = decaps(pair_a.secret_key.as_bytes(), &bad).unwrap();
        let r3 = decaps(pair_b.secret_key.as_bytes(), &bad).unwrap();
        assert_eq!(r1, r2);
        assert_ne!(r1, r3);
    }

    #[test]
    fn wrong_lengths_error_cleanly() {
        assert!(matches!(
            keygen(&[0u8; 63]),
            Err(KemError::BadLength { need: 64, .. })
        ));
        let pair = keygen(&[0u8; 64]).unwrap();
        assert!(encaps(&pair.public_key.as_bytes()[..799], &[0; 32]).is_err());
        assert!(encaps(pair.public_key.as_bytes(), &[0; 31]).is_err());
        assert!(decaps(&pair.secret_key.as_bytes()[..100], &[0; 768]).is_err());
        assert!(decaps(pair.secret_key.as_bytes(), &[0; 767]).is_err());
    }

    #[test]
    fn secret_key_embeds_public_key_and_hash() {
        let pair = keygen(&[4u8; 64]).unwrap();
        assert_eq!(pair.secret_key.public_key(), pair.public_key.as_bytes());
        let sk = pair.secret_key.as_bytes();
        assert_eq!(&sk[1568..1600], &h(pair.public_key.as_bytes()));
        // z is the tail of the keygen seed.
        assert_eq!(&sk[1600..1632], &[4u8; 32]);
    }

    #[test]
    fn debug_output_is_redacted() {
        let pair = keygen(&[8u8; 64]).unwrap();
        let (_, ss) = encaps(pair.public_key.as_bytes(), &[1; 32]).unwrap();
        assert_eq!(format!("{:?}", pair.secret_key), "SecretKey(redacted)");
        assert_eq!(format!("{ss:?}"), "SharedSecret(redacted)");
        let hexed = hex::encode(ss.as_bytes());
        assert!(!format!("{:?}", pair).contains(&hexed));
    }
}
