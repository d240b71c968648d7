//! CSP-style link framing: a 32-bit big-endian header, an optional CRC-32
//! trailer, and an optional truncated-HMAC trailer, as flown on AX100-class
//! UHF transceivers. Payload fragmentation lives in [`fragment`].
//!
//! Wire layout: `header(4) || payload || [crc(4)] || [hmac(4)]`. Both
//! integrity trailers are computed over header-plus-payload; the HMAC tag
//! is the leading 4 bytes of the full MAC. A 4-byte tag is what the radio
//! firmware actually compares, so the link layer treats it as a transport
//! integrity check, not a cryptographic boundary; the handshake above it
//! never relies on it alone.

pub mod fragment;

use hmac::{Hmac, Mac};
use sha1::Sha1;
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const HEADER_LEN: usize = 4;
pub const CRC_LEN: usize = 4;
pub const HMAC_LEN: usize = 4;

/// Payload budget bounds. The default mirrors a conservative UHF beacon
/// budget; anything outside [32, 1024] is refused.
pub const DEFAULT_MTU: usize = 200;
pub const MIN_MTU: usize = 32;
pub const MAX_MTU: usize = 1024;

/// Minimum HMAC key length accepted by seal/verify.
pub const MIN_HMAC_KEY_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CspError {
    #[error("header field {field} exceeds {max}: {got}")]
    FieldRange {
        field: &'static str,
        max: u8,
        got: u8,
    },
    #[error("mtu {got} outside [{MIN_MTU}, {MAX_MTU}]")]
    MtuOutOfRange { got: usize },
    #[error("payload of {got} bytes exceeds mtu {max}")]
    PayloadTooLarge { max: usize, got: usize },
    #[error("hmac key must be at least {MIN_HMAC_KEY_LEN} bytes, got {got}")]
    KeyTooShort { got: usize },
    #[error("packet truncated: need at least {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("crc mismatch")]
    BadCrc,
    #[error("hmac mismatch")]
    BadHmac,
    #[error("packet does not carry the required hmac")]
    HmacMissing,
    #[error("packet is hmac-protected but no key was supplied")]
    NoKey,
}

/// Priority travels in the top two header bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Priority {
    Critical = 0,
    High = 1,
    Norm = 2,
    Low = 3,
}

impl Priority {
    fn from_bits(b: u32) -> Priority {
        match b & 0x3 {
            0 => Priority::Critical,
            1 => Priority::High,
            2 => Priority::Norm,
            _ => Priority::Low,
        }
    }
}

/// The low header nibble: hmac, xtea, rdp, crc from bit 3 down to bit 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flags {
    pub hmac: bool,
    pub xtea: bool,
    pub rdp: bool,
    pub crc: bool,
}

impl Flags {
    pub fn bits(self) -> u32 {
        (self.hmac as u32) << 3 | (self.xtea as u32) << 2 | (self.rdp as u32) << 1 | self.crc as u32
    }

    pub fn from_bits(b: u32) -> Flags {
        Flags {
            hmac: b & 0x8 != 0,
            xtea: b & 0x4 != 0,
            rdp: b & 0x2 != 0,
            crc: b & 0x1 != 0,
        }
    }
}

/// Field order, MSB first: priority(2), source(5), destination(5),
/// destination port(6), source port(6), reserved(4), flags(4).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub priority: Priority,
    pub source: u8,
    pub destination: u8,
    pub destination_port: u8,
    pub source_port: u8,
    pub flags: Flags,
}

impl Header {
    pub fn pack(&self) -> Result<u32, CspError> {
        let check = |field, max, got| {
            if got > max {
                Err(CspError::FieldRange { field, max, got })
            } else {
                Ok(got as u32)
            }
        };
        let src = check("source", 31, self.source)?;
        let dst = check("destination", 31, self.destination)?;
        let dport = check("destination_port", 63, self.destination_port)?;
        let sport = check("source_port", 63, self.source_port)?;
        Ok((self.priority as u32) << 30
            | src << 25
            | dst << 20
            | dport << 14
            | sport << 8
            | self.flags.bits())
    }

    /// Total: every 32-bit word parses. Reserved bits are ignored.
    pub fn unpack(word: u32) -> Header {
        Header {
            priority: Priority::from_bits(word >> 30),
            source: ((word >> 25) & 0x1F) as u8,
            destination: ((word >> 20) & 0x1F) as u8,
            destination_port: ((word >> 14) & 0x3F) as u8,
            source_port: ((word >> 8) & 0x3F) as u8,
            flags: Flags::from_bits(word & 0xF),
        }
    }

    pub fn to_bytes(&self) -> Result<[u8; 4], CspError> {
        Ok(self.pack()?.to_be_bytes())
    }

    pub fn from_bytes(b: &[u8; 4]) -> Header {
        Header::unpack(u32::from_be_bytes(*b))
    }
}

/// Which MAC the link uses. SHA-1 truncated to four bytes is the radio's
/// native scheme; SHA-256 is the drop-in upgrade, same truncation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HmacAlgo {
    #[default]
    Sha1,
    Sha256,
}

/// What the MAC covers. Covering the header is the safer default; the
/// payload-only mode exists for peers that strip or rewrite headers in
/// flight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HmacScope {
    #[default]
    HeaderAndPayload,
    PayloadOnly,
}

/// Link authentication settings shared by seal and verify.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinkSecurity<'k> {
    pub hmac_key: Option<&'k [u8]>,
    pub hmac_algo: HmacAlgo,
    pub hmac_scope: HmacScope,
}

impl<'k> LinkSecurity<'k> {
    pub fn with_key(key: &'k [u8]) -> LinkSecurity<'k> {
        LinkSecurity {
            hmac_key: Some(key),
            ..Default::default()
        }
    }
}

/// A verified (or to-be-sealed) packet: header plus payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub header: Header,
    pub payload: Vec<u8>,
}

fn truncated_hmac(
    key: &[u8],
    algo: HmacAlgo,
    scope: HmacScope,
    header: &[u8; 4],
    payload: &[u8],
) -> [u8; HMAC_LEN] {
    let mut out = [0u8; HMAC_LEN];
    match algo {
        HmacAlgo::Sha1 => {
            let mut mac =
                <Hmac<Sha1> as Mac>::new_from_slice(key).expect("hmac accepts any key length");
            if scope == HmacScope::HeaderAndPayload {
                mac.update(header);
            }
            mac.update(payload);
            out.copy_from_slice(&mac.finalize().into_bytes()[..HMAC_LEN]);
        }
        HmacAlgo::Sha256 => {
            let mut mac =
                <Hmac<Sha256> as Mac>::new_from_slice(key).expect("hmac accepts any key length");
            if scope == HmacScope::HeaderAndPayload {
                mac.update(header);
            }
            mac.update(payload);
            out.copy_from_slice(&mac.finalize().into_bytes()[..HMAC_LEN]);
        }
    }
    out
}

/// Seal a packet for the wire. The crc and hmac flags in the emitted
/// header reflect what was actually appended, never the caller's flag
/// bits: integrity state is decided here and nowhere else.
pub fn seal(
    header: Header,
    payload: &[u8],
    mtu: usize,
    crc: bool,
    sec: &LinkSecurity,
) -> Result<Vec<u8>, CspError> {
    if !(MIN_MTU..=MAX_MTU).contains(&mtu) {
        return Err(CspError::MtuOutOfRange { got: mtu });
    }
    if payload.len() > mtu {
        return Err(CspError::PayloadTooLarge {
            max: mtu,
            got: payload.len(),
        });
    }
    if let Some(key) = sec.hmac_key {
        if key.len() < MIN_HMAC_KEY_LEN {
            return Err(CspError::KeyTooShort { got: key.len() });
        }
    }

    let mut hdr = header;
    hdr.flags.crc = crc;
    hdr.flags.hmac = sec.hmac_key.is_some();
    let hdr_bytes = hdr.to_bytes()?;

    let mut wire = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN + HMAC_LEN);
    wire.extend_from_slice(&hdr_bytes);
    wire.extend_from_slice(payload);
    if crc {
        let mut h = crc32fast::Hasher::new();
        h.update(&hdr_bytes);
        h.update(payload);
        wire.extend_from_slice(&h.finalize().to_be_bytes());
    }
    if let Some(key) = sec.hmac_key {
        wire.extend_from_slice(&truncated_hmac(
            key,
            sec.hmac_algo,
            sec.hmac_scope,
            &hdr_bytes,
            payload,
        ));
    }
    Ok(wire)
}

/// Parse and check a wire packet. Checks run cheapest-first (CRC before
/// HMAC); tag comparison is constant-time. When `require_hmac` is set, an
/// unauthenticated packet is rejected outright so a stripped flag cannot
/// downgrade the link.
pub fn verify(wire: &[u8], sec: &LinkSecurity, require_hmac: bool) -> Result<Packet, CspError> {
    if wire.len() < HEADER_LEN {
        return Err(CspError::Truncated {
            need: HEADER_LEN,
            got: wire.len(),
        });
    }
    let hdr_bytes: [u8; 4] = wire[..4].try_into().unwrap();
    let header = Header::from_bytes(&hdr_bytes);

    if require_hmac && !header.flags.hmac {
        return Err(CspError::HmacMissing);
    }

    let trailer = CRC_LEN * header.flags.crc as usize + HMAC_LEN * header.flags.hmac as usize;
    if wire.len() < HEADER_LEN + trailer {
        return Err(CspError::Truncated {
            need: HEADER_LEN + trailer,
            got: wire.len(),
        });
    }
    let payload = &wire[HEADER_LEN..wire.len() - trailer];
    let mut rest = &wire[wire.len() - trailer..];

    if header.flags.crc {
        let mut h = crc32fast::Hasher::new();
        h.update(&hdr_bytes);
        h.update(payload);
        let want = h.finalize().to_be_bytes();
        if rest[..CRC_LEN] != want {
            return Err(CspError::BadCrc);
        }
        rest = &rest[CRC_LEN..];
    }
    if header.flags.hmac {
        let key = sec.hmac_key.ok_or(CspError::NoKey)?;
        if key.len() < MIN_HMAC_KEY_LEN {
            return Err(CspError::KeyTooShort { got: key.len() });
        }
        let want = truncated_hmac(key, sec.hmac_algo, sec.hmac_scope, &hdr_bytes, payload);
        if !bool::from(rest[..HMAC_LEN].ct_eq(&want)) {
            return Err(CspError::BadHmac);
        }
    }

    Ok(Packet {
        header,
        payload: payload.to_vec(),
    })
}
