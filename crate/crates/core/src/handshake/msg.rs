//! Handshake message wire formats. Fragment traffic rides dedicated
//! ports with the raw fragment encoding as payload (the fragment header's
//! transfer id doubles as the session binding); control traffic shares
//! one port with a one-byte kind tag and an explicit session id.

use thiserror::Error;

use crate::csp::fragment::Fragment;

/// Port assignments for the handshake. Defaults: 20 for public-key
/// fragments, 21 for ciphertext fragments, 22 for control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Ports {
    pub pk_fragment: u8,
    pub ct_fragment: u8,
    pub control: u8,
}

impl Default for Ports {
    fn default() -> Ports {
        Ports {
            pk_fragment: 20,
            ct_fragment: 21,
            control: 22,
        }
    }
}

/// Which bulk object a control message refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferObject {
    PublicKey,
    Ciphertext,
}

const KIND_NACK: u8 = 1;
const KIND_CONFIRM: u8 = 2;
const KIND_CONFIRM_ACK: u8 = 3;

const OBJ_PK: u8 = 0;
const OBJ_CT: u8 = 1;

pub const CONFIRM_TAG_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HandshakeMessage {
    PkFragment(Fragment),
    CtFragment(Fragment),
    /// Selective repeat request: the receiver names the indices it still
    /// lacks for one object.
    Nack {
        object: TransferObject,
        missing: Vec<u16>,
    },
    /// Key-holder's proof of possession over the transcript.
    Confirm { tag: [u8; CONFIRM_TAG_LEN] },
    /// Encapsulator's reply, tagged with its own direction label.
    ConfirmAck { tag: [u8; CONFIRM_TAG_LEN] },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MsgError {
    #[error("port {0} is not a handshake port")]
    UnknownPort(u8),
    #[error("unknown control kind {0}")]
    UnknownKind(u8),
    #[error("unknown transfer object {0}")]
    UnknownObject(u8),
    #[error("control payload truncated: {got} bytes")]
    ControlTruncated { got: usize },
    #[error("nack says {claimed} indices, payload carries {got}")]
    NackCountMismatch { claimed: usize, got: usize },
    #[error("bad fragment payload: {0}")]
    BadFragment(#[from] crate::csp::fragment::FragmentError),
}

impl HandshakeMessage {
    /// Destination port and CSP payload for this message.
    pub fn encode(&self, session_id: u16, ports: &Ports) -> (u8, Vec<u8>) {
        match self {
            HandshakeMessage::PkFragment(f) => (ports.pk_fragment, f.encode()),
            HandshakeMessage::CtFragment(f) => (ports.ct_fragment, f.encode()),
            HandshakeMessage::Nack { object, missing } => {
                let mut p = Vec::with_capacity(6 + 2 * missing.len());
                p.push(KIND_NACK);
                p.extend_from_slice(&session_id.to_be_bytes());
                p.push(match object {
                    TransferObject::PublicKey => OBJ_PK,
                    TransferObject::Ciphertext => OBJ_CT,
                });
                p.extend_from_slice(&(missing.len() as u16).to_be_bytes());
                for idx in missing {
                    p.extend_from_slice(&idx.to_be_bytes());
                }
                (ports.control, p)
            }
            HandshakeMessage::Confirm { tag } => {
                let mut p = Vec::with_capacity(3 + CONFIRM_TAG_LEN);
                p.push(KIND_CONFIRM);
                p.extend_from_slice(&session_id.to_be_bytes());
                p.extend_from_slice(tag);
                (ports.control, p)
            }
            HandshakeMessage::ConfirmAck { tag } => {
                let mut p = Vec::with_capacity(3 + CONFIRM_TAG_LEN);
                p.push(KIND_CONFIRM_ACK);
                p.extend_from_slice(&session_id.to_be_bytes());
                p.extend_from_slice(tag);
                (ports.control, p)
            }
        }
    }

    /// Parse a payload delivered to `port`. Returns the session id the
    /// message binds to (the fragment transfer id, for fragments).
    pub fn decode(port: u8, payload: &[u8], ports: &Ports) -> Result<(u16, HandshakeMessage), MsgError> {
        if port == ports.pk_fragment {
            let f = Fragment::decode(payload)?;
            return Ok((f.header.transfer_id, HandshakeMessage::PkFragment(f)));
        }
        if port == ports.ct_fragment {
            let f = Fragment::decode(payload)?;
            return Ok((f.header.transfer_id, HandshakeMessage::CtFragment(f)));
        }
        if port != ports.control {
            return Err(MsgError::UnknownPort(port));
        }
        if payload.len() < 3 {
            return Err(MsgError::ControlTruncated { got: payload.len() });
        }
        let kind = payload[0];
        let session_id = u16::from_be_bytes(payload[1..3].try_into().unwrap());
        let body = &payload[3..];
        let msg = match kind {
            KIND_NACK => {
                if body.len() < 3 {
                    return Err(MsgError::ControlTruncated { got: payload.len() });
                }
                let object = match body[0] {
                    OBJ_PK => TransferObject::PublicKey,
                    OBJ_CT => TransferObject::Ciphertext,
                    other => return Err(MsgError::UnknownObject(other)),
                };
                let claimed = u16::from_be_bytes(body[1..3].try_into().unwrap()) as usize;
                let rest = &body[3..];
                if rest.len() != 2 * claimed {
                    return Err(MsgError::NackCountMismatch {
                        claimed,
                        got: rest.len() / 2,
                    });
                }
                let missing = rest
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes(c.try_into().unwrap()))
                    .collect();
                HandshakeMessage::Nack { object, missing }
            }
            KIND_CONFIRM | KIND_CONFIRM_ACK => {
                let tag: [u8; CONFIRM_TAG_LEN] = body
                    .try_into()
                    .map_err(|_| MsgError::ControlTruncated { got: payload.len() })?;
                if kind == KIND_CONFIRM {
                    HandshakeMessage::Confirm { tag }
                } else {
                    HandshakeMessage::ConfirmAck { tag }
                }
            }
            other => return Err(MsgError::UnknownKind(other)),
        };
        Ok((session_id, msg))
    }
}

/// How many missing indices fit in one Nack under a payload budget.
pub fn nack_capacity(mtu_payload: usize) -> usize {
    mtu_payload.saturating_sub(6) / 2
}
