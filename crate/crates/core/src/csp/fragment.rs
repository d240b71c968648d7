//! Fragmentation of objects larger than one link MTU. Each fragment
//! carries an 8-byte header (four big-endian u16s: transfer id, index,
//! total, chunk length) ahead of its chunk, so a fragment stream is
//! self-describing and reassembly tolerates loss, duplication, and
//! reordering.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub const FRAGMENT_HEADER_LEN: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FragmentError {
    #[error("payload is empty")]
    EmptyPayload,
    #[error("chunk size must be at least 1")]
    ChunkSizeZero,
    #[error("payload needs {need} fragments, more than a u16 can index")]
    TooManyFragments { need: usize },
    #[error("fragment header truncated: {got} bytes")]
    HeaderTruncated { got: usize },
    #[error("chunk length field says {claimed}, fragment carries {got}")]
    LengthMismatch { claimed: usize, got: usize },
    #[error("fragment belongs to transfer {got}, reassembler expects {expected}")]
    WrongTransfer { expected: u16, got: u16 },
    #[error("fragment index {index} out of range for total {total}")]
    IndexOutOfRange { index: u16, total: u16 },
    #[error("fragment total {got} conflicts with established total {expected}")]
    TotalConflict { expected: u16, got: u16 },
    #[error("fragment {index} re-arrived with different bytes")]
    IntegrityConflict { index: u16 },
    #[error("zero-length chunk in a non-final fragment {index}")]
    ShortChunk { index: u16 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FragmentHeader {
    pub transfer_id: u16,
    pub index: u16,
    pub total: u16,
    pub chunk_len: u16,
}

impl FragmentHeader {
    pub fn to_bytes(self) -> [u8; FRAGMENT_HEADER_LEN] {
        let mut b = [0u8; FRAGMENT_HEADER_LEN];
        b[0..2].copy_from_slice(&self.transfer_id.to_be_bytes());
        b[2..4].copy_from_slice(&self.index.to_be_bytes());
        b[4..6].copy_from_slice(&self.total.to_be_bytes());
        b[6..8].copy_from_slice(&self.chunk_len.to_be_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<FragmentHeader, FragmentError> {
        if b.len() < FRAGMENT_HEADER_LEN {
            return Err(FragmentError::HeaderTruncated { got: b.len() });
        }
        Ok(FragmentHeader {
            transfer_id: u16::from_be_bytes(b[0..2].try_into().unwrap()),
            index: u16::from_be_bytes(b[2..4].try_into().unwrap()),
            total: u16::from_be_bytes(b[4..6].try_into().unwrap()),
            chunk_len: u16::from_be_bytes(b[6..8].try_into().unwrap()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub header: FragmentHeader,
    pub chunk: Vec<u8>,
}

impl Fragment {
    /// Header and chunk as they ride inside a CSP payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAGMENT_HEADER_LEN + self.chunk.len());
        out.extend_from_slice(&self.header.to_bytes());
        out.extend_from_slice(&self.chunk);
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Fragment, FragmentError> {
        let header = FragmentHeader::from_bytes(payload)?;
        let chunk = &payload[FRAGMENT_HEADER_LEN..];
        if chunk.len() != header.chunk_len as usize {
            return Err(FragmentError::LengthMismatch {
                claimed: header.chunk_len as usize,
                got: chunk.len(),
            });
        }
        Ok(Fragment {
            header,
            chunk: chunk.to_vec(),
        })
    }
}

/// Split a payload into fragments of at most `chunk_size` bytes each.
/// Every fragment except the last carries exactly `chunk_size` bytes.
pub fn fragment(
    transfer_id: u16,
    payload: &[u8],
    chunk_size: usize,
) -> Result<Vec<Fragment>, FragmentError> {
    if payload.is_empty() {
        return Err(FragmentError::EmptyPayload);
    }
    if chunk_size == 0 {
        return Err(FragmentError::ChunkSizeZero);
    }
    let total = payload.len().div_ceil(chunk_size);
    if total > u16::MAX as usize {
        return Err(FragmentError::TooManyFragments { need: total });
    }
    Ok(payload
        .chunks(chunk_size)
        .enumerate()
        .map(|(i, chunk)| Fragment {
            header: FragmentHeader {
                transfer_id,
                index: i as u16,
                total: total as u16,
                chunk_len: chunk.len() as u16,
            },
            chunk: chunk.to_vec(),
        })
        .collect())
}

/// Incremental reassembly state for one transfer. Duplicates with
/// identical bytes are ignored; a duplicate index with different bytes is
/// an integrity conflict and the original chunk is kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reassembler {
    transfer_id: u16,
    total: Option<u16>,
    chunks: BTreeMap<u16, Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReassemblyStatus {
    /// All fragments present; the reassembled payload.
    Complete(Vec<u8>),
    /// Indices still outstanding. Empty means no fragment has arrived
    /// yet, so even the total is unknown.
    Incomplete { missing: BTreeSet<u16> },
}

impl Reassembler {
    pub fn new(transfer_id: u16) -> Reassembler {
        Reassembler {
            transfer_id,
            total: None,
            chunks: BTreeMap::new(),
        }
    }

    pub fn transfer_id(&self) -> u16 {
        self.transfer_id
    }

    pub fn total(&self) -> Option<u16> {
        self.total
    }

    pub fn received(&self) -> usize {
        self.chunks.len()
    }

    /// Accept one fragment. Returns whether it added new data.
    pub fn accept(&mut self, frag: &Fragment) -> Result<bool, FragmentError> {
        let h = frag.header;
        if h.transfer_id != self.transfer_id {
            return Err(FragmentError::WrongTransfer {
                expected: self.transfer_id,
                got: h.transfer_id,
            });
        }
        if h.total == 0 || h.index >= h.total {
            return Err(FragmentError::IndexOutOfRange {
                index: h.index,
                total: h.total,
            });
        }
        match self.total {
            None => self.total = Some(h.total),
            Some(t) if t != h.total => {
                return Err(FragmentError::TotalConflict {
                    expected: t,
                    got: h.total,
                })
            }
            _ => {}
        }
        if frag.chunk.is_empty() && h.index + 1 != h.total {
            return Err(FragmentError::ShortChunk { index: h.index });
        }
        match self.chunks.get(&h.index) {
            Some(existing) if *existing == frag.chunk => Ok(false),
            Some(_) => Err(FragmentError::IntegrityConflict { index: h.index }),
            None => {
                self.chunks.insert(h.index, frag.chunk.clone());
                Ok(true)
            }
        }
    }

    pub fn missing(&self) -> BTreeSet<u16> {
        match self.total {
            None => BTreeSet::new(),
            Some(t) => (0..t).filter(|i| !self.chunks.contains_key(i)).collect(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.total
            .is_some_and(|t| self.chunks.len() == t as usize)
    }

    pub fn status(&self) -> ReassemblyStatus {
        if self.is_complete() {
            ReassemblyStatus::Complete(self.chunks.values().flatten().copied().collect())
        } else {
            ReassemblyStatus::Incomplete {
                missing: self.missing(),
            }
        }
    }

    /// Dump the held chunks for snapshotting, index order.
    pub fn chunks(&self) -> impl Iterator<Item = (u16, &[u8])> {
        self.chunks.iter().map(|(&i, c)| (i, c.as_slice()))
    }

    /// Rebuild from snapshotted chunks.
    pub fn from_chunks(
        transfer_id: u16,
        total: Option<u16>,
        chunks: impl IntoIterator<Item = (u16, Vec<u8>)>,
    ) -> Reassembler {
        Reassembler {
            transfer_id,
            total,
            chunks: chunks.into_iter().collect(),
        }
    }

    /// Drop everything but the transfer id, e.g. after the assembled
    /// object failed validation and must be re-requested.
    pub fn reset(&mut self) {
        self.total = None;
        self.chunks.clear();
    }
}

/// One-shot reassembly of a complete fragment collection.
pub fn reassemble(
    frags: impl IntoIterator<Item = Fragment>,
) -> Result<ReassemblyStatus, FragmentError> {
    let mut frags = frags.into_iter().peekable();
    let transfer_id = match frags.peek() {
        Some(f) => f.header.transfer_id,
        None => {
            return Ok(ReassemblyStatus::Incomplete {
                missing: BTreeSet::new(),
            })
        }
    };
    let mut r = Reassembler::new(transfer_id);
    for f in frags {
        r.accept(&f)?;
    }
    Ok(r.status())
}
