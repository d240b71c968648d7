//! Deterministic discrete-event model of the ground–satellite radio
//! link: periodic visibility windows, a finite-rate half-duplex channel
//! with seeded loss and corruption, and an event loop (see [`run`])
//! driving two handshake machines across simulated days.
//!
//! Everything stochastic comes from one seeded generator, so a (config,
//! seed) pair always reproduces the same trace, byte for byte. Time is
//! integer microseconds throughout: event ordering is exact and nothing
//! drifts.

mod run;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use run::{
    bytes_over_air, run_exchange, AirAccounting, ExchangeOutcome, FailedSide, SimConfig,
    SimReport, DEFAULT_MAX_PASSES,
};

pub const US_PER_S: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("pass duration {duration_s} s must be shorter than the orbit period {period_s} s")]
    BadSchedule { period_s: u64, duration_s: u64 },
    #[error("{what} must be a probability in [0, 1)")]
    BadProbability { what: &'static str },
    #[error("data rate must be positive")]
    ZeroRate,
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("session setup rejected: {0}")]
    Handshake(#[from] crate::handshake::HandshakeError),
    #[error("neither established nor failed after {passes} passes")]
    HorizonExhausted { passes: u32 },
}

/// Periodic visibility windows. One pass of `pass_duration_s` opens
/// every `orbit_period_s`, the first at `start_offset_s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassSchedule {
    pub orbit_period_s: u64,
    pub pass_duration_s: u64,
    pub start_offset_s: u64,
}

impl Default for PassSchedule {
    fn default() -> PassSchedule {
        PassSchedule {
            orbit_period_s: 5700,
            pass_duration_s: 480,
            start_offset_s: 0,
        }
    }
}

impl PassSchedule {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.pass_duration_s >= self.orbit_period_s || self.pass_duration_s == 0 {
            return Err(SimError::BadSchedule {
                period_s: self.orbit_period_s,
                duration_s: self.pass_duration_s,
            });
        }
        Ok(())
    }

    /// The k-th window as a `[open, close)` interval in microseconds.
    pub fn window(&self, k: u32) -> (u64, u64) {
        let open = (self.start_offset_s + k as u64 * self.orbit_period_s) * US_PER_S;
        (open, open + self.pass_duration_s * US_PER_S)
    }

    /// All `[open, close)` intervals intersecting `[0, horizon_s)`, in
    /// microseconds, clipped at the horizon.
    pub fn windows(&self, horizon_s: u64) -> Result<Vec<(u64, u64)>, SimError> {
        self.validate()?;
        if horizon_s == 0 {
            return Err(SimError::ZeroHorizon);
        }
        let horizon = horizon_s * US_PER_S;
        let mut out = Vec::new();
        for k in 0.. {
            let (open, close) = self.window(k);
            if open >= horizon {
                break;
            }
            out.push((open, close.min(horizon)));
        }
        Ok(out)
    }

    /// Visible passes in a day of simulated time.
    pub fn passes_per_day(&self) -> usize {
        self.windows(86_400).map_or(0, |w| w.len())
    }
}

/// Channel parameters; all randomness under `rng_seed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub data_rate_bps: u64,
    pub loss_prob: f64,
    pub corrupt_prob: f64,
    pub half_duplex_turnaround_us: u64,
    pub rng_seed: u64,
}

impl Default for LinkModel {
    fn default() -> LinkModel {
        LinkModel {
            data_rate_bps: 9600,
            loss_prob: 0.0,
            corrupt_prob: 0.0,
            half_duplex_turnaround_us: 0,
            rng_seed: 0,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.data_rate_bps == 0 {
            return Err(SimError::ZeroRate);
        }
        for (what, p) in [("loss_prob", self.loss_prob), ("corrupt_prob", self.corrupt_prob)] {
            if !(0.0..1.0).contains(&p) {
                return Err(SimError::BadProbability { what });
            }
        }
        Ok(())
    }

    /// Time on air for `size` bytes, rounded up to whole microseconds.
    pub fn serialization_us(&self, size: usize) -> u64 {
        let bits = size as u64 * 8;
        (bits * US_PER_S).div_ceil(self.data_rate_bps)
    }
}

/// Transmission direction over the space link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Ground to satellite.
    #[serde(rename = "up")]
    Up,
    /// Satellite to ground.
    #[serde(rename = "down")]
    Down,
}

impl Direction {
    pub fn flip(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Delivered,
    Lost,
    Corrupted,
    OutOfWindow,
}

/// One transmission attempt as the channel recorded it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    /// When the packet started on air (or would have).
    pub t_us: u64,
    pub dir: Direction,
    pub port: u8,
    pub outcome: Outcome,
    /// Receiver-side arrival time; `None` unless delivered or corrupted.
    pub delivery_us: Option<u64>,
    /// The bytes as sent.
    pub wire: Vec<u8>,
    /// The bytes as received, when anything was received at all. Differs
    /// from `wire` exactly when the outcome is `Corrupted`.
    pub delivered_wire: Option<Vec<u8>>,
}

/// Ordered log of every transmission attempt in a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimTrace(pub Vec<TraceEvent>);

/// The export row for one trace event: exactly the fields external
/// tooling consumes.
#[derive(Serialize, Deserialize)]
struct TraceRow {
    t_us: u64,
    dir: Direction,
    size: usize,
    outcome: Outcome,
    port: u8,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Newline-delimited JSON, one record per transmission attempt.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.0 {
            let row = TraceRow {
                t_us: e.t_us,
                dir: e.dir,
                size: e.wire.len(),
                outcome: e.outcome,
                port: e.port,
            };
            out.push_str(&serde_json::to_string(&row).expect("trace rows always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.0.iter().filter(|e| e.outcome == outcome).count()
    }
}

/// What [`Channel::transmit`] decided about one packet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransmitResult {
    pub outcome: Outcome,
    /// When the packet actually started on air (after queueing).
    pub start_us: u64,
    pub delivery_us: Option<u64>,
    pub delivered_wire: Option<Vec<u8>>,
}

/// The shared half-duplex medium. Packets serialize one at a time at the
/// configured rate; loss and corruption draw from the seeded generator.
pub struct Channel {
    pub link: LinkModel,
    pub schedule: PassSchedule,
    rng: ChaCha8Rng,
    busy_until_us: u64,
}

impl Channel {
    pub fn new(link: LinkModel, schedule: PassSchedule) -> Result<Channel, SimError> {
        link.validate()?;
        schedule.validate()?;
        Ok(Channel {
            rng: ChaCha8Rng::seed_from_u64(link.rng_seed),
            busy_until_us: 0,
            link,
            schedule,
        })
    }

    /// The window containing `t_us`, if any.
    fn window_at(&self, t_us: u64) -> Option<(u64, u64)> {
        let offset = self.schedule.start_offset_s * US_PER_S;
        if t_us < offset {
            return None;
        }
        let k = ((t_us - offset) / (self.schedule.orbit_period_s * US_PER_S)) as u32;
        let (open, close) = self.schedule.window(k);
        (t_us >= open && t_us < close).then_some((open, close))
    }

    /// Offer one packet to the channel at `t_us`.
    ///
    /// The transmission starts once the medium is free, runs for the
    /// serialization time, and lands after the configured turnaround. If
    /// it cannot both start and finish inside the visibility window the
    /// radio never keys up: the outcome is `OutOfWindow`, no air time is
    /// spent, and no randomness is consumed. In-window packets burn air
    /// time whether or not the receiver gets them; loss is drawn first,
    /// then corruption, which flips one random byte to a different
    /// value somewhere in the packet.
    pub fn transmit(&mut self, t_us: u64, wire: &[u8]) -> TransmitResult {
        let start = t_us.max(self.busy_until_us);
        let ser = self.link.serialization_us(wire.len());
        let delivery = start + ser + self.link.half_duplex_turnaround_us;

        let in_window = match self.window_at(t_us) {
            Some((_, close)) => start < close && delivery < close,
            None => false,
        };
        if !in_window {
            return TransmitResult {
                outcome: Outcome::OutOfWindow,
                start_us: start,
                delivery_us: None,
                delivered_wire: None,
            };
        }

        self.busy_until_us = start + ser;

        if self.rng.gen::<f64>() < self.link.loss_prob {
            return TransmitResult {
                outcome: Outcome::Lost,
                start_us: start,
                delivery_us: None,
                delivered_wire: None,
            };
        }
        if self.rng.gen::<f64>() < self.link.corrupt_prob {
            let mut mangled = wire.to_vec();
            let at = self.rng.gen_range(0..mangled.len());
            let xor = self.rng.gen_range(1..=255u8);
            mangled[at] ^= xor;
            return TransmitResult {
                outcome: Outcome::Corrupted,
                start_us: start,
                delivery_us: Some(delivery),
                delivered_wire: Some(mangled),
            };
        }
        TransmitResult {
            outcome: Outcome::Delivered,
            start_us: start,
            delivery_us: Some(delivery),
            delivered_wire: Some(wire.to_vec()),
        }
    }
}
