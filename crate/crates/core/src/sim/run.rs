//! The exchange driver: two handshake machines, one channel, global
//! time order, until the key is established or the pass budget runs out.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use sha3::digest::{ExtendableOutput, Update, XofReader};
use sha3::{Digest, Sha3_256, Shake256};

use super::{Channel, Direction, LinkModel, Outcome, PassSchedule, SimError, SimTrace, TraceEvent};
use crate::handshake::{
    Event, FailReason, HandshakeConfig, HandshakeSession, LinkAuth, Role, SessionState, Station,
};
use crate::kem;

pub const DEFAULT_MAX_PASSES: u32 = 10;
pub const DEFAULT_TICK_INTERVAL_US: u64 = 5 * super::US_PER_S;
const DEFAULT_HMAC_KEY: &[u8] = b"orbitkem-sim-shared-key!";

/// Everything one simulated exchange needs. `Default` gives the
/// baseline configuration: authenticated link, ground holds the key,
/// ten-pass budget.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub session_id: u16,
    pub schedule: PassSchedule,
    pub link: LinkModel,
    pub mtu: usize,
    /// Pre-shared link authentication key; `None` runs the link bare.
    pub hmac_key: Option<Vec<u8>>,
    pub key_holder: Station,
    pub max_passes: u32,
    pub tick_interval_us: u64,
    /// Serialize both sessions at every pass close and restore them at
    /// the next open, proving dormancy through snapshots end to end.
    pub snapshot_between_passes: bool,
    /// KEM seeds; `None` derives them from the link seed so every run
    /// is fully determined by its config.
    pub key_holder_seed: Option<Vec<u8>>,
    pub encapsulator_seed: Option<Vec<u8>>,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            session_id: 1,
            schedule: PassSchedule::default(),
            link: LinkModel::default(),
            mtu: crate::csp::DEFAULT_MTU,
            hmac_key: Some(DEFAULT_HMAC_KEY.to_vec()),
            key_holder: Station::Ground,
            max_passes: DEFAULT_MAX_PASSES,
            tick_interval_us: DEFAULT_TICK_INTERVAL_US,
            snapshot_between_passes: false,
            key_holder_seed: None,
            encapsulator_seed: None,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> SimConfig {
        SimConfig {
            link: LinkModel {
                rng_seed: seed,
                ..LinkModel::default()
            },
            ..SimConfig::default()
        }
    }

    fn derived_seed(&self, label: &str, len: usize) -> Vec<u8> {
        let mut xof = Shake256::default();
        xof.update(label.as_bytes());
        xof.update(&self.link.rng_seed.to_be_bytes());
        let mut out = vec![0u8; len];
        xof.finalize_xof().read(&mut out);
        out
    }

    fn key_holder_seed(&self) -> Vec<u8> {
        self.key_holder_seed
            .clone()
            .unwrap_or_else(|| self.derived_seed("orbitkem/sim/key-holder", kem::KEYGEN_SEED_LEN))
    }

    fn encapsulator_seed(&self) -> Vec<u8> {
        self.encapsulator_seed
            .clone()
            .unwrap_or_else(|| self.derived_seed("orbitkem/sim/encapsulator", kem::ENCAPS_SEED_LEN))
    }

    fn session(&self, station: Station) -> Result<HandshakeSession, SimError> {
        let role = if station == self.key_holder {
            Role::KeyHolder
        } else {
            Role::Encapsulator
        };
        let seed = match role {
            Role::KeyHolder => self.key_holder_seed(),
            Role::Encapsulator => self.encapsulator_seed(),
        };
        let mut config = HandshakeConfig::new(role, station, self.session_id, seed);
        config.mtu = self.mtu;
        config.link = match &self.hmac_key {
            Some(key) => LinkAuth::with_key(key.clone()),
            None => LinkAuth::default(),
        };
        Ok(HandshakeSession::new(config)?)
    }
}

/// Which endpoint failed, and why.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedSide {
    pub side: Station,
    pub reason: FailReason,
}

/// Per-direction accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirCounts {
    pub packets: u64,
    pub bytes: u64,
}

/// Link-budget summary distilled from a trace alone: how much the
/// radio actually had to carry to move the key material.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AirAccounting {
    /// Wire bytes offered ground→satellite.
    pub uplink_bytes: u64,
    /// Wire bytes offered satellite→ground.
    pub downlink_bytes: u64,
    pub packets: u64,
    /// Attempts beyond the first for each distinct wire image — bytes
    /// the link carried again because an earlier copy didn't land.
    pub retransmissions: u64,
    /// Distinct contact windows that carried traffic.
    pub passes_used: u32,
}

/// Reduce a trace to its air-time cost. An empty trace costs nothing.
pub fn bytes_over_air(trace: &SimTrace, schedule: &PassSchedule) -> AirAccounting {
    let mut acc = AirAccounting::default();
    let mut seen: HashSet<&[u8]> = HashSet::new();
    let mut slots: BTreeSet<u64> = BTreeSet::new();
    let period_us = schedule.orbit_period_s as u64 * super::US_PER_S;
    let offset_us = schedule.start_offset_s as u64 * super::US_PER_S;
    for e in &trace.0 {
        acc.packets += 1;
        let len = e.wire.len() as u64;
        match e.dir {
            Direction::Up => acc.uplink_bytes += len,
            Direction::Down => acc.downlink_bytes += len,
        }
        if !seen.insert(&e.wire) {
            acc.retransmissions += 1;
        }
        slots.insert(e.t_us.saturating_sub(offset_us) / period_us.max(1));
    }
    acc.passes_used = slots.len() as u32;
    acc
}

/// The run's accounting summary, serializable as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub established: bool,
    pub failed: Option<FailedSide>,
    pub passes_used: u32,
    /// Simulated time at which the run reached its terminal state.
    pub finished_at_us: Option<u64>,
    pub packets_sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub corrupted: u64,
    pub out_of_window: u64,
    /// Fragment re-sends both endpoints performed, summed.
    pub retransmissions: u64,
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
    pub up: DirCounts,
    pub down: DirCounts,
    pub ground_stats: crate::handshake::LinkStats,
    pub satellite_stats: crate::handshake::LinkStats,
    /// First 8 bytes of SHA3-256 of the shared secret, hex. Identifies
    /// the key across both endpoints without disclosing it.
    pub ss_fingerprint: Option<String>,
}

/// Final sessions plus everything observed along the way.
#[derive(Debug)]
pub struct ExchangeOutcome {
    pub ground: HandshakeSession,
    pub satellite: HandshakeSession,
    pub trace: SimTrace,
    pub report: SimReport,
}

/// Fingerprint used in reports and logs: secrets never appear in
/// artifacts, their hashes do.
pub fn ss_fingerprint(ss: &kem::SharedSecret) -> String {
    let digest = Sha3_256::digest(ss.as_bytes());
    hex::encode(&digest[..8])
}

enum Pending {
    Tick,
    Deliver { to: Station, wire: Vec<u8> },
}

struct HeapItem {
    t_us: u64,
    seq: u64,
    what: Pending,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &HeapItem) -> bool {
        (self.t_us, self.seq) == (other.t_us, other.seq)
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &HeapItem) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    // Reversed: the BinaryHeap is a max-heap and we want earliest-first,
    // ties broken by insertion order.
    fn cmp(&self, other: &HeapItem) -> Ordering {
        (other.t_us, other.seq).cmp(&(self.t_us, self.seq))
    }
}

struct EventLoop {
    heap: BinaryHeap<HeapItem>,
    next_seq: u64,
    channel: Channel,
    trace: SimTrace,
}

impl EventLoop {
    fn push(&mut self, t_us: u64, what: Pending) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(HeapItem { t_us, seq, what });
    }

    /// Offer every packet in `burst` (transmitted by `from`) to the
    /// channel, record the attempts, and schedule deliveries.
    fn route(&mut self, from: Station, t_us: u64, burst: Vec<Vec<u8>>) {
        for wire in burst {
            let dir = match from {
                Station::Ground => Direction::Up,
                Station::Satellite => Direction::Down,
            };
            let port = if wire.len() >= 4 {
                crate::csp::Header::from_bytes(&wire[..4].try_into().unwrap()).destination_port
            } else {
                0
            };
            let result = self.channel.transmit(t_us, &wire);
            if let (Some(delivery), Some(delivered)) =
                (result.delivery_us, result.delivered_wire.clone())
            {
                self.push(
                    delivery,
                    Pending::Deliver {
                        to: match from {
                            Station::Ground => Station::Satellite,
                            Station::Satellite => Station::Ground,
                        },
                        wire: delivered,
                    },
                );
            }
            self.trace.0.push(TraceEvent {
                t_us: result.start_us,
                dir,
                port,
                outcome: result.outcome,
                delivery_us: result.delivery_us,
                wire,
                delivered_wire: result.delivered_wire,
            });
        }
    }
}

fn is_stopped(ground: &HandshakeSession, sat: &HandshakeSession) -> bool {
    let done = ground.is_established() && sat.is_established();
    let failed = matches!(ground.state(), SessionState::Failed(_))
        || matches!(sat.state(), SessionState::Failed(_));
    done || failed
}

/// Run one complete exchange under the given configuration.
///
/// Drives both state machines with `PassOpened` / `Tick` / `Incoming` /
/// `PassClosed` events in global time order, pass after pass, until
/// both sides are established, either side fails, or `max_passes` runs
/// out (an error). On success the two shared secrets are asserted equal
/// before returning.
pub fn run_exchange(config: &SimConfig) -> Result<ExchangeOutcome, SimError> {
    let mut ground = config.session(Station::Ground)?;
    let mut satellite = config.session(Station::Satellite)?;
    let mut ev = EventLoop {
        heap: BinaryHeap::new(),
        next_seq: 0,
        channel: Channel::new(config.link, config.schedule)?,
        trace: SimTrace::default(),
    };

    let mut passes_used = 0;
    let mut finished_at_us = None;

    'passes: for k in 0..config.max_passes {
        let (open, close) = config.schedule.window(k);
        passes_used = k + 1;

        if config.snapshot_between_passes && k > 0 {
            // Hibernate: both endpoints go through bytes and back, as
            // they would across a real dormancy period.
            ground = HandshakeSession::restore(&ground.snapshot())
                .expect("a live session always re-loads its own snapshot");
            satellite = HandshakeSession::restore(&satellite.snapshot())
                .expect("a live session always re-loads its own snapshot");
        }

        // Schedule this pass's ticks before any traffic so that ties at
        // the same instant process the tick first, deterministically.
        let mut t = open + config.tick_interval_us;
        while t < close {
            ev.push(t, Pending::Tick);
            t += config.tick_interval_us;
        }

        let burst = ground.step(Event::PassOpened { now_us: open });
        ev.route(Station::Ground, open, burst);
        let burst = satellite.step(Event::PassOpened { now_us: open });
        ev.route(Station::Satellite, open, burst);

        while let Some(item) = ev.heap.pop() {
            if is_stopped(&ground, &satellite) {
                finished_at_us.get_or_insert(item.t_us);
                break 'passes;
            }
            match item.what {
                Pending::Tick => {
                    let burst = ground.step(Event::Tick { now_us: item.t_us });
                    ev.route(Station::Ground, item.t_us, burst);
                    let burst = satellite.step(Event::Tick { now_us: item.t_us });
                    ev.route(Station::Satellite, item.t_us, burst);
                }
                Pending::Deliver { to, wire } => {
                    let (session, station) = match to {
                        Station::Ground => (&mut ground, Station::Ground),
                        Station::Satellite => (&mut satellite, Station::Satellite),
                    };
                    let burst = session.step(Event::Incoming {
                        now_us: item.t_us,
                        wire,
                    });
                    ev.route(station, item.t_us, burst);
                }
            }
            if is_stopped(&ground, &satellite) {
                finished_at_us = Some(item.t_us);
                break 'passes;
            }
        }

        ground.step(Event::PassClosed { now_us: close });
        satellite.step(Event::PassClosed { now_us: close });
        if is_stopped(&ground, &satellite) {
            finished_at_us.get_or_insert(close);
            break;
        }
    }

    let established = ground.is_established() && satellite.is_established();
    if !established && finished_at_us.is_none() {
        return Err(SimError::HorizonExhausted {
            passes: config.max_passes,
        });
    }

    if established {
        // The whole point of the exercise: both ends hold the same key.
        assert_eq!(
            ground.shared_secret(),
            satellite.shared_secret(),
            "established endpoints must agree on the secret"
        );
    }

    let failed = [
        (Station::Ground, ground.state()),
        (Station::Satellite, satellite.state()),
    ]
    .into_iter()
    .find_map(|(side, state)| match state {
        SessionState::Failed(reason) => Some(FailedSide { side, reason }),
        _ => None,
    });

    let mut report = SimReport {
        established,
        failed,
        passes_used,
        finished_at_us,
        packets_sent: ev.trace.len() as u64,
        delivered: ev.trace.count(Outcome::Delivered) as u64,
        lost: ev.trace.count(Outcome::Lost) as u64,
        corrupted: ev.trace.count(Outcome::Corrupted) as u64,
        out_of_window: ev.trace.count(Outcome::OutOfWindow) as u64,
        retransmissions: ground.stats().retransmissions + satellite.stats().retransmissions,
        bytes_sent: 0,
        bytes_delivered: 0,
        up: DirCounts::default(),
        down: DirCounts::default(),
        ground_stats: *ground.stats(),
        satellite_stats: *satellite.stats(),
        ss_fingerprint: ground.shared_secret().filter(|_| established).map(ss_fingerprint),
    };
    for e in &ev.trace.0 {
        let len = e.wire.len() as u64;
        report.bytes_sent += len;
        if e.outcome == Outcome::Delivered {
            report.bytes_delivered += len;
        }
        let side = match e.dir {
            Direction::Up => &mut report.up,
            Direction::Down => &mut report.down,
        };
        side.packets += 1;
        side.bytes += len;
    }

    Ok(ExchangeOutcome {
        ground,
        satellite,
        trace: ev.trace,
        report,
    })
}
