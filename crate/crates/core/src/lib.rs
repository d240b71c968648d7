//! Post-quantum key establishment for a ground-station/nanosatellite pair:
//! a lattice KEM carried over a small-satellite link protocol with framing,
//! authentication, fragmentation, an intermittent-contact handshake state
//! machine, a link simulator, and AES-256 session encryption derived from
//! the exchanged secret.

pub mod bench;
pub mod csp;
pub mod handshake;
pub mod kem;
pub mod keystore;
pub mod session;
pub mod sim;
