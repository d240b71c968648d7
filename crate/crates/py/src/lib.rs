//! Python bindings over the core crate: the KEM, packet framing,
//! fragmentation, session crypto, key-scaling analysis, and the pass
//! simulator, all callable from a plain `import orbitkem`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use orbitkem_core::csp::{self, Flags, Header, LinkSecurity, Priority};
use orbitkem_core::csp::fragment::{self, Fragment, Reassembler, ReassemblyStatus};
use orbitkem_core::handshake::{self, Station};
use orbitkem_core::kem;
use orbitkem_core::session::{self, xtea};
use orbitkem_core::sim::{self, LinkModel, PassSchedule, SimConfig};
use orbitkem_core::{bench, keystore};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn bytes(py: Python<'_>, data: &[u8]) -> Py<PyAny> {
    PyBytes::new_bound(py, data).into_any().unbind()
}

fn priority_from(v: u8) -> PyResult<Priority> {
    Ok(match v {
        0 => Priority::Critical,
        1 => Priority::High,
        2 => Priority::Norm,
        3 => Priority::Low,
        other => return Err(value_err(format!("priority {other} outside 0..=3"))),
    })
}

/// Recursively convert a JSON value into native Python objects, so
/// reports cross the boundary as ordinary dicts and lists.
fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_py(py),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        Value::String(s) => s.into_py(py),
        Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any().unbind()
        }
        Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any().unbind()
        }
    })
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(value_err)?;
    json_to_py(py, &v)
}

// ---------------------------------------------------------------- KEM

/// Deterministic keypair from a 64-byte seed → (public_key, secret_key).
#[pyfunction]
fn kem_keygen(py: Python<'_>, seed: &[u8]) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let pair = kem::keygen(seed).map_err(value_err)?;
    Ok((
        bytes(py, pair.public_key.as_bytes()),
        bytes(py, pair.secret_key.as_bytes()),
    ))
}

/// Encapsulate against a public key with a 32-byte seed → (ciphertext,
/// shared_secret).
#[pyfunction]
fn kem_encaps(py: Python<'_>, public_key: &[u8], seed: &[u8]) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let (ct, ss) = kem::encaps(public_key, seed).map_err(value_err)?;
    Ok((bytes(py, ct.as_bytes()), bytes(py, ss.as_bytes())))
}

/// Recover the shared secret; invalid ciphertexts yield the implicit-
/// rejection secret rather than an error.
#[pyfunction]
fn kem_decaps(py: Python<'_>, secret_key: &[u8], ciphertext: &[u8]) -> PyResult<Py<PyAny>> {
    let ss = kem::decaps(secret_key, ciphertext).map_err(value_err)?;
    Ok(bytes(py, ss.as_bytes()))
}

// ------------------------------------------------------------ framing

#[allow(clippy::too_many_arguments)]
fn build_header(
    priority: u8,
    source: u8,
    destination: u8,
    destination_port: u8,
    source_port: u8,
    flags: Flags,
) -> PyResult<Header> {
    Ok(Header {
        priority: priority_from(priority)?,
        source,
        destination,
        destination_port,
        source_port,
        flags,
    })
}

/// Pack header fields into the 32-bit big-endian header word.
#[pyfunction]
#[pyo3(signature = (priority, source, destination, destination_port, source_port, hmac=false, xtea=false, rdp=false, crc=false))]
#[allow(clippy::too_many_arguments)]
fn pack_header(
    priority: u8,
    source: u8,
    destination: u8,
    destination_port: u8,
    source_port: u8,
    hmac: bool,
    xtea: bool,
    rdp: bool,
    crc: bool,
) -> PyResult<u32> {
    let header = build_header(
        priority,
        source,
        destination,
        destination_port,
        source_port,
        Flags { hmac, xtea, rdp, crc },
    )?;
    header.pack().map_err(value_err)
}

/// Split a 32-bit header word back into its fields.
#[pyfunction]
fn unpack_header(py: Python<'_>, word: u32) -> PyResult<Py<PyAny>> {
    let h = Header::unpack(word);
    let dict = PyDict::new_bound(py);
    dict.set_item("priority", h.priority as u8)?;
    dict.set_item("source", h.source)?;
    dict.set_item("destination", h.destination)?;
    dict.set_item("destination_port", h.destination_port)?;
    dict.set_item("source_port", h.source_port)?;
    dict.set_item("hmac", h.flags.hmac)?;
    dict.set_item("xtea", h.flags.xtea)?;
    dict.set_item("rdp", h.flags.rdp)?;
    dict.set_item("crc", h.flags.crc)?;
    Ok(dict.into_any().unbind())
}

/// Frame a payload for the wire; `hmac_key` appends the truncated
/// authentication trailer and `crc` the checksum.
#[pyfunction]
#[pyo3(signature = (payload, *, priority=2, source=1, destination=10, destination_port=20, source_port=20, mtu=200, crc=true, hmac_key=None))]
#[allow(clippy::too_many_arguments)]
fn seal_packet(
    py: Python<'_>,
    payload: &[u8],
    priority: u8,
    source: u8,
    destination: u8,
    destination_port: u8,
    source_port: u8,
    mtu: usize,
    crc: bool,
    hmac_key: Option<&[u8]>,
) -> PyResult<Py<PyAny>> {
    let header = build_header(
        priority,
        source,
        destination,
        destination_port,
        source_port,
        Flags::default(),
    )?;
    let sec = match hmac_key {
        Some(key) => LinkSecurity::with_key(key),
        None => LinkSecurity::default(),
    };
    let wire = csp::seal(header, payload, mtu, crc, &sec).map_err(value_err)?;
    Ok(bytes(py, &wire))
}

/// Check trailers and return the parsed packet; raises on any
/// integrity failure, exactly as the receive path would drop it.
#[pyfunction]
#[pyo3(signature = (wire, *, hmac_key=None, require_hmac=false))]
fn verify_packet(
    py: Python<'_>,
    wire: &[u8],
    hmac_key: Option<&[u8]>,
    require_hmac: bool,
) -> PyResult<Py<PyAny>> {
    let sec = match hmac_key {
        Some(key) => LinkSecurity::with_key(key),
        None => LinkSecurity::default(),
    };
    let packet = csp::verify(wire, &sec, require_hmac).map_err(value_err)?;
    let dict = PyDict::new_bound(py);
    dict.set_item("priority", packet.header.priority as u8)?;
    dict.set_item("source", packet.header.source)?;
    dict.set_item("destination", packet.header.destination)?;
    dict.set_item("destination_port", packet.header.destination_port)?;
    dict.set_item("source_port", packet.header.source_port)?;
    dict.set_item("hmac", packet.header.flags.hmac)?;
    dict.set_item("crc", packet.header.flags.crc)?;
    dict.set_item("payload", bytes(py, &packet.payload))?;
    Ok(dict.into_any().unbind())
}

/// Cut a payload into encoded fragments of at most `chunk_size` bytes
/// each (plus the 8-byte fragment header).
#[pyfunction]
fn fragment_payload(
    py: Python<'_>,
    transfer_id: u16,
    payload: &[u8],
    chunk_size: usize,
) -> PyResult<Py<PyAny>> {
    let frags = fragment::fragment(transfer_id, payload, chunk_size).map_err(value_err)?;
    let list = PyList::empty_bound(py);
    for f in &frags {
        list.append(bytes(py, &f.encode()))?;
    }
    Ok(list.into_any().unbind())
}

/// Rebuild a payload from encoded fragments, any order, duplicates
/// tolerated; raises if pieces are missing or conflict.
#[pyfunction]
fn reassemble(py: Python<'_>, fragments: Vec<Vec<u8>>) -> PyResult<Py<PyAny>> {
    let mut rx: Option<Reassembler> = None;
    for encoded in &fragments {
        let frag = Fragment::decode(encoded).map_err(value_err)?;
        let rx = rx.get_or_insert_with(|| Reassembler::new(frag.header.transfer_id));
        rx.accept(&frag).map_err(value_err)?;
    }
    let rx = rx.ok_or_else(|| value_err("no fragments given"))?;
    match rx.status() {
        ReassemblyStatus::Complete(payload) => Ok(bytes(py, &payload)),
        ReassemblyStatus::Incomplete { missing } => Err(value_err(format!(
            "incomplete: missing fragment indices {missing:?}"
        ))),
    }
}

// ------------------------------------------------------ session keys

/// Directional session keying derived from a KEM shared secret.
#[pyclass(name = "SessionKeys", frozen)]
struct PySessionKeys {
    inner: session::SessionKeys,
}

#[pymethods]
impl PySessionKeys {
    #[getter]
    fn aes_key(&self, py: Python<'_>) -> Py<PyAny> {
        bytes(py, &self.inner.aes_key)
    }

    #[getter]
    fn iv_salt(&self, py: Python<'_>) -> Py<PyAny> {
        bytes(py, &self.inner.iv_salt)
    }

    #[getter]
    fn mac_key_legacy(&self, py: Python<'_>) -> Py<PyAny> {
        bytes(py, &self.inner.mac_key_legacy)
    }
}

/// Expand a 32-byte shared secret into AES-256-GCM keying for one
/// direction; the two directions use the contexts "GS→SAT" / "SAT→GS".
#[pyfunction]
fn derive_session_keys(shared_secret: &[u8], context: &[u8]) -> PyResult<PySessionKeys> {
    let ss: [u8; kem::SHARED_SECRET_LEN] = shared_secret
        .try_into()
        .map_err(|_| value_err(format!("shared secret must be {} bytes", kem::SHARED_SECRET_LEN)))?;
    let ss = kem::SharedSecret(ss);
    Ok(PySessionKeys {
        inner: session::derive_keys(&ss, context),
    })
}

/// Authenticated encryption of one frame under a session's keys.
#[pyfunction]
#[pyo3(signature = (keys, sequence, plaintext, aad=b"" as &[u8]))]
fn encrypt_frame(
    py: Python<'_>,
    keys: &PySessionKeys,
    sequence: u64,
    plaintext: &[u8],
    aad: &[u8],
) -> PyResult<Py<PyAny>> {
    let frame = session::encrypt_frame(&keys.inner, sequence, plaintext, aad);
    Ok(bytes(py, &frame.to_bytes()))
}

/// Open one frame; raises on any authentication failure.
#[pyfunction]
#[pyo3(signature = (keys, frame, aad=b"" as &[u8]))]
fn decrypt_frame(
    py: Python<'_>,
    keys: &PySessionKeys,
    frame: &[u8],
    aad: &[u8],
) -> PyResult<Py<PyAny>> {
    let frame = session::SecureFrame::from_bytes(frame).map_err(value_err)?;
    let plain = session::decrypt_frame(&keys.inner, &frame, aad).map_err(value_err)?;
    Ok(bytes(py, &plain))
}

// ------------------------------------------------------------- legacy

#[pyfunction]
#[pyo3(signature = (key, block, rounds=32))]
fn xtea_encrypt_block(py: Python<'_>, key: &[u8], block: &[u8], rounds: u32) -> PyResult<Py<PyAny>> {
    let key: [u8; xtea::KEY_LEN] = key
        .try_into()
        .map_err(|_| value_err(format!("key must be {} bytes", xtea::KEY_LEN)))?;
    let block: [u8; xtea::BLOCK_LEN] = block
        .try_into()
        .map_err(|_| value_err(format!("block must be {} bytes", xtea::BLOCK_LEN)))?;
    Ok(bytes(py, &xtea::encrypt_block(&key, &block, rounds)))
}

#[pyfunction]
#[pyo3(signature = (key, block, rounds=32))]
fn xtea_decrypt_block(py: Python<'_>, key: &[u8], block: &[u8], rounds: u32) -> PyResult<Py<PyAny>> {
    let key: [u8; xtea::KEY_LEN] = key
        .try_into()
        .map_err(|_| value_err(format!("key must be {} bytes", xtea::KEY_LEN)))?;
    let block: [u8; xtea::BLOCK_LEN] = block
        .try_into()
        .map_err(|_| value_err(format!("block must be {} bytes", xtea::BLOCK_LEN)))?;
    Ok(bytes(py, &xtea::decrypt_block(&key, &block, rounds)))
}

/// Counter-mode XTEA over arbitrary data (the legacy link cipher);
/// encryption and decryption are the same operation.
#[pyfunction]
fn xtea_ctr(py: Python<'_>, key: &[u8], nonce: u64, data: &[u8]) -> PyResult<Py<PyAny>> {
    let key: [u8; xtea::KEY_LEN] = key
        .try_into()
        .map_err(|_| value_err(format!("key must be {} bytes", xtea::KEY_LEN)))?;
    let mut buf = data.to_vec();
    xtea::ctr_crypt(&key, nonce, &mut buf);
    Ok(bytes(py, &buf))
}

// ----------------------------------------------------------- analysis

/// Key-count and storage scaling for a fleet of `n` parties.
#[pyfunction]
fn keystore_analysis(py: Python<'_>, n: u64) -> PyResult<Py<PyAny>> {
    let row = keystore::analyze(n).map_err(value_err)?;
    serialize_to_py(py, &row)
}

/// Time the core primitives; returns the full report as a dict.
#[pyfunction]
#[pyo3(signature = (iterations=1000, ops=None))]
fn bench_primitives(py: Python<'_>, iterations: u32, ops: Option<Vec<String>>) -> PyResult<Py<PyAny>> {
    let report = bench::run(ops.as_deref(), iterations).map_err(value_err)?;
    serialize_to_py(py, &report)
}

// ---------------------------------------------------------- handshake

/// Content hash binding a session id to the exact KEM objects.
#[pyfunction]
fn transcript_hash(py: Python<'_>, session_id: u16, public_key: &[u8], ciphertext: &[u8]) -> Py<PyAny> {
    bytes(py, &handshake::transcript_hash(session_id, public_key, ciphertext))
}

/// Truncated confirmation tag over a transcript for one direction.
#[pyfunction]
fn confirm_tag(
    py: Python<'_>,
    shared_secret: &[u8],
    transcript: &[u8],
    direction: &[u8],
) -> PyResult<Py<PyAny>> {
    let ss: [u8; kem::SHARED_SECRET_LEN] = shared_secret
        .try_into()
        .map_err(|_| value_err(format!("shared secret must be {} bytes", kem::SHARED_SECRET_LEN)))?;
    let transcript: [u8; 32] = transcript
        .try_into()
        .map_err(|_| value_err("transcript must be 32 bytes"))?;
    let tag = handshake::confirm_tag(&kem::SharedSecret(ss), &transcript, direction);
    Ok(bytes(py, &tag))
}

/// Simulate one (or several) complete key exchanges over scheduled
/// passes; returns the accounting report, per-side handshake stats,
/// and optionally the packet trace as parsed rows.
#[pyfunction]
#[pyo3(signature = (*, seed=0, loss=0.0, corrupt=0.0, rate=9600, mtu=200, period_s=5700, duration_s=480, offset_s=0, turnaround_us=0, max_passes=10, key_holder="ground", snapshot_between_passes=false, authenticated=true, with_trace=false))]
#[allow(clippy::too_many_arguments)]
fn run_exchange(
    py: Python<'_>,
    seed: u64,
    loss: f64,
    corrupt: f64,
    rate: u64,
    mtu: usize,
    period_s: u64,
    duration_s: u64,
    offset_s: u64,
    turnaround_us: u64,
    max_passes: u32,
    key_holder: &str,
    snapshot_between_passes: bool,
    authenticated: bool,
    with_trace: bool,
) -> PyResult<Py<PyAny>> {
    let mut config = SimConfig::with_seed(seed);
    config.schedule = PassSchedule {
        orbit_period_s: period_s,
        pass_duration_s: duration_s,
        start_offset_s: offset_s,
    };
    config.link = LinkModel {
        data_rate_bps: rate,
        loss_prob: loss,
        corrupt_prob: corrupt,
        half_duplex_turnaround_us: turnaround_us,
        rng_seed: seed,
    };
    config.mtu = mtu;
    config.key_holder = match key_holder {
        "ground" => Station::Ground,
        "satellite" => Station::Satellite,
        other => return Err(value_err(format!("key_holder {other:?}"))),
    };
    config.max_passes = max_passes;
    config.snapshot_between_passes = snapshot_between_passes;
    if !authenticated {
        config.hmac_key = None;
    }

    let outcome = sim::run_exchange(&config).map_err(value_err)?;
    let air = sim::bytes_over_air(&outcome.trace, &config.schedule);

    let dict = PyDict::new_bound(py);
    dict.set_item("report", serialize_to_py(py, &outcome.report)?)?;
    dict.set_item("air", serialize_to_py(py, &air)?)?;
    if with_trace {
        let rows = PyList::empty_bound(py);
        for line in outcome.trace.to_ndjson().lines() {
            let v: serde_json::Value = serde_json::from_str(line).map_err(value_err)?;
            rows.append(json_to_py(py, &v)?)?;
        }
        dict.set_item("trace", rows)?;
    }
    Ok(dict.into_any().unbind())
}

#[pymodule]
fn orbitkem(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PUBLIC_KEY_LEN", kem::PUBLIC_KEY_LEN)?;
    m.add("SECRET_KEY_LEN", kem::SECRET_KEY_LEN)?;
    m.add("CIPHERTEXT_LEN", kem::CIPHERTEXT_LEN)?;
    m.add("SHARED_SECRET_LEN", kem::SHARED_SECRET_LEN)?;
    m.add("KEYGEN_SEED_LEN", kem::KEYGEN_SEED_LEN)?;
    m.add("ENCAPS_SEED_LEN", kem::ENCAPS_SEED_LEN)?;
    m.add("FRAGMENT_HEADER_LEN", fragment::FRAGMENT_HEADER_LEN)?;
    m.add("CONTEXT_GROUND_TO_SAT", session::CONTEXT_GROUND_TO_SAT)?;
    m.add("CONTEXT_SAT_TO_GROUND", session::CONTEXT_SAT_TO_GROUND)?;

    m.add_class::<PySessionKeys>()?;
    m.add_function(wrap_pyfunction!(kem_keygen, m)?)?;
    m.add_function(wrap_pyfunction!(kem_encaps, m)?)?;
    m.add_function(wrap_pyfunction!(kem_decaps, m)?)?;
    m.add_function(wrap_pyfunction!(pack_header, m)?)?;
    m.add_function(wrap_pyfunction!(unpack_header, m)?)?;
    m.add_function(wrap_pyfunction!(seal_packet, m)?)?;
    m.add_function(wrap_pyfunction!(verify_packet, m)?)?;
    m.add_function(wrap_pyfunction!(fragment_payload, m)?)?;
    m.add_function(wrap_pyfunction!(reassemble, m)?)?;
    m.add_function(wrap_pyfunction!(derive_session_keys, m)?)?;
    m.add_function(wrap_pyfunction!(encrypt_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decrypt_frame, m)?)?;
    m.add_function(wrap_pyfunction!(xtea_encrypt_block, m)?)?;
    m.add_function(wrap_pyfunction!(xtea_decrypt_block, m)?)?;
    m.add_function(wrap_pyfunction!(xtea_ctr, m)?)?;
    m.add_function(wrap_pyfunction!(keystore_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(bench_primitives, m)?)?;
    m.add_function(wrap_pyfunction!(transcript_hash, m)?)?;
    m.add_function(wrap_pyfunction!(confirm_tag, m)?)?;
    m.add_function(wrap_pyfunction!(run_exchange, m)?)?;
    Ok(())
}
