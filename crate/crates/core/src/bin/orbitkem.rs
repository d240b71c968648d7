//! Command-line surface: KAT conformance runs, simulated exchanges,
//! key-management scaling tables, primitive benchmarks, and a packet
//! hex-dump — each emitting a report that embeds the exact
//! configuration that produced it.
//!
//! Exit codes: 0 success, 1 functional failure (a KAT vector or an
//! integrity check failed, an exchange did not establish), 2 usage
//! error (bad flags, unreadable or malformed input).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use orbitkem_core::csp::{self, Header, LinkSecurity};
use orbitkem_core::handshake::Station;
use orbitkem_core::kem::kat;
use orbitkem_core::sim::{
    bytes_over_air, run_exchange, LinkModel, PassSchedule, SimConfig, SimError,
};
use orbitkem_core::{bench, keystore};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "orbitkem", version, about = "Kyber-512 key exchange over a framed satellite link: conformance, simulation, and analysis tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every known-answer vector in a response file byte-exactly.
    Kat(KatArgs),
    /// Simulate key exchanges over scheduled passes and report.
    Exchange(ExchangeArgs),
    /// Tabulate key-count and storage scaling for a fleet.
    Keystore(KeystoreArgs),
    /// Time the underlying primitives on this machine.
    Bench(BenchArgs),
    /// Parse one packet's hex image field by field.
    DumpPacket(DumpPacketArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Holder {
    Ground,
    Satellite,
}

impl From<Holder> for Station {
    fn from(h: Holder) -> Station {
        match h {
            Holder::Ground => Station::Ground,
            Holder::Satellite => Station::Satellite,
        }
    }
}

#[derive(Args)]
struct KatArgs {
    /// Known-answer file in request/response format.
    file: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ExchangeArgs {
    /// Channel RNG seed (sweeps use seed, seed+1, …).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeded runs.
    #[arg(long)]
    seeds: Option<u32>,
    /// Packet loss probability in [0, 1).
    #[arg(long, value_parser = parse_prob)]
    loss: Option<f64>,
    /// Packet corruption probability in [0, 1).
    #[arg(long, value_parser = parse_prob)]
    corrupt: Option<f64>,
    /// Link data rate, bits per second.
    #[arg(long)]
    rate: Option<u64>,
    /// Link MTU in bytes.
    #[arg(long)]
    mtu: Option<usize>,
    /// Orbit period, seconds.
    #[arg(long)]
    period_s: Option<u64>,
    /// Pass duration, seconds.
    #[arg(long)]
    duration_s: Option<u64>,
    /// First pass opening offset, seconds.
    #[arg(long)]
    offset_s: Option<u64>,
    /// Half-duplex turnaround, microseconds.
    #[arg(long)]
    turnaround_us: Option<u64>,
    /// Give up after this many passes.
    #[arg(long)]
    max_passes: Option<u32>,
    /// Which station holds the long-term KEM key.
    #[arg(long, value_enum)]
    key_holder: Option<Holder>,
    /// Serialize both sessions at pass close, restore at next open.
    #[arg(long)]
    snapshot_between_passes: bool,
    /// Run the link without HMAC authentication.
    #[arg(long)]
    unauthenticated: bool,
    /// Defaults file, `key = value` per line; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the packet trace as newline-delimited JSON (single run only).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct KeystoreArgs {
    /// Fleet sizes to tabulate.
    #[arg(required = true, value_parser = clap::value_parser!(u64).range(1..))]
    n: Vec<u64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Samples per operation (floored at 100).
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u32).range(1..))]
    iterations: u32,
    /// Operations to run (repeatable); all when omitted.
    #[arg(long = "op")]
    ops: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpPacketArgs {
    /// Packet bytes as hex (whitespace tolerated), or `-` for stdin.
    hex: String,
    /// Link HMAC key as hex; enables authentication checking.
    #[arg(long)]
    key: Option<String>,
}

fn parse_prob(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} outside [0, 1)"))
    }
}

fn parse_hex(s: &str) -> Result<Vec<u8>, String> {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    hex::decode(&compact).map_err(|e| format!("{e}"))
}

/// Failures after argument parsing: usage problems exit 2, functional
/// problems exit 1.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn report(self) -> ExitCode {
        match self {
            CliError::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            CliError::Failure(msg) => {
                eprintln!("{msg}");
                ExitCode::from(1)
            }
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// The exact parameters a command ran with, embedded in its report so
/// the run can be reproduced from the artifact alone.
#[derive(Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum RunConfig {
    Kat {
        file: String,
    },
    Exchange {
        seed: u64,
        seeds: u32,
        loss: f64,
        corrupt: f64,
        rate: u64,
        mtu: usize,
        period_s: u64,
        duration_s: u64,
        offset_s: u64,
        turnaround_us: u64,
        max_passes: u32,
        key_holder: Holder,
        snapshot_between_passes: bool,
        authenticated: bool,
    },
    Keystore {
        sizes: Vec<u64>,
    },
    Bench {
        iterations: u32,
        ops: Option<Vec<String>>,
    },
}

#[derive(Serialize)]
struct Report<T: Serialize> {
    config: RunConfig,
    version: &'static str,
    #[serde(flatten)]
    body: T,
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(report: &T) -> String {
    serde_json::to_string_pretty(report).expect("reports serialize")
}

/// One `# config: {...}` line keeps CSV tables self-describing without
/// breaking comment-aware readers.
fn csv_preamble(config: &RunConfig) -> String {
    format!(
        "# config: {}\n# version: {VERSION}\n",
        serde_json::to_string(config).expect("config serializes")
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.command {
        Command::Kat(args) => cmd_kat(args),
        Command::Exchange(args) => cmd_exchange(args),
        Command::Keystore(args) => cmd_keystore(args),
        Command::Bench(args) => cmd_bench(args),
        Command::DumpPacket(args) => cmd_dump_packet(args),
    };
    match run {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

#[derive(Serialize)]
struct KatFailure {
    vector: usize,
    field: &'static str,
}

#[derive(Serialize)]
struct KatBody {
    vectors: usize,
    passed: usize,
    failures: Vec<KatFailure>,
    all_passed: bool,
}

fn cmd_kat(args: KatArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.file)
        .map_err(|e| usage(format!("cannot read {}: {e}", args.file.display())))?;
    let vectors = kat::parse_rsp(&text)
        .map_err(|e| usage(format!("{}: {e}", args.file.display())))?;

    let mut failures = Vec::new();
    for v in &vectors {
        match kat::verify_vector(v) {
            Ok(()) => eprintln!("vector {:3}: pass", v.count),
            Err(kat::KatError::Mismatch { count, field }) => {
                eprintln!("vector {count:3}: FAIL ({field} mismatch)");
                failures.push(KatFailure { vector: count, field });
            }
            Err(other) => return Err(usage(format!("{other}"))),
        }
    }

    let all_passed = failures.is_empty();
    let body = KatBody {
        vectors: vectors.len(),
        passed: vectors.len() - failures.len(),
        failures,
        all_passed,
    };
    let report = Report {
        config: RunConfig::Kat {
            file: args.file.display().to_string(),
        },
        version: VERSION,
        body,
    };
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut t = csv_preamble(&report.config);
            t.push_str("vector,result,field\n");
            let failed: BTreeMap<usize, &str> = report
                .body
                .failures
                .iter()
                .map(|f| (f.vector, f.field))
                .collect();
            for v in &vectors {
                match failed.get(&v.count) {
                    Some(field) => {
                        let _ = writeln!(t, "{},fail,{}", v.count, field);
                    }
                    None => {
                        let _ = writeln!(t, "{},pass,", v.count);
                    }
                }
            }
            t
        }
    };
    emit(args.out.as_ref(), &text)?;

    if all_passed {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "kat: {} of {} vectors failed",
            report.body.failures.len(),
            report.body.vectors
        )))
    }
}

/// Exchange defaults, overridable by a config file, overridable by
/// flags, in that order.
struct ExchangeParams {
    seed: u64,
    seeds: u32,
    loss: f64,
    corrupt: f64,
    rate: u64,
    mtu: usize,
    period_s: u64,
    duration_s: u64,
    offset_s: u64,
    turnaround_us: u64,
    max_passes: u32,
    key_holder: Holder,
    snapshot_between_passes: bool,
    authenticated: bool,
    format: Format,
}

fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key = value", idx + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match map.remove(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| usage(format!("config key {key}: {e}"))),
    }
}

fn resolve_params(args: &ExchangeArgs) -> Result<ExchangeParams, CliError> {
    let mut file = match &args.config {
        None => BTreeMap::new(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            parse_config_file(&text)?
        }
    };

    let key_holder_file = match file.remove("key_holder") {
        None => None,
        Some(raw) => Some(match raw.as_str() {
            "ground" => Holder::Ground,
            "satellite" => Holder::Satellite,
            other => return Err(usage(format!("config key key_holder: {other:?}"))),
        }),
    };
    let format_file = match file.remove("format") {
        None => None,
        Some(raw) => Some(match raw.as_str() {
            "json" => Format::Json,
            "csv" => Format::Csv,
            other => return Err(usage(format!("config key format: {other:?}"))),
        }),
    };
    let loss_file: Option<f64> = take(&mut file, "loss")?;
    let corrupt_file: Option<f64> = take(&mut file, "corrupt")?;
    for p in [loss_file, corrupt_file].into_iter().flatten() {
        parse_prob(&p.to_string()).map_err(usage)?;
    }

    let params = ExchangeParams {
        seed: args.seed.or(take(&mut file, "seed")?).unwrap_or(0),
        seeds: args.seeds.or(take(&mut file, "seeds")?).unwrap_or(1),
        loss: args.loss.or(loss_file).unwrap_or(0.0),
        corrupt: args.corrupt.or(corrupt_file).unwrap_or(0.0),
        rate: args.rate.or(take(&mut file, "rate")?).unwrap_or(9600),
        mtu: args
            .mtu
            .or(take(&mut file, "mtu")?)
            .unwrap_or(csp::DEFAULT_MTU),
        period_s: args.period_s.or(take(&mut file, "period_s")?).unwrap_or(5700),
        duration_s: args
            .duration_s
            .or(take(&mut file, "duration_s")?)
            .unwrap_or(480),
        offset_s: args.offset_s.or(take(&mut file, "offset_s")?).unwrap_or(0),
        turnaround_us: args
            .turnaround_us
            .or(take(&mut file, "turnaround_us")?)
            .unwrap_or(0),
        max_passes: args
            .max_passes
            .or(take(&mut file, "max_passes")?)
            .unwrap_or(10),
        key_holder: args.key_holder.or(key_holder_file).unwrap_or(Holder::Ground),
        snapshot_between_passes: args.snapshot_between_passes
            || take(&mut file, "snapshot_between_passes")?.unwrap_or(false),
        authenticated: !(args.unauthenticated
            || take(&mut file, "unauthenticated")?.unwrap_or(false)),
        format: args.format.or(format_file).unwrap_or(Format::Json),
    };

    if let Some(stray) = file.keys().next() {
        return Err(usage(format!("config key {stray:?} is not recognized")));
    }
    if params.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    if args.trace.is_some() && params.seeds != 1 {
        return Err(usage("--trace needs a single run (--seeds 1)"));
    }
    Ok(params)
}

impl ExchangeParams {
    fn sim_config(&self, seed: u64) -> SimConfig {
        let mut config = SimConfig::with_seed(seed);
        config.schedule = PassSchedule {
            orbit_period_s: self.period_s,
            pass_duration_s: self.duration_s,
            start_offset_s: self.offset_s,
        };
        config.link = LinkModel {
            data_rate_bps: self.rate,
            loss_prob: self.loss,
            corrupt_prob: self.corrupt,
            half_duplex_turnaround_us: self.turnaround_us,
            rng_seed: seed,
        };
        config.mtu = self.mtu;
        config.key_holder = self.key_holder.into();
        config.max_passes = self.max_passes;
        config.snapshot_between_passes = self.snapshot_between_passes;
        if !self.authenticated {
            config.hmac_key = None;
        }
        config
    }

    fn run_config(&self) -> RunConfig {
        RunConfig::Exchange {
            seed: self.seed,
            seeds: self.seeds,
            loss: self.loss,
            corrupt: self.corrupt,
            rate: self.rate,
            mtu: self.mtu,
            period_s: self.period_s,
            duration_s: self.duration_s,
            offset_s: self.offset_s,
            turnaround_us: self.turnaround_us,
            max_passes: self.max_passes,
            key_holder: self.key_holder,
            snapshot_between_passes: self.snapshot_between_passes,
            authenticated: self.authenticated,
        }
    }
}

#[derive(Serialize)]
struct RunSummary {
    seed: u64,
    established: bool,
    failed: Option<String>,
    horizon_exhausted: bool,
    passes_used: u32,
    finished_at_us: Option<u64>,
    packets_sent: u64,
    delivered: u64,
    lost: u64,
    corrupted: u64,
    out_of_window: u64,
    retransmissions: u64,
    bytes_sent: u64,
    uplink_bytes: u64,
    downlink_bytes: u64,
    ss_fingerprint: Option<String>,
}

#[derive(Serialize)]
struct ExchangeBody {
    established: bool,
    success_rate: f64,
    /// passes_used → how many runs needed that many.
    pass_histogram: BTreeMap<u32, u32>,
    runs: Vec<RunSummary>,
}

fn cmd_exchange(args: ExchangeArgs) -> Result<(), CliError> {
    let params = resolve_params(&args)?;
    let mut runs = Vec::with_capacity(params.seeds as usize);
    let mut histogram: BTreeMap<u32, u32> = BTreeMap::new();
    let mut established_runs = 0u32;

    for i in 0..params.seeds {
        let seed = params.seed + i as u64;
        let config = params.sim_config(seed);
        match run_exchange(&config) {
            Ok(outcome) => {
                let air = bytes_over_air(&outcome.trace, &config.schedule);
                let r = &outcome.report;
                if r.established {
                    established_runs += 1;
                    *histogram.entry(r.passes_used).or_default() += 1;
                }
                if let Some(path) = &args.trace {
                    fs::write(path, outcome.trace.to_ndjson())
                        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
                }
                runs.push(RunSummary {
                    seed,
                    established: r.established,
                    failed: r
                        .failed
                        .map(|f| format!("{:?}: {:?}", f.side, f.reason)),
                    horizon_exhausted: false,
                    passes_used: r.passes_used,
                    finished_at_us: r.finished_at_us,
                    packets_sent: r.packets_sent,
                    delivered: r.delivered,
                    lost: r.lost,
                    corrupted: r.corrupted,
                    out_of_window: r.out_of_window,
                    retransmissions: r.retransmissions,
                    bytes_sent: r.bytes_sent,
                    uplink_bytes: air.uplink_bytes,
                    downlink_bytes: air.downlink_bytes,
                    ss_fingerprint: r.ss_fingerprint.clone(),
                });
            }
            Err(SimError::HorizonExhausted { passes }) => runs.push(RunSummary {
                seed,
                established: false,
                failed: None,
                horizon_exhausted: true,
                passes_used: passes,
                finished_at_us: None,
                packets_sent: 0,
                delivered: 0,
                lost: 0,
                corrupted: 0,
                out_of_window: 0,
                retransmissions: 0,
                bytes_sent: 0,
                uplink_bytes: 0,
                downlink_bytes: 0,
                ss_fingerprint: None,
            }),
            Err(other) => return Err(usage(format!("{other}"))),
        }
    }

    let body = ExchangeBody {
        established: established_runs == params.seeds,
        success_rate: established_runs as f64 / params.seeds as f64,
        pass_histogram: histogram,
        runs,
    };
    let established = body.established;
    let report = Report {
        config: params.run_config(),
        version: VERSION,
        body,
    };
    let text = match params.format {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut t = csv_preamble(&report.config);
            t.push_str(
                "seed,established,failed,horizon_exhausted,passes_used,finished_at_us,\
                 packets_sent,delivered,lost,corrupted,out_of_window,retransmissions,\
                 bytes_sent,uplink_bytes,downlink_bytes,ss_fingerprint\n",
            );
            for r in &report.body.runs {
                let _ = writeln!(
                    t,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.seed,
                    r.established,
                    r.failed.as_deref().unwrap_or(""),
                    r.horizon_exhausted,
                    r.passes_used,
                    r.finished_at_us.map_or(String::new(), |v| v.to_string()),
                    r.packets_sent,
                    r.delivered,
                    r.lost,
                    r.corrupted,
                    r.out_of_window,
                    r.retransmissions,
                    r.bytes_sent,
                    r.uplink_bytes,
                    r.downlink_bytes,
                    r.ss_fingerprint.as_deref().unwrap_or(""),
                );
            }
            t
        }
    };
    emit(args.out.as_ref(), &text)?;

    if established {
        Ok(())
    } else {
        let failures = params.seeds - established_runs;
        Err(CliError::Failure(format!(
            "exchange: {failures} of {} runs did not establish",
            params.seeds
        )))
    }
}

#[derive(Serialize)]
struct KeystoreBody {
    rows: Vec<keystore::KeystoreRow>,
}

fn cmd_keystore(args: KeystoreArgs) -> Result<(), CliError> {
    let rows = keystore::table(&args.n).map_err(|e| usage(format!("{e}")))?;
    let report = Report {
        config: RunConfig::Keystore {
            sizes: args.n.clone(),
        },
        version: VERSION,
        body: KeystoreBody { rows },
    };
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut t = csv_preamble(&report.config);
            t.push_str("n,pairwise_keys,pairwise_bytes,keypairs,pk_keys,keypair_bytes\n");
            for r in &report.body.rows {
                let _ = writeln!(
                    t,
                    "{},{},{},{},{},{}",
                    r.n, r.pairwise_keys, r.pairwise_bytes, r.keypairs, r.pk_keys, r.keypair_bytes
                );
            }
            t
        }
    };
    emit(args.out.as_ref(), &text)
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let ops = if args.ops.is_empty() {
        None
    } else {
        Some(args.ops.as_slice())
    };
    let report_body = bench::run(ops, args.iterations).map_err(|e| usage(format!("{e}")))?;
    if let Some(ratio) = report_body.decaps_over_encaps {
        eprintln!("decaps/encaps median ratio: {ratio:.2}");
    }
    let report = Report {
        config: RunConfig::Bench {
            iterations: args.iterations,
            ops: ops.map(<[String]>::to_vec),
        },
        version: VERSION,
        body: report_body,
    };
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut t = csv_preamble(&report.config);
            t.push_str("name,iterations,median_ns,mean_ns,p95_ns,bytes_per_iter\n");
            for r in &report.body.rows {
                let _ = writeln!(
                    t,
                    "{},{},{},{},{},{}",
                    r.name, r.iterations, r.median_ns, r.mean_ns, r.p95_ns, r.bytes_per_iter
                );
            }
            t
        }
    };
    emit(args.out.as_ref(), &text)
}

fn cmd_dump_packet(args: DumpPacketArgs) -> Result<(), CliError> {
    let raw = if args.hex == "-" {
        let mut buf = String::new();
        use std::io::Read;
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(|e| usage(format!("stdin: {e}")))?;
        buf
    } else {
        args.hex.clone()
    };
    let key = match &args.key {
        Some(k) => Some(parse_hex(k).map_err(|e| usage(format!("--key: {e}")))?),
        None => None,
    };
    let wire = parse_hex(&raw).map_err(usage)?;
    if wire.len() < 4 {
        return Err(usage(format!(
            "packet is {} bytes; the header alone is 4",
            wire.len()
        )));
    }

    let header = Header::from_bytes(&wire[..4].try_into().expect("length checked"));
    let word = u32::from_be_bytes(wire[..4].try_into().expect("length checked"));
    println!("length        {} bytes", wire.len());
    println!("header        0x{word:08X}");
    println!("  priority    {:?}", header.priority);
    println!("  source      {}", header.source);
    println!("  destination {}", header.destination);
    println!("  dst port    {}", header.destination_port);
    println!("  src port    {}", header.source_port);
    println!(
        "  flags       hmac={} xtea={} rdp={} crc={}",
        header.flags.hmac, header.flags.xtea, header.flags.rdp, header.flags.crc
    );

    // Walk the trailers back from the end, as the flags dictate.
    let mut end = wire.len();
    let mut hmac_bytes: Option<&[u8]> = None;
    let mut crc_bytes: Option<&[u8]> = None;
    if header.flags.hmac {
        if end < csp::HEADER_LEN + csp::HMAC_LEN {
            return Err(usage("hmac flag set but packet too short for the trailer"));
        }
        end -= csp::HMAC_LEN;
        hmac_bytes = Some(&wire[end..end + csp::HMAC_LEN]);
    }
    if header.flags.crc {
        if end < csp::HEADER_LEN + csp::CRC_LEN {
            return Err(usage("crc flag set but packet too short for the trailer"));
        }
        end -= csp::CRC_LEN;
        crc_bytes = Some(&wire[end..end + csp::CRC_LEN]);
    }
    let payload = &wire[csp::HEADER_LEN..end];
    println!("payload       {} bytes", payload.len());
    println!("  hex         {}", hex::encode(payload));
    let mut crc_ok = true;
    if let Some(crc) = crc_bytes {
        let want = crc32fast::hash(&wire[..end]).to_be_bytes();
        crc_ok = crc == want;
        println!(
            "crc trailer   {} ({})",
            hex::encode(crc),
            if crc_ok {
                "valid".to_string()
            } else {
                format!("INVALID, computed {}", hex::encode(want))
            }
        );
    }
    if let Some(mac) = hmac_bytes {
        println!("hmac trailer  {}", hex::encode(mac));
    }

    // Re-verify exactly as a receiver would, when we can.
    if key.is_some() || !header.flags.hmac {
        let sec = match &key {
            Some(key) => LinkSecurity::with_key(key),
            None => LinkSecurity::default(),
        };
        match csp::verify(&wire, &sec, false) {
            Ok(_) => println!("verify        ok"),
            Err(e) => {
                println!("verify        FAILED: {e}");
                return Err(CliError::Failure(format!("dump-packet: {e}")));
            }
        }
    } else {
        println!("verify        crc only (hmac present, no --key)");
        if !crc_ok {
            return Err(CliError::Failure("dump-packet: crc mismatch".to_string()));
        }
    }
    Ok(())
}
