//! `qkd`: command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O or internal failure |
//! | 2 | bad arguments or config |
//! | 3 | a session aborted in estimation |
//! | 4 | a session found no feasible reconciliation schedule |
//! | 5 | a session failed verification |
//! | 6 | a session ran out of slots |
//! | 7 | an accepted session produced unequal keys |
//! | 8 | a sweep or budget run emitted flagged rows |
//! | 9 | a framed stream failed to decode |

use std::fs;
use std::io::{self, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qkd_core::bitops::BitVector;
use qkd_core::config::{ExperimentConfig, FrameDirection, TransportKind};
use qkd_core::framing::{chunk_key, decode_stream, encode_stream};
use qkd_core::harness::{bound_table, budget_csv, min_qubits_for_length, session_row, sweep_csv, sweep_rates, SESSION_HEADER};
use qkd_core::privacy::ExportedKey;
use qkd_core::session::{run_session_over, Planner, SessionConfig, SessionOutcome, SessionStatus};
use qkd_core::wire::{MemoryTransport, StreamTransport};
use qkd_core::{ProtocolParams, SecrecyMode};

#[derive(Parser)]
#[command(name = "qkd", version, about = "Finite-key BB84 simulator and key-rate calculator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set trials=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Run full sessions and write one CSV row per session.
    Session {
        #[command(flatten)]
        common: Common,
        /// Directory for the final keys of accepted sessions.
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Empirical and theoretical key rates over the config grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Fewest received qubits for a target general-secrecy key length.
    Budget {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form key-length bounds over the config grid.
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Encode a key file into packet symbols, or decode symbols back.
    Frame {
        #[command(flatten)]
        common: Common,
        /// Input file; overrides `frame_input`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Decode instead of encode; overrides `frame_direction`.
        #[arg(long)]
        decode: bool,
    },
}

/// Failures with a dedicated exit code.
#[derive(Debug)]
enum Outcome {
    Session(SessionStatus),
    Mismatch,
    Flagged(usize),
    Framing(String),
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Session(s) => write!(f, "session ended with status {}", s.as_str()),
            Outcome::Mismatch => write!(f, "accepted session produced unequal keys"),
            Outcome::Flagged(n) => write!(f, "{n} rows flagged"),
            Outcome::Framing(e) => write!(f, "framing: {e}"),
        }
    }
}

impl std::error::Error for Outcome {}

impl Outcome {
    fn code(&self) -> u8 {
        match self {
            Outcome::Session(SessionStatus::Accepted) => 0,
            Outcome::Session(SessionStatus::EstimationAbort) => 3,
            Outcome::Session(SessionStatus::ReconciliationInfeasible) => 4,
            Outcome::Session(SessionStatus::VerificationAbort) => 5,
            Outcome::Session(SessionStatus::SlotBudgetExceeded) => 6,
            Outcome::Mismatch => 7,
            Outcome::Flagged(_) => 8,
            Outcome::Framing(_) => 9,
        }
    }
}

#[derive(Debug)]
struct ConfigProblem(String);

impl std::fmt::Display for ConfigProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigProblem {}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    for o in &common.overrides {
        let Some((key, _)) = o.split_once('=') else {
            return Err(ConfigProblem(format!("--set expects KEY=VALUE, got `{o}`")).into());
        };
        let key = key.trim();
        lines.retain(|l| l.split('#').next().and_then(|a| a.split_once('=')).is_none_or(|(k, _)| k.trim() != key));
        lines.push(o.clone());
    }
    ExperimentConfig::parse(&lines.join("\n")).map_err(|e| ConfigProblem(e.to_string()).into())
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(bytes).context("writing stdout"),
    }
}

fn tcp_pair() -> Result<(StreamTransport<TcpStream>, StreamTransport<TcpStream>)> {
    let listener = TcpListener::bind("127.0.0.1:0").context("binding loopback listener")?;
    let client = TcpStream::connect(listener.local_addr()?).context("connecting")?;
    let (server, _) = listener.accept().context("accepting")?;
    Ok((StreamTransport::new(client), StreamTransport::new(server)))
}

fn run_one(cfg: &ExperimentConfig, scfg: &SessionConfig, planner: &Planner) -> Result<SessionOutcome> {
    Ok(match cfg.transport {
        TransportKind::Memory => {
            let (a, b) = MemoryTransport::pair();
            run_session_over(scfg, planner, a, b)?
        }
        TransportKind::Tcp => {
            let (a, b) = tcp_pair()?;
            run_session_over(scfg, planner, a, b)?
        }
    })
}

fn save_keys(dir: &Path, preset: &str, scfg: &SessionConfig, out: &SessionOutcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let entries = [
        (SecrecyMode::General, &out.alice.gs, scfg.budget.eps_sec()),
        (SecrecyMode::Pragmatic, &out.alice.ps, scfg.budget.delta_sec()),
    ];
    for (mode, key, security) in entries {
        if let Some(key) = key {
            let file = dir.join(format!("{preset}-{}-{}.key", scfg.session, mode.as_str()));
            let text = ExportedKey { mode, security, key: key.clone() }.to_text();
            fs::write(&file, text).with_context(|| format!("writing {}", file.display()))?;
        }
    }
    Ok(())
}

fn cmd_session(common: &Common, keys: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let planner = Planner::default();
    let mut csv = format!("{SESSION_HEADER}\n");
    let mut first_failure: Option<Outcome> = None;
    let mode = cfg.modes[0];
    let mut index = 0u64;
    for ch in &cfg.channels {
        for &p_z in &cfg.pz_list {
            for &n in &cfg.n_list {
                let plan = qkd_core::harness::plan_point(&cfg, &ch.model, mode, n, p_z)?;
                let params: ProtocolParams = plan.params;
                let mut scfg = SessionConfig::new(params, ch.model, cfg.seed);
                scfg.budget = cfg.budget;
                scfg.modes = cfg.modes.clone();
                scfg.batch_slots = cfg.batch;
                for _ in 0..cfg.trials {
                    scfg.session = index;
                    index += 1;
                    let out = run_one(&cfg, &scfg, &planner)?;
                    csv.push_str(&session_row(&ch.name, &scfg, &out));
                    csv.push('\n');
                    if let Some(dir) = keys {
                        save_keys(dir, &ch.name, &scfg, &out)?;
                    }
                    if first_failure.is_none() {
                        if out.key_mismatch() {
                            first_failure = Some(Outcome::Mismatch);
                        } else if out.status != SessionStatus::Accepted {
                            first_failure = Some(Outcome::Session(out.status));
                        }
                    }
                }
            }
        }
    }
    write_out(common.out.as_deref(), csv.as_bytes())?;
    match first_failure {
        Some(f) => Err(f.into()),
        None => Ok(()),
    }
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let rows = sweep_rates(&cfg, &Planner::default());
    write_out(common.out.as_deref(), sweep_csv(&rows).as_bytes())?;
    let flagged = rows.iter().filter(|r| !r.flag.is_empty()).count();
    if flagged > 0 {
        return Err(Outcome::Flagged(flagged).into());
    }
    Ok(())
}

fn cmd_budget(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let rows = min_qubits_for_length(cfg.ell_target, &cfg.q_grid, &cfg.budget, cfg.eps_rob_max)?;
    write_out(common.out.as_deref(), budget_csv(&rows).as_bytes())?;
    let flagged = rows.iter().filter(|r| r.best.is_none()).count();
    if flagged > 0 {
        return Err(Outcome::Flagged(flagged).into());
    }
    Ok(())
}

fn cmd_bounds(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    write_out(common.out.as_deref(), bound_table(&cfg)?.as_bytes())
}

/// Reads a key file: either the exported-key text form or bare hex with an
/// optional `length=` line before it.
fn read_key(text: &str) -> Result<BitVector> {
    if let Ok(k) = ExportedKey::from_text(text) {
        return Ok(k.key);
    }
    let mut len = None;
    let mut hex = String::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        match line.strip_prefix("length=") {
            Some(v) => len = Some(v.parse::<usize>().context("length")?),
            None => hex.push_str(line),
        }
    }
    let len = len.unwrap_or(hex.len() * 4);
    BitVector::from_hex(&hex, len).map_err(|e| ConfigProblem(format!("bad key file: {e}")).into())
}

fn cmd_frame(common: &Common, input: Option<&Path>, decode: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let path = match (input, &cfg.frame_input) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => bail!(ConfigProblem("frame needs --input or frame_input".into())),
    };
    let decode = decode || cfg.frame_direction == FrameDirection::Decode;
    if decode {
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let chunks = decode_stream(&bytes).map_err(|e| Outcome::Framing(e.to_string()))?;
        let mut text = String::new();
        for c in chunks {
            text.push_str(&c.to_hex());
            text.push('\n');
        }
        write_out(common.out.as_deref(), text.as_bytes())
    } else {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let key = read_key(&text)?;
        let bytes = encode_stream(&chunk_key(&key)).map_err(|e| Outcome::Framing(e.to_string()))?;
        write_out(common.out.as_deref(), &bytes)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(o) = err.downcast_ref::<Outcome>() {
        return o.code();
    }
    if err.downcast_ref::<ConfigProblem>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.verb {
        Verb::Session { common, keys } => cmd_session(common, keys.as_deref()),
        Verb::Sweep { common } => cmd_sweep(common),
        Verb::Budget { common } => cmd_budget(common),
        Verb::Bounds { common } => cmd_bounds(common),
        Verb::Frame { common, input, decode } => cmd_frame(common, input.as_deref(), *decode),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qkd: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
