//! Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage error.

use crate::bench::{compare, evaluate, load_manifest, study_suites, synth_dataset, Dataset, ReportMatrix, ReportRow, ScoringMode, Suite, SynthOptions};
use crate::imaging::{apply_spec, load_image, save_image, DegradationKind, DegradationSpec};
use crate::ledger::file::{append_blocks, decode_chain, dump, read_chain, verify_chain_bytes};
use crate::ledger::network::run_workload;
use crate::ledger::{Authenticator, BusConfig, HmacKeyring, LedgerConfig, NodeId};
use crate::ocr::{BackendConfig, TextDetector};
use crate::refinement::DEFAULT_MAX_DELTA;
use crate::service::{Service, ServiceConfig};
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(name = "meterpipe", version, about = "Meter image degradation, OCR benchmarking, refinement and reading ledger")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply one degradation to an image.
    Degrade(DegradeArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Exact-match accuracy of one backend on a manifest.
    Eval(EvalArgs),
    /// Backends across degradation sweeps, written as CSV and chart data.
    Compare(CompareArgs),
    /// Run the REST service.
    Serve(ServeArgs),
    /// Ledger simulation and chain-file inspection.
    #[command(subcommand)]
    Ledger(LedgerCommand),
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long)]
    pub kind: DegradationKind,
    /// Factor, kernel size, exponent or density depending on the kind.
    #[arg(long, alias = "level-density", alias = "density", allow_negative_numbers = true)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Render a synthetic seven-segment corpus with a manifest.
    Synth {
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        digits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Raw,
    Refined,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `sevenseg`, `replay:PATH`, `clouda` or `cloudb`.
    #[arg(long)]
    pub backend: String,
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    #[arg(long, requires = "level")]
    pub kind: Option<DegradationKind>,
    #[arg(long, requires = "kind", alias = "level-density", allow_negative_numbers = true)]
    pub level: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Raw)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_MAX_DELTA)]
    pub max_delta: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated backend names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub backends: Vec<String>,
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// `study` or a comma-separated subset of scale, blur, gamma, sp.
    #[arg(long, value_delimiter = ',', default_value = "study")]
    pub suites: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Raw)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_MAX_DELTA)]
    pub max_delta: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "METERPIPE_CONFIG", value_name = "PATH")]
    pub config: PathBuf,
}

/// Where node keys come from when checking a chain file.
#[derive(Debug, Args, Clone)]
pub struct KeyArgs {
    /// Derive node keys from this seed.
    #[arg(long, default_value_t = 0, conflicts_with_all = ["secret_env", "key_file"])]
    pub key_seed: u64,
    /// Derive node keys from the secret in this environment variable.
    #[arg(long)]
    pub secret_env: Option<String>,
    /// Derive node keys from the secret stored in this file, as the service does.
    #[arg(long)]
    pub key_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LedgerCommand {
    /// Run a seeded propose→endorse→order→commit workload and write the chain.
    Demo {
        #[arg(long, default_value_t = 20)]
        txs: usize,
        #[arg(long, default_value_t = 10)]
        batch: usize,
        #[arg(long, default_value_t = 3)]
        meters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-message loss probability on the simulated bus.
        #[arg(long, default_value_t = 0.0)]
        drop_rate: f64,
        #[arg(long, value_name = "PATH", default_value = "chain.bin")]
        chain: PathBuf,
        #[command(flatten)]
        keys: KeyArgs,
    },
    /// Re-verify a chain file from genesis.
    Verify {
        #[arg(long, value_name = "PATH")]
        chain: PathBuf,
        #[command(flatten)]
        keys: KeyArgs,
    },
    /// Print a chain file as text.
    Dump {
        #[arg(long, value_name = "PATH")]
        chain: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Domain(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn domain(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Domain(e.into())
}

pub fn run_from_env() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Degrade(a) => degrade(a),
        Command::Dataset(DatasetCommand::Synth { n, digits, seed, out }) => {
            let manifest = synth_dataset(&SynthOptions::new(n, digits, seed), &out).map_err(|e| match e {
                crate::bench::BenchError::InvalidArgument(m) => usage(m),
                other => domain(other),
            })?;
            println!("wrote {} images and {}", manifest.entries.len(), out.join("manifest.json").display());
            Ok(())
        }
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Serve(a) => serve(a),
        Command::Ledger(cmd) => ledger(cmd),
    }
}

fn degrade(a: DegradeArgs) -> Result<(), CliError> {
    let spec = DegradationSpec::new(a.kind, a.level).with_seed(a.seed);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let img = load_image(&a.input).map_err(domain)?;
    let out = apply_spec(&img, &spec).map_err(domain)?;
    save_image(&out, &a.out).map_err(domain)?;
    println!("{} {}x{} -> {}x{}", spec, img.width(), img.height(), out.width(), out.height());
    Ok(())
}

fn mode_of(mode: ModeArg, max_delta: u64) -> ScoringMode {
    match mode {
        ModeArg::Raw => ScoringMode::Raw,
        ModeArg::Refined => ScoringMode::Refined { max_delta },
    }
}

fn load_dataset(path: &Path, mode: ModeArg) -> Result<Dataset, CliError> {
    let manifest = load_manifest(path).map_err(domain)?;
    if mode == ModeArg::Refined {
        if let Some(e) = manifest.entries.iter().find(|e| e.last_reading.is_none()) {
            return Err(usage(format!("--mode refined needs last_reading on every entry; `{}` has none", e.id)));
        }
    }
    Dataset::load(&manifest).map_err(domain)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let spec = match (a.kind, a.level) {
        (Some(kind), Some(level)) => {
            let s = DegradationSpec::new(kind, level).with_seed(a.seed);
            s.validate().map_err(|e| usage(e.to_string()))?;
            Some(s)
        }
        _ => None,
    };
    let backend_cfg = BackendConfig::from_short_name(&a.backend).map_err(|e| usage(e.to_string()))?;
    let dataset = load_dataset(&a.manifest, a.mode)?;
    let backend = backend_cfg.build().map_err(domain)?;
    let result = evaluate(backend.as_ref(), &dataset, spec.as_ref(), mode_of(a.mode, a.max_delta)).map_err(domain)?;
    if let Some(out) = &a.out {
        let suite = spec.map_or("original".to_string(), |s| s.kind.as_str().to_string());
        let matrix = ReportMatrix { rows: vec![ReportRow { suite, result: result.clone() }] };
        std::fs::write(out, matrix.csv()).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("accuracy {}", result.accuracy());
    if result.failures > 0 {
        println!("failures {}", result.failures);
    }
    Ok(())
}

fn parse_suites(names: &[String], seed: u64) -> Result<Vec<Suite>, CliError> {
    let mut suites = Vec::new();
    for name in names {
        match name.as_str() {
            "study" => suites.extend(study_suites(seed)),
            other => match other.parse::<DegradationKind>().map_err(usage)? {
                DegradationKind::Scale => suites.push(Suite::scale()),
                DegradationKind::Blur => suites.push(Suite::blur()),
                DegradationKind::Gamma => suites.push(Suite::gamma()),
                DegradationKind::SaltPepper => suites.push(Suite::salt_pepper(seed)),
            },
        }
    }
    Ok(suites)
}

fn compare_cmd(a: CompareArgs) -> Result<(), CliError> {
    let suites = parse_suites(&a.suites, a.seed)?;
    let configs = a
        .backends
        .iter()
        .map(|b| BackendConfig::from_short_name(b).map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let dataset = load_dataset(&a.manifest, a.mode)?;
    let backends = configs.iter().map(|c| c.build().map_err(domain)).collect::<Result<Vec<_>, _>>()?;
    let mut names: Vec<&str> = backends.iter().map(|b| b.name()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(usage("backend names must be distinct"));
    }
    let refs: Vec<&dyn TextDetector> = backends.iter().map(|b| b.as_ref()).collect();
    let matrix = compare(&refs, &dataset, &suites, mode_of(a.mode, a.max_delta)).map_err(domain)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let summary = matrix.summary();
    for (file, body) in [("report.csv", matrix.csv()), ("chart_data.json", matrix.chart_data()), ("summary.txt", summary.clone())] {
        let path = a.out.join(file);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{summary}");
    if matrix.all_unavailable() {
        return Err(domain(anyhow::anyhow!("every backend failed on every entry")));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = ServiceConfig::load(&a.config).map_err(|e| usage(e.to_string()))?;
    let service = Service::new(config).map_err(domain)?;
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(service.serve()).map_err(domain)
}

fn keyring(k: &KeyArgs) -> Result<Arc<dyn Authenticator>, CliError> {
    if let Some(var) = &k.secret_env {
        let secret = std::env::var(var).map_err(|_| usage(format!("environment variable {var} is not set")))?;
        return Ok(Arc::new(HmacKeyring::from_secret(&secret)));
    }
    if let Some(path) = &k.key_file {
        let secret = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(Arc::new(HmacKeyring::from_secret(secret.trim())));
    }
    Ok(Arc::new(HmacKeyring::from_seed(k.key_seed)))
}

fn ledger(cmd: LedgerCommand) -> Result<(), CliError> {
    match cmd {
        LedgerCommand::Demo { txs, batch, meters, seed, drop_rate, chain, keys } => {
            if batch == 0 {
                return Err(usage("--batch must be at least 1"));
            }
            if !(0.0..1.0).contains(&drop_rate) {
                return Err(usage("--drop-rate must be in [0, 1)"));
            }
            let auth = keyring(&keys)?;
            let cfg = LedgerConfig::logical(batch).with_bus(BusConfig { seed, drop_rate, ..BusConfig::default() });
            let net = run_workload(cfg, auth, seed, txs, meters);
            if !net.converged() {
                return Err(domain(anyhow::anyhow!("nodes did not converge")));
            }
            let blocks = net.ledger(NodeId::Orderer).chain();
            if chain.exists() {
                std::fs::remove_file(&chain).with_context(|| format!("replacing {}", chain.display()))?;
            }
            append_blocks(&chain, blocks).with_context(|| format!("writing {}", chain.display()))?;
            print!("{}", dump(blocks));
            let stats = net.bus_stats();
            println!(
                "wrote {} blocks, {} txs to {} (bus: {} sent, {} dropped, {} retransmitted)",
                blocks.len() - 1,
                net.ledger(NodeId::Orderer).tx_count(),
                chain.display(),
                stats.sent,
                stats.dropped,
                stats.retransmitted
            );
            Ok(())
        }
        LedgerCommand::Verify { chain, keys } => {
            let auth = keyring(&keys)?;
            let data = read_chain(&chain).with_context(|| format!("reading {}", chain.display()))?;
            match verify_chain_bytes(&data, auth.as_ref()) {
                Ok(tip) => {
                    println!("ok height={tip}");
                    Ok(())
                }
                Err(fault) => {
                    println!("invalid height={} reason={}", fault.height, fault.reason);
                    Err(domain(fault))
                }
            }
        }
        LedgerCommand::Dump { chain } => {
            let data = read_chain(&chain).with_context(|| format!("reading {}", chain.display()))?;
            let blocks = decode_chain(&data).map_err(domain)?;
            print!("{}", dump(&blocks));
            Ok(())
        }
    }
}
