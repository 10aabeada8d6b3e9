//! `crtfi` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage errors (reported by clap), 3 for
//! data errors such as a malformed key file or an invalid campaign.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::circuit::{execute_untraced, parse_program, DumpError, ExecError, ExecResult, Program};
use crate::countermeasures::{build, catalog, AlgoId, BuildError};
use crate::faultengine::{
    parse_kinds, run_campaign_on, run_sampled, CampaignError, CampaignSpec, DEFAULT_MAX_SKIP_LEN, DEFAULT_R_BITS,
    DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_THRESHOLD,
};
use crate::keytools::{gen_key, recover_d, recover_e, CrtKey, KeyError};
use crate::modmath::Nat;
use crate::transforms::{apply, TransformError, TransformSpec};

/// Prime size of the key used when `--key` is omitted.
pub const DEFAULT_KEY_BITS: u32 = 8;

#[derive(Debug, Parser)]
#[command(
    name = "crtfi",
    version,
    about = "Fault-injection laboratory for CRT-RSA countermeasures"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a desk-scale CRT key.
    Keygen {
        /// Bits per prime.
        #[arg(long, default_value_t = DEFAULT_KEY_BITS)]
        bits: u32,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the countermeasure catalog.
    ListAlgos,
    /// Print the program listing of a countermeasure.
    Dump {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one fault-free signature and print it.
    Sign {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        message: Nat,
        /// Seed of the random draws inside the program.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Run a fault campaign and write its report.
    Campaign(CampaignArgs),
    /// Convert or harden a program.
    Transform {
        #[arg(long, value_enum)]
        kind: TransformKind,
        /// Replication count for `harden`.
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover d, e and lambda(N) from the CRT 5-tuple of a key file.
    Recover {
        #[arg(long)]
        key: PathBuf,
    },
}

/// Program selection shared by the program-level commands: a catalog entry
/// built for a key, or a dump file.
#[derive(Debug, Args)]
pub struct Target {
    #[arg(long, required_unless_present = "program")]
    pub algo: Option<AlgoId>,
    /// Program dump to use instead of `--algo`.
    #[arg(long, conflicts_with = "algo")]
    pub program: Option<PathBuf>,
    /// Key file; defaults to an 8-bit key generated from seed 42.
    #[arg(long)]
    pub key: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_R_BITS)]
    pub r_bits: u32,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    #[command(flatten)]
    pub target: Target,
    /// Repeat for several messages; defaults to {2, 3, N-2}.
    #[arg(long)]
    pub message: Vec<Nat>,
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    /// Comma-separated subset of zero, randomize, skip.
    #[arg(long, default_value = "zero,randomize,skip")]
    pub kinds: String,
    #[arg(long, default_value_t = DEFAULT_MAX_SKIP_LEN)]
    pub max_skip_len: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub exhaustive_threshold: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Draw this many random plans instead of enumerating every group.
    #[arg(long)]
    pub sampled: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Report)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// JSON report.
    Report,
    /// One CSV row per probe group.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformKind {
    ToInfective,
    ToTestbased,
    Harden,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Dump { path: PathBuf, source: DumpError },
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("message {0} is not below N")]
    MessageOutOfRange(Nat),
    #[error("no signature released: {0:?}")]
    NoSignature(ExecResult),
    #[error("writing output: {0}")]
    Output(#[from] io::Error),
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn write_out(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            path: path.into(),
            source,
        }),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

fn load_key(path: Option<&Path>) -> Result<CrtKey, CliError> {
    match path {
        Some(p) => Ok(CrtKey::from_key_file(&read(p)?)?),
        None => Ok(gen_key(DEFAULT_KEY_BITS, DEFAULT_SEED)?.1),
    }
}

impl Target {
    fn resolve(&self) -> Result<(CrtKey, Program), CliError> {
        let key = load_key(self.key.as_deref())?;
        let program = match (&self.program, self.algo) {
            (Some(path), _) => parse_program(&read(path)?).map_err(|source| CliError::Dump {
                path: path.clone(),
                source,
            })?,
            (None, Some(algo)) => build(algo, &key, self.r_bits)?,
            (None, None) => unreachable!("clap requires --algo or --program"),
        };
        Ok((key, program))
    }
}

fn campaign(args: &CampaignArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (key, program) = args.target.resolve()?;
    let algo = args.target.algo.unwrap_or(AlgoId::Unprotected);
    let mut spec = CampaignSpec::new(algo, key);
    if !args.message.is_empty() {
        spec.messages = args.message.clone();
    }
    spec.order = args.order;
    spec.kinds = parse_kinds(&args.kinds)?;
    spec.max_skip_len = args.max_skip_len;
    spec.exhaustive_threshold = args.exhaustive_threshold;
    spec.samples = args.samples;
    spec.seed = args.seed;
    spec.r_bits = args.target.r_bits;
    let report = match args.sampled {
        Some(count) => run_sampled(&spec, &program, count)?,
        None => run_campaign_on(&spec, &program)?,
    };
    let text = match args.format {
        Format::Report => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    write_out(args.out.as_deref(), &text, stdout)?;
    writeln!(stdout, "{}", report.summary_line())?;
    Ok(())
}

/// Execute a parsed command, writing human output to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Keygen { bits, seed, out } => {
            let (_, key) = gen_key(*bits, *seed)?;
            write_out(out.as_deref(), &key.to_key_file(), stdout)
        }
        Command::ListAlgos => {
            for e in catalog() {
                let broken = e.broken_at.map_or_else(|| "-".to_string(), |o| o.to_string());
                writeln!(
                    stdout,
                    "{:<30} style={:<11} claimed-order={} broken-at={}",
                    e.algo.name(),
                    e.style.name(),
                    e.claimed_order,
                    broken
                )?;
            }
            Ok(())
        }
        Command::Dump { target, out } => {
            let (_, program) = target.resolve()?;
            write_out(out.as_deref(), &program.dump(), stdout)
        }
        Command::Sign { target, message, seed } => {
            let (key, program) = target.resolve()?;
            if *message >= key.modulus() {
                return Err(CliError::MessageOutOfRange(message.clone()));
            }
            match execute_untraced(&program, &key.inputs(message)?, *seed, &[])? {
                ExecResult::Signature(s) => Ok(writeln!(stdout, "{s}")?),
                other => Err(CliError::NoSignature(other)),
            }
        }
        Command::Campaign(args) => campaign(args, stdout),
        Command::Transform { kind, n, target, out } => {
            let (_, program) = target.resolve()?;
            let spec = match kind {
                TransformKind::ToInfective => TransformSpec::ToInfective,
                TransformKind::ToTestbased => TransformSpec::ToTestbased,
                TransformKind::Harden => TransformSpec::Harden { n: *n },
            };
            write_out(out.as_deref(), &apply(spec, &program)?.dump(), stdout)
        }
        Command::Recover { key } => {
            let key = CrtKey::from_key_file(&read(key)?)?;
            let d = recover_d(&key)?;
            let e = recover_e(&key)?;
            Ok(writeln!(stdout, "d={d} e={e} \u{3bb}={}", key.lambda())?)
        }
    }
}

/// Parse `args`, run, and map the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crtfi: {e}");
            ExitCode::from(3)
        }
    }
}

pub fn main() -> ExitCode {
    main_with(std::env::args_os())
}
