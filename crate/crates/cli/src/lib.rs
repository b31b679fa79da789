//! `cdlab`: command dispatch, spec ingestion and replayable output.
//!
//! Exit status: 0 success (or `equivalent`), 2 `not_equivalent`,
//! 3 `undecided`, 1 any error (with `{"error", "field"?, "citation"?}` on
//! stderr).

pub mod commands;
pub mod error;
pub mod grid;
pub mod manifest;
pub mod output;
pub mod spec;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::commands::Outcome;
pub use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::output::{file_digest, json_text, sha256_hex, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_EQUIVALENT: i32 = 2;
pub const EXIT_UNDECIDED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cdlab", version, about = "Cowen-Douglas flag numerics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by all computing subcommands; each command rejects the
/// ones it does not use.
#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// Operator spec (JSON); repeat for two-operator commands.
    #[arg(long = "spec")]
    pub spec: Vec<PathBuf>,
    /// `r=START:STOP:STEP,theta=START:STOP:STEP` (degrees).
    #[arg(long)]
    pub grid: Option<String>,
    /// Output file; stdout (and no manifest) when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub tol: Option<f64>,
    #[arg(long = "fd-step", allow_hyphen_values = true)]
    pub fd_step: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// 1-based `l,j` for `theta`.
    #[arg(long)]
    pub levels: Option<String>,
    /// Block (or matrix) dimension for `intertwine` and `orthogonalize`.
    #[arg(long)]
    pub dim: Option<usize>,
    /// `paper` or `zero` for `correct`.
    #[arg(long)]
    pub boundary: Option<String>,
    /// Family size for `orthogonalize`.
    #[arg(long)]
    pub members: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an operator and report its digest and canonical spec.
    Build(Opts),
    /// Curvature of each level on a grid (CSV).
    Curvature(Opts),
    /// Chern polynomial coefficients on a grid (CSV).
    Chern(Opts),
    /// Second fundamental form ratio field (CSV).
    Theta(Opts),
    /// Intertwiner kernels of a Bergman pair, or block structure of intertwiners between two flags.
    Intertwine(Opts),
    /// Growth of the property-(H) sequence.
    #[command(name = "property-h")]
    PropertyH(Opts),
    /// Compact correction X = I + K between two flags.
    Correct(Opts),
    /// Orthogonalize a seeded non-orthogonal idempotent family.
    Orthogonalize(Opts),
    /// Decide unitary equivalence.
    #[command(name = "compare-unitary")]
    CompareUnitary(Opts),
    /// Decide (unitary + compact) equivalence from a built-in witness.
    #[command(name = "compare-uk")]
    CompareUk(Opts),
    /// Structure checks of a built flag.
    #[command(name = "verify-structure")]
    VerifyStructure(Opts),
    /// Re-run a manifest and compare output digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Runs `cdlab` with `args` (program name first) and returns the exit status.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let args: Vec<String> = args.into_iter().collect();
    match execute(&args, true) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            EXIT_ERROR
        }
    }
}

fn clap_error(e: clap::Error) -> CliError {
    let field = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => s
            .trim_start_matches('-')
            .split([' ', '=', '<'])
            .next()
            .map(str::to_string),
        _ => None,
    };
    let message = e.render().to_string().lines().next().unwrap_or("invalid arguments").to_string();
    CliError {
        message: message.trim_start_matches("error: ").to_string(),
        field: Some(field.unwrap_or_else(|| "argv".into())),
        citation: None,
    }
}

fn execute(args: &[String], record: bool) -> CliResult<i32> {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(EXIT_OK);
        }
        Err(e) => return Err(clap_error(e)),
    };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let (opts, outcome) = match cli.command {
        Command::Replay { manifest } => return replay(&manifest),
        Command::Build(o) => (o.clone(), commands::build(&o)?),
        Command::Curvature(o) => (o.clone(), commands::curvature(&o)?),
        Command::Chern(o) => (o.clone(), commands::chern(&o)?),
        Command::Theta(o) => (o.clone(), commands::theta(&o)?),
        Command::Intertwine(o) => (o.clone(), commands::intertwine(&o)?),
        Command::PropertyH(o) => (o.clone(), commands::property_h(&o)?),
        Command::Correct(o) => (o.clone(), commands::correct(&o)?),
        Command::Orthogonalize(o) => (o.clone(), commands::orthogonalize(&o)?),
        Command::CompareUnitary(o) => (o.clone(), commands::compare_unitary(&o)?),
        Command::CompareUk(o) => (o.clone(), commands::compare_uk(&o)?),
        Command::VerifyStructure(o) => (o.clone(), commands::verify_structure(&o)?),
    };
    let Some(out) = &opts.out else {
        print!("{}", outcome.text);
        return Ok(outcome.exit);
    };
    write_atomic(out, outcome.text.as_bytes())?;
    if !record {
        return Ok(outcome.exit);
    }
    let specs = opts
        .spec
        .iter()
        .map(|p| Ok((p.to_string_lossy().into_owned(), file_digest(p)?)))
        .collect::<CliResult<_>>()?;
    let manifest = RunManifest {
        argv: args[1..].to_vec(),
        cwd: std::env::current_dir()?,
        specs,
        grid: outcome.grid.clone(),
        fd_step: outcome.fd_step,
        tol: outcome.tol,
        seed: opts.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        outputs: vec![(out.to_string_lossy().into_owned(), sha256_hex(outcome.text.as_bytes()))],
    };
    manifest.write(out)?;
    Ok(outcome.exit)
}

/// Re-runs the recorded command; exit 0 when every output digest is
/// reproduced, 1 otherwise.
fn replay(path: &std::path::Path) -> CliResult<i32> {
    let recorded = RunManifest::read(path)?;
    recorded.check_specs()?;
    let mut argv = vec!["cdlab".to_string()];
    argv.extend(recorded.anchored_argv());
    // The original manifest is left as it was.
    let code = execute(&argv, false)?;
    let mut outputs = Vec::new();
    let mut identical = true;
    for (p, d) in &recorded.outputs {
        let file = if std::path::Path::new(p).is_absolute() {
            PathBuf::from(p)
        } else {
            recorded.cwd.join(p)
        };
        let now = file_digest(&file)?;
        identical &= &now == d;
        outputs.push(json!({"path": p, "recorded": d, "replayed": now}));
    }
    let report = json!({
        "manifest": path.to_string_lossy(),
        "command_exit": code,
        "identical": identical,
        "outputs": outputs,
    });
    if !identical {
        return Err(CliError::field("manifest", format!("replay digests differ: {report}")));
    }
    print!("{}", json_text(&report));
    Ok(EXIT_OK)
}

impl Outcome {
    pub fn ok(text: String) -> Self {
        Outcome {
            text,
            exit: EXIT_OK,
            grid: None,
            fd_step: None,
            tol: None,
        }
    }
}
