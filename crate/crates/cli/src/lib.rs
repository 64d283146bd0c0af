//! Library side of the `vbma` executable: argument types, the run manifest,
//! and one function per subcommand.

pub mod args;
pub mod commands;
pub mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::Parser;

pub use args::Cli;
use args::Command;
use manifest::RunManifest;

/// Failure classes mapped onto process exit codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<vbma_core::Error> for CliError {
    fn from(e: vbma_core::Error) -> Self {
        use vbma_core::Error as E;
        match e {
            E::Numeric(_) | E::DegenerateChain(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const DEFAULT_OUT_DIR: &str = "vbma-out";

/// Shared state of one command execution: where to write and what was written.
pub struct Context {
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub format: args::Format,
    pub outputs: Vec<PathBuf>,
    pub inputs: Vec<PathBuf>,
}

impl Context {
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.out_dir.join(name);
        vbma_core::io::write_atomic(&path, bytes)?;
        self.outputs.push(PathBuf::from(name));
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Runs `f` on a pool limited to `jobs` threads.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> CliResult<R> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
        Command::Average(_) => "average",
        Command::Benchmark(_) => "benchmark",
        Command::Analyze(_) => "analyze",
        Command::Replay(_) => "replay",
    }
}

/// Parses `argv` (without the program name) and runs it. Clap's own
/// errors, including `--help`, are returned as usage errors.
pub fn run_args(argv: Vec<String>) -> CliResult<PathBuf> {
    let cli = Cli::try_parse_from(std::iter::once("vbma".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli, argv)
}

/// Runs an already parsed command line; returns the output directory.
pub fn run(cli: Cli, argv: Vec<String>) -> CliResult<PathBuf> {
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest, cli.out_dir.as_deref());
    }
    let cwd = std::env::current_dir().map_err(|e| CliError::Data(e.to_string()))?;
    execute(cli, argv, cwd)
}

fn execute(cli: Cli, argv: Vec<String>, cwd: PathBuf) -> CliResult<PathBuf> {
    let started = manifest::unix_now();
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let mut ctx = Context {
        seed: cli.seed,
        jobs: cli.jobs,
        out_dir: out_dir.clone(),
        format: cli.format,
        outputs: Vec::new(),
        inputs: Vec::new(),
    };
    let config = match &cli.command {
        Command::Simulate(a) => commands::simulate(&mut ctx, a)?,
        Command::Fit(a) => commands::fit(&mut ctx, a)?,
        Command::Average(a) => commands::average(&mut ctx, a)?,
        Command::Benchmark(a) => commands::benchmark(&mut ctx, a)?,
        Command::Analyze(a) => commands::analyze(&mut ctx, a)?,
        Command::Replay(_) => unreachable!("handled by run"),
    };
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        argv,
        cwd,
        config,
        seed: cli.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: manifest::unix_now(),
        inputs: ctx.inputs.clone(),
        outputs: ctx.outputs.clone(),
    };
    vbma_core::io::write_json(&RunManifest::path_in(&out_dir), &manifest)?;
    Ok(out_dir)
}

/// Removes `--out-dir` (both spellings) from an argument list.
fn strip_out_dir(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out-dir" {
            skip = true;
        } else if !a.starts_with("--out-dir=") {
            out.push(a.clone());
        }
    }
    out
}

fn replay(manifest_path: &Path, out_override: Option<&Path>) -> CliResult<PathBuf> {
    let m: RunManifest = vbma_core::io::read_json(manifest_path)?;
    if m.command == "replay" {
        return Err(CliError::Usage("manifest records a replay".into()));
    }
    let mut argv = m.argv.clone();
    if let Some(dir) = out_override {
        let abs = if dir.is_absolute() {
            dir.to_path_buf()
        } else {
            std::env::current_dir().map_err(|e| CliError::Data(e.to_string()))?.join(dir)
        };
        argv = strip_out_dir(&argv);
        argv.push("--out-dir".into());
        argv.push(abs.to_string_lossy().into_owned());
    }
    let cli = Cli::try_parse_from(std::iter::once("vbma".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| CliError::Usage(format!("manifest arguments no longer parse: {e}")))?;
    // Resolve relative paths exactly as the original run did.
    let cli = resolve_paths(cli, &m.cwd);
    execute(cli, argv, m.cwd)
}

fn resolve_paths(mut cli: Cli, cwd: &Path) -> Cli {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = cwd.join(&*p);
        }
    };
    let mut out = cli.out_dir.take().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    fix(&mut out);
    cli.out_dir = Some(out);
    match &mut cli.command {
        Command::Fit(a) => fix(&mut a.data),
        Command::Average(a) => {
            a.fits.iter_mut().for_each(fix);
            if let Some(d) = a.data.as_mut() {
                fix(d);
            }
        }
        Command::Analyze(a) => fix(&mut a.data),
        Command::Simulate(_) | Command::Benchmark(_) | Command::Replay(_) => {}
    }
    cli
}
