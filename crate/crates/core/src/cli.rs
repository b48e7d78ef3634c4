//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when a topology or scenario fails
//! validation, 2 on bad usage, 3 when an experiment check fails.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{optimal_integer_m, write_reports_csv, SmCountReport};
use crate::harness::experiments::{write_experiment1, write_experiment2, Check};
use crate::harness::{self, ScenarioConfig};
use crate::par::Exec;
use crate::topology::TaTree;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "safezone", version, about = "Hierarchical source address validation simulator")]
pub struct Cli {
    /// Directory for CSV outputs.
    #[arg(long, global = true, env = "SAFEZONE_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a topology file and print N, L and per-TA member counts.
    Validate { topology: PathBuf },
    /// Print SM table sizes for a flat, uniform or chain structure.
    Analyze(AnalyzeArgs),
    /// Run a scenario file and write metrics (and optionally a trace).
    Simulate {
        scenario: PathBuf,
        /// Also write the per-event trace CSV.
        #[arg(long)]
        trace: bool,
    },
    /// Write the SM-count curves (exp1_abr.csv, exp1_tabr.csv).
    Exp1(ExpArgs),
    /// Write the per-network comparison table (exp2_table.csv).
    Exp2(ExpArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Number of member ASes.
    #[arg(long)]
    pub n: u64,
    /// Hierarchy height for a uniform structure.
    #[arg(long)]
    pub l: Option<u32>,
    /// Members per TA; defaults to the best integer near n^(1/L).
    #[arg(long, requires = "l")]
    pub m: Option<u64>,
    /// Member counts from the root TA down to the lowest TA.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["l", "m"])]
    pub chain: Option<Vec<u64>>,
    /// Report the flat baseline.
    #[arg(long, conflicts_with_all = ["l", "m", "chain"])]
    pub flat: bool,
    /// Count the member's SM pair with its own TA.
    #[arg(long)]
    pub include_upward: bool,
    /// Print CSV instead of a summary line.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct ExpArgs {
    /// Run without the thread pool.
    #[arg(long)]
    pub sequential: bool,
}

impl ExpArgs {
    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

/// Parses `args` and runs the command, writing human output to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err((code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

type Outcome = Result<i32, (i32, String)>;

fn invalid(e: impl std::fmt::Display) -> (i32, String) {
    (EXIT_INVALID, e.to_string())
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Outcome {
    match &cli.command {
        Command::Validate { topology } => validate(topology, out),
        Command::Analyze(a) => analyze(a, out),
        Command::Simulate { scenario, trace } => simulate(scenario, *trace, &cli.out_dir, out),
        Command::Exp1(a) => experiment(&cli.out_dir, out, |d| write_experiment1(d, a.exec())),
        Command::Exp2(a) => experiment(&cli.out_dir, out, |d| write_experiment2(d, a.exec())),
    }
}

fn validate(path: &Path, out: &mut dyn Write) -> Outcome {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let tree = TaTree::from_spec_text(&text).map_err(invalid)?;
    write!(out, "{}", tree.summary()).map_err(invalid)?;
    Ok(EXIT_OK)
}

fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Outcome {
    let report = if a.flat {
        SmCountReport::flat(a.n)
    } else if let Some(chain) = &a.chain {
        if chain.is_empty() {
            return Err((EXIT_USAGE, "--chain needs at least one count".into()));
        }
        SmCountReport::chain(a.n, chain, a.include_upward)
    } else if let Some(l) = a.l {
        let m = match a.m {
            Some(m) => m,
            None => optimal_integer_m(a.n, l).map_err(invalid)?.0,
        };
        SmCountReport::uniform(a.n, m, l, a.include_upward).map_err(invalid)?
    } else {
        return Err((EXIT_USAGE, "one of --flat, --l or --chain is required".into()));
    };
    if a.csv {
        write_reports_csv(&mut *out, &[report]).map_err(invalid)?;
    } else {
        writeln!(out, "{report}").map_err(invalid)?;
    }
    Ok(EXIT_OK)
}

fn simulate(path: &Path, trace: bool, dir: &Path, out: &mut dyn Write) -> Outcome {
    let mut cfg = ScenarioConfig::load(path).map_err(invalid)?;
    cfg.trace |= trace;
    let metrics = harness::run(&cfg).map_err(invalid)?;
    fs::create_dir_all(dir).map_err(invalid)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    let metrics_path = dir.join(format!("{stem}_metrics.csv"));
    metrics.write_csv(File::create(&metrics_path).map_err(invalid)?).map_err(invalid)?;
    writeln!(
        out,
        "injected={} delivered={} dropped={} law_violations={}",
        metrics.injected,
        metrics.delivered,
        metrics.dropped(),
        metrics.law_violations.total()
    )
    .map_err(invalid)?;
    writeln!(out, "metrics: {}", metrics_path.display()).map_err(invalid)?;
    if let Some(t) = &metrics.trace {
        let trace_path = dir.join(format!("{stem}_trace.csv"));
        fs::write(&trace_path, t).map_err(invalid)?;
        writeln!(out, "trace: {}", trace_path.display()).map_err(invalid)?;
    }
    Ok(EXIT_OK)
}

fn experiment(dir: &Path, out: &mut dyn Write, f: impl FnOnce(&Path) -> io::Result<Vec<Check>>) -> Outcome {
    fs::create_dir_all(dir).map_err(invalid)?;
    let checks = f(dir).map_err(invalid)?;
    for c in &checks {
        writeln!(out, "{c}").map_err(invalid)?;
    }
    Ok(if checks.iter().all(|c| c.pass) { EXIT_OK } else { EXIT_CHECK_FAILED })
}
