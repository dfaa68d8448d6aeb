//! Command-line front end.

pub mod config;
pub mod oracle;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::models::{ModelSpec, StateIntensity};
use crate::random_time::CdfSpec;
use crate::representations::FormulaId;
use crate::solvers::{HSpec, StateFunction, TimeFunction};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_BREACH: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "prp-lab",
    version,
    about = "Pathwise and Monte Carlo checks of martingale representations"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario config and write residuals.csv, mc.csv and paths_sample.csv.
    Run(RunArgs),
    /// Print a kernel table with recursion residuals and Monte Carlo comparisons.
    Htilde(HtildeArgs),
    /// Run every oracle and print the certification table.
    Oracle(OracleArgs),
    /// Print the formula applicability matrix.
    ListFormulas,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `simulation.master_seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of traced paths (overrides `output.paths_sample`).
    #[arg(long)]
    pub paths_sample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HtildeArgs {
    /// `Indicator(k)`, `Constant(c)` or `Exponential(beta)`.
    #[arg(long, default_value = "Indicator(0)")]
    pub payoff: String,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Comma-separated `a(0),a(1),…` to tabulate `g` instead of `h̃`.
    #[arg(long, value_delimiter = ',')]
    pub intensity: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    pub x_max: usize,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Applicability matrix as text.
pub fn formula_matrix() -> Result<String> {
    let state = HSpec::State(StateFunction::indicator(0));
    let time = HSpec::Time(TimeFunction::indicator_until(2.0)?);
    let columns: Vec<(&str, ModelSpec, &HSpec)> = vec![
        ("CoxPoisson", ModelSpec::CoxPoisson, &state),
        (
            "CoxIntensity",
            ModelSpec::CoxIntensity {
                intensity: StateIntensity::new(vec![1.0, 2.0])?,
            },
            &state,
        ),
        (
            "IndependentTau",
            ModelSpec::IndependentTau {
                cdf: CdfSpec::exponential(1.0)?,
            },
            &time,
        ),
        (
            "IndependentTau+atoms",
            ModelSpec::IndependentTau {
                cdf: CdfSpec::exponential(1.0)?.with_atom(1.0, 0.3)?,
            },
            &time,
        ),
    ];
    let mut out = format!("{:<10}", "formula");
    for (name, _, _) in &columns {
        out.push_str(&format!("  {name:<20}"));
    }
    out.push('\n');
    for f in FormulaId::ALL {
        out.push_str(&format!("{:<10}", f.as_str()));
        for (_, model, h) in &columns {
            let mark = if !f.applies_to(model, h) {
                "-"
            } else if f.is_negative_control() {
                "control"
            } else {
                "yes"
            };
            out.push_str(&format!("  {mark:<20}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn run_command(args: &RunArgs) -> Result<i32> {
    let mut cfg = config::ScenarioConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.simulation.master_seed = seed;
    }
    if let Some(k) = args.paths_sample {
        cfg.output.paths_sample = k;
    }
    let validated = cfg.validate()?;
    let outcome = run::run(&validated)?;
    for r in &outcome.residuals {
        println!(
            "{:<16} {:<14} {:<20} max={:.3e} mean={:.3e} tol={:.0e} {}",
            r.formula_id,
            r.model,
            r.h_name,
            r.batch_max,
            r.batch_mean,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    for r in &outcome.mc {
        println!(
            "{:<50} est={:+.6e} se={:.3e} z={:+.3} {}",
            r.statistic,
            r.estimate,
            r.se,
            r.z,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    println!("reports written to {}", validated.out_dir.display());
    Ok(if outcome.all_pass() { EXIT_PASS } else { EXIT_BREACH })
}

fn htilde_command(args: &HtildeArgs) -> Result<i32> {
    let h = oracle::parse_state_function(&args.payoff)?;
    let intensity = args.intensity.clone().map(StateIntensity::new).transpose()?;
    let rows = oracle::kernel_table(
        &h,
        args.lambda,
        intensity.as_ref(),
        args.x_max,
        args.paths,
        args.seed,
        1e-12,
    )?;
    print!("{}", oracle::format_table(&rows));
    Ok(if rows.iter().all(|r| r.pass) {
        EXIT_PASS
    } else {
        EXIT_BREACH
    })
}

fn oracle_command(args: &OracleArgs) -> Result<i32> {
    let rows = oracle::certification_suite(args.paths, args.seed)?;
    print!("{}", oracle::format_table(&rows));
    Ok(if rows.iter().all(|r| r.pass) {
        EXIT_PASS
    } else {
        EXIT_BREACH
    })
}

/// Executes a parsed command line and returns the process exit code.
pub fn dispatch(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return EXIT_INVALID;
        }
    }
    let result = match &cli.command {
        Command::Run(a) => run_command(a),
        Command::Htilde(a) => htilde_command(a),
        Command::Oracle(a) => oracle_command(a),
        Command::ListFormulas => formula_matrix().map(|m| {
            print!("{m}");
            EXIT_PASS
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            match &e {
                Error::Config(msg) => eprintln!("error: {msg}"),
                other => eprintln!("error: {other}"),
            }
            EXIT_INVALID
        }
    }
}
