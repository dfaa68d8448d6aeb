//! The `run` subcommand: residual batch, Monte Carlo statistics and report files.

use std::fs;
use std::path::Path;

use crate::cli::config::{Functional, Validated};
use crate::error::{Error, Result};
use crate::experiment::PathBundle;
use crate::mc_verify::{
    conditional_increment_test, direct_payoff_mc, mean_zero_tests, pseudo_stopping_check, MCReport,
};
use crate::models::ModelSpec;
use crate::path_engine::{PwProcess, Side};
use crate::representations::{closed_form_y, mtilde, residual_batch, ResidualReport};
use crate::solvers::{g_recursion_residual, htilde_recursion_residual, HSpec, KernelKind};

/// Interior sample points per segment in `paths_sample.csv`.
const INTERIOR_POINTS: usize = 4;

/// States checked by the kernel recursion row.
const RECURSION_STATES: usize = 21;

/// One line of `residuals.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub formula_id: String,
    pub model: String,
    pub h_name: String,
    pub n_paths: usize,
    pub batch_max: f64,
    pub batch_mean: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl From<&ResidualReport> for ResidualRow {
    fn from(r: &ResidualReport) -> Self {
        Self {
            formula_id: r.formula.as_str().into(),
            model: r.model.clone(),
            h_name: r.h_name.clone(),
            n_paths: r.n_paths(),
            batch_max: r.batch_max,
            batch_mean: r.batch_mean,
            tolerance: r.tolerance,
            pass: r.pass,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub residuals: Vec<ResidualRow>,
    pub mc: Vec<MCReport>,
}

impl RunOutcome {
    pub fn all_pass(&self) -> bool {
        self.residuals.iter().all(|r| r.pass) && self.mc.iter().all(|r| r.pass)
    }
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Kernel recursion residuals over `x = 0..20`, as one residuals row.
fn recursion_row(v: &Validated) -> Option<ResidualRow> {
    let exp = &v.experiment;
    let table = exp.kernel()?;
    let HSpec::State(h) = &exp.h else { return None };
    let per_state: Vec<f64> = (0..RECURSION_STATES)
        .map(|x| match (table.kind(), exp.model.as_ref()) {
            (KernelKind::Htilde, _) => htilde_recursion_residual(h, table, x).abs(),
            (KernelKind::G, ModelSpec::CoxIntensity { intensity }) => {
                g_recursion_residual(intensity, h, exp.lambda, table, x).abs()
            }
            _ => f64::NAN,
        })
        .collect();
    let batch_max = per_state.iter().fold(0.0f64, |m, r| m.max(*r));
    let tolerance = v.tolerances.recursion_abs;
    Some(ResidualRow {
        formula_id: "KERNEL_RECURSION".into(),
        model: exp.model.name().into(),
        h_name: exp.h.name().into(),
        n_paths: RECURSION_STATES,
        batch_max,
        batch_mean: per_state.iter().sum::<f64>() / RECURSION_STATES as f64,
        tolerance,
        pass: per_state.iter().all(|r| *r <= tolerance),
    })
}

fn functional_value(f: Functional, view: &crate::mc_verify::TruncatedView<'_>) -> Result<f64> {
    let s = view.cutoff();
    match f {
        Functional::One => Ok(1.0),
        Functional::NMin3 => Ok(view.n_at(s)?.min(3) as f64),
        Functional::TauByS => view.h_at(s),
    }
}

/// Residual and Monte Carlo sections of a validated configuration, without file output.
pub fn execute(v: &Validated) -> Result<RunOutcome> {
    let exp = &v.experiment;
    let mut residuals: Vec<ResidualRow> =
        residual_batch(exp, &v.formulas, v.n_paths, v.master_seed, v.tolerances.pathwise_abs)?
            .iter()
            .map(ResidualRow::from)
            .collect();
    residuals.extend(recursion_row(v));

    let mut mc = Vec::new();
    if v.mc_paths > 0 {
        if !v.mc_selectors.is_empty() {
            mc.extend(mean_zero_tests(exp, &v.mc_selectors, v.mc_paths, v.master_seed)?);
        }
        if let Some((s, f, selectors)) = &v.conditional {
            for sel in selectors {
                mc.push(conditional_increment_test(
                    exp,
                    *sel,
                    *s,
                    f.label(),
                    |view| functional_value(*f, view),
                    v.mc_paths,
                    v.master_seed,
                )?);
            }
        }
        if v.pseudo_stopping {
            mc.push(pseudo_stopping_check(
                exp.model.as_ref().clone(),
                exp.lambda,
                v.mc_paths,
                v.master_seed,
            )?);
        }
        if v.direct_payoff {
            let y0 = closed_form_y(&exp.path(v.master_seed, 0)?).initial();
            mc.push(direct_payoff_mc(
                &exp.model,
                &exp.h,
                exp.lambda,
                y0,
                v.mc_paths,
                v.master_seed,
            )?);
        }
    }
    Ok(RunOutcome { residuals, mc })
}

pub fn write_residuals(path: &Path, rows: &[ResidualRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "formula_id",
        "model",
        "h_name",
        "n_paths",
        "batch_max",
        "batch_mean",
        "tolerance",
        "pass",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.formula_id.clone(),
            r.model.clone(),
            r.h_name.clone(),
            r.n_paths.to_string(),
            float(r.batch_max),
            float(r.batch_mean),
            float(r.tolerance),
            r.pass.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mc(path: &Path, rows: &[MCReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "statistic",
        "estimate",
        "se",
        "z",
        "n_paths",
        "seed",
        "target",
        "bias_bound",
        "pass",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.statistic.clone(),
            float(r.estimate),
            float(r.se),
            float(r.z),
            r.n_paths.to_string(),
            r.seed.to_string(),
            float(r.target),
            float(r.bias_bound),
            r.pass.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

const TRACE_COLUMNS: [&str; 12] = [
    "N", "H", "Z", "mu", "Ap", "Mtau", "Mhat", "Xh", "mu_h", "ratio", "Y", "Mtilde_h",
];

fn traced(pb: &PathBundle) -> Result<Vec<PwProcess>> {
    let f = &pb.filtration;
    let p = &pb.payoff;
    Ok(vec![
        pb.scenario.n.clone(),
        pb.scenario.h.clone(),
        f.z.clone(),
        f.mu.clone(),
        f.ap.clone(),
        f.mtau.clone(),
        f.mhat.clone(),
        p.xh.clone(),
        p.mu_h.clone(),
        p.ratio.clone(),
        closed_form_y(pb),
        mtilde(pb)?,
    ])
}

/// Traces of the first `k` paths: left limit and value at every grid point plus
/// evenly spaced interior points, one column per process.
pub fn write_paths_sample(path: &Path, v: &Validated, k: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["path", "time", "side"];
    header.extend(TRACE_COLUMNS);
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..k as u64 {
        let pb = v.experiment.path(v.master_seed, i)?;
        let procs = traced(&pb)?;
        let times = pb.scenario.grid.times().to_vec();
        let mut emit = |t: f64, side: Side, label: &str| -> Result<()> {
            let mut rec = vec![i.to_string(), float(t), label.to_string()];
            for p in &procs {
                rec.push(float(p.evaluate(t, side)?));
            }
            w.write_record(&rec).map_err(csv_err)
        };
        for (j, t) in times.iter().enumerate() {
            if j > 0 {
                emit(*t, Side::Left, "left")?;
            }
            emit(*t, Side::Right, "right")?;
            if let Some(next) = times.get(j + 1) {
                for q in 1..=INTERIOR_POINTS {
                    let s = t + (next - t) * q as f64 / (INTERIOR_POINTS + 1) as f64;
                    emit(s, Side::Right, "interior")?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Runs a validated configuration and writes all report files into `out_dir`.
pub fn run(v: &Validated) -> Result<RunOutcome> {
    let outcome = execute(v)?;
    fs::create_dir_all(&v.out_dir)?;
    write_residuals(&v.out_dir.join("residuals.csv"), &outcome.residuals)?;
    write_mc(&v.out_dir.join("mc.csv"), &outcome.mc)?;
    write_paths_sample(&v.out_dir.join("paths_sample.csv"), v, v.paths_sample)?;
    Ok(outcome)
}
