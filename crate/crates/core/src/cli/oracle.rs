//! The `htilde` and `oracle` subcommands.

use std::sync::Arc;

use crate::error::Result;
use crate::mc_verify::{atom_frequency, direct_payoff_mc, poisson_count_mean, pseudo_stopping_check, MCReport};
use crate::models::{gamma, ModelSpec, StateIntensity};
use crate::path_engine::EventGrid;
use crate::random_time::CdfSpec;
use crate::solvers::{
    g_mc_oracle, g_recursion_residual, htilde_mc_oracle, htilde_recursion_residual, independent_xh,
    independent_xh_quadrature, poisson_exponential_moment_mc, HSpec, KernelTable, OracleEstimate, StateFunction,
    TimeFunction,
};

/// One line of a certification table.
#[derive(Clone, Debug, PartialEq)]
pub struct CertRow {
    pub check: String,
    pub value: f64,
    pub reference: f64,
    /// Standard error for Monte Carlo rows, 0 for deterministic ones.
    pub se: f64,
    /// Allowed gap: `3·SE + bias` or an absolute tolerance.
    pub allowed: f64,
    pub pass: bool,
}

impl CertRow {
    fn exact(check: impl Into<String>, value: f64, reference: f64, tol: f64) -> Self {
        Self {
            check: check.into(),
            value,
            reference,
            se: 0.0,
            allowed: tol,
            pass: (value - reference).abs() <= tol,
        }
    }

    fn oracle(check: impl Into<String>, est: &OracleEstimate, reference: f64) -> Self {
        Self {
            check: check.into(),
            value: est.estimate,
            reference,
            se: est.se,
            allowed: 3.0 * est.se + est.bias_bound,
            pass: est.agrees_with(reference),
        }
    }

    fn mc(r: &MCReport) -> Self {
        Self {
            check: r.statistic.clone(),
            value: r.estimate,
            reference: r.target,
            se: r.se,
            allowed: 3.0 * r.se,
            pass: r.pass,
        }
    }
}

pub fn format_table(rows: &[CertRow]) -> String {
    let width = rows.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>22}  {:>22}  {:>10}  {:>10}  result\n",
        "check", "value", "reference", "se", "allowed"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>22.16e}  {:>22.16e}  {:>10.3e}  {:>10.3e}  {}\n",
            r.check,
            r.value,
            r.reference,
            r.se,
            r.allowed,
            if r.pass { "PASS" } else { "FAIL" }
        ));
    }
    out
}

/// Parses `Indicator(k)`, `Constant(c)` or `Exponential(beta)`.
pub fn parse_state_function(s: &str) -> Result<StateFunction> {
    let bad = || {
        crate::Error::Config(format!(
            "payoff {s:?} is not Indicator(k), Constant(c) or Exponential(beta)"
        ))
    };
    let (name, rest) = s.trim().split_once('(').ok_or_else(bad)?;
    let arg = rest.strip_suffix(')').ok_or_else(bad)?.trim();
    match name.trim() {
        "Indicator" => Ok(StateFunction::indicator(arg.parse().map_err(|_| bad())?)),
        "Constant" => StateFunction::constant(arg.parse().map_err(|_| bad())?),
        "Exponential" => StateFunction::exponential(arg.parse().map_err(|_| bad())?),
        _ => Err(bad()),
    }
}

/// Kernel values over `0..=x_max` with recursion residuals and a Monte Carlo
/// comparison at every state; `intensity` switches from `h̃` to `g`.
pub fn kernel_table(
    h: &StateFunction,
    lambda: f64,
    intensity: Option<&StateIntensity>,
    x_max: usize,
    n_paths: usize,
    seed: u64,
    recursion_tol: f64,
) -> Result<Vec<CertRow>> {
    let table = match intensity {
        None => KernelTable::htilde(h, x_max + 1),
        Some(a) => KernelTable::g(a, h, lambda)?,
    };
    let mut rows = Vec::new();
    for x in 0..=x_max {
        let (label, residual, est) = match intensity {
            None => (
                "htilde",
                htilde_recursion_residual(h, &table, x),
                htilde_mc_oracle(h, x, lambda, n_paths, seed)?,
            ),
            Some(a) => (
                "g",
                g_recursion_residual(a, h, lambda, &table, x),
                g_mc_oracle(a, h, lambda, x, n_paths, seed)?,
            ),
        };
        rows.push(CertRow::exact(
            format!("{label}({x}) recursion [{}]", h.name()),
            residual,
            0.0,
            recursion_tol,
        ));
        rows.push(CertRow::oracle(
            format!("{label}({x}) Monte Carlo [{}]", h.name()),
            &est,
            table.value(x),
        ));
    }
    Ok(rows)
}

/// Every closed-form or tabulated value checked against an independent computation.
pub fn certification_suite(n_paths: usize, seed: u64) -> Result<Vec<CertRow>> {
    let g = gamma();
    let payoffs = [
        StateFunction::indicator(0),
        StateFunction::indicator(2),
        StateFunction::exponential(1.0)?,
        StateFunction::constant(1.0)?,
    ];
    let mut rows = Vec::new();

    let ind0 = KernelTable::htilde(&payoffs[0], 32);
    rows.push(CertRow::exact(
        "htilde(0) for Indicator(0) = 1 - e^-1",
        ind0.value(0),
        g,
        1e-12,
    ));
    for h in &payoffs {
        let table = KernelTable::htilde(h, 32);
        let worst = (0..=20)
            .map(|x| htilde_recursion_residual(h, &table, x).abs())
            .fold(0.0, f64::max);
        rows.push(CertRow::exact(
            format!("htilde recursion x=0..20 [{}]", h.name()),
            worst,
            0.0,
            1e-12,
        ));
        let est = htilde_mc_oracle(h, 0, 1.0, n_paths, seed)?;
        rows.push(CertRow::oracle(
            format!("htilde(0) Monte Carlo [{}]", h.name()),
            &est,
            table.value(0),
        ));
    }

    let intensity = StateIntensity::new(vec![1.0, 2.0])?;
    for h in &payoffs[..3] {
        let table = KernelTable::g(&intensity, h, 1.0)?;
        let worst = (0..=20)
            .map(|x| g_recursion_residual(&intensity, h, 1.0, &table, x).abs())
            .fold(0.0, f64::max);
        rows.push(CertRow::exact(
            format!("g recursion x=0..20 [a=(1,2); {}]", h.name()),
            worst,
            0.0,
            1e-12,
        ));
        let est = g_mc_oracle(&intensity, h, 1.0, 0, n_paths, seed)?;
        rows.push(CertRow::oracle(
            format!("g(0) Monte Carlo [a=(1,2); {}]", h.name()),
            &est,
            table.value(0),
        ));
    }

    let est = poisson_exponential_moment_mc(1.0, 1.0, n_paths, seed)?;
    rows.push(CertRow::oracle("E[e^-N_1] = e^-gamma", &est, (-g).exp()));

    rows.push(CertRow::mc(&poisson_count_mean(1.0, 10.0, n_paths, seed)?));
    rows.push(CertRow::mc(&direct_payoff_mc(
        &ModelSpec::CoxPoisson,
        &HSpec::State(payoffs[0].clone()),
        1.0,
        g,
        n_paths,
        seed,
    )?));

    let atom_cdf = CdfSpec::exponential(1.0)?.with_atom(1.0, 0.3)?;
    let atom_model = ModelSpec::IndependentTau { cdf: atom_cdf.clone() };
    rows.push(CertRow::mc(&atom_frequency(&atom_model, 1.0, 0.3, n_paths, seed)?));

    let up_to = TimeFunction::indicator_until(2.0)?;
    let grid = Arc::new(EventGrid::new(10.0, atom_cdf.event_times().into_iter().chain([2.0]))?);
    let closed = independent_xh(&atom_cdf, &up_to, &grid)?.initial();
    let quad = independent_xh_quadrature(&atom_cdf, &up_to, 0.0, 40.0, 20_000);
    rows.push(CertRow::exact(
        "X^h_0 closed form vs quadrature [UpTo(2), atom 0.3]",
        closed,
        quad,
        1e-8,
    ));
    rows.push(CertRow::mc(&direct_payoff_mc(
        &atom_model,
        &HSpec::Time(up_to),
        1.0,
        closed,
        n_paths,
        seed,
    )?));

    rows.push(CertRow::mc(&pseudo_stopping_check(
        ModelSpec::CoxPoisson,
        1.0,
        n_paths,
        seed,
    )?));
    rows.push(CertRow::mc(&pseudo_stopping_check(atom_model, 1.0, n_paths, seed)?));
    rows.push(CertRow::mc(&pseudo_stopping_check(
        ModelSpec::IndependentTau {
            cdf: CdfSpec::point_mass(2.0)?,
        },
        1.0,
        n_paths,
        seed,
    )?));
    Ok(rows)
}
