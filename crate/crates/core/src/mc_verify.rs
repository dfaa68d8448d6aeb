//! Monte Carlo martingale tests.
//!
//! Every statistic is an average over paths `0..n_paths` of one seeded batch.
//! Path results are collected in index order before the reduction, so a report
//! is bit-for-bit reproducible from its seed regardless of the thread count.

use std::sync::Arc;

use rand_distr::{Distribution, Exp, Exp1, Open01};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::experiment::{Experiment, PathBundle};
use crate::models::{gamma, ModelSpec};
use crate::path_engine::{integrate_predictable, Integrand, PoissonClock, PwProcess, Side};
use crate::random_time::{draw_for, Scenario};
use crate::representations::{closed_form_y, mtilde};
use crate::seeds::{stream_rng, StreamKind};
use crate::solvers::HSpec;

pub const MIN_PATHS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct MCReport {
    pub statistic: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub target: f64,
    /// Bound on the bias of the statistic, reported next to the SE.
    pub bias_bound: f64,
    /// `|estimate − target| ≤ 3·SE`.
    pub pass: bool,
}

impl MCReport {
    pub fn from_samples(
        statistic: impl Into<String>,
        samples: &[f64],
        seed: u64,
        target: f64,
        bias_bound: f64,
    ) -> Self {
        let n = samples.len() as f64;
        let estimate = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - estimate).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        let gap = estimate - target;
        let z = if se > 0.0 {
            gap / se
        } else if gap == 0.0 {
            0.0
        } else {
            gap.signum() * f64::INFINITY
        };
        Self {
            statistic: statistic.into(),
            estimate,
            se,
            z,
            n_paths: samples.len(),
            seed,
            target,
            bias_bound,
            pass: gap.abs() <= 3.0 * se,
        }
    }
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < MIN_PATHS {
        return Err(invalid(
            "n_paths",
            format!("must be ≥ {MIN_PATHS} for a Monte Carlo test"),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProcessSelector {
    Mtau,
    Mhat,
    MuH,
    Y,
    MTildeH,
}

impl ProcessSelector {
    pub const ALL: [ProcessSelector; 5] = [
        ProcessSelector::Mtau,
        ProcessSelector::Mhat,
        ProcessSelector::MuH,
        ProcessSelector::Y,
        ProcessSelector::MTildeH,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProcessSelector::Mtau => "Mtau",
            ProcessSelector::Mhat => "Mhat",
            ProcessSelector::MuH => "mu_h",
            ProcessSelector::Y => "Y",
            ProcessSelector::MTildeH => "Mtilde_h",
        }
    }

    pub fn extract(&self, pb: &PathBundle) -> Result<PwProcess> {
        Ok(match self {
            ProcessSelector::Mtau => pb.filtration.mtau.clone(),
            ProcessSelector::Mhat => pb.filtration.mhat.clone(),
            ProcessSelector::MuH => pb.payoff.mu_h.clone(),
            ProcessSelector::Y => closed_form_y(pb),
            ProcessSelector::MTildeH => mtilde(pb)?,
        })
    }
}

/// `E[X_T − X_0] = 0` for several processes, all computed on one batch of paths.
pub fn mean_zero_tests(
    exp: &Experiment,
    selectors: &[ProcessSelector],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MCReport>> {
    check_paths(n_paths)?;
    let rows = exp.map_paths(seed, n_paths, |pb| {
        selectors
            .iter()
            .map(|s| {
                let x = s.extract(pb)?;
                Ok(x.terminal() - x.initial())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(selectors
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let samples: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            MCReport::from_samples(
                format!("mean_zero[{}; {}; {}]", s.name(), exp.model.name(), exp.h.name()),
                &samples,
                seed,
                0.0,
                0.0,
            )
        })
        .collect())
}

pub fn mean_zero_test(exp: &Experiment, selector: ProcessSelector, n_paths: usize, seed: u64) -> Result<MCReport> {
    Ok(mean_zero_tests(exp, &[selector], n_paths, seed)?.remove(0))
}

/// Read-only view of a scenario up to the cut-off `s`; any look beyond `s` is an error.
pub struct TruncatedView<'a> {
    scenario: &'a Scenario,
    cutoff: f64,
}

impl<'a> TruncatedView<'a> {
    pub fn new(scenario: &'a Scenario, cutoff: f64) -> Self {
        Self { scenario, cutoff }
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    fn guard(&self, t: f64) -> Result<()> {
        if t > self.cutoff {
            return Err(Error::FunctionalLookahead {
                requested: t,
                cutoff: self.cutoff,
            });
        }
        Ok(())
    }

    /// `N_t` for `t ≤ s`.
    pub fn n_at(&self, t: f64) -> Result<usize> {
        self.guard(t)?;
        Ok(self.scenario.path.count_at(t))
    }

    /// `H_t` for `t ≤ s`.
    pub fn h_at(&self, t: f64) -> Result<f64> {
        self.guard(t)?;
        Ok(if self.scenario.time.tau <= t { 1.0 } else { 0.0 })
    }

    /// τ if it has occurred by the cut-off.
    pub fn tau_if_observed(&self) -> Option<f64> {
        (self.scenario.time.tau <= self.cutoff).then_some(self.scenario.time.tau)
    }
}

/// `E[(X_T − X_s) g] = 0` for a bounded `G_s`-measurable `g`.
pub fn conditional_increment_test<G>(
    exp: &Experiment,
    selector: ProcessSelector,
    s: f64,
    label: &str,
    functional: G,
    n_paths: usize,
    seed: u64,
) -> Result<MCReport>
where
    G: Fn(&TruncatedView<'_>) -> Result<f64> + Sync,
{
    check_paths(n_paths)?;
    if !(0.0..=exp.horizon).contains(&s) {
        return Err(invalid("s", "must lie in [0, horizon]"));
    }
    let samples = exp.map_paths(seed, n_paths, |pb| {
        let g = functional(&TruncatedView::new(&pb.scenario, s))?;
        let x = selector.extract(pb)?;
        Ok((x.terminal() - x.evaluate(s, Side::Right)?) * g)
    })?;
    Ok(MCReport::from_samples(
        format!(
            "cond_increment[{}; s={s}; g={label}; {}]",
            selector.name(),
            exp.model.name()
        ),
        &samples,
        seed,
        0.0,
        0.0,
    ))
}

/// Time `T` with `P(τ > T) ≤ tail`, and the bound actually achieved.
fn horizon_for_tail(model: &ModelSpec, lambda: f64, tail: f64) -> Result<(f64, f64)> {
    match model {
        ModelSpec::CoxPoisson => {
            if lambda <= 0.0 {
                return Err(invalid("lambda", "must be > 0 for τ to be finite"));
            }
            // P(τ > T) = E e^{−N_T} = e^{−γλT}
            let t = (1.0 / tail).ln() / (gamma() * lambda);
            Ok((t, (-gamma() * lambda * t).exp()))
        }
        ModelSpec::CoxIntensity { intensity } => {
            let a_min = intensity.values().iter().copied().fold(f64::INFINITY, f64::min);
            if a_min <= 0.0 {
                return Err(invalid(
                    "intensity",
                    "needs a positive lower bound for the pseudo-stopping horizon",
                ));
            }
            let t = (1.0 / tail).ln() / a_min;
            Ok((t, (-a_min * t).exp()))
        }
        ModelSpec::IndependentTau { cdf } => {
            let t = cdf.quantile(1.0 - tail).max(f64::MIN_POSITIVE);
            Ok((t, cdf.survival(t)))
        }
    }
}

/// `E[M_{τ∧T}] = 0` for the compensated Poisson martingale, with `T` such that
/// `P(τ > T) ≤ 1e-3`; that tail probability is reported as the bias bound.
pub fn pseudo_stopping_check(model: ModelSpec, lambda: f64, n_paths: usize, seed: u64) -> Result<MCReport> {
    check_paths(n_paths)?;
    // aim slightly below 1e-3 so rounding in T cannot push the bound above it
    let (horizon, tail) = horizon_for_tail(&model, lambda, 1e-3 * (1.0 - 1e-9))?;
    let name = model.name();
    let model = Arc::new(model);
    let samples = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let sc = Scenario::generate(&model, lambda, horizon, seed, i, &[])?;
            let stop = sc.time.tau.min(horizon);
            Ok(sc.path.count_at(stop) as f64 - lambda * stop)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MCReport::from_samples(
        format!("pseudo_stopping[{name}; T={horizon:.4}]"),
        &samples,
        seed,
        0.0,
        tail,
    ))
}

/// Direct simulation of `E[h_τ]` run until τ occurs, without any window.
pub fn direct_payoff_mc(
    model: &ModelSpec,
    h: &HSpec,
    lambda: f64,
    target: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MCReport> {
    check_paths(n_paths)?;
    h.check_admissible(model, lambda)?;
    let samples = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            // independent of the streams that drive the scenarios
            let mut clock_rng = stream_rng(seed, i, StreamKind::Oracle);
            let mut aux = stream_rng(seed, i, StreamKind::Auxiliary);
            let draw = draw_for(model, &mut aux);
            match (model, h) {
                (ModelSpec::IndependentTau { cdf }, HSpec::Time(f)) => Ok(f.eval(cdf.quantile(draw))),
                (ModelSpec::CoxPoisson, HSpec::State(f)) => {
                    if lambda <= 0.0 {
                        return Err(invalid("lambda", "must be > 0 for τ to be finite"));
                    }
                    // τ is the first arrival at which N reaches Θ; record N just before it
                    for (n, _) in PoissonClock::new(lambda, &mut clock_rng).enumerate() {
                        if (n + 1) as f64 >= draw {
                            return Ok(f.eval(n));
                        }
                    }
                    unreachable!("a positive-rate clock never ends")
                }
                (ModelSpec::CoxIntensity { intensity }, HSpec::State(f)) => {
                    let gap = (lambda > 0.0).then(|| Exp::new(lambda).expect("positive rate"));
                    let (mut n, mut big_lambda) = (0usize, 0.0f64);
                    loop {
                        let a = intensity.at(n);
                        let len = gap.as_ref().map_or(f64::INFINITY, |g| g.sample(&mut clock_rng));
                        if big_lambda + a * len >= draw {
                            return Ok(f.eval(n));
                        }
                        big_lambda += a * len;
                        n += 1;
                    }
                }
                _ => Err(Error::NotApplicable {
                    formula: "direct payoff".into(),
                    model: model.name().into(),
                    payoff: h.name().into(),
                }),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MCReport::from_samples(
        format!("direct_payoff[{}; {}]", model.name(), h.name()),
        &samples,
        seed,
        target,
        0.0,
    ))
}

/// Bounded optional test processes for the dual optional projection check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptionalTestProcess {
    One,
    /// `1{N_t ≥ 1}`.
    AfterFirstJump,
    /// `e^{−t} / (1 + N_t)`.
    DiscountedState,
}

impl OptionalTestProcess {
    pub const ALL: [OptionalTestProcess; 3] = [
        OptionalTestProcess::One,
        OptionalTestProcess::AfterFirstJump,
        OptionalTestProcess::DiscountedState,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OptionalTestProcess::One => "one",
            OptionalTestProcess::AfterFirstJump => "after_first_jump",
            OptionalTestProcess::DiscountedState => "discounted_state",
        }
    }

    fn build(&self, sc: &Scenario) -> PwProcess {
        let grid = sc.grid.clone();
        let n = &sc.n;
        match self {
            OptionalTestProcess::One => PwProcess::constant(grid, 1.0),
            OptionalTestProcess::AfterFirstJump => {
                let jumps = (0..grid.len())
                    .map(|i| {
                        if i > 0 && n.left(i) == 0.0 && n.right(i) == 1.0 {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                PwProcess::pure_jump(grid, 0.0, jumps)
            }
            OptionalTestProcess::DiscountedState => {
                let times = grid.times();
                let segs = (0..grid.num_segments())
                    .map(|i| crate::path_engine::SegmentFn::exponential((-times[i]).exp() / (1.0 + n.right(i)), -1.0))
                    .collect();
                PwProcess::from_segments(grid, segs)
            }
        }
    }
}

/// `E[X_τ 1{τ ≤ T}] = E ∫_0^T X dAᵒ`, tested through the paired difference.
pub fn dual_optional_projection_check(
    exp: &Experiment,
    x: OptionalTestProcess,
    n_paths: usize,
    seed: u64,
) -> Result<MCReport> {
    check_paths(n_paths)?;
    let samples = exp.map_paths(seed, n_paths, |pb| {
        let sc = &pb.scenario;
        let proc_x = x.build(sc);
        let at_tau = match sc.tau_index() {
            Some(i) => proc_x.right(i),
            None => 0.0,
        };
        let projected = integrate_predictable(&Integrand::optional(&proc_x), &pb.filtration.ao)?;
        Ok(at_tau - projected.terminal())
    })?;
    Ok(MCReport::from_samples(
        format!("dual_optional[{}; {}]", x.name(), exp.model.name()),
        &samples,
        seed,
        0.0,
        0.0,
    ))
}

/// Fraction of draws that land exactly on `t`.
pub fn atom_frequency(model: &ModelSpec, t: f64, target: f64, n_paths: usize, seed: u64) -> Result<MCReport> {
    check_paths(n_paths)?;
    let ModelSpec::IndependentTau { cdf } = model else {
        return Err(invalid("model", "atom frequencies need an independent time"));
    };
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let u: f64 = Open01.sample(&mut stream_rng(seed, i, StreamKind::Threshold));
            if cdf.quantile(u) == t {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(MCReport::from_samples(
        format!("atom_frequency[t={t}]"),
        &samples,
        seed,
        target,
        0.0,
    ))
}

/// Mean number of Poisson jumps on `[0, T]`, target `λT`.
pub fn poisson_count_mean(lambda: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<MCReport> {
    check_paths(n_paths)?;
    let samples = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i, StreamKind::Poisson);
            crate::path_engine::sample_poisson_path_with(lambda, horizon, &mut rng).map(|p| p.jump_times.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MCReport::from_samples(
        "poisson_count_mean",
        &samples,
        seed,
        lambda * horizon,
        0.0,
    ))
}

/// Unit-exponential sample shared by threshold draws in tests.
pub fn unit_exponential_mean(n_paths: usize, seed: u64) -> Result<MCReport> {
    check_paths(n_paths)?;
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| Exp1.sample(&mut stream_rng(seed, i, StreamKind::Threshold)))
        .collect();
    Ok(MCReport::from_samples("threshold_mean", &samples, seed, 1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random_time::CdfSpec;
    use crate::solvers::{StateFunction, TimeFunction};

    fn cox_poisson(h: StateFunction) -> Experiment {
        Experiment::new(ModelSpec::CoxPoisson, 1.0, 5.0, HSpec::State(h)).unwrap()
    }

    #[test]
    fn report_statistics() {
        let r = MCReport::from_samples("s", &[1.0, 3.0], 7, 2.0, 0.0);
        assert_eq!(r.estimate, 2.0);
        assert!((r.se - 1.0).abs() < 1e-15);
        assert_eq!(r.z, 0.0);
        assert!(r.pass);
        let exact = MCReport::from_samples("s", &[0.5; 4], 7, 0.5, 0.0);
        assert_eq!((exact.se, exact.z, exact.pass), (0.0, 0.0, true));
        let off = MCReport::from_samples("s", &[0.5; 4], 7, 0.0, 0.0);
        assert!(!off.pass && off.z.is_infinite());
    }

    #[test]
    fn too_few_paths_rejected() {
        let exp = cox_poisson(StateFunction::constant(1.0).unwrap());
        assert!(matches!(
            mean_zero_test(&exp, ProcessSelector::Y, 100, 1),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn unit_payoff_y_is_exactly_constant() {
        let exp = cox_poisson(StateFunction::constant(1.0).unwrap());
        let r = mean_zero_test(&exp, ProcessSelector::Y, MIN_PATHS, 3).unwrap();
        assert_eq!((r.estimate, r.se), (0.0, 0.0));
        assert!(r.pass);
    }

    #[test]
    fn functional_beyond_cutoff_is_rejected() {
        let exp = cox_poisson(StateFunction::indicator(0));
        let err = conditional_increment_test(
            &exp,
            ProcessSelector::Mtau,
            2.0,
            "N_3",
            |v| v.n_at(3.0).map(|n| n as f64),
            MIN_PATHS,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::FunctionalLookahead { requested, cutoff } if requested == 3.0 && cutoff == 2.0));
    }

    #[test]
    fn atom_is_hit_at_its_mass() {
        let cdf = CdfSpec::exponential(1.0).unwrap().with_atom(1.0, 0.3).unwrap();
        let r = atom_frequency(&ModelSpec::IndependentTau { cdf }, 1.0, 0.3, 20_000, 11).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn pseudo_stopping_with_point_mass() {
        let model = ModelSpec::IndependentTau {
            cdf: CdfSpec::point_mass(2.0).unwrap(),
        };
        let r = pseudo_stopping_check(model, 1.0, MIN_PATHS, 5).unwrap();
        assert_eq!(r.bias_bound, 0.0);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn direct_payoff_independent_time() {
        // E[1{τ ≤ 1}] for τ ~ Exp(1)
        let model = ModelSpec::IndependentTau {
            cdf: CdfSpec::exponential(1.0).unwrap(),
        };
        let h = HSpec::Time(TimeFunction::indicator_until(1.0).unwrap());
        let target = -(-1f64).exp_m1();
        let r = direct_payoff_mc(&model, &h, 1.0, target, 20_000, 2).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn reports_are_reproducible() {
        let exp = cox_poisson(StateFunction::indicator(0));
        let a = mean_zero_tests(&exp, &ProcessSelector::ALL, MIN_PATHS, 9).unwrap();
        let b = mean_zero_tests(&exp, &ProcessSelector::ALL, MIN_PATHS, 9).unwrap();
        assert_eq!(a, b);
    }
}
