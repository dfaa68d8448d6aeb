//! Payoff specifications, conditional-expectation kernels and their Monte Carlo oracles.

use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::models::{gamma, FiltrationBundle, ModelSpec, StateIntensity};
use crate::path_engine::{integrate_predictable, EventGrid, Integrand, PwProcess, SegmentFn};
use crate::random_time::{CdfSpec, Scenario};
use crate::seeds::{stream_rng, StreamKind};

/// Behaviour of a state function beyond its tabulated values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tail {
    Constant(f64),
    /// `scale · ratio^x`.
    Geometric {
        scale: f64,
        ratio: f64,
    },
}

impl Tail {
    fn eval(&self, x: usize) -> f64 {
        match *self {
            Tail::Constant(c) => c,
            Tail::Geometric { scale, ratio } => scale * ratio.powf(x as f64),
        }
    }
}

/// `h(x)` for the Poisson state `x`; the payoff is `h(N_{t−})`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateFunction {
    values: Vec<f64>,
    tail: Tail,
    name: String,
}

impl StateFunction {
    pub fn new(values: Vec<f64>, tail: Tail, name: impl Into<String>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InadmissiblePayoff("values must be finite".into()));
        }
        match tail {
            Tail::Constant(c) if !c.is_finite() => {
                return Err(Error::InadmissiblePayoff("tail constant must be finite".into()))
            }
            Tail::Geometric { scale, ratio }
                if !scale.is_finite() || !ratio.is_finite() || ratio.abs() >= std::f64::consts::E =>
            {
                return Err(Error::InadmissiblePayoff("geometric tail needs |ratio| < e".into()))
            }
            _ => {}
        }
        Ok(Self {
            values,
            tail,
            name: name.into(),
        })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(Vec::new(), Tail::Constant(c), format!("Constant({c})"))
    }

    /// `1{x = k}`.
    pub fn indicator(k: usize) -> Self {
        let mut values = vec![0.0; k + 1];
        values[k] = 1.0;
        Self::new(values, Tail::Constant(0.0), format!("Indicator({k})")).expect("finite")
    }

    /// `e^{−βx}`.
    pub fn exponential(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= -1.0 {
            return Err(Error::InadmissiblePayoff(
                "exponential payoff needs a finite β > −1".into(),
            ));
        }
        Self::new(
            Vec::new(),
            Tail::Geometric {
                scale: 1.0,
                ratio: (-beta).exp(),
            },
            format!("Exponential({beta})"),
        )
    }

    pub fn eval(&self, x: usize) -> f64 {
        match self.values.get(x) {
            Some(v) => *v,
            None => self.tail.eval(x),
        }
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn tail_start(&self) -> usize {
        self.values.len()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `sup_x |h(x)|`, infinite for a growing geometric tail.
    pub fn sup_abs(&self) -> f64 {
        let table = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tail = match self.tail {
            Tail::Constant(c) => c.abs(),
            Tail::Geometric { scale, ratio } if ratio.abs() <= 1.0 => {
                scale.abs() * ratio.abs().powf(self.tail_start() as f64)
            }
            Tail::Geometric { .. } => f64::INFINITY,
        };
        table.max(tail)
    }

    /// `(C, ρ)` with `|h(x)| ≤ C ρ^x` and `ρ ≥ 1`.
    pub fn growth_bound(&self) -> (f64, f64) {
        let rho = match self.tail {
            Tail::Geometric { ratio, .. } => ratio.abs().max(1.0),
            Tail::Constant(_) => 1.0,
        };
        let table = self
            .values
            .iter()
            .enumerate()
            .fold(0.0f64, |m, (x, v)| m.max(v.abs() / rho.powf(x as f64)));
        let tail = match self.tail {
            Tail::Constant(c) => c.abs(),
            Tail::Geometric { scale, ratio } => scale.abs() * (ratio.abs() / rho).powf(self.tail_start() as f64),
        };
        (table.max(tail), rho)
    }
}

/// Left-continuous deterministic payoff `h(t)`, affine on each `(k_j, k_{j+1}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    name: String,
}

impl TimeFunction {
    /// `values[j]` is the right limit at `knots[j]`; the last piece must be flat.
    pub fn new(knots: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>, name: impl Into<String>) -> Result<Self> {
        if knots.is_empty() || knots[0] != 0.0 || knots.len() != values.len() || knots.len() != slopes.len() {
            return Err(Error::InadmissiblePayoff(
                "time function needs matching knots, values and slopes with the first knot at 0".into(),
            ));
        }
        if !knots.windows(2).all(|w| w[0] < w[1]) || knots.iter().chain(&values).chain(&slopes).any(|v| !v.is_finite())
        {
            return Err(Error::InadmissiblePayoff(
                "time function knots must increase and all entries must be finite".into(),
            ));
        }
        if *slopes.last().unwrap() != 0.0 {
            return Err(Error::InadmissiblePayoff(
                "time function must be bounded, so its last piece is flat".into(),
            ));
        }
        Ok(Self {
            knots,
            values,
            slopes,
            name: name.into(),
        })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![c], vec![0.0], format!("Constant({c})"))
    }

    /// `1{t ≤ t0}`.
    pub fn indicator_until(t0: f64) -> Result<Self> {
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(Error::InadmissiblePayoff("t0 must be finite and > 0".into()));
        }
        Self::new(vec![0.0, t0], vec![1.0, 0.0], vec![0.0, 0.0], format!("UpTo({t0})"))
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn piece_index(&self, t: f64) -> usize {
        self.knots.partition_point(|k| *k < t).max(1) - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        let j = self.piece_index(t);
        self.values[j] + self.slopes[j] * (t - self.knots[j])
    }

    /// `(h(b+), slope)` on the piece right after `b`.
    fn after(&self, b: f64) -> (f64, f64) {
        let j = self.knots.partition_point(|k| *k <= b) - 1;
        (self.values[j] + self.slopes[j] * (b - self.knots[j]), self.slopes[j])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HSpec {
    Time(TimeFunction),
    State(StateFunction),
}

impl HSpec {
    pub fn name(&self) -> &str {
        match self {
            HSpec::Time(f) => f.name(),
            HSpec::State(f) => f.name(),
        }
    }

    /// Deterministic times the event grid must contain.
    pub fn knots(&self) -> Vec<f64> {
        match self {
            HSpec::Time(f) => f.knots().to_vec(),
            HSpec::State(_) => Vec::new(),
        }
    }

    pub fn is_unit(&self) -> bool {
        match self {
            HSpec::Time(f) => f.values.iter().all(|v| *v == 1.0) && f.slopes.iter().all(|s| *s == 0.0),
            HSpec::State(f) => f.values.iter().all(|v| *v == 1.0) && f.tail == Tail::Constant(1.0),
        }
    }

    pub fn check_admissible(&self, model: &ModelSpec, lambda: f64) -> Result<()> {
        match (self, model) {
            (HSpec::Time(_), ModelSpec::IndependentTau { .. }) => Ok(()),
            (HSpec::State(_), ModelSpec::CoxPoisson) => Ok(()),
            (HSpec::State(h), ModelSpec::CoxIntensity { intensity }) => {
                if let Tail::Geometric { ratio, .. } = h.tail {
                    let alpha = intensity.tail_value();
                    if (lambda / (alpha + lambda) * ratio).abs() >= 1.0 {
                        return Err(Error::InadmissiblePayoff(
                            "geometric tail too steep for the intensity tail".into(),
                        ));
                    }
                }
                Ok(())
            }
            (HSpec::Time(_), _) => Err(Error::InadmissiblePayoff(
                "a deterministic time payoff needs an independent random time".into(),
            )),
            (HSpec::State(_), _) => Err(Error::InadmissiblePayoff("a state payoff needs a Cox model".into())),
        }
    }
}

/// `h̃(x) = γ Σ_{k≥0} (1−γ)^k h(x+k)`, with the tail beyond the table summed in closed form.
pub fn htilde(h: &StateFunction, x: usize) -> f64 {
    let g = gamma();
    let start = h.tail_start();
    if x >= start {
        return htilde_tail(h, x);
    }
    let reach = start - x;
    let mut acc = 0.0;
    for k in 0..reach {
        acc += g * (-(k as f64)).exp() * h.eval(x + k);
    }
    acc + (-(reach as f64)).exp() * htilde_tail(h, start)
}

fn htilde_tail(h: &StateFunction, x: usize) -> f64 {
    match h.tail {
        Tail::Constant(c) => c,
        Tail::Geometric { scale, ratio } => {
            gamma() * scale * ratio.powf(x as f64) / (1.0 - ratio / std::f64::consts::E)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Htilde,
    G,
}

/// Tabulated kernel with a closed-form tail; no truncation is involved.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    kind: KernelKind,
    values: Vec<f64>,
    tail: Tail,
    /// Certified truncation error of the tabulated values.
    pub truncation_bound: f64,
}

impl KernelTable {
    pub fn htilde(h: &StateFunction, reach: usize) -> Self {
        let start = h.tail_start();
        let values = (0..=reach.max(start)).map(|x| htilde(h, x)).collect();
        let tail = match h.tail {
            Tail::Constant(c) => Tail::Constant(c),
            Tail::Geometric { scale, ratio } => Tail::Geometric {
                scale: gamma() * scale / (1.0 - ratio / std::f64::consts::E),
                ratio,
            },
        };
        Self {
            kind: KernelKind::Htilde,
            values,
            tail,
            truncation_bound: 0.0,
        }
    }

    /// `g(x) = (a(x)h(x) + λ g(x+1)) / (a(x) + λ)`, exact geometric solution from the tail on.
    pub fn g(intensity: &StateIntensity, h: &StateFunction, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(invalid("lambda", "must be ≥ 0 and finite"));
        }
        let alpha = intensity.tail_value();
        let p = alpha / (alpha + lambda);
        let q = lambda / (alpha + lambda);
        let tail = match h.tail {
            Tail::Constant(c) => Tail::Constant(c),
            Tail::Geometric { scale, ratio } => {
                if (q * ratio).abs() >= 1.0 {
                    return Err(Error::InadmissiblePayoff(
                        "geometric tail too steep for the intensity tail".into(),
                    ));
                }
                Tail::Geometric {
                    scale: p * scale / (1.0 - q * ratio),
                    ratio,
                }
            }
        };
        let cut = intensity.tail_cut().max(h.tail_start());
        let mut values = vec![0.0; cut + 1];
        values[cut] = tail.eval(cut);
        for x in (0..cut).rev() {
            let a = intensity.at(x);
            values[x] = if a + lambda == 0.0 {
                0.0
            } else {
                (a * h.eval(x) + lambda * values[x + 1]) / (a + lambda)
            };
        }
        Ok(Self {
            kind: KernelKind::G,
            values,
            tail,
            truncation_bound: 0.0,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn value(&self, x: usize) -> f64 {
        match self.values.get(x) {
            Some(v) => *v,
            None => self.tail.eval(x),
        }
    }

    pub fn tabulated(&self) -> &[f64] {
        &self.values
    }
}

/// `γh(x) + (1−γ)h̃(x+1) − h̃(x)`.
pub fn htilde_recursion_residual(h: &StateFunction, table: &KernelTable, x: usize) -> f64 {
    let g = gamma();
    g * h.eval(x) + (1.0 - g) * table.value(x + 1) - table.value(x)
}

/// `(a(x)h(x) + λg(x+1)) / (a(x)+λ) − g(x)`.
pub fn g_recursion_residual(
    intensity: &StateIntensity,
    h: &StateFunction,
    lambda: f64,
    table: &KernelTable,
    x: usize,
) -> f64 {
    let a = intensity.at(x);
    if a + lambda == 0.0 {
        return table.value(x);
    }
    (a * h.eval(x) + lambda * table.value(x + 1)) / (a + lambda) - table.value(x)
}

/// Monte Carlo estimate with its standard error and the certified truncation bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleEstimate {
    pub estimate: f64,
    pub se: f64,
    pub bias_bound: f64,
    pub n_paths: usize,
}

impl OracleEstimate {
    pub fn from_samples(samples: &[f64], bias_bound: f64) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            estimate: mean,
            se: (var / n).sqrt(),
            bias_bound,
            n_paths: samples.len(),
        }
    }

    /// `|estimate − target| ≤ 3·SE + bias`.
    pub fn agrees_with(&self, target: f64) -> bool {
        (self.estimate - target).abs() <= 3.0 * self.se + self.bias_bound
    }
}

fn per_path<F>(n_paths: usize, seed: u64, f: F) -> Vec<f64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| f(&mut stream_rng(seed, i, StreamKind::Oracle)))
        .collect()
}

/// Direct simulation of `E ∫_0^∞ γλ h(N_s + x) e^{−N_s} ds`, truncated at a horizon
/// chosen so that the remainder is below `1e-6`.
pub fn htilde_mc_oracle(h: &StateFunction, x: usize, lambda: f64, n_paths: usize, seed: u64) -> Result<OracleEstimate> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid("lambda", "must be > 0 for the kernel oracle"));
    }
    let g = gamma();
    let (c, rho) = h.growth_bound();
    let r = rho / std::f64::consts::E;
    let scale = g * c * rho.powf(x as f64) / (1.0 - r);
    let target_bias = 1e-6;
    let horizon = if scale <= target_bias {
        0.0
    } else {
        (scale / target_bias).ln() / (lambda * (1.0 - r))
    };
    let bias_bound = scale * (-lambda * (1.0 - r) * horizon).exp();
    let gap = Exp::new(lambda).expect("positive rate");
    let samples = per_path(n_paths, seed, |rng| {
        let (mut t, mut k, mut acc) = (0.0f64, 0usize, 0.0f64);
        while t < horizon {
            let next = (t + gap.sample(rng)).min(horizon);
            acc += g * lambda * h.eval(x + k) * (-(k as f64)).exp() * (next - t);
            t = next;
            k += 1;
        }
        acc
    });
    Ok(OracleEstimate::from_samples(&samples, bias_bound))
}

/// Direct simulation of `g(x) = E_x ∫_0^∞ h(N_s) a(N_s) e^{−Λ_s} ds` for a bounded `h`.
pub fn g_mc_oracle(
    intensity: &StateIntensity,
    h: &StateFunction,
    lambda: f64,
    x: usize,
    n_paths: usize,
    seed: u64,
) -> Result<OracleEstimate> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid("lambda", "must be > 0 for the kernel oracle"));
    }
    let sup = h.sup_abs();
    if !sup.is_finite() {
        return Err(Error::InadmissiblePayoff("the g oracle needs a bounded h".into()));
    }
    let cutoff = 40.0;
    let gap = Exp::new(lambda).expect("positive rate");
    let samples = per_path(n_paths, seed, |rng| {
        let (mut big_lambda, mut k, mut acc) = (0.0f64, x, 0.0f64);
        while big_lambda < cutoff {
            let a = intensity.at(k);
            let len = gap.sample(rng);
            acc += h.eval(k) * (-big_lambda).exp() * -(-a * len).exp_m1();
            big_lambda += a * len;
            k += 1;
        }
        acc
    });
    Ok(OracleEstimate::from_samples(&samples, sup * (-cutoff).exp()))
}

/// `E[e^{−N_s}]` by simulation; the closed form is `e^{−γλs}`.
pub fn poisson_exponential_moment_mc(lambda: f64, s: f64, n_paths: usize, seed: u64) -> Result<OracleEstimate> {
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i, StreamKind::Oracle);
            crate::path_engine::sample_poisson_path_with(lambda, s, &mut rng)
                .map(|p| (-(p.jump_times.len() as f64)).exp())
        })
        .collect::<Result<_>>()?;
    Ok(OracleEstimate::from_samples(&samples, 0.0))
}

/// Midpoint-rule reference for `∫_{(t, upper]} h dF`, split at the knots of `h` and
/// `F`, with atoms added exactly.
pub fn independent_xh_quadrature(cdf: &CdfSpec, h: &TimeFunction, t: f64, upper: f64, steps_per_piece: usize) -> f64 {
    let mut cuts: Vec<f64> = cdf
        .event_times()
        .into_iter()
        .chain(h.knots().iter().copied())
        .filter(|c| *c > t && *c < upper)
        .collect();
    cuts.push(t);
    cuts.push(upper);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let dt = (w[1] - w[0]) / steps_per_piece as f64;
        for i in 0..steps_per_piece {
            let a = w[0] + i as f64 * dt;
            let b = a + dt;
            let continuous = cdf.survival(a) - cdf.survival(b) - atoms_in(cdf, a, b);
            acc += h.eval(0.5 * (a + b)) * continuous;
        }
    }
    acc + cdf
        .atoms()
        .iter()
        .filter(|at| at.time > t && at.time <= upper)
        .map(|at| h.eval(at.time) * at.mass)
        .sum::<f64>()
}

fn atoms_in(cdf: &CdfSpec, a: f64, b: f64) -> f64 {
    cdf.atoms()
        .iter()
        .filter(|at| at.time > a && at.time <= b)
        .map(|at| at.mass)
        .sum()
}

/// `X^h_t = ∫_{(t,∞)} h dF` for an independent time, exact on every segment of `grid`.
pub fn independent_xh(cdf: &CdfSpec, h: &TimeFunction, grid: &std::sync::Arc<EventGrid>) -> Result<PwProcess> {
    let mut starts: Vec<f64> = cdf.event_times();
    starts.extend_from_slice(h.knots());
    starts.sort_by(|a, b| a.total_cmp(b));
    starts.dedup();
    let n = starts.len();
    let mut pieces: Vec<SegmentFn> = Vec::with_capacity(n);
    for d in &starts {
        let (c0, c1) = h.after(*d);
        let r = cdf.hazard_at(*d);
        let density = SegmentFn::exponential(r * cdf.survival(*d), -r);
        pieces.push(SegmentFn::affine(c0, c1).mul(&density).antiderivative());
    }
    // X at each start, backward from the unbounded last piece
    let mut at_start = vec![0.0; n];
    let last = n - 1;
    {
        let (c0, c1) = h.after(starts[last]);
        let r = cdf.hazard_at(starts[last]);
        at_start[last] = if r > 0.0 {
            cdf.survival(starts[last]) * (c0 + c1 / r)
        } else {
            0.0
        };
    }
    for j in (0..last).rev() {
        let next = starts[j + 1];
        let left_of_next = at_start[j + 1] + h.eval(next) * cdf.atom_mass(next);
        at_start[j] = left_of_next + pieces[j].eval(next - starts[j]);
    }
    let times = grid.times();
    if starts
        .iter()
        .any(|d| *d <= grid.horizon() && grid.index_of(*d).is_none())
    {
        return Err(Error::GridMismatch);
    }
    let mut segs = Vec::with_capacity(grid.num_segments());
    for b in &times[..grid.num_segments()] {
        let j = starts.partition_point(|d| *d <= *b) - 1;
        let g = pieces[j].shift(b - starts[j]);
        segs.push(SegmentFn::constant(at_start[j]).sub(&g));
    }
    let jumps = times
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mass = cdf.atom_mass(*b);
            if i == 0 || mass == 0.0 {
                0.0
            } else {
                -h.eval(*b) * mass
            }
        })
        .collect();
    Ok(PwProcess::new(grid.clone(), segs, jumps))
}

/// Payoff-dependent processes of one scenario.
#[derive(Clone, Debug)]
pub struct PayoffBundle {
    /// `h_t` as an integrand: `h(N_{t−})` or the deterministic `h(t)`.
    pub h: Integrand,
    /// `h_τ`, zero when τ is beyond the horizon.
    pub h_tau: f64,
    pub xh: PwProcess,
    pub mu_h: PwProcess,
    pub phi_h: Integrand,
    /// `X^h / Z` before τ; `h̃(N)` or `g(N)` in the Cox models.
    pub ratio: PwProcess,
}

/// Kernel needed by a (model, payoff) pair, if any.
pub fn kernel_for(model: &ModelSpec, h: &HSpec, lambda: f64) -> Result<Option<KernelTable>> {
    h.check_admissible(model, lambda)?;
    Ok(match (model, h) {
        (ModelSpec::CoxPoisson, HSpec::State(f)) => Some(KernelTable::htilde(f, 32)),
        (ModelSpec::CoxIntensity { intensity }, HSpec::State(f)) => Some(KernelTable::g(intensity, f, lambda)?),
        _ => None,
    })
}

/// `h_t` on the scenario grid.
pub fn h_integrand(scenario: &Scenario, h: &HSpec) -> Integrand {
    let grid = &scenario.grid;
    match h {
        HSpec::State(f) => {
            let n = &scenario.n;
            let segs = (0..grid.num_segments())
                .map(|i| SegmentFn::constant(f.eval(n.right(i) as usize)))
                .collect();
            let at_jump = (0..grid.len()).map(|i| f.eval(n.left(i) as usize)).collect();
            Integrand::new(grid.clone(), segs, at_jump)
        }
        HSpec::Time(f) => {
            let times = grid.times();
            let segs = times[..grid.num_segments()]
                .iter()
                .map(|b| {
                    let (v, slope) = f.after(*b);
                    SegmentFn::affine(v, slope)
                })
                .collect();
            let at_jump = times.iter().map(|b| f.eval(*b)).collect();
            Integrand::new(grid.clone(), segs, at_jump)
        }
    }
}

/// `X^h`, `μ^h = X^h + ∫ h dAᵖ`, `φ^h` and `X^h/Z`.
pub fn xh_process(
    scenario: &Scenario,
    bundle: &FiltrationBundle,
    h: &HSpec,
    kernel: Option<&KernelTable>,
) -> Result<PayoffBundle> {
    let grid = &scenario.grid;
    let h_int = h_integrand(scenario, h);
    let h_tau = match scenario.tau_index() {
        Some(i) => h_int.at_jump(i),
        None => 0.0,
    };
    let z = &bundle.z;
    let (xh, ratio, phi_h) = match (scenario.model.as_ref(), h, kernel) {
        (ModelSpec::IndependentTau { cdf }, HSpec::Time(f), _) => {
            let xh = independent_xh(cdf, f, grid)?;
            let ratio = divide(&xh, z)?;
            (xh, ratio, Integrand::constant(grid.clone(), 0.0))
        }
        (ModelSpec::CoxPoisson | ModelSpec::CoxIntensity { .. }, HSpec::State(_), Some(k)) => {
            let n = &scenario.n;
            let state = |i: usize, side_right: bool| {
                if side_right {
                    n.right(i) as usize
                } else {
                    n.left(i) as usize
                }
            };
            let segs = (0..grid.num_segments())
                .map(|i| z.segments()[i].scale(k.value(state(i, true))))
                .collect();
            let jumps = (0..grid.len())
                .map(|i| {
                    if i == 0 || (n.jump(i) == 0.0 && z.jump(i) == 0.0) {
                        0.0
                    } else {
                        k.value(state(i, true)) * z.right(i) - k.value(state(i, false)) * z.left(i)
                    }
                })
                .collect();
            let xh = PwProcess::new(grid.clone(), segs, jumps);
            let ratio = PwProcess::pure_jump(
                grid.clone(),
                k.value(0),
                (0..grid.len())
                    .map(|i| {
                        if i == 0 || n.jump(i) == 0.0 {
                            0.0
                        } else {
                            k.value(state(i, true)) - k.value(state(i, false))
                        }
                    })
                    .collect(),
            );
            // φ^h = Z_−(c·k(N_− + 1) − k(N_−)), c = 1 − γ for Λ = N and 1 otherwise
            let c = if scenario.model.has_jump_overlap() {
                1.0 - gamma()
            } else {
                1.0
            };
            let weight = |x: usize| c * k.value(x + 1) - k.value(x);
            let phi_segs = (0..grid.num_segments())
                .map(|i| z.segments()[i].scale(weight(state(i, true))))
                .collect();
            let phi_at = (0..grid.len()).map(|i| weight(state(i, false)) * z.left(i)).collect();
            (xh, ratio, Integrand::new(grid.clone(), phi_segs, phi_at))
        }
        _ => {
            return Err(Error::NotApplicable {
                formula: "X^h".into(),
                model: scenario.model.name().into(),
                payoff: h.name().into(),
            })
        }
    };
    let mu_h = xh.add(&integrate_predictable(&h_int, &bundle.ap)?)?;
    Ok(PayoffBundle {
        h: h_int,
        h_tau,
        xh,
        mu_h,
        phi_h,
        ratio,
    })
}

/// Segment-wise `X / Z` for a single-exponential `Z`.
pub(crate) fn divide(x: &PwProcess, z: &PwProcess) -> Result<PwProcess> {
    let a = Integrand::optional(x).div(&Integrand::optional(z))?;
    let grid = x.grid();
    let jumps = (0..grid.len())
        .map(|i| {
            if i == 0 || (x.jump(i) == 0.0 && z.jump(i) == 0.0) {
                0.0
            } else {
                x.right(i) / z.right(i) - x.left(i) / z.left(i)
            }
        })
        .collect();
    Ok(PwProcess::new(grid.clone(), a.segments().to_vec(), jumps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_engine::{JumpPath, Side};
    use std::sync::Arc;

    #[test]
    fn htilde_of_constant_is_constant() {
        let h = StateFunction::constant(1.0).unwrap();
        for x in 0..10 {
            assert_eq!(htilde(&h, x), 1.0);
        }
    }

    #[test]
    fn htilde_of_indicator() {
        let h = StateFunction::indicator(0);
        assert!((htilde(&h, 0) - 0.6321205588285577).abs() < 1e-15);
        assert_eq!(htilde(&h, 1), 0.0);
        let h2 = StateFunction::indicator(2);
        // γ e^{-2}
        assert!((htilde(&h2, 0) - gamma() * (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn htilde_geometric_matches_long_series() {
        let h = StateFunction::exponential(1.0).unwrap();
        for x in 0..5 {
            let series: f64 = (0..400)
                .map(|k| gamma() * (-(k as f64)).exp() * (-((x + k) as f64)).exp())
                .sum();
            assert!((htilde(&h, x) - series).abs() < 1e-15);
        }
    }

    #[test]
    fn recursion_residuals() {
        for h in [
            StateFunction::indicator(0),
            StateFunction::indicator(2),
            StateFunction::exponential(1.0).unwrap(),
            StateFunction::constant(1.0).unwrap(),
        ] {
            let t = KernelTable::htilde(&h, 20);
            for x in 0..=20 {
                assert!(htilde_recursion_residual(&h, &t, x).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn g_kernel_constant_intensity_series() {
        let a = StateIntensity::constant(1.5).unwrap();
        let lambda = 0.8;
        let h = StateFunction::indicator(1);
        let t = KernelTable::g(&a, &h, lambda).unwrap();
        let (p, q): (f64, f64) = (1.5 / 2.3, 0.8 / 2.3);
        for x in 0..4 {
            let series: f64 = (0..200).map(|k| p * q.powi(k) * h.eval(x + k as usize)).sum();
            assert!((t.value(x) - series).abs() < 1e-15);
        }
        let one = StateFunction::constant(1.0).unwrap();
        let t1 = KernelTable::g(&a, &one, lambda).unwrap();
        assert!((0..6).all(|x| (t1.value(x) - 1.0).abs() < 1e-15));
    }

    #[test]
    fn g_kernel_recursion_residual() {
        let a = StateIntensity::new(vec![1.0, 2.0]).unwrap();
        let h = StateFunction::exponential(1.0).unwrap();
        let t = KernelTable::g(&a, &h, 1.0).unwrap();
        for x in 0..=20 {
            assert!(g_recursion_residual(&a, &h, 1.0, &t, x).abs() <= 1e-12);
        }
    }

    #[test]
    fn time_function_is_left_continuous() {
        let h = TimeFunction::indicator_until(2.0).unwrap();
        assert_eq!(h.eval(2.0), 1.0);
        assert_eq!(h.eval(2.0 + 1e-12), 0.0);
        assert_eq!(h.eval(0.0), 1.0);
        assert!(TimeFunction::new(vec![0.0], vec![0.0], vec![1.0], "ramp").is_err());
    }

    #[test]
    fn independent_xh_exponential_indicator() {
        let cdf = CdfSpec::exponential(1.0).unwrap();
        let h = TimeFunction::indicator_until(1.0).unwrap();
        let grid = Arc::new(EventGrid::new(5.0, [0.3, 1.0, 2.7]).unwrap());
        let xh = independent_xh(&cdf, &h, &grid).unwrap();
        for t in [0.0, 0.2, 0.3, 0.9, 1.0, 1.5, 4.0, 5.0] {
            let v = xh.evaluate(t, Side::Right).unwrap();
            let want = if t <= 1.0 { (-t).exp() - (-1.0f64).exp() } else { 0.0 };
            assert!((v - want).abs() < 1e-15, "t={t}: {v} vs {want}");
        }
    }

    #[test]
    fn independent_xh_with_atom_matches_quadrature() {
        let cdf = CdfSpec::exponential(1.0).unwrap().with_atom(1.0, 0.3).unwrap();
        let h = TimeFunction::new(vec![0.0, 0.5, 2.0], vec![1.0, 0.4, 0.0], vec![0.0, 0.3, 0.0], "ramp").unwrap();
        let mut knots = cdf.event_times();
        knots.extend_from_slice(h.knots());
        let grid = Arc::new(EventGrid::new(6.0, knots).unwrap());
        let xh = independent_xh(&cdf, &h, &grid).unwrap();
        for t in [0.0, 0.25, 0.7, 1.0, 1.8, 3.0] {
            let q = independent_xh_quadrature(&cdf, &h, t, 60.0, 20_000);
            let v = xh.evaluate(t, Side::Right).unwrap();
            assert!((v - q).abs() < 1e-8, "t={t}: {v} vs {q}");
        }
        let i = grid.index_of(1.0).unwrap();
        assert!((xh.jump(i) + h.eval(1.0) * 0.3).abs() < 1e-15);
    }

    #[test]
    fn cox_poisson_unit_payoff() {
        let model = Arc::new(ModelSpec::CoxPoisson);
        let path = JumpPath::new(1.0, 10.0, vec![0.7, 1.9, 3.3]).unwrap();
        let sc = Scenario::build(&model, path, 2.5, &[]).unwrap();
        let b = FiltrationBundle::build(&sc).unwrap();
        let h = HSpec::State(StateFunction::constant(1.0).unwrap());
        let k = kernel_for(&model, &h, 1.0).unwrap();
        let p = xh_process(&sc, &b, &h, k.as_ref()).unwrap();
        assert_eq!(p.xh.max_abs_diff(&b.z).unwrap(), 0.0);
        // μ^h = Z + Aᵖ = μ, which is not constant here since μ jumps with N
        assert!(p.mu_h.max_abs_diff(&b.mu).unwrap() < 1e-14);
    }

    #[test]
    fn inadmissible_payoffs() {
        assert!(StateFunction::new(vec![], Tail::Geometric { scale: 1.0, ratio: 3.0 }, "g").is_err());
        let h = HSpec::Time(TimeFunction::constant(1.0).unwrap());
        assert!(h.check_admissible(&ModelSpec::CoxPoisson, 1.0).is_err());
    }
}
