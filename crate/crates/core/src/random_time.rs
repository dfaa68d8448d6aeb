//! Random times, the indicator process and scenarios.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01};

use crate::error::{invalid, Error, Result};
use crate::models::ModelSpec;
use crate::path_engine::{sample_poisson_path_with, EventGrid, JumpPath, PwProcess, SegmentFn};
use crate::seeds::{stream_rng, StreamKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom {
    pub time: f64,
    pub mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct SurvivalPiece {
    start: f64,
    survival: f64,
    hazard: f64,
}

/// Distribution of a random time independent of the Poisson clock.
///
/// The continuous part is given by a piecewise-constant hazard rate, which
/// keeps the survival function piecewise exponential; atoms carry absolute
/// probability masses `P(τ = t_k) = p_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CdfSpec {
    knots: Vec<f64>,
    rates: Vec<f64>,
    atoms: Vec<Atom>,
    pieces: Vec<SurvivalPiece>,
}

const MASS_SLACK: f64 = 1e-12;

impl CdfSpec {
    /// Hazard `rates[j]` on `[knots[j], knots[j+1])`, the last rate extending to infinity.
    pub fn piecewise_hazard(knots: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        Self::build(knots, rates, Vec::new())
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::piecewise_hazard(vec![0.0], vec![rate])
    }

    /// `τ ≡ t0`.
    pub fn point_mass(t0: f64) -> Result<Self> {
        Self::build(vec![0.0], vec![0.0], vec![Atom { time: t0, mass: 1.0 }])
    }

    pub fn with_atom(self, time: f64, mass: f64) -> Result<Self> {
        let mut atoms = self.atoms;
        atoms.push(Atom { time, mass });
        Self::build(self.knots, self.rates, atoms)
    }

    fn build(knots: Vec<f64>, rates: Vec<f64>, mut atoms: Vec<Atom>) -> Result<Self> {
        if knots.is_empty() || knots.len() != rates.len() || knots[0] != 0.0 {
            return Err(invalid("cdf", "needs matching knots/rates with the first knot at 0"));
        }
        if !knots.windows(2).all(|w| w[0] < w[1]) || knots.iter().any(|k| !k.is_finite()) {
            return Err(invalid("cdf", "hazard knots must be finite and increasing"));
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invalid("cdf", "hazard rates must be finite and ≥ 0"));
        }
        atoms.sort_by(|a, b| a.time.total_cmp(&b.time));
        for a in &atoms {
            if !(a.time.is_finite() && a.time > 0.0) || !(a.mass > 0.0 && a.mass <= 1.0) {
                return Err(invalid("cdf", "atoms need a time > 0 and a mass in (0, 1]"));
            }
        }
        if atoms.windows(2).any(|w| w[0].time == w[1].time) {
            return Err(invalid("cdf", "duplicate atom times"));
        }

        let mut starts: Vec<f64> = knots.iter().copied().chain(atoms.iter().map(|a| a.time)).collect();
        starts.sort_by(|a, b| a.total_cmp(b));
        starts.dedup();
        let mut pieces = Vec::with_capacity(starts.len());
        let mut survival = 1.0;
        for (j, start) in starts.iter().enumerate() {
            if j > 0 {
                let prev: &SurvivalPiece = &pieces[j - 1];
                survival = prev.survival * (-prev.hazard * (start - prev.start)).exp();
            }
            if let Some(a) = atoms.iter().find(|a| a.time == *start) {
                if a.mass > survival + MASS_SLACK {
                    return Err(invalid(
                        "cdf",
                        format!("atom at {} exceeds the remaining mass {survival}", a.time),
                    ));
                }
                survival = (survival - a.mass).max(0.0);
            }
            let k = knots.partition_point(|k| *k <= *start) - 1;
            pieces.push(SurvivalPiece {
                start: *start,
                survival,
                hazard: rates[k],
            });
        }
        let last = pieces.last().unwrap();
        if last.hazard == 0.0 && last.survival > MASS_SLACK {
            return Err(invalid("cdf", "distribution function must reach 1 (τ is finite)"));
        }
        Ok(Self {
            knots,
            rates,
            atoms,
            pieces,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn has_atoms(&self) -> bool {
        !self.atoms.is_empty()
    }

    /// Hazard knots and atom times, the deterministic breakpoints of `F`.
    pub fn event_times(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.start).collect()
    }

    fn piece(&self, t: f64) -> &SurvivalPiece {
        let j = self.pieces.partition_point(|p| p.start <= t);
        &self.pieces[j.max(1) - 1]
    }

    /// `P(τ > t)`.
    pub fn survival(&self, t: f64) -> f64 {
        let p = self.piece(t);
        p.survival * (-p.hazard * (t - p.start)).exp()
    }

    /// `P(τ ≥ t)`.
    pub fn survival_left(&self, t: f64) -> f64 {
        self.survival(t) + self.atom_mass(t)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.survival(t)
    }

    pub fn atom_mass(&self, t: f64) -> f64 {
        self.atoms.iter().find(|a| a.time == t).map_or(0.0, |a| a.mass)
    }

    /// Hazard rate on the piece `[t, next event)`.
    pub fn hazard_at(&self, t: f64) -> f64 {
        self.piece(t).hazard
    }

    /// `P(τ > t0 + s)` for `s` in the piece starting at or before `t0`.
    pub fn survival_segment(&self, t0: f64) -> SegmentFn {
        let p = self.piece(t0);
        SegmentFn::exponential(self.survival(t0), -p.hazard)
    }

    /// Generalized inverse `inf{t : F(t) ≥ u}`; atoms are returned bit-exactly.
    pub fn quantile(&self, u: f64) -> f64 {
        let target = 1.0 - u;
        for (j, p) in self.pieces.iter().enumerate() {
            if p.survival <= target {
                return p.start;
            }
            if p.hazard > 0.0 {
                let t = p.start + (p.survival / target).ln() / p.hazard;
                match self.pieces.get(j + 1) {
                    Some(next) if t >= next.start => continue,
                    _ => return t,
                }
            }
        }
        f64::INFINITY
    }
}

/// Realization of the random time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomTimeSample {
    /// `f64::INFINITY` when a Cox time is not reached before the horizon.
    pub tau: f64,
    /// Unit-exponential threshold of a Cox construction.
    pub theta: Option<f64>,
    pub coincides_with_jump: bool,
}

impl RandomTimeSample {
    pub fn within(&self, horizon: f64) -> bool {
        self.tau <= horizon
    }
}

/// First time the cumulative hazard reaches `theta`.
///
/// Jumps of the hazard snap the crossing to the jump time; on affine pieces
/// the crossing is solved linearly.
pub fn cox_time(path: &JumpPath, cum_hazard: &PwProcess, theta: f64) -> Result<RandomTimeSample> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(invalid("theta", "must be finite and > 0"));
    }
    if cum_hazard.initial() != 0.0 {
        return Err(invalid("cum_hazard", "must start at 0"));
    }
    let grid = cum_hazard.grid();
    let times = grid.times();
    let k = grid.num_segments();
    let mut tau = f64::INFINITY;
    for i in 0..=k {
        if cum_hazard.jump(i) < 0.0 {
            return Err(Error::DecreasingHazard(times[i]));
        }
        if cum_hazard.right(i) >= theta {
            tau = times[i];
            break;
        }
        if i == k {
            break;
        }
        let (v0, slope) = cum_hazard.segments()[i]
            .as_affine()
            .ok_or_else(|| invalid("cum_hazard", "must be affine between events"))?;
        if slope < 0.0 {
            return Err(Error::DecreasingHazard(times[i]));
        }
        if slope > 0.0 && cum_hazard.left(i + 1) >= theta {
            let t = times[i] + (theta - v0) / slope;
            tau = t.min(times[i + 1]);
            break;
        }
    }
    Ok(RandomTimeSample {
        tau,
        theta: Some(theta),
        coincides_with_jump: tau.is_finite() && path.is_jump_time(tau),
    })
}

/// Random time with distribution `cdf`, drawn from the uniform `u`.
pub fn independent_time(cdf: &CdfSpec, u: f64) -> Result<RandomTimeSample> {
    if !(u > 0.0 && u < 1.0) {
        return Err(invalid("u", "must lie in (0, 1)"));
    }
    Ok(RandomTimeSample {
        tau: cdf.quantile(u),
        theta: None,
        coincides_with_jump: false,
    })
}

/// `H_t = 1{τ ≤ t}` on `grid`, which must contain τ when τ ≤ horizon.
pub fn indicator(sample: &RandomTimeSample, grid: &Arc<EventGrid>) -> Result<PwProcess> {
    let mut jumps = vec![0.0; grid.len()];
    if sample.within(grid.horizon()) {
        let i = grid
            .index_of(sample.tau)
            .ok_or_else(|| invalid("grid", "must contain τ"))?;
        jumps[i] = 1.0;
    }
    Ok(PwProcess::pure_jump(grid.clone(), 0.0, jumps))
}

/// One simulated world: Poisson path, random time, grid and indicator.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub path: JumpPath,
    pub time: RandomTimeSample,
    pub model: Arc<ModelSpec>,
    pub grid: Arc<EventGrid>,
    pub n: PwProcess,
    pub h: PwProcess,
}

impl Scenario {
    /// `draw` is the threshold Θ for Cox models and the uniform `u` for an independent time.
    pub fn build(model: &Arc<ModelSpec>, path: JumpPath, draw: f64, extra_times: &[f64]) -> Result<Self> {
        model.validate()?;
        let horizon = path.horizon;
        let time = match model.as_ref() {
            ModelSpec::IndependentTau { cdf } => independent_time(cdf, draw)?,
            ModelSpec::CoxPoisson | ModelSpec::CoxIntensity { .. } => {
                let path_grid = Arc::new(EventGrid::new(horizon, path.jump_times.iter().copied())?);
                let lambda = model.cumulative_hazard(&path, &path_grid)?;
                cox_time(&path, &lambda, draw)?
            }
        };
        let mut events: Vec<f64> = path.jump_times.clone();
        events.extend(model.deterministic_times());
        events.extend_from_slice(extra_times);
        if time.within(horizon) {
            events.push(time.tau);
        }
        let grid = Arc::new(EventGrid::new(horizon, events)?);
        let n = path.counting_process(&grid);
        let h = indicator(&time, &grid)?;
        Ok(Self {
            path,
            time,
            model: model.clone(),
            grid,
            n,
            h,
        })
    }

    /// Scenario `path_index` of the batch keyed by `master_seed`.
    pub fn generate(
        model: &Arc<ModelSpec>,
        lambda: f64,
        horizon: f64,
        master_seed: u64,
        path_index: u64,
        extra_times: &[f64],
    ) -> Result<Self> {
        let mut clock = stream_rng(master_seed, path_index, StreamKind::Poisson);
        let path = sample_poisson_path_with(lambda, horizon, &mut clock)?;
        let mut aux = stream_rng(master_seed, path_index, StreamKind::Threshold);
        let draw = draw_for(model, &mut aux);
        Self::build(model, path, draw, extra_times)
    }

    pub fn horizon(&self) -> f64 {
        self.path.horizon
    }

    pub fn tau_within(&self) -> bool {
        self.time.within(self.horizon())
    }

    pub fn tau_index(&self) -> Option<usize> {
        if self.tau_within() {
            self.grid.index_of(self.time.tau)
        } else {
            None
        }
    }
}

pub(crate) fn draw_for<R: Rng>(model: &ModelSpec, rng: &mut R) -> f64 {
    match model {
        ModelSpec::IndependentTau { .. } => Open01.sample(rng),
        _ => Exp1.sample(rng),
    }
}

/// `ΔN_τ = 1`?
pub fn jump_overlap(scenario: &Scenario) -> bool {
    scenario.tau_within() && scenario.path.is_jump_time(scenario.time.tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StateIntensity;
    use crate::path_engine::Side;

    fn exp_with_atom() -> CdfSpec {
        CdfSpec::exponential(1.0).unwrap().with_atom(1.0, 0.3).unwrap()
    }

    #[test]
    fn exponential_quantile() {
        let cdf = CdfSpec::exponential(1.0).unwrap();
        let t = independent_time(&cdf, 1.0 - (-2.0f64).exp()).unwrap().tau;
        assert!((t - 2.0).abs() < 1e-12);
        let small = independent_time(&cdf, 1e-12).unwrap().tau;
        assert!(small > 0.0 && small < 1e-11);
    }

    #[test]
    fn atom_is_hit_exactly() {
        let cdf = exp_with_atom();
        // F(1-) = 1 - e^{-1} ≈ 0.632, F(1) ≈ 0.932
        assert_eq!(cdf.quantile(0.7), 1.0);
        assert_eq!(cdf.quantile(0.93), 1.0);
        assert!(cdf.quantile(0.5) < 1.0);
        assert!(cdf.quantile(0.95) > 1.0);
        assert!((cdf.survival_left(1.0) - cdf.survival(1.0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_inconsistent_cdfs() {
        assert!(CdfSpec::exponential(1.0).unwrap().with_atom(1.0, 0.5).is_err());
        assert!(CdfSpec::piecewise_hazard(vec![0.0], vec![0.0]).is_err());
        assert!(CdfSpec::piecewise_hazard(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(CdfSpec::point_mass(2.0).is_ok());
    }

    #[test]
    fn cox_time_on_counting_process_snaps_to_jump() {
        let path = JumpPath::new(1.0, 10.0, vec![1.3, 2.0]).unwrap();
        let grid = Arc::new(EventGrid::new(10.0, path.jump_times.clone()).unwrap());
        let n = path.counting_process(&grid);
        let s = cox_time(&path, &n, 0.5).unwrap();
        assert_eq!(s.tau, 1.3);
        assert!(s.coincides_with_jump);
        let s = cox_time(&path, &n, 2.0).unwrap();
        assert_eq!(s.tau, 2.0);
        let s = cox_time(&path, &n, 2.5).unwrap();
        assert_eq!(s.tau, f64::INFINITY);
    }

    #[test]
    fn cox_time_linear_hazard() {
        let path = JumpPath::new(1.0, 10.0, vec![]).unwrap();
        let grid = Arc::new(EventGrid::new(10.0, []).unwrap());
        let lam = PwProcess::time(grid).scale(0.5);
        let s = cox_time(&path, &lam, 1.7).unwrap();
        assert!((s.tau - 3.4).abs() < 1e-14);
        assert!(!s.coincides_with_jump);
    }

    #[test]
    fn cox_time_rejects_decreasing_hazard() {
        let path = JumpPath::new(1.0, 10.0, vec![]).unwrap();
        let grid = Arc::new(EventGrid::new(10.0, []).unwrap());
        let lam = PwProcess::time(grid).scale(-1.0);
        assert!(matches!(cox_time(&path, &lam, 1.0), Err(Error::DecreasingHazard(_))));
    }

    #[test]
    fn indicator_conventions() {
        let grid = Arc::new(EventGrid::new(10.0, [3.0]).unwrap());
        let s = RandomTimeSample {
            tau: 3.0,
            theta: None,
            coincides_with_jump: false,
        };
        let h = indicator(&s, &grid).unwrap();
        assert_eq!(h.evaluate(2.9, Side::Right).unwrap(), 0.0);
        assert_eq!(h.evaluate(3.0, Side::Right).unwrap(), 1.0);
        assert_eq!(h.evaluate(3.0, Side::Left).unwrap(), 0.0);

        let beyond = RandomTimeSample { tau: 12.0, ..s };
        assert_eq!(indicator(&beyond, &grid).unwrap().terminal(), 0.0);

        let at_horizon = RandomTimeSample { tau: 10.0, ..s };
        let h = indicator(&at_horizon, &grid).unwrap();
        assert_eq!(h.evaluate(10.0, Side::Left).unwrap(), 0.0);
        assert_eq!(h.terminal(), 1.0);
    }

    #[test]
    fn cox_poisson_counts_at_tau() {
        let model = Arc::new(ModelSpec::CoxPoisson);
        for i in 0..200 {
            let sc = Scenario::generate(&model, 1.0, 10.0, 11, i, &[]).unwrap();
            if sc.tau_within() {
                let theta = sc.time.theta.unwrap();
                assert!(jump_overlap(&sc));
                assert_eq!(sc.path.count_at(sc.time.tau) as f64, theta.ceil());
                assert_eq!(sc.path.count_before(sc.time.tau) as f64, theta.ceil() - 1.0);
            }
        }
    }

    #[test]
    fn cox_intensity_avoids_jumps() {
        let model = Arc::new(ModelSpec::CoxIntensity {
            intensity: StateIntensity::new(vec![1.0, 2.0]).unwrap(),
        });
        for i in 0..200 {
            let sc = Scenario::generate(&model, 1.0, 10.0, 5, i, &[]).unwrap();
            assert!(!jump_overlap(&sc));
        }
    }
}
