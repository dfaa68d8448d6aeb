//! Model families and the filtration-theoretic processes of a scenario.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::path_engine::{integrate_predictable, EventGrid, Integrand, JumpPath, PwProcess, SegmentFn};
use crate::random_time::{CdfSpec, Scenario};

/// `γ = 1 − e^{−1}`.
pub fn gamma() -> f64 {
    -(-1.0f64).exp_m1()
}

/// Intensity `a(x)` of the Poisson state, constant from the last tabulated state on.
#[derive(Clone, Debug, PartialEq)]
pub struct StateIntensity {
    values: Vec<f64>,
}

impl StateIntensity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("intensity", "needs at least one value"));
        }
        if values.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(invalid("intensity", "values must be finite and ≥ 0"));
        }
        if *values.last().unwrap() <= 0.0 {
            return Err(invalid(
                "intensity",
                "tail value must be > 0 so that the hazard grows without bound",
            ));
        }
        Ok(Self { values })
    }

    pub fn constant(alpha: f64) -> Result<Self> {
        Self::new(vec![alpha])
    }

    pub fn at(&self, x: usize) -> f64 {
        self.values[x.min(self.values.len() - 1)]
    }

    /// `x*`: first state from which `a` is constant.
    pub fn tail_cut(&self) -> usize {
        self.values.len() - 1
    }

    pub fn tail_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    IndependentTau {
        cdf: CdfSpec,
    },
    CoxIntensity {
        intensity: StateIntensity,
    },
    /// `Λ = N`.
    CoxPoisson,
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::IndependentTau { .. } => "IndependentTau",
            Self::CoxIntensity { .. } => "CoxIntensity",
            Self::CoxPoisson => "CoxPoisson",
        }
    }

    pub fn validate(&self) -> Result<()> {
        Ok(())
    }

    /// `{ΔH > 0} ⊂ {ΔN > 0}`.
    pub fn has_jump_overlap(&self) -> bool {
        matches!(self, Self::CoxPoisson)
    }

    /// `Aᵖ` has jumps (atoms of an independent time).
    pub fn has_atoms(&self) -> bool {
        matches!(self, Self::IndependentTau { cdf } if cdf.has_atoms())
    }

    pub fn deterministic_times(&self) -> Vec<f64> {
        match self {
            Self::IndependentTau { cdf } => cdf.event_times(),
            _ => Vec::new(),
        }
    }

    /// Cumulative hazard `Λ` of a Cox model on `grid`, which must contain the jump times.
    pub fn cumulative_hazard(&self, path: &JumpPath, grid: &Arc<EventGrid>) -> Result<PwProcess> {
        match self {
            Self::CoxPoisson => Ok(path.counting_process(grid)),
            Self::CoxIntensity { intensity } => {
                let n = path.counting_process(grid);
                let mut level = 0.0;
                let mut segs = Vec::with_capacity(grid.num_segments());
                for i in 0..grid.num_segments() {
                    let a = intensity.at(n.right(i) as usize);
                    segs.push(SegmentFn::affine(level, a));
                    level += a * grid.segment_len(i);
                }
                Ok(PwProcess::new(grid.clone(), segs, vec![0.0; grid.len()]))
            }
            Self::IndependentTau { .. } => Err(invalid(
                "model",
                "an independent time has no cumulative hazard driven by N",
            )),
        }
    }
}

/// Every process of the enlarged filtration needed by the representation formulas.
#[derive(Clone, Debug)]
pub struct FiltrationBundle {
    pub z: PwProcess,
    pub mu: PwProcess,
    pub ap: PwProcess,
    pub m: PwProcess,
    pub ao: PwProcess,
    /// Compensated Poisson process.
    pub big_m: PwProcess,
    pub mtau: PwProcess,
    pub mhat: PwProcess,
    pub mbar: PwProcess,
    /// `μ = 1 + ∫ φ dM`.
    pub phi: Integrand,
    /// Martingale integrand of `m`.
    pub phi_m: Integrand,
}

impl FiltrationBundle {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        let z = azema_z(scenario)?;
        let (mu, ap) = doob_meyer(scenario, &z)?;
        let (m, ao) = optional_parts(&z);
        let big_m = scenario.path.compensated_process(&scenario.grid);
        let mtau = compensated_indicator(scenario, &z, &ap)?;
        let phi = phi_integrand(scenario, &z);
        let phi_m = Integrand::constant(scenario.grid.clone(), 0.0);
        let mhat = mhat(scenario, &z, &phi_m)?;
        let mbar = mhat.sub(&mtau)?;
        Ok(Self {
            z,
            mu,
            ap,
            m,
            ao,
            big_m,
            mtau,
            mhat,
            mbar,
            phi,
            phi_m,
        })
    }

    /// `Z̃ = Z_− + Δm`.
    pub fn z_tilde(&self) -> Integrand {
        let zl = Integrand::predictable(&self.z);
        zl.add(&Integrand::jumps_of(&self.m)).expect("same grid")
    }
}

/// `Z_t = P(τ > t | F_t)`.
pub fn azema_z(scenario: &Scenario) -> Result<PwProcess> {
    let grid = &scenario.grid;
    let z = match scenario.model.as_ref() {
        ModelSpec::CoxPoisson => {
            let n = &scenario.n;
            let segs = (0..grid.num_segments())
                .map(|i| SegmentFn::constant((-n.right(i)).exp()))
                .collect();
            let jumps = (0..grid.len())
                .map(|i| {
                    if n.jump(i) == 0.0 {
                        0.0
                    } else {
                        (-n.right(i)).exp() - (-n.left(i)).exp()
                    }
                })
                .collect();
            PwProcess::new(grid.clone(), segs, jumps)
        }
        ModelSpec::CoxIntensity { intensity } => {
            let n = &scenario.n;
            let mut level: f64 = 0.0;
            let mut segs = Vec::with_capacity(grid.num_segments());
            for i in 0..grid.num_segments() {
                let a = intensity.at(n.right(i) as usize);
                segs.push(SegmentFn::exponential((-level).exp(), -a));
                level += a * grid.segment_len(i);
            }
            PwProcess::new(grid.clone(), segs, vec![0.0; grid.len()])
        }
        ModelSpec::IndependentTau { cdf } => {
            let times = grid.times();
            let segs = times[..grid.num_segments()]
                .iter()
                .map(|b| cdf.survival_segment(*b))
                .collect();
            let jumps = times
                .iter()
                .map(|b| -cdf.atom_mass(*b))
                .map(|j| if j == 0.0 { 0.0 } else { j })
                .collect();
            PwProcess::new(grid.clone(), segs, jumps)
        }
    };
    for i in 0..grid.len() {
        let v = z.right(i);
        if v.is_nan() || v <= 0.0 {
            return Err(Error::ZeroSurvival(grid.times()[i]));
        }
    }
    Ok(z)
}

/// `Z = μ − Aᵖ`.
pub fn doob_meyer(scenario: &Scenario, z: &PwProcess) -> Result<(PwProcess, PwProcess)> {
    let grid = &scenario.grid;
    match scenario.model.as_ref() {
        ModelSpec::CoxPoisson => {
            let g = gamma();
            let lambda = scenario.path.rate;
            let zl = Integrand::predictable(z);
            let ap = integrate_predictable(&zl.scale(g * lambda), &PwProcess::time(grid.clone()))?;
            let big_m = scenario.path.compensated_process(grid);
            let mu = integrate_predictable(&zl.scale(-g), &big_m)?.add_constant(1.0);
            Ok((mu, ap))
        }
        _ => {
            let one = PwProcess::constant(grid.clone(), 1.0);
            let ap = one.sub(z)?;
            Ok((one, ap))
        }
    }
}

/// `Z = m − Aᵒ` with `m ≡ 1` in every supported model.
pub fn optional_parts(z: &PwProcess) -> (PwProcess, PwProcess) {
    let one = PwProcess::constant(z.grid().clone(), 1.0);
    let ao = one.sub(z).expect("same grid");
    (one, ao)
}

/// `Mᵗᵃᵘ = H − ∫ (1 − H_−) dAᵖ / Z_−`.
pub fn compensated_indicator(scenario: &Scenario, z: &PwProcess, ap: &PwProcess) -> Result<PwProcess> {
    let weight = alive(scenario).div(&Integrand::predictable(z))?;
    scenario.h.sub(&integrate_predictable(&weight, ap)?)
}

/// `M̂ = M_{·∧τ} − ∫_0^{·∧τ} d⟨M, m⟩ / Z_−`.
pub fn mhat(scenario: &Scenario, z: &PwProcess, phi_m: &Integrand) -> Result<PwProcess> {
    let grid = &scenario.grid;
    let big_m = scenario.path.compensated_process(grid);
    let one = Integrand::constant(grid.clone(), 1.0);
    let cov = predictable_covariation(&one, phi_m, scenario.path.rate)?;
    let weight = alive(scenario).div(&Integrand::predictable(z))?;
    let correction = integrate_predictable(&weight, &cov)?;
    big_m.stopped_at(scenario.time.tau)?.sub(&correction)
}

/// `⟨∫φ_x dM, ∫φ_y dM⟩ = ∫ φ_x φ_y λ dt`.
pub fn predictable_covariation(phi_x: &Integrand, phi_y: &Integrand, lambda: f64) -> Result<PwProcess> {
    let clock = PwProcess::time(phi_x.grid().clone());
    integrate_predictable(&phi_x.mul(phi_y)?.scale(lambda), &clock)
}

/// `φ` in `μ = 1 + ∫ φ dM`.
pub fn phi_integrand(scenario: &Scenario, z: &PwProcess) -> Integrand {
    match scenario.model.as_ref() {
        ModelSpec::CoxPoisson => Integrand::predictable(z).scale(-gamma()),
        _ => Integrand::constant(scenario.grid.clone(), 0.0),
    }
}

/// `1 − H_−`.
pub fn alive(scenario: &Scenario) -> Integrand {
    let grid = scenario.grid.clone();
    Integrand::constant(grid.clone(), 1.0)
        .sub(&Integrand::predictable(&scenario.h))
        .expect("same grid")
}
