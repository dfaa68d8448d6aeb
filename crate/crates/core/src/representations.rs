//! Representation formulas for `Y^h_t = E(h_τ | G_t)` and their pathwise residuals.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::{Experiment, PathBundle};
use crate::models::{alive, predictable_covariation, ModelSpec};
use crate::path_engine::{bracket, integrate_predictable, Integrand, PwProcess, SegmentFn};
use crate::solvers::{HSpec, KernelTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FormulaId {
    Eq3,
    Eqc3,
    Xeq3,
    Xeq3a,
    Axx33,
    Cxx33,
    Rep1,
    Rep2,
    Rep3,
    Thm,
    Corfin,
    J3,
    /// `EQC3` without the `Z_−/(Z_− − ΔAᵖ)` factor; must fail when τ hits an atom.
    NaiveEq3,
}

impl FormulaId {
    pub const ALL: [FormulaId; 13] = [
        FormulaId::Eq3,
        FormulaId::Eqc3,
        FormulaId::Xeq3,
        FormulaId::Xeq3a,
        FormulaId::Axx33,
        FormulaId::Cxx33,
        FormulaId::Rep1,
        FormulaId::Rep2,
        FormulaId::Rep3,
        FormulaId::Thm,
        FormulaId::Corfin,
        FormulaId::J3,
        FormulaId::NaiveEq3,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FormulaId::Eq3 => "EQ3",
            FormulaId::Eqc3 => "EQC3",
            FormulaId::Xeq3 => "XEQ3",
            FormulaId::Xeq3a => "XEQ3A",
            FormulaId::Axx33 => "AXX33",
            FormulaId::Cxx33 => "CXX33",
            FormulaId::Rep1 => "REP1",
            FormulaId::Rep2 => "REP2",
            FormulaId::Rep3 => "REP3",
            FormulaId::Thm => "THM",
            FormulaId::Corfin => "CORFIN",
            FormulaId::J3 => "J3",
            FormulaId::NaiveEq3 => "NAIVE_EQ3",
        }
    }

    /// Negative controls are expected to break on some paths.
    pub fn is_negative_control(&self) -> bool {
        matches!(self, FormulaId::NaiveEq3)
    }

    pub fn applies_to(&self, model: &ModelSpec, h: &HSpec) -> bool {
        let state = matches!(h, HSpec::State(_));
        let time = matches!(h, HSpec::Time(_));
        let supported = match model {
            ModelSpec::CoxPoisson | ModelSpec::CoxIntensity { .. } => state,
            ModelSpec::IndependentTau { .. } => time,
        };
        if !supported {
            return false;
        }
        let avoidance_like = matches!(model, ModelSpec::IndependentTau { .. } | ModelSpec::CoxIntensity { .. });
        match self {
            FormulaId::Eq3 | FormulaId::Eqc3 | FormulaId::Xeq3 | FormulaId::Xeq3a | FormulaId::NaiveEq3 => {
                avoidance_like
            }
            FormulaId::Axx33 | FormulaId::Cxx33 | FormulaId::Rep3 => {
                matches!(model, ModelSpec::CoxPoisson)
            }
            FormulaId::Rep1 => match model {
                ModelSpec::CoxIntensity { .. } => true,
                ModelSpec::IndependentTau { cdf } => !cdf.has_atoms(),
                ModelSpec::CoxPoisson => false,
            },
            FormulaId::Rep2 => matches!(model, ModelSpec::IndependentTau { .. }),
            FormulaId::Thm | FormulaId::Corfin | FormulaId::J3 => true,
        }
    }

    pub fn applicable(model: &ModelSpec, h: &HSpec) -> Vec<FormulaId> {
        Self::ALL.iter().copied().filter(|f| f.applies_to(model, h)).collect()
    }
}

impl fmt::Display for FormulaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormulaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == key || (key == "NAIVE" && *f == FormulaId::NaiveEq3))
            .ok_or_else(|| Error::Config(format!("formulas: unknown formula id {s:?}")))
    }
}

/// `Y_t = H_t h_τ + (1 − H_t) X^h_t / Z_t`.
pub fn closed_form_y(pb: &PathBundle) -> PwProcess {
    let ratio = &pb.payoff.ratio;
    let grid = pb.scenario.grid.clone();
    let k = grid.num_segments();
    let Some(ti) = pb.scenario.tau_index() else {
        return ratio.clone();
    };
    let h_tau = pb.payoff.h_tau;
    let segs = (0..k)
        .map(|i| {
            if i < ti {
                ratio.segments()[i].clone()
            } else {
                SegmentFn::constant(h_tau)
            }
        })
        .collect();
    let jumps = (0..grid.len())
        .map(|i| match i.cmp(&ti) {
            std::cmp::Ordering::Less => ratio.jump(i),
            std::cmp::Ordering::Equal => h_tau - ratio.left(i),
            std::cmp::Ordering::Greater => 0.0,
        })
        .collect();
    PwProcess::new(grid, segs, jumps)
}

/// Integrands shared by the formulas.
struct Parts<'a> {
    pb: &'a PathBundle,
    alive: Integrand,
    zl: Integrand,
    /// `X_−/Z_−`.
    ratio_l: Integrand,
    /// `Z_− + φ`.
    zl_phi: Integrand,
}

impl<'a> Parts<'a> {
    fn new(pb: &'a PathBundle) -> Result<Self> {
        let f = &pb.filtration;
        let zl = Integrand::predictable(&f.z);
        let zl_phi = zl.add(&f.phi)?;
        Ok(Self {
            pb,
            alive: alive(&pb.scenario),
            ratio_l: Integrand::predictable(&pb.payoff.ratio),
            zl,
            zl_phi,
        })
    }

    /// `Z_−/(Z_− − ΔAᵖ)`.
    fn atom_factor(&self) -> Integrand {
        let grid = self.pb.scenario.grid.clone();
        let ap = &self.pb.filtration.ap;
        let at_jump = (0..grid.len())
            .map(|i| {
                let d = ap.jump(i);
                if d == 0.0 {
                    1.0
                } else {
                    self.zl.at_jump(i) / (self.zl.at_jump(i) - d)
                }
            })
            .collect();
        Integrand::new(
            grid.clone(),
            vec![SegmentFn::constant(1.0); grid.num_segments()],
            at_jump,
        )
    }

    /// `h − X_−/Z_−`.
    fn gap_left(&self) -> Result<Integrand> {
        self.pb.payoff.h.sub(&self.ratio_l)
    }

    /// `h − X/Z` with the optional (right) value at jumps.
    fn gap_optional(&self) -> Result<Integrand> {
        self.pb.payoff.h.sub(&Integrand::optional(&self.pb.payoff.ratio))
    }

    /// `Z_−/(Z_− − ΔAᵖ) (h − X_−/Z_−)`.
    fn corrected_gap(&self) -> Result<Integrand> {
        self.atom_factor().mul(&self.gap_left()?)
    }

    /// `φ^h − φ X_−/Z_−`.
    fn phi_gap(&self) -> Result<Integrand> {
        let p = &self.pb.payoff;
        p.phi_h.sub(&self.pb.filtration.phi.mul(&self.ratio_l)?)
    }

    /// `(1 − H_−)/(Z_− + φ) (φ^h − φ X_−/Z_−)`.
    fn mhat_integrand(&self) -> Result<Integrand> {
        self.alive.mul(&self.phi_gap()?)?.div(&self.zl_phi)
    }

    fn mu_h_term(&self) -> Result<PwProcess> {
        let w = self.alive.div(&self.zl)?;
        integrate_predictable(&w, &self.pb.payoff.mu_h)
    }

    fn phi_h_term(&self) -> Result<PwProcess> {
        let w = self.alive.div(&self.zl)?.mul(&self.pb.payoff.phi_h)?;
        integrate_predictable(&w, &self.pb.filtration.big_m)
    }

    /// `κ^h = φ X_−/Z_− − φ^h`, so that `κ^h_τ = ξ^h` when τ is a Poisson jump time.
    fn kappa(&self) -> Result<Integrand> {
        if self.pb.scenario.model.has_jump_overlap() {
            Ok(self.phi_gap()?.scale(-1.0))
        } else {
            Ok(Integrand::constant(self.pb.scenario.grid.clone(), 0.0))
        }
    }
}

/// `ξ^h = Δμ_τ X^h_{τ−}/Z_{τ−} − Δμ^h_τ`, from the jumps of the processes themselves.
pub fn xi(pb: &PathBundle) -> f64 {
    let Some(ti) = pb.scenario.tau_index() else {
        return 0.0;
    };
    let f = &pb.filtration;
    let p = &pb.payoff;
    f.mu.jump(ti) * p.xh.left(ti) / f.z.left(ti) - p.mu_h.jump(ti)
}

/// `κ^h`, the predictable process with `κ^h_τ = E(ξ^h | F_{τ−})`.
pub fn kappa(pb: &PathBundle) -> Result<Integrand> {
    Parts::new(pb)?.kappa()
}

/// `M̃^h = ξ^h H − ∫ (1 − H_−)/Z_− d(ξ^h H)^{p,F}` with `(ξ^h H)^{p,F} = ∫ κ^h dAᵖ`.
pub fn mtilde(pb: &PathBundle) -> Result<PwProcess> {
    let parts = Parts::new(pb)?;
    let f = &pb.filtration;
    let b = pb.scenario.h.scale(xi(pb));
    let bp = integrate_predictable(&parts.kappa()?, &f.ap)?;
    let w = parts.alive.div(&parts.zl)?;
    b.sub(&integrate_predictable(&w, &bp)?)
}

/// `(ξ^h − κ^h_τ) H + sign · ∫ κ^h dMᵗᵃᵘ`.
pub fn mtilde_mart_form(pb: &PathBundle, sign: f64) -> Result<PwProcess> {
    let kappa = kappa(pb)?;
    let kappa_tau = pb.scenario.tau_index().map_or(0.0, |i| kappa.at_jump(i));
    let jump_part = pb.scenario.h.scale(xi(pb) - kappa_tau);
    jump_part.add(&integrate_predictable(&kappa, &pb.filtration.mtau)?.scale(sign))
}

/// Sign of the `∫ κ^h dMᵗᵃᵘ` term that reproduces the definition of `M̃^h`.
pub const MART_SIGN: f64 = 1.0;

/// `L^h ⊙ Mᵗᵃᵘ` built from its jumps: at each jump of `Mᵗᵃᵘ` up to τ the weight
/// `V(s, ΔMᵗᵃᵘ_s) = (x Z_{τ−} + ΔAᵖ_τ)/(Z_{τ−} + ΔAᵖ_τ) (ξ^h − κ^h_τ) H_s`.
pub fn optional_jump_part(pb: &PathBundle) -> Result<PwProcess> {
    let grid = pb.scenario.grid.clone();
    let mut jumps = vec![0.0; grid.len()];
    if let Some(ti) = pb.scenario.tau_index() {
        let f = &pb.filtration;
        let kappa = kappa(pb)?;
        let excess = xi(pb) - kappa.at_jump(ti);
        let (z_tau, dap_tau) = (f.z.left(ti), f.ap.jump(ti));
        let h = &pb.scenario.h;
        for (i, slot) in jumps.iter_mut().enumerate() {
            let x = f.mtau.jump(i);
            if x != 0.0 && h.right(i) == 1.0 {
                *slot = (x * z_tau + dap_tau) / (z_tau + dap_tau) * excess;
            }
        }
    }
    Ok(PwProcess::pure_jump(grid, 0.0, jumps))
}

/// Kernel value `h̃(N_− + shift)` as an integrand.
fn kernel_of_state(pb: &PathBundle, kernel: &KernelTable, shift: usize) -> Integrand {
    let grid = &pb.scenario.grid;
    let n = &pb.scenario.n;
    let segs = (0..grid.num_segments())
        .map(|i| SegmentFn::constant(kernel.value(n.right(i) as usize + shift)))
        .collect();
    let at_jump = (0..grid.len())
        .map(|i| kernel.value(n.left(i) as usize + shift))
        .collect();
    Integrand::new(grid.clone(), segs, at_jump)
}

/// The right-hand side of `formula` as a process on the scenario grid.
pub fn assemble(formula: FormulaId, exp: &Experiment, pb: &PathBundle) -> Result<PwProcess> {
    if !formula.applies_to(&exp.model, &exp.h) {
        return Err(Error::NotApplicable {
            formula: formula.as_str().into(),
            model: exp.model.name().into(),
            payoff: exp.h.name().into(),
        });
    }
    let parts = Parts::new(pb)?;
    let f = &pb.filtration;
    let y0 = closed_form_y(pb).initial();
    let mtau = &f.mtau;
    let rest = match formula {
        FormulaId::Eq3 => integrate_predictable(&parts.gap_optional()?, mtau)?.add(&parts.mu_h_term()?)?,
        FormulaId::NaiveEq3 => integrate_predictable(&parts.gap_left()?, mtau)?.add(&parts.mu_h_term()?)?,
        FormulaId::Eqc3 => integrate_predictable(&parts.corrected_gap()?, mtau)?.add(&parts.mu_h_term()?)?,
        FormulaId::Xeq3 => integrate_predictable(&parts.gap_optional()?, mtau)?.add(&parts.phi_h_term()?)?,
        FormulaId::Xeq3a => integrate_predictable(&parts.corrected_gap()?, mtau)?.add(&parts.phi_h_term()?)?,
        FormulaId::Axx33 | FormulaId::Cxx33 => {
            let kernel = exp.kernel().ok_or_else(|| Error::NotApplicable {
                formula: formula.as_str().into(),
                model: exp.model.name().into(),
                payoff: exp.h.name().into(),
            })?;
            let k0 = kernel_of_state(pb, kernel, 0);
            let k1 = kernel_of_state(pb, kernel, 1);
            let step = parts.alive.mul(&k1.sub(&k0)?)?;
            if formula == FormulaId::Axx33 {
                integrate_predictable(&pb.payoff.h.sub(&k1)?, mtau)?.add(&integrate_predictable(&step, &f.big_m)?)?
            } else {
                integrate_predictable(&pb.payoff.h.sub(&k0)?, mtau)?.add(&integrate_predictable(&step, &f.mbar)?)?
            }
        }
        FormulaId::Rep1 => integrate_predictable(&parts.gap_left()?, mtau)?
            .add(&integrate_predictable(&parts.mhat_integrand()?, &f.mhat)?)?,
        FormulaId::Rep2 => {
            let w = parts.alive.div(&parts.zl)?.mul(&pb.payoff.phi_h)?;
            integrate_predictable(&parts.corrected_gap()?, mtau)?.add(&integrate_predictable(&w, &f.mhat)?)?
        }
        FormulaId::Rep3 => integrate_predictable(&parts.corrected_gap()?, mtau)?
            .add(&integrate_predictable(&parts.mhat_integrand()?, &f.mbar)?)?,
        FormulaId::Thm => {
            let one = Integrand::constant(pb.scenario.grid.clone(), 1.0);
            integrate_predictable(&parts.corrected_gap()?, mtau)?
                .add(&integrate_predictable(&parts.mhat_integrand()?, &f.mhat)?)?
                .add(&integrate_predictable(&one.div(&parts.zl_phi)?, &mtilde(pb)?)?)?
        }
        FormulaId::Corfin => {
            // K^h = Z_−/(Z_− − ΔAᵖ)(h − X_−/Z_−) + (κ^h + L^h)/(Z_− + φ); the L^h part is
            // an optional integral realized through its jumps
            let k_pred = parts.corrected_gap()?.add(&parts.kappa()?.div(&parts.zl_phi)?)?;
            let one = Integrand::constant(pb.scenario.grid.clone(), 1.0);
            let optional = integrate_predictable(&one.div(&parts.zl_phi)?, &optional_jump_part(pb)?)?;
            integrate_predictable(&k_pred, mtau)?
                .add(&optional)?
                .add(&integrate_predictable(&parts.mhat_integrand()?, &f.mhat)?)?
        }
        FormulaId::J3 => return j3_of_m(pb),
    };
    Ok(rest.add_constant(y0))
}

/// `M_{t∧τ} − ∫_0^{t∧τ} d[M, m]/Z̃ + J̃` with `J̃ ≡ 0` since `Z̃ > 0`.
pub fn j3_of_m(pb: &PathBundle) -> Result<PwProcess> {
    let f = &pb.filtration;
    let w = alive(&pb.scenario).div(&f.z_tilde())?;
    let correction = integrate_predictable(&w, &bracket(&f.big_m, &f.m)?)?;
    f.big_m.stopped_at(pb.scenario.time.tau)?.sub(&correction)
}

/// The process a formula is compared with: `Y^h`, or `M̂` for `J3`.
pub fn reference(formula: FormulaId, pb: &PathBundle) -> PwProcess {
    match formula {
        FormulaId::J3 => pb.filtration.mhat.clone(),
        _ => closed_form_y(pb),
    }
}

/// Largest gap between the reference and the assembled formula over right values
/// and left limits at every grid point.
pub fn residual(formula: FormulaId, exp: &Experiment, pb: &PathBundle) -> Result<f64> {
    reference(formula, pb).max_abs_diff(&assemble(formula, exp, pb)?)
}

/// `[Mᵗᵃᵘ, M̄] ≡ 0` with exact zero jump products.
pub fn orthogonality_check(pb: &PathBundle) -> Result<bool> {
    let b = bracket(&pb.filtration.mtau, &pb.filtration.mbar)?;
    Ok(b.jumps().iter().all(|j| *j == 0.0))
}

/// Which `F`-martingale `equa1_check` is run on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Equa1Target {
    M,
    MuH,
}

/// `∫ (1 − H_−)/Z_− dJ̄` against `∫ (1 − H_−)/Z_− d⟨X, m − μ⟩`.
///
/// `J̄ = (H ΔX_τ)^{p,F}` equals `∫ φ_X dAᵖ` when τ only jumps with `N` and vanishes
/// otherwise; the bracket side uses the predictable covariation `∫ φ_X φ_{m−μ} λ dt`.
pub fn equa1_check(pb: &PathBundle, target: Equa1Target) -> Result<f64> {
    let f = &pb.filtration;
    let grid = pb.scenario.grid.clone();
    let phi_x = match target {
        Equa1Target::M => Integrand::constant(grid.clone(), 1.0),
        Equa1Target::MuH => pb.payoff.phi_h.clone(),
    };
    let w = alive(&pb.scenario).div(&Integrand::predictable(&f.z))?;
    let jbar = if pb.scenario.model.has_jump_overlap() {
        integrate_predictable(&phi_x, &f.ap)?
    } else {
        PwProcess::constant(grid.clone(), 0.0)
    };
    let lhs = integrate_predictable(&w, &jbar)?;
    let phi_m_minus_mu = f.phi_m.sub(&f.phi)?;
    let cov = predictable_covariation(&phi_x, &phi_m_minus_mu, pb.scenario.path.rate)?;
    let rhs = integrate_predictable(&w, &cov)?;
    lhs.max_abs_diff(&rhs)
}

/// Batch statistics of the pathwise residuals of one formula.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub formula: FormulaId,
    pub model: String,
    pub h_name: String,
    pub per_path: Vec<f64>,
    pub batch_max: f64,
    pub batch_mean: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ResidualReport {
    pub fn from_residuals(formula: FormulaId, exp: &Experiment, per_path: Vec<f64>, tolerance: f64) -> Self {
        let batch_max = per_path.iter().fold(0.0f64, |m, r| m.max(*r));
        let batch_mean = if per_path.is_empty() {
            0.0
        } else {
            per_path.iter().sum::<f64>() / per_path.len() as f64
        };
        Self {
            formula,
            model: exp.model.name().into(),
            h_name: exp.h.name().into(),
            pass: batch_max <= tolerance,
            per_path,
            batch_max,
            batch_mean,
            tolerance,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.per_path.len()
    }
}

/// Residual reports for several formulas over the same batch of paths.
pub fn residual_batch(
    exp: &Experiment,
    formulas: &[FormulaId],
    n_paths: usize,
    master_seed: u64,
    tolerance: f64,
) -> Result<Vec<ResidualReport>> {
    for f in formulas {
        if !f.applies_to(&exp.model, &exp.h) {
            return Err(Error::NotApplicable {
                formula: f.as_str().into(),
                model: exp.model.name().into(),
                payoff: exp.h.name().into(),
            });
        }
    }
    let rows = exp.map_paths(master_seed, n_paths, |pb| {
        formulas
            .iter()
            .map(|f| residual(*f, exp, pb))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(formulas
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let per_path = rows.iter().map(|r| r[j]).collect();
            ResidualReport::from_residuals(*f, exp, per_path, tolerance)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StateIntensity;
    use crate::path_engine::{JumpPath, Side};
    use crate::random_time::{CdfSpec, Scenario};
    use crate::solvers::{StateFunction, TimeFunction};

    fn cox_poisson(h: StateFunction) -> Experiment {
        Experiment::new(ModelSpec::CoxPoisson, 1.0, 10.0, HSpec::State(h)).unwrap()
    }

    #[test]
    fn applicability_matrix() {
        let state = HSpec::State(StateFunction::indicator(0));
        let time = HSpec::Time(TimeFunction::indicator_until(2.0).unwrap());
        let cp = ModelSpec::CoxPoisson;
        assert!(FormulaId::Axx33.applies_to(&cp, &state));
        assert!(!FormulaId::Eq3.applies_to(&cp, &state));
        assert!(!FormulaId::Axx33.applies_to(&cp, &time));
        let atom = ModelSpec::IndependentTau {
            cdf: CdfSpec::exponential(1.0).unwrap().with_atom(1.0, 0.3).unwrap(),
        };
        assert!(FormulaId::Rep2.applies_to(&atom, &time));
        assert!(!FormulaId::Rep1.applies_to(&atom, &time));
        assert!(!FormulaId::Rep2.applies_to(&atom, &state));
    }

    #[test]
    fn parse_ids() {
        assert_eq!("xeq3a".parse::<FormulaId>().unwrap(), FormulaId::Xeq3a);
        assert_eq!("naive-eq3".parse::<FormulaId>().unwrap(), FormulaId::NaiveEq3);
        assert!("EQ4".parse::<FormulaId>().is_err());
    }

    #[test]
    fn y_before_first_jump_is_htilde_zero() {
        let exp = cox_poisson(StateFunction::indicator(0));
        let path = JumpPath::new(1.0, 10.0, vec![1.5, 4.0]).unwrap();
        let sc = Scenario::build(&exp.model, path, 1.2, &[]).unwrap();
        let pb = exp.evaluate(sc).unwrap();
        let y = closed_form_y(&pb);
        assert!((y.evaluate(1.0, Side::Right).unwrap() - crate::models::gamma()).abs() < 1e-15);
        // τ = 4.0 with N_{τ−} = 1, so h_τ = 0
        assert_eq!(y.terminal(), 0.0);
    }

    #[test]
    fn cxx33_jump_at_pre_tau_poisson_jump() {
        let exp = cox_poisson(StateFunction::indicator(0));
        let path = JumpPath::new(1.0, 10.0, vec![1.5, 4.0]).unwrap();
        let sc = Scenario::build(&exp.model, path, 1.2, &[]).unwrap();
        let pb = exp.evaluate(sc).unwrap();
        let a = assemble(FormulaId::Cxx33, &exp, &pb).unwrap();
        let i = pb.scenario.grid.index_of(1.5).unwrap();
        assert!((a.jump(i) + crate::models::gamma()).abs() < 1e-12);
        assert!((closed_form_y(&pb).jump(i) - a.jump(i)).abs() < 1e-12);
    }

    #[test]
    fn mart_sign_is_plus() {
        let exp = cox_poisson(StateFunction::indicator(0));
        let mut plus = 0.0f64;
        let mut minus = 0.0f64;
        for i in 0..50 {
            let pb = exp.path(3, i).unwrap();
            let def = mtilde(&pb).unwrap();
            plus = plus.max(def.max_abs_diff(&mtilde_mart_form(&pb, 1.0).unwrap()).unwrap());
            minus = minus.max(def.max_abs_diff(&mtilde_mart_form(&pb, -1.0).unwrap()).unwrap());
        }
        assert!(plus < 1e-12);
        assert!(minus > 1e-3);
    }

    #[test]
    fn unregrouped_form_without_kappa_fails_with_overlap() {
        // K^h = factor·(h − X_−/Z_−) + L^h alone, with no κ^h and no 1/(Z_− + φ)
        let exp = cox_poisson(StateFunction::indicator(0));
        let mut worst = 0.0f64;
        for i in 0..50 {
            let pb = exp.path(8, i).unwrap();
            let parts = Parts::new(&pb).unwrap();
            let f = &pb.filtration;
            let lit = integrate_predictable(&parts.corrected_gap().unwrap(), &f.mtau)
                .unwrap()
                .add(&optional_jump_part(&pb).unwrap())
                .unwrap()
                .add(&integrate_predictable(&parts.mhat_integrand().unwrap(), &f.mhat).unwrap())
                .unwrap()
                .add_constant(closed_form_y(&pb).initial());
            worst = worst.max(closed_form_y(&pb).max_abs_diff(&lit).unwrap());
        }
        assert!(worst > 1e-3);
    }

    #[test]
    fn stopped_and_unstopped_mhat_agree() {
        let exp = cox_poisson(StateFunction::indicator(2));
        for i in 0..30 {
            let pb = exp.path(21, i).unwrap();
            let parts = Parts::new(&pb).unwrap();
            let w = parts.mhat_integrand().unwrap();
            let stopped = integrate_predictable(&w, &pb.filtration.mhat).unwrap();
            let full = integrate_predictable(&w, &pb.filtration.big_m).unwrap();
            assert!(stopped.max_abs_diff(&full).unwrap() < 1e-12);
        }
    }

    #[test]
    fn not_applicable_is_reported() {
        let exp = cox_poisson(StateFunction::indicator(0));
        let pb = exp.path(1, 0).unwrap();
        assert!(matches!(
            assemble(FormulaId::Rep2, &exp, &pb),
            Err(Error::NotApplicable { .. })
        ));
    }

    #[test]
    fn cox_intensity_formulas_small_batch() {
        let model = ModelSpec::CoxIntensity {
            intensity: StateIntensity::new(vec![1.0, 2.0]).unwrap(),
        };
        let exp = Experiment::new(model, 1.0, 10.0, HSpec::State(StateFunction::indicator(0))).unwrap();
        let formulas = FormulaId::applicable(&exp.model, &exp.h)
            .into_iter()
            .filter(|f| !f.is_negative_control())
            .collect::<Vec<_>>();
        for r in residual_batch(&exp, &formulas, 200, 4, 1e-9).unwrap() {
            assert!(r.pass, "{} {}", r.formula, r.batch_max);
        }
    }
}
