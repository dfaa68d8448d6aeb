//! Property tests over randomly drawn scenarios and parameters.

use std::sync::Arc;

use proptest::prelude::*;

use prp_lab::experiment::Experiment;
use prp_lab::models::{ModelSpec, StateIntensity};
use prp_lab::path_engine::{bracket, integrate_predictable, sample_poisson_path, EventGrid, Integrand, PwProcess};
use prp_lab::random_time::{cox_time, CdfSpec};
use prp_lab::representations::{assemble, closed_form_y, FormulaId};
use prp_lab::solvers::{HSpec, StateFunction, TimeFunction};

fn model_strategy() -> impl Strategy<Value = ModelSpec> {
    prop_oneof![
        Just(ModelSpec::CoxPoisson),
        (0.0f64..2.0, 0.2f64..3.0).prop_map(|(a0, a1)| ModelSpec::CoxIntensity {
            intensity: StateIntensity::new(vec![a0, a1]).unwrap()
        }),
        (0.2f64..2.0, 0.0f64..0.5, 0.5f64..4.0).prop_map(|(rate, mass, at)| {
            let cdf = CdfSpec::exponential(rate).unwrap();
            let cdf = if mass > 0.0 {
                let room = cdf.survival(at);
                cdf.with_atom(at, mass * room).unwrap()
            } else {
                cdf
            };
            ModelSpec::IndependentTau { cdf }
        }),
    ]
}

fn payoff_for(model: &ModelSpec, k: usize, t0: f64) -> HSpec {
    match model {
        ModelSpec::IndependentTau { .. } => HSpec::Time(TimeFunction::indicator_until(t0).unwrap()),
        _ => HSpec::State(StateFunction::indicator(k)),
    }
}

fn experiment_strategy() -> impl Strategy<Value = (Experiment, u64)> {
    (
        model_strategy(),
        0.2f64..2.0,
        1.0f64..15.0,
        0usize..3,
        0.5f64..5.0,
        any::<u64>(),
    )
        .prop_map(|(model, lambda, horizon, k, t0, seed)| {
            let h = payoff_for(&model, k, t0);
            (Experiment::new(model, lambda, horizon, h).unwrap(), seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integration_is_linear(
        (exp, seed) in experiment_strategy(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let pb = exp.path(seed, 0).unwrap();
        let f = &pb.filtration;
        let phi = Integrand::predictable(&f.z);
        let psi = Integrand::predictable(&pb.scenario.n);
        let combo = phi.scale(a).add(&psi.scale(b)).unwrap();
        for x in [&f.big_m, &f.mu, &f.ap, &pb.scenario.h] {
            let lhs = integrate_predictable(&combo, x).unwrap();
            let rhs = integrate_predictable(&phi, x).unwrap().scale(a)
                .add(&integrate_predictable(&psi, x).unwrap().scale(b)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn jumps_of_integrals_use_left_limits((exp, seed) in experiment_strategy()) {
        let pb = exp.path(seed, 0).unwrap();
        let z = &pb.filtration.z;
        let phi = Integrand::predictable(z);
        let x = &pb.filtration.big_m;
        let integral = integrate_predictable(&phi, x).unwrap();
        for i in 1..x.grid().len() {
            prop_assert_eq!(integral.jump(i), z.left(i) * x.jump(i));
        }
    }

    #[test]
    fn reconstruction_from_unit_integrand((exp, seed) in experiment_strategy()) {
        let pb = exp.path(seed, 0).unwrap();
        let grid = pb.scenario.grid.clone();
        let one = Integrand::constant(grid, 1.0);
        for x in [&pb.filtration.z, &pb.filtration.mu, &pb.payoff.xh, &pb.filtration.mtau] {
            let rebuilt = integrate_predictable(&one, x).unwrap().add_constant(x.initial());
            prop_assert!(rebuilt.max_abs_diff(x).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn brackets_are_flat_between_events((exp, seed) in experiment_strategy()) {
        let pb = exp.path(seed, 0).unwrap();
        let f = &pb.filtration;
        let b = bracket(&f.mtau, &f.big_m).unwrap();
        prop_assert!(b.segments().iter().all(|s| s.derivative().is_zero()));
    }

    #[test]
    fn cox_time_is_monotone_in_the_threshold(
        lambda in 0.2f64..3.0,
        horizon in 1.0f64..20.0,
        seed in any::<u64>(),
        t1 in 0.0f64..8.0,
        dt in 0.0f64..4.0,
        a0 in 0.0f64..2.0,
        a1 in 0.1f64..3.0,
    ) {
        let path = sample_poisson_path(lambda, horizon, seed).unwrap();
        let grid = Arc::new(EventGrid::new(horizon, path.jump_times.iter().copied()).unwrap());
        let models = [
            ModelSpec::CoxPoisson,
            ModelSpec::CoxIntensity { intensity: StateIntensity::new(vec![a0, a1]).unwrap() },
        ];
        for model in &models {
            let hazard = model.cumulative_hazard(&path, &grid).unwrap();
            let first = cox_time(&path, &hazard, t1).unwrap().tau;
            let second = cox_time(&path, &hazard, t1 + dt).unwrap().tau;
            prop_assert!(first <= second);
        }
    }

    #[test]
    fn cox_poisson_stops_at_the_threshold_count(seed in any::<u64>(), lambda in 0.2f64..2.0) {
        let exp = Experiment::new(
            ModelSpec::CoxPoisson, lambda, 10.0, HSpec::State(StateFunction::indicator(0)),
        ).unwrap();
        let sc = exp.scenario(seed, 0).unwrap();
        let theta = sc.time.theta.unwrap();
        if sc.tau_within() {
            let tau = sc.time.tau;
            prop_assert_eq!(sc.path.count_at(tau) as f64, theta.ceil());
            prop_assert_eq!(sc.path.count_before(tau) as f64, theta.ceil() - 1.0);
        }
    }

    #[test]
    fn indicator_has_a_single_unit_jump((exp, seed) in experiment_strategy()) {
        let sc = exp.scenario(seed, 0).unwrap();
        let jumps: Vec<f64> = sc.h.jumps().iter().copied().filter(|j| *j != 0.0).collect();
        if sc.tau_within() {
            prop_assert_eq!(jumps, vec![1.0]);
        } else {
            prop_assert!(jumps.is_empty());
        }
        prop_assert!(sc.h.segments().iter().all(|s| s.derivative().is_zero()));
    }

    #[test]
    fn decompositions_of_z((exp, seed) in experiment_strategy()) {
        let pb = exp.path(seed, 0).unwrap();
        let f = &pb.filtration;
        prop_assert!(f.mu.sub(&f.ap).unwrap().max_abs_diff(&f.z).unwrap() <= 1e-12);
        prop_assert!(f.m.sub(&f.ao).unwrap().max_abs_diff(&f.z).unwrap() <= 1e-12);
        for i in 0..f.ap.grid().len() {
            prop_assert_eq!(f.mu.jump(i) * f.ap.jump(i), 0.0);
            prop_assert_eq!(pb.payoff.mu_h.jump(i) * f.ap.jump(i), 0.0);
            if !exp.model.has_atoms() {
                prop_assert_eq!(f.ap.jump(i), 0.0);
            }
        }
    }

    #[test]
    fn payoff_value_is_nonnegative((exp, seed) in experiment_strategy()) {
        let pb = exp.path(seed, 0).unwrap();
        let xh = &pb.payoff.xh;
        for i in 0..xh.grid().len() {
            prop_assert!(xh.right(i) >= -1e-15 && xh.left(i) >= -1e-15);
        }
    }

    #[test]
    fn y_is_frozen_after_tau((exp, seed) in experiment_strategy()) {
        let pb = exp.path(seed, 0).unwrap();
        if let Some(ti) = pb.scenario.tau_index() {
            let y = closed_form_y(&pb);
            let frozen = y.right(ti);
            for i in ti..y.grid().len() {
                prop_assert_eq!(y.right(i), frozen);
                if i > ti {
                    prop_assert_eq!(y.left(i), frozen);
                }
            }
        }
    }

    #[test]
    fn regrouped_form_matches_thm((exp, seed) in experiment_strategy()) {
        let pb = exp.path(seed, 0).unwrap();
        let thm = assemble(FormulaId::Thm, &exp, &pb).unwrap();
        let corfin = assemble(FormulaId::Corfin, &exp, &pb).unwrap();
        prop_assert!(thm.max_abs_diff(&corfin).unwrap() <= 1e-12);
    }

    #[test]
    fn every_applicable_formula_reproduces_y((exp, seed) in experiment_strategy()) {
        let pb = exp.path(seed, 0).unwrap();
        let y = closed_form_y(&pb);
        for f in FormulaId::applicable(&exp.model, &exp.h) {
            if f.is_negative_control() || f == FormulaId::J3 {
                continue;
            }
            let r = y.max_abs_diff(&assemble(f, &exp, &pb).unwrap()).unwrap();
            prop_assert!(r <= 1e-9, "{} residual {}", f, r);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn payoff_martingale_is_constant_for_independent_times(
        rate in 0.2f64..2.0,
        mass in 0.0f64..0.5,
        at in 0.5f64..4.0,
        t0 in 0.5f64..5.0,
        seed in any::<u64>(),
    ) {
        let mut cdf = CdfSpec::exponential(rate).unwrap();
        if mass > 0.0 {
            let room = cdf.survival(at);
            cdf = cdf.with_atom(at, mass * room).unwrap();
        }
        let exp = Experiment::new(
            ModelSpec::IndependentTau { cdf },
            1.0,
            10.0,
            HSpec::Time(TimeFunction::indicator_until(t0).unwrap()),
        ).unwrap();
        let pb = exp.path(seed, 0).unwrap();
        let mu_h = &pb.payoff.mu_h;
        let start = mu_h.initial();
        for i in 0..mu_h.grid().len() {
            prop_assert!((mu_h.right(i) - start).abs() <= 1e-12);
            prop_assert!((mu_h.left(i) - start).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_payoff_gives_zero_value() {
    let exp = Experiment::new(
        ModelSpec::CoxPoisson,
        1.0,
        10.0,
        HSpec::State(StateFunction::constant(0.0).unwrap()),
    )
    .unwrap();
    for i in 0..20 {
        let pb = exp.path(5, i).unwrap();
        assert_eq!(
            pb.payoff
                .xh
                .max_abs_diff(&PwProcess::constant(pb.scenario.grid.clone(), 0.0))
                .unwrap(),
            0.0
        );
    }
}
