//! Per-path evaluation of a (model, payoff) pair and seeded batch orchestration.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::models::{FiltrationBundle, ModelSpec};
use crate::random_time::Scenario;
use crate::solvers::{kernel_for, xh_process, HSpec, KernelTable, PayoffBundle};

/// A validated (model, λ, horizon, payoff) configuration with its cached kernel.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub model: Arc<ModelSpec>,
    pub lambda: f64,
    pub horizon: f64,
    pub h: HSpec,
    kernel: Option<KernelTable>,
    extra_times: Vec<f64>,
}

/// Everything built for one simulated path.
#[derive(Clone, Debug)]
pub struct PathBundle {
    pub scenario: Scenario,
    pub filtration: FiltrationBundle,
    pub payoff: PayoffBundle,
}

impl Experiment {
    pub fn new(model: ModelSpec, lambda: f64, horizon: f64, h: HSpec) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(invalid("lambda", "must be ≥ 0"));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(invalid("horizon", "must be > 0"));
        }
        let kernel = kernel_for(&model, &h, lambda)?;
        let extra_times = h.knots();
        Ok(Self {
            model: Arc::new(model),
            lambda,
            horizon,
            h,
            kernel,
            extra_times,
        })
    }

    pub fn kernel(&self) -> Option<&KernelTable> {
        self.kernel.as_ref()
    }

    pub fn scenario(&self, master_seed: u64, index: u64) -> Result<Scenario> {
        Scenario::generate(
            &self.model,
            self.lambda,
            self.horizon,
            master_seed,
            index,
            &self.extra_times,
        )
    }

    pub fn evaluate(&self, scenario: Scenario) -> Result<PathBundle> {
        let filtration = FiltrationBundle::build(&scenario)?;
        let payoff = xh_process(&scenario, &filtration, &self.h, self.kernel.as_ref())?;
        Ok(PathBundle {
            scenario,
            filtration,
            payoff,
        })
    }

    pub fn path(&self, master_seed: u64, index: u64) -> Result<PathBundle> {
        self.evaluate(self.scenario(master_seed, index)?)
    }

    /// `f` applied to paths `0..n_paths` in parallel; results come back in path order.
    pub fn map_paths<T, F>(&self, master_seed: u64, n_paths: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&PathBundle) -> Result<T> + Sync,
    {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|i| f(&self.path(master_seed, i)?))
            .collect()
    }

    /// Same as [`Experiment::map_paths`] without building the processes.
    pub fn map_scenarios<T, F>(&self, master_seed: u64, n_paths: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&Scenario) -> Result<T> + Sync,
    {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|i| f(&self.scenario(master_seed, i)?))
            .collect()
    }
}
