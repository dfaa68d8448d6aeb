use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::grid::EventGrid;
use super::process::PwProcess;
use crate::error::{invalid, Result};

/// A Poisson trajectory on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpPath {
    pub rate: f64,
    pub horizon: f64,
    pub jump_times: Vec<f64>,
}

impl JumpPath {
    pub fn new(rate: f64, horizon: f64, jump_times: Vec<f64>) -> Result<Self> {
        check_rate_horizon(rate, horizon)?;
        let increasing = jump_times.windows(2).all(|w| w[0] < w[1]);
        let inside = jump_times.iter().all(|t| *t > 0.0 && *t <= horizon);
        if !increasing || !inside {
            return Err(invalid("jump_times", "must be strictly increasing inside (0, horizon]"));
        }
        Ok(Self {
            rate,
            horizon,
            jump_times,
        })
    }

    /// `N_t = #{i : T_i <= t}`.
    pub fn count_at(&self, t: f64) -> usize {
        self.jump_times.partition_point(|x| *x <= t)
    }

    /// `N_{t-}`.
    pub fn count_before(&self, t: f64) -> usize {
        self.jump_times.partition_point(|x| *x < t)
    }

    pub fn is_jump_time(&self, t: f64) -> bool {
        self.jump_times.binary_search_by(|x| x.total_cmp(&t)).is_ok()
    }

    /// Counting process on `grid`, which must contain every jump time.
    pub fn counting_process(&self, grid: &Arc<EventGrid>) -> PwProcess {
        let jumps = grid
            .times()
            .iter()
            .enumerate()
            .map(|(i, t)| if i > 0 && self.is_jump_time(*t) { 1.0 } else { 0.0 })
            .collect();
        PwProcess::pure_jump(grid.clone(), 0.0, jumps)
    }

    /// Compensated process `M_t = N_t - rate * t`.
    pub fn compensated_process(&self, grid: &Arc<EventGrid>) -> PwProcess {
        self.counting_process(grid)
            .sub(&PwProcess::time(grid.clone()).scale(self.rate))
            .expect("same grid")
    }
}

fn check_rate_horizon(rate: f64, horizon: f64) -> Result<()> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(invalid("lambda", "must be ≥ 0 and finite"));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(invalid("horizon", "must be > 0 and finite"));
    }
    Ok(())
}

/// Unbounded stream of Poisson arrival times built from i.i.d. exponential gaps.
pub struct PoissonClock<'a, R: Rng> {
    rng: &'a mut R,
    gap: Option<Exp<f64>>,
    now: f64,
}

impl<'a, R: Rng> PoissonClock<'a, R> {
    pub fn new(rate: f64, rng: &'a mut R) -> Self {
        let gap = if rate > 0.0 {
            Some(Exp::new(rate).expect("positive rate"))
        } else {
            None
        };
        Self { rng, gap, now: 0.0 }
    }
}

impl<R: Rng> Iterator for PoissonClock<'_, R> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let gap = self.gap.as_ref()?;
        self.now += gap.sample(self.rng);
        Some(self.now)
    }
}

pub fn sample_poisson_path_with<R: Rng>(rate: f64, horizon: f64, rng: &mut R) -> Result<JumpPath> {
    check_rate_horizon(rate, horizon)?;
    let jump_times = PoissonClock::new(rate, rng).take_while(|t| *t <= horizon).collect();
    Ok(JumpPath {
        rate,
        horizon,
        jump_times,
    })
}

/// Deterministic in `(rate, horizon, seed)`.
pub fn sample_poisson_path(rate: f64, horizon: f64, seed: u64) -> Result<JumpPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_poisson_path_with(rate, horizon, &mut rng)
}
