use crate::error::{invalid, Error, Result};

/// Sorted, deduplicated event times `0 = b_0 < b_1 < ... < b_K = horizon`.
///
/// Every process of a scenario is affine, exponential or constant between
/// two consecutive points of its grid, so integrals reduce to segment sums.
#[derive(Clone, Debug, PartialEq)]
pub struct EventGrid {
    times: Vec<f64>,
}

impl EventGrid {
    pub fn new(horizon: f64, events: impl IntoIterator<Item = f64>) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(invalid("horizon", "must be finite and > 0"));
        }
        let mut times: Vec<f64> = events.into_iter().filter(|t| *t > 0.0 && *t <= horizon).collect();
        times.push(0.0);
        times.push(horizon);
        times.sort_by(|a, b| a.total_cmp(b));
        times.dedup();
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn segment_len(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    /// Exact position of `t` in the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|x| x.total_cmp(&t)).ok()
    }

    /// Index `i` with `b_i <= t < b_{i+1}`, or the last index when `t` is the horizon.
    pub fn locate(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        Ok(self.times.partition_point(|x| *x <= t) - 1)
    }

    pub fn contains_all(&self, other: &EventGrid) -> bool {
        other.times.iter().all(|t| self.index_of(*t).is_some())
    }
}
