use std::sync::Arc;

use super::grid::EventGrid;
use super::segment::SegmentFn;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Càdlàg finite-variation process with closed-form segments.
///
/// Segment `i` describes the process on `[b_i, b_{i+1})` as a function of
/// `s = t - b_i`; `jumps[i]` is `X(b_i) - X(b_i-)` and `jumps[0] = 0`. Jumps are
/// stored rather than recomputed from segment endpoints so that unit jumps of
/// counting processes stay bit-exact through linear combinations.
#[derive(Clone, Debug)]
pub struct PwProcess {
    grid: Arc<EventGrid>,
    segs: Vec<SegmentFn>,
    jumps: Vec<f64>,
}

pub(crate) fn same_grid(a: &Arc<EventGrid>, b: &Arc<EventGrid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

impl PwProcess {
    pub fn new(grid: Arc<EventGrid>, segs: Vec<SegmentFn>, jumps: Vec<f64>) -> Self {
        assert_eq!(segs.len(), grid.num_segments());
        assert_eq!(jumps.len(), grid.len());
        assert_eq!(jumps[0], 0.0);
        Self { grid, segs, jumps }
    }

    /// Jumps inferred from the gaps between consecutive segments; no jump at the horizon.
    pub fn from_segments(grid: Arc<EventGrid>, segs: Vec<SegmentFn>) -> Self {
        let mut jumps = vec![0.0; grid.len()];
        for i in 1..segs.len() {
            jumps[i] = segs[i].eval(0.0) - segs[i - 1].eval(grid.segment_len(i - 1));
        }
        Self::new(grid, segs, jumps)
    }

    pub fn constant(grid: Arc<EventGrid>, c: f64) -> Self {
        let n = grid.num_segments();
        let len = grid.len();
        Self::new(grid, vec![SegmentFn::constant(c); n], vec![0.0; len])
    }

    /// The clock `X_t = t`.
    pub fn time(grid: Arc<EventGrid>) -> Self {
        let segs = grid.times()[..grid.num_segments()]
            .iter()
            .map(|b| SegmentFn::affine(*b, 1.0))
            .collect();
        let len = grid.len();
        Self::new(grid, segs, vec![0.0; len])
    }

    /// Pure-jump process with the given jumps at grid points, starting from `initial`.
    pub fn pure_jump(grid: Arc<EventGrid>, initial: f64, jumps: Vec<f64>) -> Self {
        let mut segs = Vec::with_capacity(grid.num_segments());
        let mut level = initial;
        for j in jumps.iter().take(grid.num_segments()) {
            level += j;
            segs.push(SegmentFn::constant(level));
        }
        Self::new(grid, segs, jumps)
    }

    pub fn grid(&self) -> &Arc<EventGrid> {
        &self.grid
    }

    pub fn segments(&self) -> &[SegmentFn] {
        &self.segs
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn jump(&self, i: usize) -> f64 {
        self.jumps[i]
    }

    pub fn initial(&self) -> f64 {
        self.segs[0].eval(0.0)
    }

    /// Right value at grid point `i`.
    pub fn right(&self, i: usize) -> f64 {
        let k = self.grid.num_segments();
        if i < k {
            self.segs[i].eval(0.0)
        } else {
            self.left(k) + self.jumps[k]
        }
    }

    /// Left limit at grid point `i` (the initial value at `i = 0`).
    pub fn left(&self, i: usize) -> f64 {
        if i == 0 {
            self.initial()
        } else {
            self.segs[i - 1].eval(self.grid.segment_len(i - 1))
        }
    }

    pub fn terminal(&self) -> f64 {
        self.right(self.grid.num_segments())
    }

    pub fn evaluate(&self, t: f64, side: Side) -> Result<f64> {
        let i = self.grid.locate(t)?;
        let b = self.grid.times()[i];
        if t == b {
            return Ok(match side {
                Side::Right => self.right(i),
                Side::Left => self.left(i),
            });
        }
        Ok(self.segs[i].eval(t - b))
    }

    fn zip_with(
        &self,
        other: &Self,
        seg: impl Fn(&SegmentFn, &SegmentFn) -> SegmentFn,
        jump: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        let segs = self.segs.iter().zip(&other.segs).map(|(a, b)| seg(a, b)).collect();
        let jumps = self.jumps.iter().zip(&other.jumps).map(|(a, b)| jump(*a, *b)).collect();
        Ok(Self::new(self.grid.clone(), segs, jumps))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a.add(b), |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a.sub(b), |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(
            self.grid.clone(),
            self.segs.iter().map(|s| s.scale(k)).collect(),
            self.jumps.iter().map(|j| j * k).collect(),
        )
    }

    pub fn add_constant(&self, c: f64) -> Self {
        let k = SegmentFn::constant(c);
        Self::new(
            self.grid.clone(),
            self.segs.iter().map(|s| s.add(&k)).collect(),
            self.jumps.clone(),
        )
    }

    /// `X_{t ∧ stop}`. A stop time beyond the horizon returns the process unchanged.
    pub fn stopped_at(&self, stop: f64) -> Result<Self> {
        if stop > self.grid.horizon() {
            return Ok(self.clone());
        }
        let j = self
            .grid
            .index_of(stop)
            .ok_or_else(|| Error::UnsupportedIntegrand(format!("stop time {stop} is not a grid point")))?;
        let frozen = self.right(j);
        let mut segs = self.segs.clone();
        let mut jumps = self.jumps.clone();
        for s in segs.iter_mut().skip(j) {
            *s = SegmentFn::constant(frozen);
        }
        for x in jumps.iter_mut().skip(j + 1) {
            *x = 0.0;
        }
        Ok(Self::new(self.grid.clone(), segs, jumps))
    }

    /// Largest absolute gap over right values and left limits at every grid point.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        let mut worst: f64 = 0.0;
        for i in 0..self.grid.len() {
            worst = worst
                .max((self.right(i) - other.right(i)).abs())
                .max((self.left(i) - other.left(i)).abs());
        }
        Ok(worst)
    }

    /// Restate the process on a finer grid.
    pub fn refine(&self, fine: &Arc<EventGrid>) -> Result<Self> {
        if !fine.contains_all(&self.grid) || fine.horizon() != self.grid.horizon() {
            return Err(Error::GridMismatch);
        }
        let coarse = self.grid.times();
        let mut segs = Vec::with_capacity(fine.num_segments());
        let mut jumps = vec![0.0; fine.len()];
        for (i, b) in fine.times().iter().enumerate() {
            let ci = self.grid.locate(*b)?;
            if coarse[ci] == *b {
                jumps[i] = self.jumps[ci];
            }
            if i < fine.num_segments() {
                segs.push(self.segs[ci].shift(b - coarse[ci]));
            }
        }
        Ok(Self::new(fine.clone(), segs, jumps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting(times: &[f64], horizon: f64) -> PwProcess {
        let grid = Arc::new(EventGrid::new(horizon, times.iter().copied()).unwrap());
        let jumps = grid
            .times()
            .iter()
            .map(|t| if times.contains(t) { 1.0 } else { 0.0 })
            .collect();
        PwProcess::pure_jump(grid, 0.0, jumps)
    }

    #[test]
    fn cadlag_convention() {
        let n = counting(&[2.0], 5.0);
        assert_eq!(n.evaluate(1.0, Side::Right).unwrap(), 0.0);
        assert_eq!(n.evaluate(2.0, Side::Left).unwrap(), 0.0);
        assert_eq!(n.evaluate(2.0, Side::Right).unwrap(), 1.0);
        assert!(n.evaluate(6.0, Side::Right).is_err());
    }

    #[test]
    fn slope_segment() {
        let grid = Arc::new(EventGrid::new(1.0, []).unwrap());
        let x = PwProcess::time(grid).scale(3.0);
        assert_eq!(x.evaluate(0.5, Side::Right).unwrap(), 1.5);
    }

    #[test]
    fn jump_at_horizon() {
        let n = counting(&[1.0, 5.0], 5.0);
        assert_eq!(n.left(2), 1.0);
        assert_eq!(n.terminal(), 2.0);
    }

    #[test]
    fn stopping_freezes() {
        let n = counting(&[1.0, 2.0, 3.0], 5.0);
        let s = n.stopped_at(2.0).unwrap();
        assert_eq!(s.terminal(), 2.0);
        assert_eq!(s.evaluate(2.0, Side::Left).unwrap(), 1.0);
        assert_eq!(n.stopped_at(f64::INFINITY).unwrap().terminal(), 3.0);
    }

    #[test]
    fn refine_preserves_values() {
        let n = counting(&[1.0], 3.0);
        let x = n.add(&PwProcess::time(n.grid().clone())).unwrap();
        let fine = Arc::new(EventGrid::new(3.0, [0.5, 1.0, 2.2]).unwrap());
        let y = x.refine(&fine).unwrap();
        for t in [0.0, 0.5, 0.7, 1.0, 2.2, 2.9, 3.0] {
            for side in [Side::Left, Side::Right] {
                let a = x.evaluate(t, side).unwrap();
                let b = y.evaluate(t, side).unwrap();
                assert!((a - b).abs() < 1e-14, "t={t}");
            }
        }
    }
}
