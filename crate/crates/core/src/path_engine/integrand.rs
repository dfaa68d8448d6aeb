use std::sync::Arc;

use super::grid::EventGrid;
use super::process::{same_grid, PwProcess};
use super::segment::SegmentFn;
use crate::error::{Error, Result};

/// Integrand for Lebesgue–Stieltjes integrals on an event grid.
///
/// On the open segment `(b_i, b_{i+1})` the integrand is the closed form
/// `segs[i]`; `at_jump[i]` is the value multiplying a jump of the integrator
/// at `b_i`. Built from [`Integrand::predictable`] the jump value is the left
/// limit, so predictability is structural; [`Integrand::optional`] uses the
/// right value instead.
#[derive(Clone, Debug)]
pub struct Integrand {
    grid: Arc<EventGrid>,
    segs: Vec<SegmentFn>,
    at_jump: Vec<f64>,
}

impl Integrand {
    pub fn new(grid: Arc<EventGrid>, segs: Vec<SegmentFn>, at_jump: Vec<f64>) -> Self {
        assert_eq!(segs.len(), grid.num_segments());
        assert_eq!(at_jump.len(), grid.len());
        Self { grid, segs, at_jump }
    }

    pub fn constant(grid: Arc<EventGrid>, c: f64) -> Self {
        let n = grid.num_segments();
        let len = grid.len();
        Self::new(grid, vec![SegmentFn::constant(c); n], vec![c; len])
    }

    /// `X_{t-}`.
    pub fn predictable(x: &PwProcess) -> Self {
        let at_jump = (0..x.grid().len()).map(|i| x.left(i)).collect();
        Self::new(x.grid().clone(), x.segments().to_vec(), at_jump)
    }

    /// `X_t`.
    pub fn optional(x: &PwProcess) -> Self {
        let at_jump = (0..x.grid().len()).map(|i| x.right(i)).collect();
        Self::new(x.grid().clone(), x.segments().to_vec(), at_jump)
    }

    /// `ΔX_t`: zero off the grid points.
    pub fn jumps_of(x: &PwProcess) -> Self {
        Self::new(
            x.grid().clone(),
            vec![SegmentFn::zero(); x.grid().num_segments()],
            x.jumps().to_vec(),
        )
    }

    pub fn grid(&self) -> &Arc<EventGrid> {
        &self.grid
    }

    pub fn segments(&self) -> &[SegmentFn] {
        &self.segs
    }

    pub fn at_jump(&self, i: usize) -> f64 {
        self.at_jump[i]
    }

    fn zip_with(
        &self,
        other: &Self,
        seg: impl Fn(&SegmentFn, &SegmentFn) -> Result<SegmentFn>,
        pt: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        let segs = self
            .segs
            .iter()
            .zip(&other.segs)
            .map(|(a, b)| seg(a, b))
            .collect::<Result<Vec<_>>>()?;
        let at_jump = self
            .at_jump
            .iter()
            .zip(&other.at_jump)
            .map(|(a, b)| pt(*a, *b))
            .collect();
        Ok(Self::new(self.grid.clone(), segs, at_jump))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| Ok(a.add(b)), |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| Ok(a.sub(b)), |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| Ok(a.mul(b)), |a, b| a * b)
    }

    /// Quotient; segment denominators must be single exponentials.
    pub fn div(&self, other: &Self) -> Result<Self> {
        self.zip_with(
            other,
            |a, b| {
                if a.is_zero() {
                    return Ok(SegmentFn::zero());
                }
                a.div(b).ok_or_else(|| {
                    Error::UnsupportedIntegrand("denominator is not a single exponential on a segment".into())
                })
            },
            |a, b| if a == 0.0 { 0.0 } else { a / b },
        )
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(
            self.grid.clone(),
            self.segs.iter().map(|s| s.scale(k)).collect(),
            self.at_jump.iter().map(|v| v * k).collect(),
        )
    }

    /// Apply `f` to an integrand that is constant on every segment, e.g. a
    /// function of `N_{t-}`.
    pub fn map_constant(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let segs = self
            .segs
            .iter()
            .map(|s| {
                s.as_constant().map(|c| SegmentFn::constant(f(c))).ok_or_else(|| {
                    Error::UnsupportedIntegrand("state map applied to an integrand that varies between events".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let at_jump = self.at_jump.iter().map(|v| f(*v)).collect();
        Ok(Self::new(self.grid.clone(), segs, at_jump))
    }
}

/// `∫_0^t φ dX` over `]0, t]`: exact segment primitives of `φ · X'` plus
/// `φ(b) ΔX_b` at every grid point.
pub fn integrate_predictable(phi: &Integrand, x: &PwProcess) -> Result<PwProcess> {
    same_grid(phi.grid(), x.grid())?;
    let grid = x.grid().clone();
    let k = grid.num_segments();
    let mut segs = Vec::with_capacity(k);
    let mut jumps = vec![0.0; grid.len()];
    let mut level = 0.0;
    for (i, jump) in jumps.iter_mut().enumerate().take(k) {
        if i > 0 {
            *jump = jump_term(phi.at_jump[i], x.jump(i));
            level += *jump;
        }
        let drift = phi.segs[i].mul(&x.segments()[i].derivative());
        let seg = SegmentFn::constant(level).add(&drift.antiderivative());
        level = seg.eval(grid.segment_len(i));
        segs.push(seg);
    }
    jumps[k] = jump_term(phi.at_jump[k], x.jump(k));
    Ok(PwProcess::new(grid, segs, jumps))
}

fn jump_term(phi: f64, dx: f64) -> f64 {
    if dx == 0.0 {
        0.0
    } else {
        phi * dx
    }
}

/// Raw covariation `[X, Y]_t = Σ_{s ≤ t} ΔX_s ΔY_s` of finite-variation processes.
pub fn bracket(x: &PwProcess, y: &PwProcess) -> Result<PwProcess> {
    if x.grid().horizon() != y.grid().horizon() {
        return Err(Error::GridMismatch);
    }
    same_grid(x.grid(), y.grid())?;
    let jumps = x.jumps().iter().zip(y.jumps()).map(|(a, b)| a * b).collect();
    Ok(PwProcess::pure_jump(x.grid().clone(), 0.0, jumps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_engine::process::Side;

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
    fn unit_integrand_reproduces_counting_process() {
        let n = counting(&[0.4, 1.1, 2.0], 3.0);
        let one = Integrand::constant(n.grid().clone(), 1.0);
        let r = integrate_predictable(&one, &n).unwrap();
        assert_eq!(r.max_abs_diff(&n).unwrap(), 0.0);
    }

    #[test]
    fn left_limit_integrand_against_counting_process() {
        let n = counting(&[1.0, 2.0], 3.0);
        let r = integrate_predictable(&Integrand::predictable(&n), &n).unwrap();
        assert_eq!(r.terminal(), 1.0);
        // the optional version picks up the post-jump values instead
        let o = integrate_predictable(&Integrand::optional(&n), &n).unwrap();
        assert_eq!(o.terminal(), 3.0);
    }

    #[test]
    fn constant_against_drift() {
        let grid = Arc::new(EventGrid::new(4.0, [1.5]).unwrap());
        let t = PwProcess::time(grid.clone());
        let r = integrate_predictable(&Integrand::constant(grid, 2.5), &t).unwrap();
        assert!((r.evaluate(3.2, Side::Right).unwrap() - 8.0).abs() < 1e-14);
    }

    #[test]
    fn bracket_of_counting_process_with_itself() {
        let n = counting(&[0.5, 1.5, 2.5], 3.0);
        let b = bracket(&n, &n).unwrap();
        assert_eq!(b.terminal(), 3.0);
        let t = PwProcess::time(n.grid().clone());
        assert_eq!(bracket(&n, &t).unwrap().terminal(), 0.0);
        assert!(b.segments().iter().all(|s| s.as_constant().is_some()));
    }

    #[test]
    fn bracket_rejects_other_horizon() {
        let a = counting(&[0.5], 3.0);
        let b = counting(&[0.5], 4.0);
        assert!(bracket(&a, &b).is_err());
    }

    #[test]
    fn division_by_curved_denominator_is_rejected() {
        let grid = Arc::new(EventGrid::new(1.0, []).unwrap());
        let t = Integrand::predictable(&PwProcess::time(grid.clone()).add_constant(1.0));
        let one = Integrand::constant(grid, 1.0);
        assert!(matches!(one.div(&t), Err(Error::UnsupportedIntegrand(_))));
    }
}
