//! Closed-form functions on a single inter-event segment.
//!
//! A [`SegmentFn`] is a finite exponential polynomial in the local time `s`
//! measured from the start of its segment:
//!
//! ```text
//! f(s) = sum_k  c_k * s^p_k * exp(r_k * s)
//! ```
//!
//! The family is closed under sums, products, differentiation, integration
//! and time shifts, which is everything the path engine needs to keep every
//! Stieltjes integral exact. Division is only supported by single-term
//! exponentials `c * exp(r s)`; those are the only denominators that occur
//! (survival processes are piecewise exponential in every supported model).

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub power: u32,
    pub rate: f64,
}

impl Term {
    fn eval(&self, s: f64) -> f64 {
        let mut v = self.coef;
        if self.power > 0 {
            v *= s.powi(self.power as i32);
        }
        if self.rate != 0.0 {
            v *= (self.rate * s).exp();
        }
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentFn {
    terms: Vec<Term>,
}

impl SegmentFn {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut f = Self::zero();
        f.push(Term {
            coef: c,
            power: 0,
            rate: 0.0,
        });
        f
    }

    /// `v0 + slope * s`.
    pub fn affine(v0: f64, slope: f64) -> Self {
        let mut f = Self::constant(v0);
        f.push(Term {
            coef: slope,
            power: 1,
            rate: 0.0,
        });
        f
    }

    /// `coef * exp(rate * s)`.
    pub fn exponential(coef: f64, rate: f64) -> Self {
        let mut f = Self::zero();
        f.push(Term { coef, power: 0, rate });
        f
    }

    pub fn from_terms(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut f = Self::zero();
        for t in terms {
            f.push(t);
        }
        f.prune();
        f
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn push(&mut self, t: Term) {
        if t.coef == 0.0 {
            return;
        }
        // -0.0 and 0.0 must merge
        let rate = if t.rate == 0.0 { 0.0 } else { t.rate };
        if let Some(x) = self.terms.iter_mut().find(|x| x.power == t.power && x.rate == rate) {
            x.coef += t.coef;
        } else {
            self.terms.push(Term { rate, ..t });
        }
    }

    fn prune(&mut self) {
        self.terms.retain(|t| t.coef != 0.0);
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(s)).sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_terms(self.terms.iter().chain(other.terms.iter()).copied())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::from_terms(self.terms.iter().map(|t| Term { coef: t.coef * k, ..*t }))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for a in &self.terms {
            for b in &other.terms {
                out.push(Term {
                    coef: a.coef * b.coef,
                    power: a.power + b.power,
                    rate: a.rate + b.rate,
                });
            }
        }
        out.prune();
        out
    }

    pub fn derivative(&self) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            if t.power > 0 {
                out.push(Term {
                    coef: t.coef * t.power as f64,
                    power: t.power - 1,
                    rate: t.rate,
                });
            }
            if t.rate != 0.0 {
                out.push(Term {
                    coef: t.coef * t.rate,
                    ..*t
                });
            }
        }
        out.prune();
        out
    }

    /// Primitive `F` with `F(0) = 0`.
    pub fn antiderivative(&self) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            let p = t.power;
            if t.rate == 0.0 {
                out.push(Term {
                    coef: t.coef / (p + 1) as f64,
                    power: p + 1,
                    rate: 0.0,
                });
                continue;
            }
            // int_0^s u^p e^{ru} du
            //   = e^{rs} sum_j (-1)^j p!/(p-j)! s^{p-j} / r^{j+1}  -  (-1)^p p! / r^{p+1}
            let r = t.rate;
            let mut falling = 1.0;
            for j in 0..=p {
                if j > 0 {
                    falling *= (p - j + 1) as f64;
                }
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                out.push(Term {
                    coef: t.coef * sign * falling / r.powi(j as i32 + 1),
                    power: p - j,
                    rate: r,
                });
            }
            let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
            out.push(Term {
                coef: -t.coef * sign * falling / r.powi(p as i32 + 1),
                power: 0,
                rate: 0.0,
            });
        }
        out.prune();
        out
    }

    /// `g(s) = f(s + delta)`.
    pub fn shift(&self, delta: f64) -> Self {
        if delta == 0.0 {
            return self.clone();
        }
        let mut out = Self::zero();
        for t in &self.terms {
            let growth = if t.rate == 0.0 { 1.0 } else { (t.rate * delta).exp() };
            let mut binom = 1.0;
            for k in 0..=t.power {
                if k > 0 {
                    binom = binom * (t.power - k + 1) as f64 / k as f64;
                }
                out.push(Term {
                    coef: t.coef * growth * binom * delta.powi((t.power - k) as i32),
                    power: k,
                    rate: t.rate,
                });
            }
        }
        out.prune();
        out
    }

    /// Value if the function is constant in `s`.
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [] => Some(0.0),
            [t] if t.power == 0 && t.rate == 0.0 => Some(t.coef),
            _ => None,
        }
    }

    /// `(coef, slope)` if the function is affine in `s`.
    pub fn as_affine(&self) -> Option<(f64, f64)> {
        let mut v0 = 0.0;
        let mut slope = 0.0;
        for t in &self.terms {
            match (t.power, t.rate == 0.0) {
                (0, true) => v0 = t.coef,
                (1, true) => slope = t.coef,
                _ => return None,
            }
        }
        Some((v0, slope))
    }

    /// `self / other` when `other` is a single term `c * exp(r s)`.
    pub fn div(&self, other: &Self) -> Option<Self> {
        match other.terms.as_slice() {
            [t] if t.power == 0 => Some(self.mul(&Self::exponential(1.0 / t.coef, -t.rate))),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(f: &SegmentFn, a: f64, b: f64) -> f64 {
        // composite Simpson, test-only oracle
        let n = 2000;
        let h = (b - a) / n as f64;
        let mut acc = f.eval(a) + f.eval(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f.eval(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    fn sample() -> SegmentFn {
        SegmentFn::from_terms([
            Term {
                coef: 1.5,
                power: 0,
                rate: 0.0,
            },
            Term {
                coef: -0.5,
                power: 1,
                rate: 0.0,
            },
            Term {
                coef: 2.0,
                power: 0,
                rate: -1.3,
            },
            Term {
                coef: 0.7,
                power: 2,
                rate: 0.4,
            },
        ])
    }

    #[test]
    fn affine_eval() {
        let f = SegmentFn::affine(0.0, 3.0);
        assert_eq!(f.eval(0.5), 1.5);
    }

    #[test]
    fn antiderivative_matches_quadrature() {
        let f = sample();
        let big_f = f.antiderivative();
        assert!(big_f.eval(0.0).abs() < 1e-14);
        for &s in &[0.1, 0.8, 2.5] {
            assert!((big_f.eval(s) - quad(&f, 0.0, s)).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_inverts_antiderivative() {
        let f = sample();
        let g = f.antiderivative().derivative();
        for &s in &[0.0, 0.3, 1.7] {
            assert!((g.eval(s) - f.eval(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_moves_origin() {
        let f = sample();
        let g = f.shift(0.6);
        for &s in &[0.0, 0.2, 1.1] {
            assert!((g.eval(s) - f.eval(s + 0.6)).abs() < 1e-12);
        }
    }

    #[test]
    fn exponentials_cancel_to_constant() {
        let z = SegmentFn::exponential(0.25, -2.0);
        let inv = SegmentFn::constant(1.0).div(&z).unwrap();
        assert_eq!(z.mul(&inv).as_constant(), Some(1.0));
    }

    #[test]
    fn division_by_sum_is_rejected() {
        let d = SegmentFn::affine(1.0, 1.0);
        assert!(SegmentFn::constant(1.0).div(&d).is_none());
    }
}
