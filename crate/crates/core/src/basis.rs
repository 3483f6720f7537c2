//! Quadratic B-spline basis on the truncated state space [K, N].
//!
//! The basis carries the Galerkin discretization of the filter: m quadratic
//! B-splines on a uniform open knot vector, with the two boundary splines
//! dropped so every element vanishes at K and N. The functions are
//! nonnegative, continuously differentiable, have piecewise-constant second
//! weak derivative and local support over three knot intervals, which keeps
//! every Gram-type matrix banded.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const DEGREE: usize = 2;

// 8-point Gauss-Legendre rule on [-1, 1]; exact through degree 15, far more
// than the piecewise degree-4 products the assembly needs, and accurate for
// the smooth observation-drift weights.
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Spline basis plus its quadrature rule and cached node evaluations.
#[derive(Debug, Clone)]
pub struct Basis {
    /// Lower endpoint (default threshold K).
    pub lo: f64,
    /// Upper endpoint (truncation level N).
    pub hi: f64,
    /// Number of basis functions; equals the number of knot intervals.
    pub m: usize,
    /// Padded knot vector with triple knots at both ends.
    knots: Vec<f64>,
    /// Gauss-Legendre nodes on [lo, hi], 8 per knot interval.
    pub quad_x: Vec<f64>,
    /// Matching quadrature weights.
    pub quad_w: Vec<f64>,
    /// values[(i, q)] = e_i(quad_x[q]), m x nq.
    pub values: DMatrix<f64>,
    /// derivs[(i, q)] = e_i'(quad_x[q]).
    pub derivs: DMatrix<f64>,
}

impl Basis {
    /// Build the basis; `m >= 8` and `hi > lo` are required.
    pub fn new(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if m < 8 {
            return Err(Error::InvalidGrid(format!("basis needs m >= 8, got {m}")));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!("bad basis interval [{lo}, {hi}]")));
        }
        let intervals = m;
        let h = (hi - lo) / intervals as f64;
        let mut knots = Vec::with_capacity(intervals + 5);
        knots.extend_from_slice(&[lo; DEGREE]);
        for i in 0..=intervals {
            knots.push(lo + h * i as f64);
        }
        knots.extend_from_slice(&[hi; DEGREE]);

        let nq = 8 * intervals;
        let mut quad_x = Vec::with_capacity(nq);
        let mut quad_w = Vec::with_capacity(nq);
        for j in 0..intervals {
            let (a, b) = (lo + h * j as f64, lo + h * (j + 1) as f64);
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for g in 0..8 {
                quad_x.push(mid + half * GL_NODES[g]);
                quad_w.push(half * GL_WEIGHTS[g]);
            }
        }

        let mut basis = Basis {
            lo,
            hi,
            m,
            knots,
            quad_x,
            quad_w,
            values: DMatrix::zeros(m, nq),
            derivs: DMatrix::zeros(m, nq),
        };
        let (values, derivs) = {
            let mut v = DMatrix::zeros(m, nq);
            let mut d = DMatrix::zeros(m, nq);
            for q in 0..nq {
                let x = basis.quad_x[q];
                for i in 0..m {
                    v[(i, q)] = basis.eval(i, x);
                    d[(i, q)] = basis.deriv(i, x);
                }
            }
            (v, d)
        };
        basis.values = values;
        basis.derivs = derivs;
        Ok(basis)
    }

    fn full_knot(&self, i: usize) -> f64 {
        self.knots[i]
    }

    /// Cox-de Boor evaluation of the full B-spline `idx` (0..m+2) of the
    /// given degree. The half-open convention is closed at the right end so
    /// values at `hi` come out as left limits.
    fn bspline(&self, idx: usize, deg: usize, x: f64) -> f64 {
        if deg == 0 {
            let t0 = self.full_knot(idx);
            let t1 = self.full_knot(idx + 1);
            let inside = if t1 >= self.hi {
                x >= t0 && x <= t1 && t1 > t0
            } else {
                x >= t0 && x < t1
            };
            return if inside { 1.0 } else { 0.0 };
        }
        let t_i = self.full_knot(idx);
        let t_ik = self.full_knot(idx + deg);
        let t_i1 = self.full_knot(idx + 1);
        let t_ik1 = self.full_knot(idx + deg + 1);
        let mut out = 0.0;
        if t_ik > t_i {
            out += (x - t_i) / (t_ik - t_i) * self.bspline(idx, deg - 1, x);
        }
        if t_ik1 > t_i1 {
            out += (t_ik1 - x) / (t_ik1 - t_i1) * self.bspline(idx + 1, deg - 1, x);
        }
        out
    }

    fn bspline_deriv(&self, idx: usize, deg: usize, x: f64) -> f64 {
        let t_i = self.full_knot(idx);
        let t_ik = self.full_knot(idx + deg);
        let t_i1 = self.full_knot(idx + 1);
        let t_ik1 = self.full_knot(idx + deg + 1);
        let mut out = 0.0;
        if t_ik > t_i {
            out += deg as f64 / (t_ik - t_i) * self.bspline(idx, deg - 1, x);
        }
        if t_ik1 > t_i1 {
            out -= deg as f64 / (t_ik1 - t_i1) * self.bspline(idx + 1, deg - 1, x);
        }
        out
    }

    /// Value of basis function `i` (0..m) at `x`; zero outside [lo, hi].
    pub fn eval(&self, i: usize, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        self.bspline(i + 1, DEGREE, x)
    }

    /// First derivative of basis function `i` at `x` (one-sided limits at
    /// the endpoints).
    pub fn deriv(&self, i: usize, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        self.bspline_deriv(i + 1, DEGREE, x)
    }

    /// Piecewise-constant second weak derivative of basis function `i`,
    /// evaluated away from knots.
    pub fn deriv2(&self, i: usize, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let idx = i + 1;
        let mut out = 0.0;
        let t_i = self.full_knot(idx);
        let t_ik = self.full_knot(idx + DEGREE);
        let t_i1 = self.full_knot(idx + 1);
        let t_ik1 = self.full_knot(idx + DEGREE + 1);
        if t_ik > t_i {
            out += 2.0 / (t_ik - t_i) * self.bspline_deriv(idx, 1, x);
        }
        if t_ik1 > t_i1 {
            out -= 2.0 / (t_ik1 - t_i1) * self.bspline_deriv(idx + 1, 1, x);
        }
        out
    }

    /// Index of the knot interval containing `x`, clamped to [0, m-1].
    fn interval_of(&self, x: f64) -> usize {
        let h = (self.hi - self.lo) / self.m as f64;
        (((x - self.lo) / h) as usize).min(self.m - 1)
    }

    /// Evaluate the expansion sum_i psi[i] e_i(x) using local support.
    pub fn eval_expansion(&self, psi: &[f64], x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let j = self.interval_of(x);
        let mut out = 0.0;
        // full indices j, j+1, j+2 are supported on interval j
        for full in j..=j + 2 {
            if full >= 1 && full <= self.m {
                out += psi[full - 1] * self.bspline(full, DEGREE, x);
            }
        }
        out
    }

    /// Derivative of the expansion at `x`.
    pub fn deriv_expansion(&self, psi: &[f64], x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let j = self.interval_of(x);
        let mut out = 0.0;
        for full in j..=j + 2 {
            if full >= 1 && full <= self.m {
                out += psi[full - 1] * self.bspline_deriv(full, DEGREE, x);
            }
        }
        out
    }

    /// Quadrature of a function given by its values at `quad_x`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.quad_w).map(|(v, w)| v * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_small_basis() {
        assert!(Basis::new(20.0, 200.0, 7).is_err());
        assert!(Basis::new(20.0, 200.0, 8).is_ok());
    }

    #[test]
    fn count_and_knot_spacing() {
        let b = Basis::new(20.0, 200.0, 8).unwrap();
        assert_eq!(b.m, 8);
        // open-uniform rule: m knot intervals of width (N - K)/m
        let h = (200.0 - 20.0) / 8.0;
        assert_relative_eq!(b.knots[3] - b.knots[2], h, epsilon = 1e-12);
        assert_eq!(b.quad_x.len(), 64);
    }

    #[test]
    fn vanishes_at_both_endpoints() {
        let b = Basis::new(20.0, 200.0, 16).unwrap();
        for i in 0..b.m {
            assert_eq!(b.eval(i, 20.0), 0.0, "e_{i}(K) != 0");
            assert_eq!(b.eval(i, 200.0), 0.0, "e_{i}(N) != 0");
        }
    }

    #[test]
    fn nonnegative_everywhere() {
        let b = Basis::new(20.0, 200.0, 12).unwrap();
        for i in 0..b.m {
            for k in 0..=600 {
                let x = 20.0 + 180.0 * k as f64 / 600.0;
                assert!(b.eval(i, x) >= 0.0);
            }
        }
    }

    #[test]
    fn partition_of_unity_away_from_boundary() {
        // direct evaluation oracle: the full B-spline family sums to one, so
        // after dropping the two boundary splines the sum is one wherever
        // those have no support (two intervals in from each end).
        let b = Basis::new(20.0, 200.0, 24).unwrap();
        let h = 180.0 / 24.0;
        for k in 0..200 {
            let x = 20.0 + h + (180.0 - 2.0 * h) * (k as f64 + 0.5) / 200.0;
            let sum: f64 = (0..b.m).map(|i| b.eval(i, x)).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let b = Basis::new(20.0, 200.0, 16).unwrap();
        let h = 1e-6;
        for i in 0..b.m {
            for k in 1..40 {
                let x = 20.0 + 180.0 * k as f64 / 40.0 + 0.123;
                if x >= 200.0 - h {
                    continue;
                }
                let fd = (b.eval(i, x + h) - b.eval(i, x - h)) / (2.0 * h);
                assert_relative_eq!(b.deriv(i, x), fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn c1_continuity_at_knots() {
        let b = Basis::new(20.0, 200.0, 16).unwrap();
        let h = 180.0 / 16.0;
        for i in 0..b.m {
            for j in 1..16 {
                let knot = 20.0 + h * j as f64;
                let left = b.deriv(i, knot - 1e-9);
                let right = b.deriv(i, knot + 1e-9);
                assert_relative_eq!(left, right, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn second_derivative_piecewise_constant() {
        let b = Basis::new(20.0, 200.0, 16).unwrap();
        let h = 180.0 / 16.0;
        for i in 0..b.m {
            for j in 0..16 {
                let a = 20.0 + h * (j as f64 + 0.2);
                let c = 20.0 + h * (j as f64 + 0.8);
                assert_relative_eq!(b.deriv2(i, a), b.deriv2(i, c), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn expansion_matches_naive_sum() {
        let b = Basis::new(20.0, 200.0, 16).unwrap();
        let psi: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        for k in 0..=100 {
            let x = 20.0 + 180.0 * k as f64 / 100.0;
            let naive: f64 = (0..16).map(|i| psi[i] * b.eval(i, x)).sum();
            assert_relative_eq!(b.eval_expansion(&psi, x), naive, epsilon = 1e-12);
            let naive_d: f64 = (0..16).map(|i| psi[i] * b.deriv(i, x)).sum();
            assert_relative_eq!(b.deriv_expansion(&psi, x), naive_d, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_exact_for_quartics() {
        let b = Basis::new(0.0, 2.0, 8).unwrap();
        let vals: Vec<f64> = b.quad_x.iter().map(|x| x.powi(4)).collect();
        assert_relative_eq!(b.integrate(&vals), 32.0 / 5.0, epsilon = 1e-12);
    }
}
