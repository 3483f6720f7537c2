//! Equality-constrained nonnegative quadratic programming.
//!
//! Solves `min psi' Xi psi  s.t.  A_eq psi = b_eq, psi >= 0` with a primal
//! active-set method on the nonnegativity constraints; the equality
//! constraints stay in every KKT solve. A Lawson-Hanson NNLS pass provides
//! the feasible starting point and doubles as the infeasibility detector.
//! Pivoting is by lowest index, so identical inputs always walk the same
//! active-set sequence.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solution of the nonnegative QP with its optimality certificates.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub psi: DVector<f64>,
    /// Multipliers of the equality constraints.
    pub multipliers: DVector<f64>,
    /// Indices pinned at zero in the final working set.
    pub active: Vec<usize>,
    /// Stationarity residual ||2 Xi psi - A' mu - eta||_inf.
    pub kkt_residual: f64,
    /// ||A_eq psi - b_eq||_inf.
    pub constraint_residual: f64,
    /// max_i |psi_i eta_i|.
    pub complementarity: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Least squares via SVD with a relative rank cutoff.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone()
        .svd(true, true)
        .solve(b, 1e-13)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Lawson-Hanson NNLS: min ||A x - b|| s.t. x >= 0.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-12 * a.amax().max(1.0) * b.amax().max(1.0);
    for _ in 0..(4 * n.max(8)) {
        let residual = b - a * &x;
        let w = a.transpose() * &residual;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if !passive[i] && w[i] > tol {
                if best.map_or(true, |(_, bw)| w[i] > bw) {
                    best = Some((i, w[i]));
                }
            }
        }
        let Some((enter, _)) = best else { break };
        passive[enter] = true;
        loop {
            // least squares on the passive columns
            let cols: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(cols.iter());
            let z_sub = lstsq(&sub, b);
            if z_sub.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &i) in cols.iter().enumerate() {
                    x[i] = z_sub[k];
                }
                break;
            }
            // step toward z until the first passive variable hits zero
            let mut alpha = f64::INFINITY;
            for (k, &i) in cols.iter().enumerate() {
                if z_sub[k] <= 0.0 {
                    let denom = x[i] - z_sub[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            let alpha = alpha.min(1.0);
            for (k, &i) in cols.iter().enumerate() {
                x[i] += alpha * (z_sub[k] - x[i]);
                if x[i] <= 1e-14 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

/// Solve the equality-constrained subproblem with the working set pinned:
/// minimize x' Xi x over { A_eq x = b, x_i = 0 for i in working }.
/// Returns the free components and the equality multipliers.
fn solve_eqp(
    xi: &DMatrix<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    working: &[bool],
) -> (DVector<f64>, DVector<f64>) {
    let n = xi.ncols();
    let p = a_eq.nrows();
    let free: Vec<usize> = (0..n).filter(|&i| !working[i]).collect();
    let nf = free.len();
    let mut kkt = DMatrix::zeros(nf + p, nf + p);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            kkt[(r, c)] = 2.0 * xi[(i, j)];
        }
        for q in 0..p {
            kkt[(r, nf + q)] = a_eq[(q, i)];
            kkt[(nf + q, r)] = a_eq[(q, i)];
        }
    }
    let mut rhs = DVector::zeros(nf + p);
    for q in 0..p {
        rhs[nf + q] = b_eq[q];
    }
    let mut sol = lstsq(&kkt, &rhs);
    // one round of iterative refinement tightens the KKT residual
    let correction = lstsq(&kkt, &(&rhs - &kkt * &sol));
    sol += correction;

    let mut x = DVector::zeros(n);
    for (r, &i) in free.iter().enumerate() {
        x[i] = sol[r];
    }
    let mu = DVector::from_fn(p, |q, _| sol[nf + q]);
    (x, mu)
}

/// Primal active-set solver; see module docs.
pub fn solve_qp_nonneg(
    xi: &DMatrix<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
) -> Result<QpSolution> {
    let n = xi.ncols();
    let p = a_eq.nrows();
    if a_eq.ncols() != n || b_eq.len() != p {
        return Err(Error::InvalidParams("qp dimensions disagree".into()));
    }

    // phase 1: feasible nonnegative point (or proof that none exists)
    let scale = b_eq.amax().max(1.0);
    let x0 = nnls(a_eq, b_eq);
    let feas_res = (a_eq * &x0 - b_eq).amax();
    if feas_res > 1e-8 * scale {
        return Err(Error::Infeasible(format!(
            "no nonnegative density reprices the inputs (best residual {feas_res:.3e})"
        )));
    }

    let mut psi = x0;
    let mut working: Vec<bool> = psi.iter().map(|&v| v <= 0.0).collect();
    let max_iter = 30 * n.max(10);
    let mut iterations = 0;

    let mu = loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::QpStalled(max_iter));
        }
        let (target, mu_new) = solve_eqp(xi, a_eq, b_eq, &working);
        let step = &target - &psi;
        if step.amax() <= 1e-12 * (1.0 + psi.amax()) {
            // multipliers of the pinned bounds: eta_i = (2 Xi psi - A' mu)_i
            let grad = 2.0 * (xi * &psi) + a_eq.transpose() * &mu_new;
            let mut worst: Option<(usize, f64)> = None;
            let tol = 1e-9 * (1.0 + grad.amax());
            for i in 0..n {
                if working[i] && grad[i] < -tol {
                    if worst.map_or(true, |(_, g)| grad[i] < g) {
                        worst = Some((i, grad[i]));
                    }
                }
            }
            match worst {
                Some((release, _)) => {
                    working[release] = false;
                    continue;
                }
                None => break mu_new,
            }
        }
        // ratio test against the bounds not in the working set
        let mut alpha = 1.0f64;
        let mut blocking: Option<usize> = None;
        for i in 0..n {
            if !working[i] && step[i] < -1e-15 {
                let ratio = psi[i] / -step[i];
                if ratio < alpha - 1e-15 {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
        }
        psi += alpha * &step;
        if let Some(i) = blocking {
            psi[i] = 0.0;
            working[i] = true;
        }
        for i in 0..n {
            if psi[i] < 0.0 {
                psi[i] = 0.0;
            }
        }
    };

    // certificates
    let grad = 2.0 * (xi * &psi) + a_eq.transpose() * &mu;
    let mut eta = DVector::zeros(n);
    for i in 0..n {
        if working[i] {
            eta[i] = grad[i];
        }
    }
    let kkt_residual = (&grad - &eta).amax();
    let constraint_residual = (a_eq * &psi - b_eq).amax();
    let complementarity = (0..n).map(|i| (psi[i] * eta[i]).abs()).fold(0.0, f64::max);
    let objective = psi.dot(&(xi * &psi));
    let active = (0..n).filter(|&i| working[i]).collect();

    Ok(QpSolution {
        psi,
        multipliers: mu,
        active,
        kkt_residual,
        constraint_residual,
        complementarity,
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simple_problem() -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        // min x'x s.t. sum x = 1 over x >= 0: uniform solution
        let n = 6;
        let xi = DMatrix::identity(n, n);
        let a = DMatrix::from_element(1, n, 1.0);
        let b = DVector::from_element(1, 1.0);
        (xi, a, b)
    }

    #[test]
    fn uniform_minimum_on_simplex() {
        let (xi, a, b) = simple_problem();
        let sol = solve_qp_nonneg(&xi, &a, &b).unwrap();
        for i in 0..6 {
            assert_relative_eq!(sol.psi[i], 1.0 / 6.0, epsilon = 1e-10);
        }
        assert!(sol.kkt_residual < 1e-9);
        assert!(sol.constraint_residual < 1e-10);
        assert!(sol.complementarity < 1e-9);
    }

    #[test]
    fn activates_bounds_when_needed() {
        // min (x - c)' (x - c) rewritten as x'Ix - 2c'x has the same
        // minimizer; emulate by shifting: objective x'x with equality
        // pushing mass onto two coordinates, c makes one coordinate want to
        // go negative. Use Xi with cross terms instead.
        let n = 3;
        let mut xi = DMatrix::identity(n, n);
        xi[(0, 1)] = 0.9;
        xi[(1, 0)] = 0.9;
        let a = DMatrix::from_row_slice(1, n, &[1.0, 1.0, 1.0]);
        let b = DVector::from_element(1, 1.0);
        let sol = solve_qp_nonneg(&xi, &a, &b).unwrap();
        assert!(sol.psi.iter().all(|&v| v >= 0.0));
        assert!(sol.constraint_residual < 1e-10);
        // brute-force check over active sets
        let brute = brute_force(&xi, &a, &b);
        assert_relative_eq!(sol.objective, brute, epsilon = 1e-9);
    }

    /// Exhaustive active-set oracle for small problems.
    fn brute_force(xi: &DMatrix<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        let n = xi.ncols();
        let mut best = f64::INFINITY;
        for mask in 0..(1u32 << n) {
            let working: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let (x, _) = solve_eqp(xi, a, b, &working);
            if x.iter().any(|&v| v < -1e-9) {
                continue;
            }
            if (a * &x - b).amax() > 1e-8 {
                continue;
            }
            let obj = x.dot(&(xi * &x));
            if obj < best {
                best = obj;
            }
        }
        best
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_problems() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
        for trial in 0..25 {
            let n = 8;
            // random SPD Xi = M'M + eps I
            let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let xi = m.transpose() * &m + DMatrix::identity(n, n) * 0.05;
            let a = DMatrix::from_fn(2, n, |r, c| {
                if r == 0 {
                    1.0
                } else {
                    (c as f64 * 0.7).sin() + 1.1
                }
            });
            let b = DVector::from_vec(vec![1.0, 1.0 + rng.random::<f64>()]);
            match solve_qp_nonneg(&xi, &a, &b) {
                Ok(sol) => {
                    let brute = brute_force(&xi, &a, &b);
                    assert!(
                        (sol.objective - brute).abs() <= 1e-7 * (1.0 + brute),
                        "trial {trial}: active-set {} vs brute {brute}",
                        sol.objective
                    );
                }
                Err(Error::Infeasible(_)) => {
                    assert!(brute_force(&xi, &a, &b).is_infinite(), "trial {trial}: false infeasibility");
                }
                Err(e) => panic!("trial {trial}: {e}"),
            }
        }
    }

    #[test]
    fn detects_infeasible_targets() {
        // sum x = 1 and sum x = 2 simultaneously
        let n = 4;
        let xi = DMatrix::identity(n, n);
        let a = DMatrix::from_row_slice(2, n, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(solve_qp_nonneg(&xi, &a, &b), Err(Error::Infeasible(_))));
        // negative requirement against nonnegativity
        let a2 = DMatrix::from_row_slice(1, n, &[1.0, 1.0, 1.0, 1.0]);
        let b2 = DVector::from_vec(vec![-1.0]);
        assert!(matches!(solve_qp_nonneg(&xi, &a2, &b2), Err(Error::Infeasible(_))));
    }

    #[test]
    fn deterministic_solution_and_active_set() {
        let (xi, a, b) = simple_problem();
        let s1 = solve_qp_nonneg(&xi, &a, &b).unwrap();
        let s2 = solve_qp_nonneg(&xi, &a, &b).unwrap();
        assert_eq!(s1.psi, s2.psi);
        assert_eq!(s1.active, s2.active);
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn adding_constraints_never_improves_objective() {
        let n = 8;
        let mut xi = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                xi[(i, j)] = if i == j { 2.0 } else { 0.3 / (1.0 + i.abs_diff(j) as f64) };
            }
        }
        let a1 = DMatrix::from_fn(1, n, |_, _| 1.0);
        let b1 = DVector::from_element(1, 1.0);
        let sol1 = solve_qp_nonneg(&xi, &a1, &b1).unwrap();
        let mut a2 = DMatrix::zeros(2, n);
        for c in 0..n {
            a2[(0, c)] = 1.0;
            a2[(1, c)] = c as f64 / n as f64;
        }
        let b2 = DVector::from_vec(vec![1.0, 0.3]);
        let sol2 = solve_qp_nonneg(&xi, &a2, &b2).unwrap();
        assert!(sol2.objective >= sol1.objective - 1e-12);
    }
}
