//! Backing the filter density out of market prices.
//!
//! Observed prices of traded securities pin down linear functionals of the
//! density (its integrals against the full-information values); among all
//! nonnegative basis expansions matching those and the unit-mass constraint
//! we pick the one minimizing the L2 norm of the second derivative, a
//! maximally smooth density. CDS quotes enter through the standard
//! two-leg decomposition into survival and payment-at-default claims.

use nalgebra::{DMatrix, DVector};

use crate::basis::Basis;
use crate::error::{Error, Result};
use crate::fullinfo::{solve_fullinfo, ClaimSpec, FullInfoGrid};
use crate::galerkin::{FilterState, GalerkinFilter, GalerkinMatrices};
use crate::model::ModelParams;
use crate::qp::{solve_qp_nonneg, QpSolution};

/// One calibration input: an instrument reduced to its full-information
/// value profile at the calibration time and its target price.
#[derive(Debug, Clone)]
pub struct Instrument {
    pub id: String,
    /// h(t, .) at the basis quadrature nodes.
    pub h_at_quad: Vec<f64>,
    /// h(t, N).
    pub h_at_upper: f64,
    /// Observed price (zero for par-spread instruments).
    pub target: f64,
}

impl Instrument {
    /// Instrument backed by a single claim surface.
    pub fn from_grid(
        id: impl Into<String>,
        grid: &FullInfoGrid,
        basis: &Basis,
        t: f64,
        price: f64,
    ) -> Result<Self> {
        Ok(Instrument {
            id: id.into(),
            h_at_quad: grid.values_at(t, &basis.quad_x)?,
            h_at_upper: grid.value_at(t, basis.hi)?,
            target: price,
        })
    }

    /// Par CDS: protection leg (1 - recovery) against quarterly premium
    /// payments of `spread` per year on surviving notional. The par
    /// condition is the linear constraint
    /// (1-R) h_def - spread * 0.25 * sum_j h_surv(T_j) integrated against
    /// the density equals zero.
    pub fn from_cds(
        id: impl Into<String>,
        maturity: f64,
        spread: f64,
        recovery: f64,
        params: &ModelParams,
        basis: &Basis,
        t: f64,
        nt: usize,
        nv: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&recovery) {
            return Err(Error::InvalidParams(format!("recovery {recovery} outside [0, 1)")));
        }
        if maturity <= t {
            return Err(Error::InvalidParams(format!("cds maturity {maturity} not after t = {t}")));
        }
        let def_grid = solve_fullinfo(&ClaimSpec::payment_at_default(maturity), params, nt, nv)?;
        let mut h: Vec<f64> = def_grid
            .values_at(t, &basis.quad_x)?
            .iter()
            .map(|v| (1.0 - recovery) * v)
            .collect();
        let mut h_upper = (1.0 - recovery) * def_grid.value_at(t, basis.hi)?;
        // quarterly premium dates counted back from maturity, strictly after t
        let quarter = 0.25;
        let mut dates = Vec::new();
        let mut t_j = maturity;
        while t_j > t + 1e-9 {
            dates.push(t_j);
            t_j -= quarter;
        }
        for &date in &dates {
            let surv = solve_fullinfo(&ClaimSpec::survival(date), params, nt, nv)?;
            let vals = surv.values_at(t, &basis.quad_x)?;
            for (acc, v) in h.iter_mut().zip(&vals) {
                *acc -= spread * quarter * v;
            }
            h_upper -= spread * quarter * surv.value_at(t, basis.hi)?;
        }
        Ok(Instrument {
            id: id.into(),
            h_at_quad: h,
            h_at_upper: h_upper,
            target: 0.0,
        })
    }
}

/// Assembled calibration QP: smoothness matrix, constraint rows (mass first)
/// and targets.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub smooth: DMatrix<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub instrument_ids: Vec<String>,
    pub t: f64,
}

/// Build the constraint system: row zero enforces unit mass, each further
/// row reprices one instrument. Errors when a row is linearly dependent on
/// the preceding rows, naming the redundant instrument.
pub fn assemble_calibration(
    instruments: &[Instrument],
    basis: &Basis,
    mats: &GalerkinMatrices,
    t: f64,
) -> Result<CalibrationProblem> {
    let m = basis.m;
    let l = instruments.len();
    if l + 1 > m {
        return Err(Error::InvalidParams(format!(
            "{l} instruments with only {m} basis functions (need l + 1 <= m)"
        )));
    }
    let mut a_eq = DMatrix::zeros(l + 1, m);
    let mut b_eq = DVector::zeros(l + 1);
    for i in 0..m {
        a_eq[(0, i)] = mats.mass[i];
    }
    b_eq[0] = 1.0;
    for (j, inst) in instruments.iter().enumerate() {
        if !inst.target.is_finite() {
            return Err(Error::NonFinite("calibration target"));
        }
        for i in 0..m {
            let mut acc = 0.0;
            for q in 0..basis.quad_x.len() {
                acc += basis.quad_w[q] * basis.values[(i, q)] * inst.h_at_quad[q];
            }
            a_eq[(j + 1, i)] = acc;
        }
        b_eq[j + 1] = inst.target;
    }

    // Gram-Schmidt rank check naming the first redundant instrument
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    for r in 0..l + 1 {
        let mut row = a_eq.row(r).transpose();
        let norm0 = row.norm();
        for q in &ortho {
            let proj = row.dot(q);
            row -= q * proj;
        }
        if row.norm() <= 1e-10 * norm0.max(1.0) {
            let name = if r == 0 {
                "unit-mass row".to_string()
            } else {
                instruments[r - 1].id.clone()
            };
            return Err(Error::RankDeficient(name));
        }
        ortho.push(&row / row.norm());
    }

    Ok(CalibrationProblem {
        smooth: mats.smooth.clone(),
        a_eq,
        b_eq,
        instrument_ids: instruments.iter().map(|i| i.id.clone()).collect(),
        t,
    })
}

/// Solve the assembled problem.
pub fn solve_calibration(problem: &CalibrationProblem) -> Result<QpSolution> {
    solve_qp_nonneg(&problem.smooth, &problem.a_eq, &problem.b_eq)
}

/// Full calibration: assemble, solve, wrap the coefficients in a filter
/// state at time `t` and verify that every input instrument is repriced to
/// 1e-8.
pub fn calibrate_density(
    instruments: &[Instrument],
    filter: &GalerkinFilter,
    t: f64,
) -> Result<(FilterState, QpSolution)> {
    let problem = assemble_calibration(instruments, &filter.basis, &filter.mats, t)?;
    let sol = solve_calibration(&problem)?;
    let state = FilterState {
        t,
        psi: sol.psi.clone(),
        nu_k: 0.0,
        nu_n: 0.0,
        neg_l2: 0.0,
    };
    for inst in instruments {
        let price = filter.filter_expectation(&state, &inst.h_at_quad, inst.h_at_upper)?;
        if (price - inst.target).abs() > 1e-8 {
            return Err(Error::Infeasible(format!(
                "instrument '{}' reprices to {price} against target {} after calibration",
                inst.id, inst.target
            )));
        }
    }
    Ok((state, sol))
}
