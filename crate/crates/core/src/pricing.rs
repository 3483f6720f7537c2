//! Pricing and hedging from the filter state.
//!
//! Debt securities price by integrating their full-information value
//! against the filter density. Options on traded assets price by Monte
//! Carlo under the reference measure: the filter SPDE is simulated with
//! pure-noise observations and reference-density dividends, the payoff is
//! weighted with the terminal unnormalized mass and normalized by the
//! current mass. Hedging uses the discrete-rebalancing risk-minimization
//! scheme: per rebalancing date, a cross-sectional regression of target
//! increments on instrument gains increments.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fullinfo::FullInfoGrid;
use crate::galerkin::{FilterState, GalerkinFilter};
use crate::model::dividend_density;
use crate::sim::{simulate_truth, SimGrid, TruthPath};

/// Pre-default price of a debt security: the filter expectation of its
/// full-information value, with the point mass at the truncation level
/// contributing h(t, N).
pub fn price_debt_claim(
    state: &FilterState,
    grid: &FullInfoGrid,
    filter: &GalerkinFilter,
) -> Result<f64> {
    let h = grid.values_at(state.t, &filter.basis.quad_x)?;
    let h_hi = grid.value_at(state.t, filter.params.upper)?;
    filter.filter_expectation(state, &h, h_hi)
}

/// Payoff of an option on traded assets: a function of the underlying
/// ex-dividend prices at maturity, plus its value when default has wiped
/// the underlyings out.
#[derive(Clone)]
pub struct OptionSpec {
    pub payoff: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub maturity: f64,
    /// Payoff value on {tau <= T}, i.e. payoff(0, ..., 0).
    pub g_at_zero: f64,
}

impl std::fmt::Debug for OptionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptionSpec")
            .field("maturity", &self.maturity)
            .field("g_at_zero", &self.g_at_zero)
            .finish()
    }
}

impl OptionSpec {
    pub fn new(
        maturity: f64,
        g_at_zero: f64,
        payoff: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        OptionSpec { payoff: Arc::new(payoff), maturity, g_at_zero }
    }

    /// Call on the first underlying.
    pub fn call(maturity: f64, strike: f64) -> Self {
        OptionSpec::new(maturity, (0.0f64 - strike).max(0.0), move |p| (p[0] - strike).max(0.0))
    }
}

/// Monte Carlo settings for option pricing.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Result of the option Monte Carlo.
#[derive(Debug, Clone, Copy)]
pub struct OptionPrice {
    pub price: f64,
    pub std_error: f64,
    /// Largest observed nu_N / C along the simulated filter paths; bounds
    /// the error of ignoring the truncation-point mass.
    pub nu_n_bound: f64,
}

/// Price an option on traded assets by simulating the filter under the
/// reference measure (observations are pure noise, dividends draw from the
/// reference density).
///
/// The estimator is
/// `e^{-r(T-t)} ( E*[g(Pi_T) (u_T,1)] + g(0) (C_t - E*[(u_T,1)]) ) / C_t`
/// with the underlying prices at maturity read off the simulated density;
/// the truncation-point mass is ignored and reported as a diagnostic.
pub fn price_option_mc(
    state: &FilterState,
    option: &OptionSpec,
    underlyings: &[&FullInfoGrid],
    cfg: &McConfig,
    filter: &GalerkinFilter,
) -> Result<OptionPrice> {
    if cfg.n_paths < 1000 {
        return Err(Error::InvalidParams(format!(
            "option Monte Carlo needs n_paths >= 1000, got {}",
            cfg.n_paths
        )));
    }
    let horizon = option.maturity - state.t;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams(format!(
            "option maturity {} not after state time {}",
            option.maturity, state.t
        )));
    }
    let steps = horizon / cfg.dt;
    if (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::InvalidGrid(format!(
            "horizon {horizon} is not a multiple of dt {}",
            cfg.dt
        )));
    }
    let steps = steps.round() as usize;
    let per_div = filter.params.div_spacing / cfg.dt;
    if (per_div - per_div.round()).abs() > 1e-9 {
        return Err(Error::InvalidGrid(format!(
            "dt {} does not divide the dividend spacing",
            cfg.dt
        )));
    }

    let mass_t = state.psi.dot(&filter.mats.mass);
    if !(mass_t > 0.0) {
        return Err(Error::FilterDegenerate { mass: mass_t });
    }

    // full-information values of the underlyings at maturity
    let mut h_terminal = Vec::with_capacity(underlyings.len());
    for grid in underlyings {
        h_terminal.push(grid.values_at(option.maturity, &filter.basis.quad_x)?);
    }
    let h_terminal = Arc::new(h_terminal);

    let sqrt_dt = cfg.dt.sqrt();
    let spacing = filter.params.div_spacing;
    let t0 = state.t;

    let (sum, sumsq, nu_n_bound) = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(path as u64);
            let normal = rand_distr::StandardNormal;
            let mut s = state.clone();
            let mut nu_bound = 0.0f64;
            for step in 0..steps {
                let z1: f64 = normal.sample(&mut rng);
                let z2: f64 = normal.sample(&mut rng);
                let dz = [sqrt_dt * z1, sqrt_dt * z2];
                s = filter.propagate(&s, dz, cfg.dt)?;
                let t_new = t0 + (step + 1) as f64 * cfg.dt;
                let phase = t_new / spacing;
                if (phase - phase.round()).abs() < 1e-9 && t_new > t0 {
                    let d = filter.phi_star.sample(&mut rng);
                    s = filter.dividend_update(&s, d)?;
                }
            }
            let mass_terminal = s.psi.dot(&filter.mats.mass).max(0.0);
            let total = mass_terminal + s.nu_n;
            if total > 0.0 {
                nu_bound = s.nu_n / total;
            }
            let x = if mass_terminal > 0.0 {
                let mut prices = Vec::with_capacity(h_terminal.len());
                for h in h_terminal.iter() {
                    let mut acc = 0.0;
                    for q in 0..filter.basis.quad_x.len() {
                        let u = filter
                            .basis
                            .eval_expansion(s.psi.as_slice(), filter.basis.quad_x[q]);
                        acc += filter.basis.quad_w[q] * u * h[q];
                    }
                    prices.push(acc / mass_terminal);
                }
                (option.payoff)(&prices) * mass_terminal
                    + option.g_at_zero * (mass_t - mass_terminal)
            } else {
                option.g_at_zero * mass_t
            };
            Ok((x, x * x, nu_bound))
        })
        .try_reduce(
            || (0.0, 0.0, 0.0),
            |a, b| Ok((a.0 + b.0, a.1 + b.1, a.2.max(b.2))),
        )?;

    let disc = (-filter.params.rate * horizon).exp();
    let mean = sum / cfg.n_paths as f64;
    let var = (sumsq / cfg.n_paths as f64 - mean * mean).max(0.0);
    Ok(OptionPrice {
        price: disc * mean / mass_t,
        std_error: disc * (var / cfg.n_paths as f64).sqrt() / mass_t,
        nu_n_bound,
    })
}

/// Traded instrument classes; they differ in their cash flows and in the
/// default-jump integrand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrumentKind {
    Survival,
    PaymentAtDefault,
    Stock,
}

/// A traded instrument with its full-information value surface.
#[derive(Debug, Clone)]
pub struct TradedInstrument<'a> {
    pub name: String,
    pub kind: InstrumentKind,
    pub grid: &'a FullInfoGrid,
}

pub type Instruments<'a> = [TradedInstrument<'a>];

/// Instantaneous quadratic variation matrix of the instruments' discounted
/// gains processes (undiscounted integrands; common discount factors cancel
/// in hedge ratios).
///
/// Off dividend dates the matrix is xi^Z xi^Z' + lambda xi^Y xi^Y' with the
/// diffusion integrand xi^Z_i = pi(h_i a') - Pi_i pi(a') and the default
/// integrand -Pi_i (plus one for a payment-at-default claim). On a dividend
/// date it is the integral over dividend sizes of the jump integrands
/// weighted with the predicted dividend density.
pub fn instantaneous_quad_var(
    state: &FilterState,
    instruments: &Instruments,
    filter: &GalerkinFilter,
    at_dividend: bool,
) -> Result<DMatrix<f64>> {
    let n = instruments.len();
    let quad_x = &filter.basis.quad_x;
    let t = state.t;

    let mut prices = Vec::with_capacity(n);
    let mut h_vals: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut h_hi = Vec::with_capacity(n);
    for inst in instruments {
        let h = inst.grid.values_at(t, quad_x)?;
        let hi = inst.grid.value_at(t, filter.params.upper)?;
        prices.push(filter.filter_expectation(state, &h, hi)?);
        h_vals.push(h);
        h_hi.push(hi);
    }

    let mut v = DMatrix::zeros(n, n);
    if !at_dividend {
        let lambda = filter.default_intensity(state)?;
        // observation drift at the nodes and at N
        let a_nodes: Vec<[f64; 2]> =
            quad_x.iter().map(|&x| filter.params.observation_drift(x)).collect();
        let a_hi = filter.params.observation_drift(filter.params.upper);
        let mut pi_a = [0.0; 2];
        for k in 0..2 {
            let vals: Vec<f64> = a_nodes.iter().map(|a| a[k]).collect();
            pi_a[k] = filter.filter_expectation(state, &vals, a_hi[k])?;
        }
        let mut xi_z = vec![[0.0; 2]; n];
        for (i, inst_h) in h_vals.iter().enumerate() {
            for k in 0..2 {
                let vals: Vec<f64> =
                    inst_h.iter().zip(&a_nodes).map(|(h, a)| h * a[k]).collect();
                let pi_ha = filter.filter_expectation(state, &vals, h_hi[i] * a_hi[k])?;
                xi_z[i][k] = pi_ha - prices[i] * pi_a[k];
            }
        }
        let xi_y: Vec<f64> = instruments
            .iter()
            .zip(&prices)
            .map(|(inst, &p)| match inst.kind {
                InstrumentKind::PaymentAtDefault => 1.0 - p,
                _ => -p,
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                v[(i, j)] = xi_z[i][0] * xi_z[j][0]
                    + xi_z[i][1] * xi_z[j][1]
                    + lambda * xi_y[i] * xi_y[j];
            }
        }
        return Ok(v);
    }

    // dividend date: integrate the jump integrands over the dividend size
    let params = filter.params;
    let law = filter.law;
    let y_max = params.upper - params.threshold;
    let n_y = 64;
    for step in 0..n_y {
        // midpoint rule in y; the integrand is smooth and compactly
        // supported in (0, y_max)
        let y = (step as f64 + 0.5) * y_max / n_y as f64;
        let w_y = y_max / n_y as f64;
        let phi_vals: Vec<f64> =
            quad_x.iter().map(|&x| dividend_density(y, x, &params, &law)).collect();
        let phi_hat = filter.filter_expectation(
            state,
            &phi_vals,
            dividend_density(y, params.upper, &params, &law),
        )?;
        if phi_hat <= 1e-300 {
            continue;
        }
        let mut xi = vec![0.0; n];
        for (i, inst) in instruments.iter().enumerate() {
            let shifted: Vec<f64> = quad_x
                .iter()
                .zip(&phi_vals)
                .map(|(&x, &phi)| {
                    if phi == 0.0 {
                        0.0
                    } else {
                        phi * inst.grid.value_at(t, x - params.kappa * y).unwrap_or(0.0)
                    }
                })
                .collect();
            let num = filter.filter_expectation(
                state,
                &shifted,
                dividend_density(y, params.upper, &params, &law)
                    * inst.grid.value_at(t, params.upper - params.kappa * y).unwrap_or(0.0),
            )?;
            xi[i] = num / phi_hat - prices[i]
                + if inst.kind == InstrumentKind::Stock { y } else { 0.0 };
        }
        for i in 0..n {
            for j in 0..n {
                v[(i, j)] += xi[i] * xi[j] * phi_hat * w_y;
            }
        }
    }
    Ok(v)
}

/// What to hedge.
#[derive(Clone)]
pub enum HedgeTarget<'a> {
    /// A (possibly non-traded) debt security: priced exactly from the
    /// filter along each path.
    Debt { grid: &'a FullInfoGrid, kind: InstrumentKind },
    /// An option on traded assets: its price path is estimated by per-date
    /// cross-sectional regression on the state features.
    Option { spec: &'a OptionSpec, underlyings: Vec<&'a FullInfoGrid> },
}

/// Monte Carlo and regression settings for the discrete hedge.
#[derive(Debug, Clone)]
pub struct HedgeConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub sim_dt: f64,
    /// Galerkin basis size used along the paths.
    pub filter_m: usize,
    /// Include state features (1, S, S^2, lambda, filter mean, filter sd,
    /// survival price) in the per-date regressions.
    pub use_state_features: bool,
    /// Fraction of paths used to fit the hedge; the rest evaluates it.
    pub train_fraction: f64,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        HedgeConfig {
            n_paths: 4000,
            seed: 0,
            sim_dt: 1.0 / 250.0,
            filter_m: 32,
            use_state_features: true,
            train_fraction: 0.5,
        }
    }
}

/// Discrete risk-minimizing hedge report.
#[derive(Debug, Clone)]
pub struct HedgeReport {
    pub dates: Vec<f64>,
    /// Hedge ratios per rebalancing date (one entry per instrument).
    pub theta: Vec<DVector<f64>>,
    /// Mean cash position per date.
    pub eta_mean: Vec<f64>,
    /// In-sample mean squared cost increment per date.
    pub residual_risk: Vec<f64>,
    /// Out-of-sample mean squared cost increment per date.
    pub residual_risk_test: Vec<f64>,
    /// max_j |V_j - price_j| over dates and paths; zero by construction of
    /// the cash position.
    pub value_path_check: f64,
    /// Per-path summed squared cost increments on the evaluation set.
    pub per_path_cost_test: Vec<f64>,
    /// Ridge regularization was needed in at least one regression.
    pub ridge_used: bool,
}

struct PathRecord {
    /// Discounted instrument prices at the dates, per instrument.
    prices: Vec<Vec<f64>>,
    /// Discounted instrument gains at the dates, per instrument.
    gains: Vec<Vec<f64>>,
    /// Discounted target gains (exact for debt targets, payoff-filled for
    /// options).
    target: Vec<f64>,
    /// Feature vector per date.
    features: Vec<Vec<f64>>,
    alive: Vec<bool>,
    /// Discounted option payoff at maturity (options only).
    terminal_payoff: f64,
}

const N_FEATURES: usize = 6;

fn state_features(
    filter: &GalerkinFilter,
    state: &FilterState,
    stock_price: f64,
    surv_price: f64,
) -> Result<Vec<f64>> {
    let mean = filter.expectation_of(state, |x| x)?;
    let m2 = filter.expectation_of(state, |x| x * x)?;
    let sd = (m2 - mean * mean).max(0.0).sqrt();
    let lambda = filter.default_intensity(state)?;
    Ok(vec![stock_price, stock_price * stock_price, lambda, mean, sd, surv_price])
}

/// Simulate truth-and-filter paths and record everything the per-date
/// regressions need.
#[allow(clippy::too_many_arguments)]
fn simulate_hedge_paths(
    target: &HedgeTarget,
    instruments: &Instruments,
    dates: &[f64],
    cfg: &HedgeConfig,
    filter: &GalerkinFilter,
    horizon: f64,
    surv_feature_grid: &FullInfoGrid,
) -> Result<Vec<PathRecord>> {
    let grid = SimGrid::new(horizon, cfg.sim_dt, &filter.params)?;
    let date_steps: Vec<usize> = dates
        .iter()
        .map(|&d| (d / cfg.sim_dt).round() as usize)
        .collect();
    for (&d, &s) in dates.iter().zip(&date_steps) {
        if (s as f64 * cfg.sim_dt - d).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!("hedge date {d} not on the simulation grid")));
        }
    }
    let law = filter.params.dividend_law()?;
    let r = filter.params.rate;

    (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(path as u64);
            let truth: TruthPath = simulate_truth(&filter.params, &law, &grid, &mut rng)?;
            let mut state = filter.initial_state();
            let n_inst = instruments.len();
            let mut prices = vec![Vec::with_capacity(dates.len()); n_inst];
            let mut gains = vec![Vec::with_capacity(dates.len()); n_inst];
            let mut target_path = Vec::with_capacity(dates.len());
            let mut features = Vec::with_capacity(dates.len());
            let mut alive_path = Vec::with_capacity(dates.len());
            let mut div_iter = truth.dividends.iter().peekable();
            let mut next_date = 0usize;
            // running cash-flow accumulators per instrument
            let mut flows = vec![0.0f64; n_inst];
            let mut default_paid = false;

            for step in 0..=grid.n_steps {
                let t = step as f64 * cfg.sim_dt;
                let alive = truth.y[step] == 0;
                if step > 0 {
                    let was_alive = truth.y[step - 1] == 0;
                    if was_alive {
                        state = filter.propagate(&state, truth.z_increments[step - 1], cfg.sim_dt)?;
                        while let Some(&&(t_div, d)) = div_iter.peek() {
                            if (t_div - t).abs() > 1e-9 * (1.0 + t) {
                                break;
                            }
                            div_iter.next();
                            state = filter.dividend_update(&state, d)?;
                            // stock holders collect the dividend
                            for (i, inst) in instruments.iter().enumerate() {
                                if inst.kind == InstrumentKind::Stock {
                                    flows[i] += (-r * t).exp() * d;
                                }
                            }
                        }
                    }
                    if was_alive && !alive && !default_paid {
                        default_paid = true;
                        for (i, inst) in instruments.iter().enumerate() {
                            if inst.kind == InstrumentKind::PaymentAtDefault {
                                flows[i] += (-r * t).exp();
                            }
                        }
                    }
                }

                if next_date < date_steps.len() && step == date_steps[next_date] {
                    let disc = (-r * t).exp();
                    let mut stock_price = 0.0;
                    for (i, inst) in instruments.iter().enumerate() {
                        let p = if alive {
                            price_debt_claim(&state, inst.grid, filter)?
                        } else {
                            0.0
                        };
                        if inst.kind == InstrumentKind::Stock {
                            stock_price = p;
                        }
                        prices[i].push(disc * p);
                        gains[i].push(disc * p + flows[i]);
                    }
                    let tgt = match target {
                        HedgeTarget::Debt { grid, kind } => {
                            let p = if alive { price_debt_claim(&state, grid, filter)? } else { 0.0 };
                            let flow = match kind {
                                InstrumentKind::PaymentAtDefault if default_paid => {
                                    (-r * truth.tau).exp()
                                }
                                _ => 0.0,
                            };
                            disc * p + flow
                        }
                        // placeholder until the cross-sectional price
                        // estimate replaces it
                        HedgeTarget::Option { .. } => 0.0,
                    };
                    target_path.push(tgt);
                    let surv_price = if alive {
                        price_debt_claim(&state, surv_feature_grid, filter)?
                    } else {
                        0.0
                    };
                    let f = if alive {
                        state_features(filter, &state, stock_price, surv_price)?
                    } else {
                        vec![0.0; N_FEATURES]
                    };
                    features.push(f);
                    alive_path.push(alive);
                    next_date += 1;
                }
            }

            // terminal option payoff from the underlying prices at maturity
            let terminal_payoff = match target {
                HedgeTarget::Option { spec, underlyings } => {
                    let alive = *alive_path.last().unwrap();
                    let disc_t = (-r * horizon).exp();
                    if alive {
                        let p = underlyings
                            .iter()
                            .map(|g| price_debt_claim(&state, g, filter))
                            .collect::<Result<Vec<f64>>>()?;
                        disc_t * (spec.payoff)(&p)
                    } else {
                        disc_t * spec.g_at_zero
                    }
                }
                HedgeTarget::Debt { .. } => 0.0,
            };

            Ok(PathRecord {
                prices,
                gains,
                target: target_path,
                features,
                alive: alive_path,
                terminal_payoff,
            })
        })
        .collect()
}

fn regression_design(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let p = rows[0].len();
    DMatrix::from_fn(n, p, |i, j| rows[i][j])
}

/// Least squares with SVD; falls back to ridge when rank deficient.
fn solve_ls(design: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, bool) {
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * max_sv).count();
    if rank == design.ncols() {
        if let Ok(sol) = svd.solve(rhs, 1e-10 * max_sv.max(1e-300)) {
            return (sol, false);
        }
    }
    // ridge fallback
    let p = design.ncols();
    let gram = design.transpose() * design + DMatrix::identity(p, p) * (1e-8 * max_sv * max_sv + 1e-12);
    let rhs2 = design.transpose() * rhs;
    let sol = gram
        .cholesky()
        .map(|c| c.solve(&rhs2))
        .unwrap_or_else(|| DVector::zeros(p));
    (sol, true)
}

/// Discrete risk-minimizing hedge via per-date regression.
///
/// At every rebalancing date the target's discounted gains increment is
/// regressed on the instruments' discounted gains increments (and on state
/// features when enabled) across the training paths alive at that date; the
/// instrument coefficients are the hedge ratios and the cash position
/// matches the value to the target price. Residual risks are reported in-
/// and out-of-sample.
pub fn hedge_discrete(
    target: &HedgeTarget,
    instruments: &Instruments,
    dates: &[f64],
    cfg: &HedgeConfig,
    filter: &GalerkinFilter,
    surv_feature_grid: &FullInfoGrid,
) -> Result<HedgeReport> {
    if dates.len() < 2 {
        return Err(Error::InvalidParams("hedging needs at least two dates".into()));
    }
    if cfg.n_paths < 1000 {
        return Err(Error::InvalidParams(format!(
            "hedging needs n_paths >= 1000, got {}",
            cfg.n_paths
        )));
    }
    if dates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("hedge dates must be strictly increasing".into()));
    }
    let horizon = *dates.last().unwrap();
    let mut records =
        simulate_hedge_paths(target, instruments, dates, cfg, filter, horizon, surv_feature_grid)?;

    let n_paths = records.len();
    let n_dates = dates.len();
    let n_inst = instruments.len();
    let r = filter.params.rate;

    // option targets: replace the placeholder price path by cross-sectional
    // regression estimates of the conditional discounted payoff
    if matches!(target, HedgeTarget::Option { .. }) {
        let g0 = match target {
            HedgeTarget::Option { spec, .. } => spec.g_at_zero,
            _ => unreachable!(),
        };
        for j in 0..n_dates {
            let alive_idx: Vec<usize> =
                (0..n_paths).filter(|&i| records[i].alive[j]).collect();
            if alive_idx.is_empty() {
                for rec in records.iter_mut() {
                    rec.target[j] = (-r * horizon).exp() * g0;
                }
                continue;
            }
            if j == n_dates - 1 {
                for rec in records.iter_mut() {
                    rec.target[j] = rec.terminal_payoff;
                }
                continue;
            }
            let rows: Vec<Vec<f64>> = alive_idx
                .iter()
                .map(|&i| {
                    let mut row = vec![1.0];
                    row.extend_from_slice(&records[i].features[j]);
                    row
                })
                .collect();
            let design = regression_design(&rows);
            let rhs = DVector::from_fn(alive_idx.len(), |k, _| records[alive_idx[k]].terminal_payoff);
            let (beta, _) = solve_ls(&design, &rhs);
            for (k, &i) in alive_idx.iter().enumerate() {
                records[i].target[j] = design.row(k).transpose().dot(&beta);
            }
            let dead_value = (-r * horizon).exp() * g0;
            for rec in records.iter_mut() {
                if !rec.alive[j] {
                    rec.target[j] = dead_value;
                }
            }
        }
    }

    let n_train = ((n_paths as f64) * cfg.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, n_paths);

    let mut theta = Vec::with_capacity(n_dates - 1);
    let mut eta_mean = Vec::with_capacity(n_dates - 1);
    let mut residual_risk = Vec::with_capacity(n_dates - 1);
    let mut residual_risk_test = Vec::with_capacity(n_dates - 1);
    let mut per_path_cost_test = vec![0.0; n_paths - n_train];
    let mut ridge_used = false;
    let mut value_check = 0.0f64;

    for j in 0..n_dates - 1 {
        let build = |idx: &[usize]| -> (DMatrix<f64>, DVector<f64>) {
            let rows: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| {
                    let mut row: Vec<f64> = (0..n_inst)
                        .map(|k| records[i].gains[k][j + 1] - records[i].gains[k][j])
                        .collect();
                    if cfg.use_state_features {
                        row.push(1.0);
                        row.extend_from_slice(&records[i].features[j]);
                    } else {
                        row.push(1.0);
                    }
                    row
                })
                .collect();
            let y = DVector::from_fn(idx.len(), |k, _| {
                records[idx[k]].target[j + 1] - records[idx[k]].target[j]
            });
            (regression_design(&rows), y)
        };

        let train_alive: Vec<usize> = (0..n_train).filter(|&i| records[i].alive[j]).collect();
        let (theta_j, eta_j, risk_in, coef) = if train_alive.is_empty() {
            (DVector::zeros(n_inst), 0.0, 0.0, DVector::zeros(n_inst))
        } else {
            let (design, y) = build(&train_alive);
            let (coef, ridge) = solve_ls(&design, &y);
            ridge_used |= ridge;
            let resid = &y - &design * &coef;
            let risk = resid.dot(&resid) / train_alive.len() as f64;
            let theta_j = DVector::from_fn(n_inst, |k, _| coef[k]);
            // cash from value matching at t_j, averaged across paths
            let mut eta_acc = 0.0;
            for &i in &train_alive {
                let held: f64 =
                    (0..n_inst).map(|k| theta_j[k] * records[i].prices[k][j]).sum();
                eta_acc += records[i].target[j] - held;
            }
            (theta_j, eta_acc / train_alive.len() as f64, risk, coef)
        };

        // out-of-sample residuals with the training-fit coefficients
        let test_alive: Vec<usize> =
            (n_train..n_paths).filter(|&i| records[i].alive[j]).collect();
        let risk_out = if test_alive.is_empty() || train_alive.is_empty() {
            0.0
        } else {
            let (design, y) = build(&test_alive);
            let resid = &y - &design * &coef;
            for (k, &i) in test_alive.iter().enumerate() {
                per_path_cost_test[i - n_train] += resid[k] * resid[k];
            }
            resid.dot(&resid) / test_alive.len() as f64
        };

        // value matching check on every path
        for rec in records.iter() {
            if rec.alive[j] {
                let held: f64 = (0..n_inst).map(|k| theta_j[k] * rec.prices[k][j]).sum();
                let eta_i = rec.target[j] - held;
                let v = held + eta_i;
                value_check = value_check.max((v - rec.target[j]).abs());
            }
        }

        theta.push(theta_j);
        eta_mean.push(eta_j);
        residual_risk.push(risk_in);
        residual_risk_test.push(risk_out);
    }

    Ok(HedgeReport {
        dates: dates.to_vec(),
        theta,
        eta_mean,
        residual_risk,
        residual_risk_test,
        value_path_check: value_check,
        per_path_cost_test,
        ridge_used,
    })
}
