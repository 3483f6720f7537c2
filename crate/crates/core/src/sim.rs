//! Joint simulation of the truth and the filter.
//!
//! The experiment has three steps: draw the asset value path and the default
//! indicator, generate the dividend and noisy observations from it, then run
//! the Galerkin filter on those observations to produce the filter density,
//! the stock price and the default intensity along the path.

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::fullinfo::FullInfoGrid;
use crate::galerkin::{FilterState, GalerkinFilter};
use crate::model::{DividendLaw, ModelParams};

/// Uniform simulation grid; dividend dates must be grid points.
#[derive(Debug, Clone, Copy)]
pub struct SimGrid {
    pub horizon: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl SimGrid {
    pub fn new(horizon: f64, dt: f64, params: &ModelParams) -> Result<Self> {
        if !(dt > 0.0 && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("need positive horizon and dt, got {horizon}, {dt}")));
        }
        let steps = horizon / dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!("horizon {horizon} is not a multiple of dt {dt}")));
        }
        let per_div = params.div_spacing / dt;
        if (per_div - per_div.round()).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!(
                "dt {dt} does not divide the dividend spacing {}",
                params.div_spacing
            )));
        }
        Ok(SimGrid { horizon, dt, n_steps: steps.round() as usize })
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| i as f64 * self.dt).collect()
    }

    fn is_dividend_step(&self, step: usize, params: &ModelParams) -> bool {
        let per_div = (params.div_spacing / self.dt).round() as usize;
        step > 0 && step % per_div == 0
    }
}

/// A simulated trajectory of the unobservable truth and its observations.
#[derive(Debug, Clone)]
pub struct TruthPath {
    pub times: Vec<f64>,
    /// Asset value, frozen at the threshold after default.
    pub v: Vec<f64>,
    /// Default indicator.
    pub y: Vec<u8>,
    /// Default time; infinity when the path survives the horizon.
    pub tau: f64,
    /// Dividend dates and amounts paid before default.
    pub dividends: Vec<(f64, f64)>,
    /// Cumulative two-channel observation path.
    pub z: Vec<[f64; 2]>,
    /// Per-step observation increments (z[k+1] - z[k]).
    pub z_increments: Vec<[f64; 2]>,
}

/// Step 1 and 2 of the experiment: exact lognormal stepping between grid
/// points, Brownian-bridge first-passage check each step, scheduled
/// dividends drawn from the conditional law, observations accumulated with
/// the left-point drift.
pub fn simulate_truth<R: Rng + ?Sized>(
    params: &ModelParams,
    law: &DividendLaw,
    grid: &SimGrid,
    rng: &mut R,
) -> Result<TruthPath> {
    params.validate()?;
    let k = params.threshold;
    let drift = (params.rate - 0.5 * params.sigma * params.sigma) * grid.dt;
    let vol = params.sigma * grid.dt.sqrt();
    let sigma2dt = params.sigma * params.sigma * grid.dt;
    let sqrt_dt = grid.dt.sqrt();
    let normal = rand_distr::StandardNormal;

    let mut v = params.sample_initial_value(rng);
    let mut tau = f64::INFINITY;
    let mut z = [0.0f64, 0.0];

    let n = grid.n_steps;
    let mut v_path = Vec::with_capacity(n + 1);
    let mut y_path = Vec::with_capacity(n + 1);
    let mut z_path = Vec::with_capacity(n + 1);
    let mut z_inc = Vec::with_capacity(n);
    let mut dividends = Vec::new();
    v_path.push(v);
    y_path.push(0u8);
    z_path.push(z);

    for step in 0..n {
        let defaulted = tau.is_finite();
        // observation increment over [t, t+dt] with the left-point drift;
        // after default the stopped signal sits at K where a(K) = 0
        let a = if defaulted { [0.0, 0.0] } else { params.observation_drift(v) };
        let xi1: f64 = normal.sample(rng);
        let xi2: f64 = normal.sample(rng);
        let inc = [a[0] * grid.dt + sqrt_dt * xi1, a[1] * grid.dt + sqrt_dt * xi2];
        z[0] += inc[0];
        z[1] += inc[1];
        z_inc.push(inc);

        let t_new = (step + 1) as f64 * grid.dt;
        if !defaulted {
            let zv: f64 = normal.sample(rng);
            let v_new = v * (drift + vol * zv).exp();
            let crossed = if v_new <= k {
                true
            } else {
                let bridge = (-2.0 * (v / k).ln() * (v_new / k).ln() / sigma2dt).exp();
                rng.random::<f64>() < bridge
            };
            if crossed {
                tau = t_new;
                v = k;
            } else {
                v = v_new;
                if grid.is_dividend_step(step + 1, params) {
                    let delta: f64 = law.sample(rng);
                    let d = delta * (v - k);
                    dividends.push((t_new, d));
                    v -= params.kappa * d;
                }
            }
        }
        v_path.push(v);
        y_path.push(u8::from(tau.is_finite()));
        z_path.push(z);
    }

    Ok(TruthPath {
        times: grid.times(),
        v: v_path,
        y: y_path,
        tau,
        dividends,
        z: z_path,
        z_increments: z_inc,
    })
}

/// What to record while filtering a path.
pub struct FilterPathConfig<'a> {
    /// Stock value surface; enables the stock price column.
    pub stock_grid: Option<&'a FullInfoGrid>,
    /// Additional claims to price along the path.
    pub claims: Vec<(String, &'a FullInfoGrid)>,
    /// Positivity failure threshold on the clipped L2 mass ratio.
    pub clip_threshold: f64,
    /// Keep the full per-step filter states (memory heavy).
    pub keep_states: bool,
}

impl Default for FilterPathConfig<'_> {
    fn default() -> Self {
        FilterPathConfig {
            stock_grid: None,
            claims: Vec::new(),
            clip_threshold: 1e-3,
            keep_states: false,
        }
    }
}

/// Filter outputs along one truth path. All price-like series are zero from
/// the default time on.
#[derive(Debug, Clone)]
pub struct FilterPath {
    pub times: Vec<f64>,
    /// Stock price (zero when no stock grid was supplied).
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Norming constant C(t).
    pub c: Vec<f64>,
    pub nu_k: Vec<f64>,
    pub nu_n: Vec<f64>,
    /// Prices of the configured claims, one series per claim.
    pub prices: Vec<(String, Vec<f64>)>,
    /// Per-step states when requested.
    pub states: Vec<FilterState>,
    /// Final state (also present when keep_states is off).
    pub final_state: FilterState,
}

/// Step 3 of the experiment: run the Galerkin filter along the observations
/// of a truth path, recording prices and the intensity, freezing all outputs
/// at zero from the default time on.
pub fn run_filter_path(
    truth: &TruthPath,
    filter: &GalerkinFilter,
    cfg: &FilterPathConfig,
) -> Result<FilterPath> {
    let n = truth.z_increments.len();
    let dt = truth.times[1] - truth.times[0];
    let mut state = filter.initial_state();

    let mut s_path = Vec::with_capacity(n + 1);
    let mut lambda = Vec::with_capacity(n + 1);
    let mut c_path = Vec::with_capacity(n + 1);
    let mut nu_k = Vec::with_capacity(n + 1);
    let mut nu_n = Vec::with_capacity(n + 1);
    let mut prices: Vec<(String, Vec<f64>)> =
        cfg.claims.iter().map(|(name, _)| (name.clone(), Vec::with_capacity(n + 1))).collect();
    let mut states = Vec::new();

    let mut div_iter = truth.dividends.iter().peekable();

    let quad_x = filter.basis.quad_x.clone();
    let record = |state: &FilterState,
                  t: f64,
                  alive: bool,
                  s_path: &mut Vec<f64>,
                  lambda: &mut Vec<f64>,
                  c_path: &mut Vec<f64>,
                  nu_k: &mut Vec<f64>,
                  nu_n: &mut Vec<f64>,
                  prices: &mut Vec<(String, Vec<f64>)>|
     -> Result<()> {
        if !alive {
            s_path.push(0.0);
            lambda.push(0.0);
            c_path.push(0.0);
            nu_k.push(state.nu_k);
            nu_n.push(0.0);
            for (_, series) in prices.iter_mut() {
                series.push(0.0);
            }
            return Ok(());
        }
        let (_, c, _) = filter.normalized_density(state).map_err(|e| e.at_time(t))?;
        c_path.push(c);
        nu_k.push(state.nu_k);
        nu_n.push(state.nu_n);
        lambda.push(filter.default_intensity(state).map_err(|e| e.at_time(t))?);
        if let Some(grid) = cfg.stock_grid {
            let h = grid.values_at(t, &quad_x).map_err(|e| e.at_time(t))?;
            let h_hi = grid.value_at(t, filter.params.upper).map_err(|e| e.at_time(t))?;
            s_path.push(filter.filter_expectation(state, &h, h_hi).map_err(|e| e.at_time(t))?);
        } else {
            s_path.push(0.0);
        }
        for ((_, series), (_, grid)) in prices.iter_mut().zip(&cfg.claims) {
            let h = grid.values_at(t, &quad_x).map_err(|e| e.at_time(t))?;
            let h_hi = grid.value_at(t, filter.params.upper).map_err(|e| e.at_time(t))?;
            series.push(filter.filter_expectation(state, &h, h_hi).map_err(|e| e.at_time(t))?);
        }
        Ok(())
    };

    let alive0 = truth.y[0] == 0;
    record(&state, 0.0, alive0, &mut s_path, &mut lambda, &mut c_path, &mut nu_k, &mut nu_n, &mut prices)?;
    if cfg.keep_states {
        states.push(state.clone());
    }

    for step in 0..n {
        let t_new = truth.times[step + 1];
        let alive_new = truth.y[step + 1] == 0;
        let was_alive = truth.y[step] == 0;
        if was_alive {
            state = filter
                .propagate(&state, truth.z_increments[step], dt)
                .map_err(|e| e.at_time(t_new))?;
            if state.neg_l2 > cfg.clip_threshold {
                return Err(Error::PositivityLost {
                    value: state.neg_l2,
                    threshold: cfg.clip_threshold,
                    t: t_new,
                });
            }
            while let Some(&&(t_div, d)) = div_iter.peek() {
                if (t_div - t_new).abs() > 1e-9 * (1.0 + t_new) {
                    break;
                }
                div_iter.next();
                state = filter.dividend_update(&state, d).map_err(|e| e.at_time(t_new))?;
            }
        }
        record(&state, t_new, alive_new, &mut s_path, &mut lambda, &mut c_path, &mut nu_k, &mut nu_n, &mut prices)?;
        if cfg.keep_states {
            states.push(state.clone());
        }
    }

    Ok(FilterPath {
        times: truth.times.clone(),
        s: s_path,
        lambda,
        c: c_path,
        nu_k,
        nu_n,
        prices,
        states,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fullinfo::{blackcox_survival, solve_fullinfo, ClaimSpec};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rayon::prelude::*;

    #[test]
    fn grid_validation() {
        let p = ModelParams::table1();
        assert!(SimGrid::new(1.0, 0.002, &p).is_ok());
        assert!(SimGrid::new(1.0, 0.0021, &p).is_err()); // dt does not divide spacing
        assert!(SimGrid::new(1.001, 0.002, &p).is_err()); // horizon off grid
        assert!(SimGrid::new(1.0, -0.1, &p).is_err());
    }

    #[test]
    fn degenerate_diffusion_keeps_value_constant() {
        // sigma -> 0, r = 0, kappa = 0: V is constant, no default, Z drifts
        // at a(V0)
        let mut p = ModelParams::table1();
        p.sigma = 1e-12;
        p.rate = 0.0;
        p.kappa = 0.0;
        let law = p.dividend_law().unwrap();
        let grid = SimGrid::new(1.0, 0.01, &p).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let truth = simulate_truth(&p, &law, &grid, &mut rng).unwrap();
        assert!(truth.tau.is_infinite());
        let v0 = truth.v[0];
        for &v in &truth.v {
            assert_relative_eq!(v, v0, max_relative = 1e-6);
        }
        // mean observation drift close to a(V0) (noise averages out over
        // the path only in expectation; just check the increments are
        // centered near a(V0) dt)
        let a = p.observation_drift(v0);
        let mean_inc: f64 =
            truth.z_increments.iter().map(|i| i[0]).sum::<f64>() / truth.z_increments.len() as f64;
        assert!((mean_inc - a[0] * grid.dt).abs() < 0.05);
    }

    #[test]
    fn dividends_never_exceed_surplus() {
        let p = ModelParams::table1();
        let law = p.dividend_law().unwrap();
        let grid = SimGrid::new(5.0, 0.01, &p).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let truth = simulate_truth(&p, &law, &grid, &mut rng).unwrap();
            for &(t_div, d) in &truth.dividends {
                assert!(t_div < truth.tau, "dividend after default");
                assert!(d > 0.0);
                // reconstruct pre-dividend value from the stored post value
                let idx = (t_div / grid.dt).round() as usize;
                let pre = truth.v[idx] + p.kappa * d;
                assert!(d < pre - p.threshold, "dividend ate the whole surplus");
            }
        }
    }

    #[test]
    fn default_frequency_matches_mixture_oracle() {
        // kappa = 0, no dividends in horizon: empirical default frequency
        // by T = 1 against the closed-form first-passage mixture over pi0
        let mut p = ModelParams::table1();
        p.kappa = 0.0;
        let law = p.dividend_law().unwrap();
        let grid = SimGrid::new(1.0, 0.004, &p).unwrap();
        let n_paths = 100_000usize;
        let defaults: usize = (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let mut rng = ChaCha12Rng::seed_from_u64(99);
                rng.set_stream(path as u64);
                let truth = simulate_truth(&p, &law, &grid, &mut rng).unwrap();
                usize::from(truth.tau.is_finite())
            })
            .sum();
        let p_hat = defaults as f64 / n_paths as f64;
        // quadrature mixture oracle
        let m = 4000;
        let h = (p.upper - p.threshold) / m as f64;
        let mut exact = 0.0;
        for i in 0..m {
            let v = p.threshold + (i as f64 + 0.5) * h;
            exact += p.initial_density(v) * (1.0 - blackcox_survival(v, 1.0, &p)) * h;
        }
        let se = (exact * (1.0 - exact) / n_paths as f64).sqrt();
        assert!(
            (p_hat - exact).abs() < 3.0 * se,
            "default freq {p_hat} vs mixture {exact} (se {se})"
        );
    }

    #[test]
    fn identical_seed_reproduces_paths_bitwise() {
        let p = ModelParams::table1();
        let law = p.dividend_law().unwrap();
        let grid = SimGrid::new(2.0, 0.01, &p).unwrap();
        let run = || {
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            simulate_truth(&p, &law, &grid, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.v, b.v);
        assert_eq!(a.z, b.z);
        assert_eq!(a.dividends, b.dividends);
        // and the filter output is bit-identical as well
        let filter = GalerkinFilter::new(p, 24).unwrap();
        let cfg = FilterPathConfig::default();
        let fa = run_filter_path(&a, &filter, &cfg).unwrap();
        let fb = run_filter_path(&b, &filter, &cfg).unwrap();
        assert_eq!(fa.lambda, fb.lambda);
        assert_eq!(fa.c, fb.c);
    }

    #[test]
    fn stock_price_jumps_to_zero_at_default() {
        // near-threshold start so defaults happen quickly
        let mut p = ModelParams::table1();
        p.pi0_mu = 2.0f64.ln();
        p.pi0_sigma = 0.5;
        let law = p.dividend_law().unwrap();
        let grid = SimGrid::new(1.0, 0.002, &p).unwrap();
        let stock = solve_fullinfo(&ClaimSpec::stock(), &p, 64, 128).unwrap();
        let filter = GalerkinFilter::new(p, 32).unwrap();
        let mut cfg = FilterPathConfig::default();
        cfg.stock_grid = Some(&stock);
        // find a defaulting path
        let mut found = false;
        for seed in 0..50 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let truth = simulate_truth(&p, &law, &grid, &mut rng).unwrap();
            if !truth.tau.is_finite() {
                continue;
            }
            found = true;
            let fp = run_filter_path(&truth, &filter, &cfg).unwrap();
            let idx = (truth.tau / grid.dt).round() as usize;
            assert!(fp.s[idx - 1] > 0.0, "stock should be positive just before default");
            for j in idx..fp.s.len() {
                assert_eq!(fp.s[j], 0.0, "stock must be zero from the default time on");
                assert_eq!(fp.lambda[j], 0.0);
            }
            break;
        }
        assert!(found, "no defaulting path found in 50 seeds");
    }

    #[test]
    fn stock_price_below_filter_mean() {
        let p = ModelParams::table1();
        let law = p.dividend_law().unwrap();
        let grid = SimGrid::new(1.0, 0.002, &p).unwrap();
        let stock = solve_fullinfo(&ClaimSpec::stock(), &p, 64, 256).unwrap();
        let filter = GalerkinFilter::new(p, 48).unwrap();
        let mut cfg = FilterPathConfig::default();
        cfg.stock_grid = Some(&stock);
        cfg.keep_states = true;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let truth = simulate_truth(&p, &law, &grid, &mut rng).unwrap();
        let fp = run_filter_path(&truth, &filter, &cfg).unwrap();
        for (k, state) in fp.states.iter().enumerate() {
            if truth.y[k] == 1 {
                break;
            }
            let mean = filter.expectation_of(state, |x| x).unwrap();
            assert!(
                fp.s[k] < mean,
                "stock {} must stay below the filter mean {} (step {k})",
                fp.s[k],
                mean
            );
        }
    }
}
