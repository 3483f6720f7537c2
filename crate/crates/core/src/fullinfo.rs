//! Full-information claim values h(t, v).
//!
//! Under full observation of the asset value, the pre-default value of a
//! traded claim is a deterministic function h(t, v) solving the backward
//! equation h_t + L h = r h with L f = r v f' + (sigma^2/2) v^2 f'' between
//! dividend dates, an integral jump condition at each dividend date and a
//! Dirichlet condition at the default threshold. The solver uses
//! Crank-Nicolson with Rannacher startup steps after every nonsmooth event;
//! the stock value is the fixed point of the one-period backward map.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{dividend_density, standard_normal_cdf, DividendLaw, ModelParams};

/// Payoff class of a claim.
#[derive(Clone)]
pub enum ClaimKind {
    /// Pays 1 at maturity if no default occurred.
    Survival,
    /// Pays 1 at the default time if default occurs before maturity.
    PaymentAtDefault,
    /// The firm's stock: the value of all future dividends until default.
    Stock,
    /// European claim with arbitrary terminal payoff and zero value at K.
    CustomTerminal(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for ClaimKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClaimKind::Survival => write!(f, "Survival"),
            ClaimKind::PaymentAtDefault => write!(f, "PaymentAtDefault"),
            ClaimKind::Stock => write!(f, "Stock"),
            ClaimKind::CustomTerminal(_) => write!(f, "CustomTerminal"),
        }
    }
}

/// A claim to be valued under full information.
#[derive(Clone, Debug)]
pub struct ClaimSpec {
    pub kind: ClaimKind,
    /// Maturity; `f64::INFINITY` for the stock.
    pub maturity: f64,
}

impl ClaimSpec {
    pub fn survival(maturity: f64) -> Self {
        ClaimSpec { kind: ClaimKind::Survival, maturity }
    }

    pub fn payment_at_default(maturity: f64) -> Self {
        ClaimSpec { kind: ClaimKind::PaymentAtDefault, maturity }
    }

    pub fn stock() -> Self {
        ClaimSpec { kind: ClaimKind::Stock, maturity: f64::INFINITY }
    }

    pub fn custom_terminal(
        maturity: f64,
        payoff: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ClaimSpec { kind: ClaimKind::CustomTerminal(Arc::new(payoff)), maturity }
    }

    /// Value pinned at the default threshold.
    pub fn boundary_at_threshold(&self, _t: f64) -> f64 {
        match self.kind {
            ClaimKind::PaymentAtDefault => 1.0,
            _ => 0.0,
        }
    }

    fn terminal_value(&self, v: f64, threshold: f64) -> f64 {
        match &self.kind {
            ClaimKind::Survival => {
                if v > threshold {
                    1.0
                } else {
                    0.0
                }
            }
            ClaimKind::PaymentAtDefault => 0.0,
            ClaimKind::Stock => 0.0,
            ClaimKind::CustomTerminal(payoff) => {
                if v > threshold {
                    payoff(v)
                } else {
                    0.0
                }
            }
        }
    }

    fn is_stock(&self) -> bool {
        matches!(self.kind, ClaimKind::Stock)
    }
}

/// Time x space grid of full-information values.
///
/// Slices are stored right-continuously in time: at a dividend date the
/// stored row is the post-dividend value. For the stock the grid covers one
/// dividend period and lookups wrap periodically.
#[derive(Clone, Debug)]
pub struct FullInfoGrid {
    pub t_nodes: Vec<f64>,
    pub v_nodes: Vec<f64>,
    /// values[j][i] = h(t_nodes[j], v_nodes[i]).
    pub values: Vec<Vec<f64>>,
    pub claim: ClaimSpec,
    pub periodic: bool,
    /// Period length for periodic (stock) grids.
    pub period: f64,
}

impl FullInfoGrid {
    fn time_index(&self, t: f64) -> Result<(usize, f64)> {
        let t = if self.periodic {
            let p = self.period;
            let phase = t - p * (t / p).floor();
            // map an exact multiple of the period to phase 0
            if (phase - p).abs() < 1e-12 {
                0.0
            } else {
                phase
            }
        } else {
            t
        };
        let (lo, hi) = (self.t_nodes[0], *self.t_nodes.last().unwrap());
        if t < lo - 1e-9 || t > hi + 1e-9 {
            return Err(Error::TimeOutOfRange { t, lo, hi });
        }
        let t = t.clamp(lo, hi);
        let j = match self.t_nodes.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(j) => return Ok((j, 0.0)),
            Err(j) => j.clamp(1, self.t_nodes.len() - 1),
        };
        let (t0, t1) = (self.t_nodes[j - 1], self.t_nodes[j]);
        Ok((j, (t - t0) / (t1 - t0) - 1.0))
    }

    /// Cubic (4-point Lagrange) interpolation in v within a time slice.
    fn interp_slice(&self, slice: &[f64], v: f64) -> f64 {
        let n = self.v_nodes.len();
        let lo = self.v_nodes[0];
        let hi = self.v_nodes[n - 1];
        if v <= lo {
            return slice[0];
        }
        if v >= hi {
            return slice[n - 1];
        }
        let h = (hi - lo) / (n - 1) as f64;
        let idx = ((v - lo) / h) as usize;
        let i0 = idx.saturating_sub(1).min(n - 4);
        let mut out = 0.0;
        for a in 0..4 {
            let xa = self.v_nodes[i0 + a];
            let mut weight = 1.0;
            for b in 0..4 {
                if a != b {
                    let xb = self.v_nodes[i0 + b];
                    weight *= (v - xb) / (xa - xb);
                }
            }
            out += slice[i0 + a] * weight;
        }
        out
    }

    /// h(t, v), interpolating linearly in t and cubically in v.
    pub fn value_at(&self, t: f64, v: f64) -> Result<f64> {
        let (j, frac) = self.time_index(t)?;
        if frac == 0.0 {
            Ok(self.interp_slice(&self.values[j], v))
        } else {
            let w = frac + 1.0;
            let a = self.interp_slice(&self.values[j - 1], v);
            let b = self.interp_slice(&self.values[j], v);
            Ok(a * (1.0 - w) + b * w)
        }
    }

    /// h(t, .) evaluated at many points at once.
    pub fn values_at(&self, t: f64, xs: &[f64]) -> Result<Vec<f64>> {
        let (j, frac) = self.time_index(t)?;
        let mut out = Vec::with_capacity(xs.len());
        if frac == 0.0 {
            for &x in xs {
                out.push(self.interp_slice(&self.values[j], x));
            }
        } else {
            let w = frac + 1.0;
            for &x in xs {
                let a = self.interp_slice(&self.values[j - 1], x);
                let b = self.interp_slice(&self.values[j], x);
                out.push(a * (1.0 - w) + b * w);
            }
        }
        Ok(out)
    }
}

/// Interior coefficients of L f = r v f' + (sigma^2/2) v^2 f'' on a uniform
/// grid, plus the one-sided top row (zero second derivative at N).
struct SpaceOperator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl SpaceOperator {
    fn new(v: &[f64], params: &ModelParams) -> Self {
        let n = v.len();
        let dv = v[1] - v[0];
        let (mut lower, mut diag, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 1..n - 1 {
            let a = 0.5 * params.sigma * params.sigma * v[i] * v[i] / (dv * dv);
            let b = params.rate * v[i] / (2.0 * dv);
            lower[i] = a - b;
            diag[i] = -2.0 * a - params.rate;
            upper[i] = a + b;
        }
        // top boundary: h_vv = 0, upwinded first derivative
        let b = params.rate * v[n - 1] / dv;
        lower[n - 1] = b;
        diag[n - 1] = -b - params.rate;
        SpaceOperator { lower, diag, upper }
    }

    /// (L - r) h applied to a slice, interior and top rows.
    fn apply(&self, h: &[f64], out: &mut [f64]) {
        let n = h.len();
        out[0] = 0.0;
        for i in 1..n - 1 {
            out[i] = self.lower[i] * h[i - 1] + self.diag[i] * h[i] + self.upper[i] * h[i + 1];
        }
        out[n - 1] = self.lower[n - 1] * h[n - 2] + self.diag[n - 1] * h[n - 1];
    }

    /// One theta-step of size dt backward in time, with the threshold value
    /// pinned to `boundary`.
    fn step(&self, h: &mut Vec<f64>, dt: f64, theta: f64, boundary: f64) {
        let n = h.len();
        let mut rhs = vec![0.0; n];
        if theta < 1.0 {
            let mut lh = vec![0.0; n];
            self.apply(h, &mut lh);
            for i in 0..n {
                rhs[i] = h[i] + (1.0 - theta) * dt * lh[i];
            }
        } else {
            rhs.copy_from_slice(h);
        }
        rhs[0] = boundary;
        // assemble I - theta dt (L - r) and solve by the Thomas algorithm
        let mut a = vec![0.0; n];
        let mut b = vec![1.0; n];
        let mut c = vec![0.0; n];
        for i in 1..n {
            a[i] = -theta * dt * self.lower[i];
            b[i] = 1.0 - theta * dt * self.diag[i];
            if i < n - 1 {
                c[i] = -theta * dt * self.upper[i];
            }
        }
        for i in 1..n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        h[n - 1] = rhs[n - 1] / b[n - 1];
        for i in (0..n - 1).rev() {
            h[i] = (rhs[i] - c[i] * h[i + 1]) / b[i];
        }
    }
}

// 64-point Gauss-Legendre rule on [-1, 1] for the dividend integrals.
fn gauss_legendre_64() -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on Legendre polynomials; computed once per solve.
    let n = 64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn interp_linear(v_nodes: &[f64], slice: &[f64], x: f64) -> f64 {
    let n = v_nodes.len();
    let (lo, hi) = (v_nodes[0], v_nodes[n - 1]);
    if x <= lo {
        return slice[0];
    }
    if x >= hi {
        return slice[n - 1];
    }
    let h = (hi - lo) / (n - 1) as f64;
    let idx = (((x - lo) / h) as usize).min(n - 2);
    let w = (x - v_nodes[idx]) / h;
    slice[idx] * (1.0 - w) + slice[idx + 1] * w
}

/// Pre-dividend slice from the post-dividend slice.
///
/// For each node v > K the pre-dividend value is the average of
/// h(t_n, v - kappa y) over the dividend size y with density phi(y, v); the
/// stock additionally collects the dividend itself (+y inside the integral).
/// The value at the threshold is left unchanged.
///
/// The dividend fraction density behaves like z^(alpha-1) at zero, so the
/// 64-node Gauss-Legendre rule runs in the substituted variable y = s u^3,
/// which removes the edge singularity of the integrand.
pub fn apply_dividend_condition(
    h_after: &[f64],
    v_nodes: &[f64],
    claim: &ClaimSpec,
    params: &ModelParams,
    law: &DividendLaw,
) -> Vec<f64> {
    let (gx, gw) = gauss_legendre_64();
    let mut out = h_after.to_vec();
    let is_stock = claim.is_stock();
    for (i, &v) in v_nodes.iter().enumerate() {
        let surplus = v - params.threshold;
        if surplus <= 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for (x, w) in gx.iter().zip(&gw) {
            let u = 0.5 * (x + 1.0);
            let y = surplus * u * u * u;
            let jacobian = 0.5 * surplus * 3.0 * u * u;
            let weight = jacobian * w * dividend_density(y, v, params, law);
            let mut val = interp_linear(v_nodes, h_after, v - params.kappa * y);
            if is_stock {
                val += y;
            }
            acc += weight * val;
        }
        out[i] = acc;
    }
    out
}

/// Dividend dates strictly inside (0, horizon).
fn dividend_dates(params: &ModelParams, horizon: f64) -> Vec<f64> {
    let mut dates = Vec::new();
    let mut n = 1usize;
    loop {
        let t = n as f64 * params.div_spacing;
        if t >= horizon - 1e-12 {
            break;
        }
        dates.push(t);
        n += 1;
    }
    dates
}

/// Backward sweep over [t_lo, t_hi] with `steps` CN steps (two implicit
/// half-steps first), recording slices when a sink is provided.
#[allow(clippy::too_many_arguments)]
fn sweep_segment(
    op: &SpaceOperator,
    h: &mut Vec<f64>,
    claim: &ClaimSpec,
    t_lo: f64,
    t_hi: f64,
    steps: usize,
    upper_cap: Option<f64>,
    mut record: Option<&mut Vec<(f64, Vec<f64>)>>,
) {
    let dt = (t_hi - t_lo) / steps as f64;
    for s in 0..steps {
        let t_new = t_hi - dt * (s + 1) as f64;
        let boundary = claim.boundary_at_threshold(t_new);
        if s == 0 {
            // Rannacher startup damps oscillations from nonsmooth data
            op.step(h, 0.5 * dt, 1.0, boundary);
            op.step(h, 0.5 * dt, 1.0, boundary);
        } else {
            op.step(h, dt, 0.5, boundary);
        }
        if let Some(cap) = upper_cap {
            let last = h.len() - 1;
            if h[last] > cap {
                h[last] = cap;
            }
        }
        if let Some(sink) = record.as_deref_mut() {
            sink.push((t_new, h.clone()));
        }
    }
}

/// Solve for the full-information value surface of a claim.
///
/// Finite-maturity claims are integrated backward from their terminal
/// condition with the dividend jump applied at every dividend date in the
/// horizon. The stock is solved as the fixed point of the one-period
/// backward map (Anderson-accelerated Picard iteration, sup-norm tolerance
/// 1e-8, at most 200 map applications).
pub fn solve_fullinfo(
    claim: &ClaimSpec,
    params: &ModelParams,
    nt: usize,
    nv: usize,
) -> Result<FullInfoGrid> {
    if nt < 16 || nv < 16 {
        return Err(Error::InvalidGrid(format!("need nt, nv >= 16, got nt={nt}, nv={nv}")));
    }
    params.validate()?;
    let law = params.dividend_law()?;
    let v_nodes: Vec<f64> = (0..=nv)
        .map(|i| params.threshold + (params.upper - params.threshold) * i as f64 / nv as f64)
        .collect();
    let op = SpaceOperator::new(&v_nodes, params);

    if claim.is_stock() {
        return solve_stock(claim, params, &law, &v_nodes, &op, nt);
    }

    let horizon = claim.maturity;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidGrid(format!("claim needs a finite positive maturity, got {horizon}")));
    }
    let mut cuts = vec![0.0];
    cuts.extend(dividend_dates(params, horizon));
    cuts.push(horizon);

    let mut h: Vec<f64> = v_nodes.iter().map(|&v| claim.terminal_value(v, params.threshold)).collect();
    h[0] = claim.boundary_at_threshold(horizon);

    let mut recorded: Vec<(f64, Vec<f64>)> = vec![(horizon, h.clone())];
    for seg in (0..cuts.len() - 1).rev() {
        let (t_lo, t_hi) = (cuts[seg], cuts[seg + 1]);
        let steps = (((t_hi - t_lo) / horizon * nt as f64).round() as usize).max(2);
        sweep_segment(&op, &mut h, claim, t_lo, t_hi, steps, None, Some(&mut recorded));
        if seg > 0 {
            // h now holds the post-dividend value at the cut; replace the
            // recorded slice with the pre-dividend one going further back
            h = apply_dividend_condition(&h, &v_nodes, claim, params, &law);
        }
    }
    recorded.reverse();
    let t_nodes: Vec<f64> = recorded.iter().map(|(t, _)| *t).collect();
    let values: Vec<Vec<f64>> = recorded.into_iter().map(|(_, v)| v).collect();
    Ok(FullInfoGrid {
        t_nodes,
        v_nodes,
        values,
        claim: claim.clone(),
        periodic: false,
        period: 0.0,
    })
}

/// One application of the stock period map: jump condition at the dividend
/// date, then CN backward over one period.
fn stock_period_map(
    start: &[f64],
    claim: &ClaimSpec,
    params: &ModelParams,
    law: &DividendLaw,
    v_nodes: &[f64],
    op: &SpaceOperator,
    steps: usize,
) -> Vec<f64> {
    let mut h = apply_dividend_condition(start, v_nodes, claim, params, law);
    sweep_segment(op, &mut h, claim, 0.0, params.div_spacing, steps, Some(params.upper), None);
    h
}

fn solve_stock(
    claim: &ClaimSpec,
    params: &ModelParams,
    law: &DividendLaw,
    v_nodes: &[f64],
    op: &SpaceOperator,
    nt: usize,
) -> Result<FullInfoGrid> {
    let n = v_nodes.len();
    let tol = 1e-8;
    let max_iter = 200;
    let memory = 10;

    let mut g = vec![0.0; n];
    let mut hist_g: Vec<DVector<f64>> = Vec::new();
    let mut hist_r: Vec<DVector<f64>> = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        let fg = stock_period_map(&g, claim, params, law, v_nodes, op, nt);
        let fg_v = DVector::from_vec(fg.clone());
        let g_v = DVector::from_vec(g.clone());
        let r = &fg_v - &g_v;
        residual = r.amax();
        if residual < tol {
            g = fg;
            converged = true;
            break;
        }
        hist_g.push(fg_v.clone());
        hist_r.push(r.clone());
        if hist_g.len() > memory {
            hist_g.remove(0);
            hist_r.remove(0);
        }
        let k = hist_r.len();
        if k == 1 {
            g = fg;
            continue;
        }
        // Anderson step: combine the history to kill the residual. The
        // period map is affine so this behaves like a Krylov solve and cuts
        // the plain Picard contraction (1 - O(r dt)) down to a few dozen
        // applications.
        let mut diff = DMatrix::zeros(n, k - 1);
        for j in 0..k - 1 {
            diff.set_column(j, &(&hist_r[j + 1] - &hist_r[j]));
        }
        let gamma = diff
            .clone()
            .svd(true, true)
            .solve(&hist_r[k - 1], 1e-12)
            .unwrap_or_else(|_| DVector::zeros(k - 1));
        let mut alpha = vec![0.0; k];
        alpha[k - 1] = 1.0;
        for j in 0..k - 1 {
            alpha[j] += gamma[j];
            alpha[j + 1] -= gamma[j];
        }
        let mut next = DVector::zeros(n);
        for j in 0..k {
            next += &hist_g[j] * alpha[j];
        }
        // the value of future dividends is nonnegative and below v
        for i in 0..n {
            next[i] = next[i].clamp(0.0, v_nodes[i]);
        }
        g = next.as_slice().to_vec();
    }
    if !converged {
        return Err(Error::StockFixedPoint { iterations: max_iter, residual });
    }

    // final recorded sweep from the converged period-start value
    let mut recorded: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut h = apply_dividend_condition(&g, v_nodes, claim, params, law);
    sweep_segment(
        op,
        &mut h,
        claim,
        0.0,
        params.div_spacing,
        nt,
        Some(params.upper),
        Some(&mut recorded),
    );
    recorded.reverse();
    let mut t_nodes: Vec<f64> = recorded.iter().map(|(t, _)| *t).collect();
    let mut values: Vec<Vec<f64>> = recorded.into_iter().map(|(_, v)| v).collect();
    t_nodes.push(params.div_spacing);
    values.push(g);
    Ok(FullInfoGrid {
        t_nodes,
        v_nodes: v_nodes.to_vec(),
        values,
        claim: claim.clone(),
        periodic: true,
        period: params.div_spacing,
    })
}

/// First-passage survival probability of a geometric Brownian motion above
/// the threshold: closed-form oracle for the no-dividend survival claim.
pub fn blackcox_survival(v: f64, horizon: f64, params: &ModelParams) -> f64 {
    let k = params.threshold;
    if v <= k {
        return 0.0;
    }
    if horizon <= 0.0 {
        return 1.0;
    }
    let x = (v / k).ln();
    let nu = params.rate - 0.5 * params.sigma * params.sigma;
    let s = params.sigma * horizon.sqrt();
    standard_normal_cdf((x + nu * horizon) / s)
        - (-2.0 * nu * x / (params.sigma * params.sigma)).exp()
            * standard_normal_cdf((-x + nu * horizon) / s)
}

/// Monte Carlo value of the discounted dividend stream truncated at
/// `horizon_periods` dividend dates; the exact value of the full stream is
/// the current asset value itself.
///
/// The asset value follows the dividend-adjusted dynamics without default
/// stopping (dividends simply vanish while the value sits below the
/// threshold). Returns the estimate and its standard error.
pub fn mc_dividend_value(
    v0: f64,
    n_paths: usize,
    horizon_periods: usize,
    params: &ModelParams,
    law: &DividendLaw,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_paths == 0 {
        return Err(Error::InvalidParams("mc_dividend_value needs n_paths > 0".into()));
    }
    if params.kappa != 1.0 {
        return Err(Error::InvalidParams(
            "dividend-value identity requires kappa = 1 (dividends reduce the asset value)".into(),
        ));
    }
    if v0 <= params.threshold {
        return Err(Error::NoDividendPayable { v: v0, threshold: params.threshold });
    }
    let dt = params.div_spacing;
    let drift = (params.rate - 0.5 * params.sigma * params.sigma) * dt;
    let vol = params.sigma * dt.sqrt();
    let beta = rand_distr::Beta::new(law.alpha, law.beta).expect("validated law");
    let normal = rand_distr::StandardNormal;

    let (sum, sumsq) = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let mut v = v0;
            let mut total = 0.0;
            for n in 1..=horizon_periods {
                let z: f64 = normal.sample(&mut rng);
                v *= (drift + vol * z).exp();
                if v > params.threshold {
                    let d = beta.sample(&mut rng) * (v - params.threshold);
                    total += (-params.rate * dt * n as f64).exp() * d;
                    v -= d;
                }
            }
            (total, total * total)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mean = sum / n_paths as f64;
    let var = (sumsq / n_paths as f64 - mean * mean).max(0.0);
    Ok((mean, (var / n_paths as f64).sqrt()))
}
