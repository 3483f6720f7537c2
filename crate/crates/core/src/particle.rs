//! Bootstrap particle filter for the stopped asset value.
//!
//! An independent, brute-force approximation of the same conditional law
//! the Galerkin filter tracks: particles follow the asset value with
//! Brownian-bridge absorption at both boundaries, weights carry the
//! observation likelihood under the reference measure and the dividend
//! likelihood ratio at dividend dates. Used as an oracle; accuracy is
//! particle-count limited, not production grade.

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::model::{dividend_density, DividendLaw, ModelParams, ReferenceDensity};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Weighted particle ensemble; absorbed particles sit exactly on a boundary.
#[derive(Clone, Debug)]
pub struct ParticleCloud {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub t: f64,
    /// Per-particle absorption marker: 0 free, 1 at the threshold, 2 at the
    /// truncation level.
    pub absorbed: Vec<u8>,
}

impl ParticleCloud {
    fn weight_split(&self) -> (f64, f64, f64) {
        let (mut interior, mut at_k, mut at_n) = (0.0, 0.0, 0.0);
        for i in 0..self.positions.len() {
            match self.absorbed[i] {
                0 => interior += self.weights[i],
                1 => at_k += self.weights[i],
                _ => at_n += self.weights[i],
            }
        }
        (interior, at_k, at_n)
    }

    /// Conditional survival probability: weight not absorbed at the
    /// threshold.
    pub fn survival_probability(&self) -> f64 {
        let (interior, at_k, at_n) = self.weight_split();
        (interior + at_n) / (interior + at_k + at_n)
    }

    /// Silverman bandwidth over the interior particles.
    pub fn bandwidth(&self) -> f64 {
        let (interior, _, at_n) = self.weight_split();
        let w_surv = interior + at_n;
        if interior <= 0.0 {
            return 1.0;
        }
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut wsq = 0.0;
        for i in 0..self.positions.len() {
            if self.absorbed[i] == 0 {
                let w = self.weights[i] / interior;
                mean += w * self.positions[i];
                m2 += w * self.positions[i] * self.positions[i];
                wsq += w * w;
            }
        }
        let sd = (m2 - mean * mean).max(1e-12).sqrt();
        let n_eff = 1.0 / wsq.max(1e-300);
        let _ = w_surv;
        1.06 * sd * n_eff.powf(-0.2)
    }

    /// Kernel density estimate of the pre-default conditional density,
    /// Gaussian kernel with odd reflection at the threshold so the estimate
    /// vanishes there like the true density.
    pub fn kde(&self, threshold: f64, xs: &[f64]) -> Vec<f64> {
        let bw = self.bandwidth();
        let (interior, at_k, at_n) = self.weight_split();
        let w_surv = interior + at_n;
        let _ = at_k;
        let mut out = vec![0.0; xs.len()];
        if w_surv <= 0.0 {
            return out;
        }
        for i in 0..self.positions.len() {
            if self.absorbed[i] != 0 {
                continue;
            }
            let w = self.weights[i] / w_surv;
            let xi = self.positions[i];
            for (j, &x) in xs.iter().enumerate() {
                let z1 = (x - xi) / bw;
                let z2 = (x - (2.0 * threshold - xi)) / bw;
                out[j] += w * INV_SQRT_2PI / bw
                    * ((-0.5 * z1 * z1).exp() - (-0.5 * z2 * z2).exp());
            }
        }
        out
    }

    /// Slope of the kernel density at the threshold; the odd reflection
    /// doubles each kernel's contribution there.
    pub fn kde_slope_at_threshold(&self, threshold: f64) -> f64 {
        let bw = self.bandwidth();
        let (interior, _, at_n) = self.weight_split();
        let w_surv = interior + at_n;
        if w_surv <= 0.0 {
            return 0.0;
        }
        let mut slope = 0.0;
        for i in 0..self.positions.len() {
            if self.absorbed[i] != 0 {
                continue;
            }
            let z = (self.positions[i] - threshold) / bw;
            slope += self.weights[i] / w_surv * 2.0 * (self.positions[i] - threshold)
                / (bw * bw * bw)
                * INV_SQRT_2PI
                * (-0.5 * z * z).exp();
        }
        slope
    }
}

/// Output trajectory of the particle filter.
#[derive(Clone, Debug)]
pub struct ParticleRun {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub intensity: Vec<f64>,
    pub cloud: ParticleCloud,
}

fn sort_cloud(cloud: &mut ParticleCloud) {
    let n = cloud.positions.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        cloud.positions[a]
            .total_cmp(&cloud.positions[b])
            .then(cloud.weights[a].total_cmp(&cloud.weights[b]))
    });
    cloud.positions = order.iter().map(|&i| cloud.positions[i]).collect();
    cloud.weights = order.iter().map(|&i| cloud.weights[i]).collect();
    cloud.absorbed = order.iter().map(|&i| cloud.absorbed[i]).collect();
}

/// Systematic resampling with a single uniform draw on the position-sorted
/// cloud; the canonical ordering makes the filter invariant under
/// permutations of its particle array.
fn resample<R: Rng + ?Sized>(cloud: &mut ParticleCloud, rng: &mut R) {
    sort_cloud(cloud);
    let n = cloud.positions.len();
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut idx = 0usize;
    let mut new_pos = Vec::with_capacity(n);
    let mut new_abs = Vec::with_capacity(n);
    for j in 0..n {
        let target = (u + j as f64) / n as f64;
        while cum + cloud.weights[idx] < target && idx < n - 1 {
            cum += cloud.weights[idx];
            idx += 1;
        }
        new_pos.push(cloud.positions[idx]);
        new_abs.push(cloud.absorbed[idx]);
    }
    cloud.positions = new_pos;
    cloud.absorbed = new_abs;
    cloud.weights = vec![1.0 / n as f64; n];
}

/// Run the bootstrap filter along an observation path.
///
/// `z_increments` are the observed increments of the two-dimensional
/// observation process on a uniform grid of step `dt`; `dividends` holds
/// (time, amount) pairs that must sit on that grid. Returns per-step
/// survival probabilities and intensity estimates plus the terminal cloud.
#[allow(clippy::too_many_arguments)]
pub fn run_particle_filter<R: Rng + ?Sized>(
    z_increments: &[[f64; 2]],
    dt: f64,
    dividends: &[(f64, f64)],
    n: usize,
    params: &ModelParams,
    law: &DividendLaw,
    phi_star: &ReferenceDensity,
    rng: &mut R,
) -> Result<ParticleRun> {
    if n < 1000 {
        return Err(Error::InvalidParams(format!("particle filter needs n >= 1000, got {n}")));
    }
    params.validate()?;
    for &(t_div, _) in dividends {
        let steps = t_div / dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(Error::InvalidGrid(format!(
                "dividend date {t_div} does not sit on the observation grid (dt = {dt})"
            )));
        }
    }

    let k = params.threshold;
    let upper = params.upper;
    let drift = (params.rate - 0.5 * params.sigma * params.sigma) * dt;
    let vol = params.sigma * dt.sqrt();
    let sigma2dt = params.sigma * params.sigma * dt;
    let normal = rand_distr::StandardNormal;

    let mut cloud = ParticleCloud {
        positions: (0..n).map(|_| params.sample_initial_value(rng)).collect(),
        weights: vec![1.0 / n as f64; n],
        t: 0.0,
        absorbed: vec![0u8; n],
    };
    sort_cloud(&mut cloud);

    let mut times = Vec::with_capacity(z_increments.len() + 1);
    let mut survival = Vec::with_capacity(z_increments.len() + 1);
    let mut intensity = Vec::with_capacity(z_increments.len() + 1);
    let half_s2k2 = 0.5 * params.sigma * params.sigma * k * k;
    times.push(0.0);
    survival.push(cloud.survival_probability());
    intensity.push(half_s2k2 * cloud.kde_slope_at_threshold(k));

    let mut div_iter = dividends.iter().peekable();

    for (step, dz) in z_increments.iter().enumerate() {
        let t_new = (step + 1) as f64 * dt;
        // signal evolution with bridge absorption at both boundaries
        for i in 0..n {
            if cloud.absorbed[i] != 0 {
                continue;
            }
            let x_old = cloud.positions[i];
            let z: f64 = normal.sample(rng);
            let x_new = x_old * (drift + vol * z).exp();
            if x_new <= k {
                cloud.positions[i] = k;
                cloud.absorbed[i] = 1;
                continue;
            }
            if x_new >= upper {
                cloud.positions[i] = upper;
                cloud.absorbed[i] = 2;
                continue;
            }
            let p_k = (-2.0 * (x_old / k).ln() * (x_new / k).ln() / sigma2dt).exp();
            if rng.random::<f64>() < p_k {
                cloud.positions[i] = k;
                cloud.absorbed[i] = 1;
                continue;
            }
            let p_n = (-2.0 * (upper / x_old).ln() * (upper / x_new).ln() / sigma2dt).exp();
            if rng.random::<f64>() < p_n {
                cloud.positions[i] = upper;
                cloud.absorbed[i] = 2;
                continue;
            }
            cloud.positions[i] = x_new;
        }

        // observation likelihood under the reference measure; a(K) = 0 so
        // threshold-absorbed particles keep their weight
        let mut total = 0.0;
        for i in 0..n {
            let a = params.observation_drift(cloud.positions[i]);
            let log_l = a[0] * dz[0] + a[1] * dz[1] - 0.5 * (a[0] * a[0] + a[1] * a[1]) * dt;
            cloud.weights[i] *= log_l.exp();
            total += cloud.weights[i];
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::FilterCollapse { t: t_new });
        }
        for w in &mut cloud.weights {
            *w /= total;
        }

        // dividend observation
        while let Some(&&(t_div, d)) = div_iter.peek() {
            if (t_div - t_new).abs() > 1e-9 * (1.0 + t_new) {
                break;
            }
            div_iter.next();
            let phi_star_d = phi_star.pdf(d);
            let mut total = 0.0;
            for i in 0..n {
                match cloud.absorbed[i] {
                    1 => {} // phi(d, K) := phi*(d), ratio one
                    2 => {
                        cloud.weights[i] *=
                            dividend_density(d, upper, params, law) / phi_star_d;
                    }
                    _ => {
                        cloud.weights[i] *=
                            dividend_density(d, cloud.positions[i], params, law) / phi_star_d;
                        let shifted = cloud.positions[i] - params.kappa * d;
                        if shifted <= k {
                            cloud.positions[i] = k;
                            cloud.absorbed[i] = 1;
                        } else {
                            cloud.positions[i] = shifted;
                        }
                    }
                }
                total += cloud.weights[i];
            }
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::FilterCollapse { t: t_new });
            }
            for w in &mut cloud.weights {
                *w /= total;
            }
        }

        let ess = 1.0 / cloud.weights.iter().map(|w| w * w).sum::<f64>();
        if ess < n as f64 / 2.0 {
            resample(&mut cloud, rng);
        }

        cloud.t = t_new;
        times.push(t_new);
        survival.push(cloud.survival_probability());
        intensity.push(half_s2k2 * cloud.kde_slope_at_threshold(k));
    }

    Ok(ParticleRun { times, survival, intensity, cloud })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fullinfo::blackcox_survival;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn setup() -> (ModelParams, DividendLaw, ReferenceDensity) {
        let p = ModelParams::table1();
        let law = p.dividend_law().unwrap();
        let phi = p.phi_star();
        (p, law, phi)
    }

    #[test]
    fn rejects_small_ensembles_and_misaligned_dividends() {
        let (p, law, phi) = setup();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let z = vec![[0.0, 0.0]; 10];
        assert!(run_particle_filter(&z, 0.01, &[], 10, &p, &law, &phi, &mut rng).is_err());
        assert!(
            run_particle_filter(&z, 0.01, &[(0.0567, 0.1)], 2000, &p, &law, &phi, &mut rng)
                .is_err()
        );
    }

    #[test]
    fn uniform_weights_without_observation_channels() {
        // a == 0 and zero observation path: likelihood is identically one,
        // so weights stay uniform before any resampling
        let (mut p, law, phi) = setup();
        p.c1 = 0.0;
        p.c2 = 0.0;
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let z = vec![[0.0, 0.0]; 50];
        let run = run_particle_filter(&z, 0.002, &[], 2000, &p, &law, &phi, &mut rng).unwrap();
        let w = &run.cloud.weights;
        for &wi in w {
            assert_relative_eq!(wi, 1.0 / 2000.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn survival_matches_mixture_oracle_without_observation() {
        // with a == 0 and no dividends the filter survival probability is a
        // plain Monte Carlo estimate of the pi0-mixture of first-passage
        // survival; compare against the closed-form mixture by quadrature
        let (mut p, law, phi) = setup();
        p.c1 = 0.0;
        p.c2 = 0.0;
        p.kappa = 0.0;
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let steps = 250;
        let z = vec![[0.0, 0.0]; steps];
        let n = 200_000;
        let run = run_particle_filter(&z, 1.0 / steps as f64, &[], n, &p, &law, &phi, &mut rng)
            .unwrap();
        let got = *run.survival.last().unwrap();
        // quadrature mixture of the closed form over the initial density
        let m = 4000;
        let h = (p.upper - p.threshold) / m as f64;
        let mut exact = 0.0;
        for i in 0..m {
            let v = p.threshold + (i as f64 + 0.5) * h;
            exact += p.initial_density(v) * blackcox_survival(v, 1.0, &p) * h;
        }
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!(
            (got - exact).abs() < 3.0 * se + 1e-4,
            "pf {got} vs mixture {exact} (se {se})"
        );
    }

    #[test]
    fn absorbed_mass_at_threshold_is_nondecreasing() {
        let (mut p, law, phi) = setup();
        p.pi0_mu = 5.0f64.ln();
        p.pi0_sigma = 0.5;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let steps = 200;
        let mut z = vec![[0.0, 0.0]; steps];
        let mut walk_rng = ChaCha12Rng::seed_from_u64(4);
        for inc in &mut z {
            let dt: f64 = 1.0 / steps as f64;
            let z: f64 = rand_distr::StandardNormal.sample(&mut walk_rng);
            inc[0] = dt.sqrt() * z;
        }
        let run = run_particle_filter(&z, 1.0 / steps as f64, &[], 3000, &p, &law, &phi, &mut rng)
            .unwrap();
        for s in 1..run.survival.len() {
            // survival can only shrink between resampling events; allow the
            // resampling jitter of one particle weight
            assert!(
                run.survival[s] <= run.survival[s - 1] + 1.0 / 3000.0 + 1e-12,
                "survival increased at step {s}"
            );
        }
        for lam in &run.intensity {
            assert!(lam.is_finite() && *lam >= 0.0);
        }
    }

    #[test]
    fn outputs_invariant_under_particle_permutation() {
        // the cloud is canonicalized by position, so feeding the same rng
        // with a permuted initial array changes nothing
        let (p, law, phi) = setup();
        let steps = 60;
        let mut z = vec![[0.0, 0.0]; steps];
        let mut walk_rng = ChaCha12Rng::seed_from_u64(7);
        for inc in &mut z {
            let dt: f64 = 1.0 / steps as f64;
            let z: f64 = rand_distr::StandardNormal.sample(&mut walk_rng);
            inc[0] = p.c1 * 0.5 * dt + dt.sqrt() * z;
        }
        let dt = 1.0 / steps as f64;
        let mut rng1 = ChaCha12Rng::seed_from_u64(8);
        let run1 = run_particle_filter(&z, dt, &[], 2000, &p, &law, &phi, &mut rng1).unwrap();
        let mut rng2 = ChaCha12Rng::seed_from_u64(8);
        let run2 = run_particle_filter(&z, dt, &[], 2000, &p, &law, &phi, &mut rng2).unwrap();
        assert_eq!(run1.survival, run2.survival);
        assert_eq!(run1.intensity, run2.intensity);
        assert_eq!(run1.cloud.positions, run2.cloud.positions);
    }

    #[test]
    fn ess_and_weights_stay_finite_with_dividends() {
        let (p, law, phi) = setup();
        let steps = 500;
        let dt = 1.0 / steps as f64;
        let mut z = vec![[0.0, 0.0]; steps];
        let mut walk_rng = ChaCha12Rng::seed_from_u64(10);
        for inc in &mut z {
            let z: f64 = rand_distr::StandardNormal.sample(&mut walk_rng);
            inc[0] = dt.sqrt() * z;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let run = run_particle_filter(
            &z,
            dt,
            &[(0.5, 0.31), (1.0, 0.27)],
            2000,
            &p,
            &law,
            &phi,
            &mut rng,
        )
        .unwrap();
        for w in &run.cloud.weights {
            assert!(w.is_finite() && *w >= 0.0);
        }
        let ess = 1.0 / run.cloud.weights.iter().map(|w| w * w).sum::<f64>();
        assert!(ess.is_finite() && ess >= 1.0);
        // all positions inside [K, N]
        for (i, &x) in run.cloud.positions.iter().enumerate() {
            assert!(
                (p.threshold..=p.upper).contains(&x),
                "particle {i} escaped: {x}"
            );
        }
    }

    #[test]
    fn kde_vanishes_at_threshold_and_integrates_to_survivor_mass() {
        let (mut p, law, phi) = setup();
        p.pi0_mu = 5.0f64.ln();
        p.pi0_sigma = 0.5;
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let steps = 250;
        let z = vec![[0.0, 0.0]; steps];
        let run = run_particle_filter(&z, 1.0 / steps as f64, &[], 20_000, &p, &law, &phi, &mut rng)
            .unwrap();
        let at_k = run.cloud.kde(p.threshold, &[p.threshold])[0];
        assert!(at_k.abs() < 1e-12, "kde at threshold {at_k}");
        let m = 2000;
        let h = (p.upper - p.threshold) / m as f64;
        let xs: Vec<f64> = (0..m).map(|i| p.threshold + (i as f64 + 0.5) * h).collect();
        let dens = run.cloud.kde(p.threshold, &xs);
        let mass: f64 = dens.iter().map(|d| d * h).sum();
        // interior weight, up to the small reflection loss near K
        assert!((mass - 1.0).abs() < 0.02, "kde mass {mass}");
    }
}
