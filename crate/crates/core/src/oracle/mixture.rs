//! Isotropic Gaussian mixtures with exact perturbed scores and velocities.
//!
//! Under the linear path `x_t = (1-t) x + t z` with `z ~ N(0, I)`, a mixture
//! component `N(mu_k, sigma_k^2 I)` perturbs to `N((1-t) mu_k, rho_k(t)^2 I)`
//! with `rho_k(t)^2 = (1-t)^2 sigma_k^2 + t^2`. Everything here follows from
//! Gaussian conditioning on that marginal; responsibilities are computed in
//! log space with max subtraction.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Smallest time the singular `1/t` formulas accept.
pub const MIN_TIME: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GaussianMixtureSpec {
    weights: Vec<f64>,
    means: Array2<f64>, // [K, d]
    stdevs: Vec<f64>,
}

impl GaussianMixtureSpec {
    pub fn new(weights: Vec<f64>, means: Array2<f64>, stdevs: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if means.nrows() != k || stdevs.len() != k {
            return Err(Error::Config(format!(
                "mixture size mismatch: {k} weights, {} means, {} stdevs",
                means.nrows(),
                stdevs.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        if stdevs.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("mixture stdevs must be positive".into()));
        }
        Ok(GaussianMixtureSpec { weights, means, stdevs })
    }

    /// 8 equal components on the unit circle, sigma 0.05.
    pub fn gm8_ring() -> Self {
        let k = 8;
        let mut means = Array2::zeros((k, 2));
        for i in 0..k {
            let a = 2.0 * std::f64::consts::PI * (i as f64) / (k as f64);
            means[(i, 0)] = a.cos();
            means[(i, 1)] = a.sin();
        }
        GaussianMixtureSpec::new(vec![1.0 / k as f64; k], means, vec![0.05; k]).unwrap()
    }

    /// Symmetric pair at +/- mu.
    pub fn gm2_sym(mu: &[f64], sigma: f64) -> Result<Self> {
        let d = mu.len();
        let mut means = Array2::zeros((2, d));
        for (j, &m) in mu.iter().enumerate() {
            means[(0, j)] = m;
            means[(1, j)] = -m;
        }
        GaussianMixtureSpec::new(vec![0.5, 0.5], means, vec![sigma, sigma])
    }

    /// Single Gaussian.
    pub fn g1(mu: &[f64], sigma: f64) -> Result<Self> {
        let mut means = Array2::zeros((1, mu.len()));
        for (j, &m) in mu.iter().enumerate() {
            means[(0, j)] = m;
        }
        GaussianMixtureSpec::new(vec![1.0], means, vec![sigma])
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn stdevs(&self) -> &[f64] {
        &self.stdevs
    }

    /// Draw one sample; the component index doubles as the class label.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Array1<f64>, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = k;
                break;
            }
        }
        let mut x = Array1::zeros(self.dim());
        for j in 0..self.dim() {
            let z: f64 = rng.sample(StandardNormal);
            x[j] = self.means[(comp, j)] + self.stdevs[comp] * z;
        }
        (x, comp)
    }

    /// Draw a batch as rows of a matrix, plus labels.
    pub fn sample_batch<R: Rng>(&self, rng: &mut R, n: usize) -> (Array2<f64>, Vec<usize>) {
        let mut xs = Array2::zeros((n, self.dim()));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let (x, c) = self.sample(rng);
            xs.row_mut(i).assign(&x);
            labels.push(c);
        }
        (xs, labels)
    }

    /// Perturbed component variance `rho_k(t)^2`.
    fn rho2(&self, k: usize, t: f64) -> f64 {
        let a = 1.0 - t;
        a * a * self.stdevs[k] * self.stdevs[k] + t * t
    }

    /// Log responsibilities `log r_k(x_t)` of the perturbed mixture.
    fn log_responsibilities(&self, x_t: ArrayView1<f64>, t: f64) -> Result<Vec<f64>> {
        let d = self.dim() as f64;
        let mut logs = Vec::with_capacity(self.components());
        for k in 0..self.components() {
            let rho2 = self.rho2(k, t);
            let mut dist2 = 0.0;
            for j in 0..self.dim() {
                let diff = x_t[j] - (1.0 - t) * self.means[(k, j)];
                dist2 += diff * diff;
            }
            logs.push(self.weights[k].ln() - 0.5 * d * rho2.ln() - 0.5 * dist2 / rho2);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite { context: "mixture responsibilities".into() });
        }
        let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        Ok(logs.into_iter().map(|l| l - lse).collect())
    }

    /// Log density of the perturbed mixture at time t.
    pub fn log_density(&self, x_t: ArrayView1<f64>, t: f64) -> f64 {
        let d = self.dim() as f64;
        let mut logs = Vec::with_capacity(self.components());
        for k in 0..self.components() {
            let rho2 = self.rho2(k, t);
            let mut dist2 = 0.0;
            for j in 0..self.dim() {
                let diff = x_t[j] - (1.0 - t) * self.means[(k, j)];
                dist2 += diff * diff;
            }
            logs.push(
                self.weights[k].ln()
                    - 0.5 * d * (2.0 * std::f64::consts::PI * rho2).ln()
                    - 0.5 * dist2 / rho2,
            );
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    /// Exact posterior mean `E[x | x_t]` of the clean sample.
    pub fn posterior_mean(&self, x_t: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        let logs = self.log_responsibilities(x_t, t)?;
        let mut mean = Array1::zeros(self.dim());
        for k in 0..self.components() {
            let r = logs[k].exp();
            let rho2 = self.rho2(k, t);
            let gain = (1.0 - t) * self.stdevs[k] * self.stdevs[k] / rho2;
            for j in 0..self.dim() {
                let mk = self.means[(k, j)];
                let cond = mk + gain * (x_t[j] - (1.0 - t) * mk);
                mean[j] += r * cond;
            }
        }
        Ok(mean)
    }

    /// Exact marginal velocity `(x_t - E[x | x_t]) / t`.
    pub fn marginal_velocity(&self, x_t: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        if t < MIN_TIME {
            return Err(Error::InvalidArgument(format!(
                "marginal velocity requires t >= {MIN_TIME}, got {t}"
            )));
        }
        let mu = self.posterior_mean(x_t, t)?;
        Ok((&x_t.to_owned() - &mu) / t)
    }

    /// Exact marginal score: gradient of the perturbed log density.
    pub fn marginal_score(&self, x_t: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        if t < MIN_TIME {
            return Err(Error::InvalidArgument(format!(
                "marginal score requires t >= {MIN_TIME}, got {t}"
            )));
        }
        let logs = self.log_responsibilities(x_t, t)?;
        let mut score = Array1::zeros(self.dim());
        for k in 0..self.components() {
            let r = logs[k].exp();
            let rho2 = self.rho2(k, t);
            for j in 0..self.dim() {
                score[j] += r * (-(x_t[j] - (1.0 - t) * self.means[(k, j)]) / rho2);
            }
        }
        Ok(score)
    }

    /// Marginal velocity conditioned on a class (a single component).
    pub fn class_velocity(&self, x_t: ArrayView1<f64>, t: f64, class: usize) -> Result<Array1<f64>> {
        let single = GaussianMixtureSpec::new(
            vec![1.0],
            self.means.row(class).insert_axis(ndarray::Axis(0)).to_owned(),
            vec![self.stdevs[class]],
        )?;
        single.marginal_velocity(x_t, t)
    }
}

/// Batched marginal velocity, one row per sample.
pub fn marginal_velocity_batch(
    spec: &GaussianMixtureSpec,
    x_t: &Array2<f64>,
    t: f64,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(x_t.dim());
    for (i, row) in x_t.rows().into_iter().enumerate() {
        out.row_mut(i).assign(&spec.marginal_velocity(row, t)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_bad_weights() {
        assert!(GaussianMixtureSpec::new(vec![0.7, 0.2], array![[0.0], [1.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixtureSpec::new(vec![0.5, 0.5], array![[0.0], [1.0]], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn symmetric_pair_has_zero_velocity_and_score_at_center() {
        let spec = GaussianMixtureSpec::gm2_sym(&[1.0, 0.5], 0.3).unwrap();
        let x = array![0.0, 0.0];
        let v = spec.marginal_velocity(x.view(), 0.5).unwrap();
        let s = spec.marginal_score(x.view(), 0.5).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-14), "v = {v}");
        assert!(s.iter().all(|x| x.abs() < 1e-14), "s = {s}");
    }

    #[test]
    fn standard_normal_score_closed_form() {
        // Data N(0,1), prior N(0,1), t=0.5: rho^2 = 0.5, score(1) = -2.
        let spec = GaussianMixtureSpec::g1(&[0.0], 1.0).unwrap();
        let s = spec.marginal_score(array![1.0].view(), 0.5).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-12, "s = {}", s[0]);
    }

    #[test]
    fn single_gaussian_posterior_mean_closed_form() {
        // For data N(m, s^2): E[x|x_t] = m + (1-t)s^2 (x_t - (1-t)m) / rho^2.
        let (m, sd, t, xt) = (2.0, 1.0, 0.3, 0.8);
        let spec = GaussianMixtureSpec::g1(&[m], sd).unwrap();
        let rho2 = (1.0 - t) * (1.0 - t) * sd * sd + t * t;
        let expected = m + (1.0 - t) * sd * sd * (xt - (1.0 - t) * m) / rho2;
        let got = spec.posterior_mean(array![xt].view(), t).unwrap()[0];
        assert!((got - expected).abs() < 1e-12);

        let v = spec.marginal_velocity(array![xt].view(), t).unwrap()[0];
        assert!((v - (xt - expected) / t).abs() < 1e-12);
    }

    #[test]
    fn score_matches_log_density_finite_differences() {
        let spec = GaussianMixtureSpec::gm8_ring();
        let t = 0.4;
        let h = 1e-6;
        for &(x, y) in &[(0.3, -0.8), (1.2, 0.1), (-0.5, 0.6)] {
            let s = spec.marginal_score(array![x, y].view(), t).unwrap();
            let fx = (spec.log_density(array![x + h, y].view(), t)
                - spec.log_density(array![x - h, y].view(), t))
                / (2.0 * h);
            let fy = (spec.log_density(array![x, y + h].view(), t)
                - spec.log_density(array![x, y - h].view(), t))
                / (2.0 * h);
            assert!((s[0] - fx).abs() < 1e-6, "{} vs {}", s[0], fx);
            assert!((s[1] - fy).abs() < 1e-6, "{} vs {}", s[1], fy);
        }
    }

    #[test]
    fn velocity_matches_importance_weighted_monte_carlo() {
        // E[z - x | x_t] with z reconstructed from (x, x_t); weights are the
        // Gaussian likelihood of x_t given x. Standard errors from chunk means.
        let spec = GaussianMixtureSpec::gm2_sym(&[0.8], 0.4).unwrap();
        let (t, xt_val) = (0.6, 0.35);
        let xt = array![xt_val];
        let exact = spec.marginal_velocity(xt.view(), t).unwrap()[0];

        let mut rng = crate::rng::stream(11, "mc-velocity");
        let chunks = 100;
        let per_chunk = 10_000;
        let mut means = Vec::with_capacity(chunks);
        for _ in 0..chunks {
            let mut num = 0.0;
            let mut den = 0.0;
            for _ in 0..per_chunk {
                let (x, _) = spec.sample(&mut rng);
                let diff = xt_val - (1.0 - t) * x[0];
                let w = (-diff * diff / (2.0 * t * t)).exp();
                let v = diff / t - x[0]; // z - x with z = (x_t - (1-t)x)/t
                num += w * v;
                den += w;
            }
            means.push(num / den);
        }
        let mean = means.iter().sum::<f64>() / chunks as f64;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (chunks as f64 - 1.0);
        let se = (var / chunks as f64).sqrt();
        assert!(
            (mean - exact).abs() < 3.0 * se + 1e-9,
            "MC {mean} vs exact {exact}, se {se}"
        );
    }

    #[test]
    fn rejects_small_time() {
        let spec = GaussianMixtureSpec::g1(&[0.0], 1.0).unwrap();
        assert!(spec.marginal_velocity(array![0.1].view(), 1e-9).is_err());
        assert!(spec.marginal_score(array![0.1].view(), 0.0).is_err());
    }

    #[test]
    fn sampling_respects_weights() {
        let spec = GaussianMixtureSpec::gm2_sym(&[2.0], 0.1).unwrap();
        let mut rng = crate::rng::stream(5, "sample-weights");
        let (xs, labels) = spec.sample_batch(&mut rng, 20_000);
        let frac = labels.iter().filter(|&&c| c == 0).count() as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.02, "frac {frac}");
        // Labels match the signed side of the drawn point.
        for (x, &c) in xs.rows().into_iter().zip(&labels) {
            assert_eq!(x[0] > 0.0, c == 0);
        }
    }
}
