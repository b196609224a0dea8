//! The linear interpolant, the score/velocity conversion, and the exact flow
//! map of single-Gaussian data.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::oracle::mixture::{GaussianMixtureSpec, MIN_TIME};

/// An ordered time pair with `t >= s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePair {
    pub t: f64,
    pub s: f64,
}

impl TimePair {
    /// Reorders the two draws so `t >= s`.
    pub fn ordered(a: f64, b: f64) -> Self {
        assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b), "times must lie in [0, 1]");
        TimePair { t: a.max(b), s: a.min(b) }
    }
}

/// x_t = (1 - t) x + t z.
pub fn interpolate(x: ArrayView1<f64>, z: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("interpolation time {t} outside [0, 1]")));
    }
    Ok(&x.to_owned() * (1.0 - t) + &z.to_owned() * t)
}

/// Batched rows version of [`interpolate`] with per-row times.
pub fn interpolate_rows(x: &Array2<f64>, z: &Array2<f64>, t: &[f64]) -> Array2<f64> {
    assert_eq!(x.dim(), z.dim());
    assert_eq!(x.nrows(), t.len());
    let mut out = Array2::zeros(x.dim());
    for i in 0..x.nrows() {
        let ti = t[i];
        for j in 0..x.ncols() {
            out[(i, j)] = (1.0 - ti) * x[(i, j)] + ti * z[(i, j)];
        }
    }
    out
}

/// v_t(x_t | x) = (x_t - x) / t; equals z - x along the linear path.
pub fn conditional_velocity(x: ArrayView1<f64>, x_t: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
    if t < MIN_TIME {
        return Err(Error::InvalidArgument(format!(
            "conditional velocity requires t >= {MIN_TIME}, got {t}"
        )));
    }
    Ok((&x_t.to_owned() - &x.to_owned()) / t)
}

/// s = -(x_t + (1 - t) v) / t.
pub fn score_from_velocity(v: ArrayView1<f64>, x_t: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
    if t < MIN_TIME {
        return Err(Error::InvalidArgument(format!(
            "score conversion requires t >= {MIN_TIME}, got {t}"
        )));
    }
    Ok((&x_t.to_owned() + &(&v.to_owned() * (1.0 - t))) / (-t))
}

/// v = -(t s + x_t) / (1 - t); inverse of [`score_from_velocity`].
pub fn velocity_from_score(s: ArrayView1<f64>, x_t: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
    if t < MIN_TIME {
        return Err(Error::InvalidArgument(format!(
            "velocity conversion requires t >= {MIN_TIME}, got {t}"
        )));
    }
    if 1.0 - t < MIN_TIME {
        return Err(Error::InvalidArgument(format!(
            "velocity conversion requires t <= {}, got {t}",
            1.0 - MIN_TIME
        )));
    }
    Ok((&(&s.to_owned() * t) + &x_t.to_owned()) / (t - 1.0))
}

/// gamma(t) = (1 - t) / t.
pub fn gamma_weight(t: f64) -> Result<f64> {
    if t < MIN_TIME {
        return Err(Error::InvalidArgument(format!(
            "gamma weight requires t >= {MIN_TIME}, got {t}"
        )));
    }
    Ok((1.0 - t) / t)
}

/// Analytic solution operator of the probability-flow ODE when the data are a
/// single isotropic Gaussian. Path mean `m(t) = (1-t) mu` and path stdev
/// `rho(t) = sqrt((1-t)^2 sigma^2 + t^2)` give the exact two-time map
/// `f(x; t, s) = m(s) + (rho(s)/rho(t)) (x - m(t))`.
#[derive(Debug, Clone)]
pub struct LinearGaussianFlow {
    pub mean: Array1<f64>,
    pub stdev: f64,
}

impl LinearGaussianFlow {
    pub fn new(mean: Array1<f64>, stdev: f64) -> Result<Self> {
        if stdev <= 0.0 {
            return Err(Error::Config(format!("stdev must be positive, got {stdev}")));
        }
        Ok(LinearGaussianFlow { mean, stdev })
    }

    /// Builds from a single-component mixture spec.
    pub fn from_g1(spec: &GaussianMixtureSpec) -> Result<Self> {
        if spec.components() != 1 {
            return Err(Error::Config(format!(
                "analytic flow map needs single-Gaussian data, got {} components",
                spec.components()
            )));
        }
        Self::new(spec.means().row(0).to_owned(), spec.stdevs()[0])
    }

    pub fn path_mean(&self, t: f64) -> Array1<f64> {
        &self.mean * (1.0 - t)
    }

    pub fn path_stdev(&self, t: f64) -> f64 {
        let a = 1.0 - t;
        (a * a * self.stdev * self.stdev + t * t).sqrt()
    }

    /// PF-ODE velocity in its regular form; well defined on all of [0, 1].
    pub fn velocity(&self, x: ArrayView1<f64>, t: f64) -> Array1<f64> {
        let rho = self.path_stdev(t);
        let drho = (t - (1.0 - t) * self.stdev * self.stdev) / rho;
        let m = self.path_mean(t);
        let mut out = Array1::zeros(x.len());
        for j in 0..x.len() {
            out[j] = -self.mean[j] + (drho / rho) * (x[j] - m[j]);
        }
        out
    }

    /// Exact flow map f(x; t, s).
    pub fn flow_map(&self, x: ArrayView1<f64>, t: f64, s: f64) -> Array1<f64> {
        assert!((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&s), "times must lie in [0, 1]");
        if s == t {
            return x.to_owned();
        }
        let ratio = self.path_stdev(s) / self.path_stdev(t);
        let ms = self.path_mean(s);
        let mt = self.path_mean(t);
        let mut out = Array1::zeros(x.len());
        for j in 0..x.len() {
            out[j] = ms[j] + ratio * (x[j] - mt[j]);
        }
        out
    }

    /// Average velocity over [s, t]: `(x - f(x; t, s)) / (t - s)`.
    pub fn average_velocity(&self, x: ArrayView1<f64>, t: f64, s: f64) -> Array1<f64> {
        assert!(t != s, "average velocity needs distinct times");
        let f = self.flow_map(x, t, s);
        (&x.to_owned() - &f) / (t - s)
    }

    /// Batched flow map over rows.
    pub fn flow_map_rows(&self, x: &Array2<f64>, t: f64, s: f64) -> Array2<f64> {
        let mut out = Array2::zeros(x.dim());
        for (i, row) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&self.flow_map(row, t, s));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let x = array![2.0, 0.0];
        let z = array![0.0, 2.0];
        assert_eq!(interpolate(x.view(), z.view(), 0.0).unwrap(), x);
        assert_eq!(interpolate(x.view(), z.view(), 1.0).unwrap(), z);
        assert_eq!(interpolate(x.view(), z.view(), 0.5).unwrap(), array![1.0, 1.0]);
        assert!(interpolate(x.view(), z.view(), 1.5).is_err());
    }

    #[test]
    fn conditional_velocity_basics() {
        let x = array![1.0];
        assert_eq!(conditional_velocity(x.view(), x.view(), 0.5).unwrap(), array![0.0]);
        let x = array![0.0];
        let z = array![2.0];
        let xt = interpolate(x.view(), z.view(), 0.5).unwrap();
        assert_eq!(conditional_velocity(x.view(), xt.view(), 0.5).unwrap(), array![2.0]);
        assert!(conditional_velocity(x.view(), x.view(), 0.0).is_err());
    }

    #[test]
    fn conditional_velocity_reconstructs_z_minus_x() {
        let mut rng = crate::rng::stream(2, "cond-vel");
        use rand::Rng;
        for _ in 0..50 {
            let x = array![rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>()];
            let z = array![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>()];
            let t = 0.05 + 0.9 * rng.random::<f64>();
            let xt = interpolate(x.view(), z.view(), t).unwrap();
            let v = conditional_velocity(x.view(), xt.view(), t).unwrap();
            let expected = &z - &x;
            for j in 0..2 {
                assert!((v[j] - expected[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn score_velocity_conversion_standard_case() {
        // v* = 0 at (x_t=1, t=0.5) for standard-normal data: s = -2.
        let v = array![0.0];
        let xt = array![1.0];
        let s = score_from_velocity(v.view(), xt.view(), 0.5).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-12);
        let spec = GaussianMixtureSpec::g1(&[0.0], 1.0).unwrap();
        let s_direct = spec.marginal_score(xt.view(), 0.5).unwrap();
        assert!((s[0] - s_direct[0]).abs() < 1e-12);
    }

    #[test]
    fn conversion_round_trip() {
        let mut rng = crate::rng::stream(4, "round-trip");
        use rand::Rng;
        for _ in 0..100 {
            let v = array![rng.random::<f64>() * 4.0 - 2.0];
            let xt = array![rng.random::<f64>() * 4.0 - 2.0];
            let t = 0.05 + 0.9 * rng.random::<f64>();
            let s = score_from_velocity(v.view(), xt.view(), t).unwrap();
            let v2 = velocity_from_score(s.view(), xt.view(), t).unwrap();
            assert!((v[0] - v2[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_analytic_paths_agree_on_a_grid() {
        let spec = GaussianMixtureSpec::gm8_ring();
        for ti in 0..20 {
            let t = 0.02 + 0.96 * (ti as f64) / 19.0;
            for xi in 0..20 {
                let x = -1.5 + 3.0 * (xi as f64) / 19.0;
                let xt = array![x, 0.37 * x];
                let s_direct = spec.marginal_score(xt.view(), t).unwrap();
                let v = spec.marginal_velocity(xt.view(), t).unwrap();
                let s_via_v = score_from_velocity(v.view(), xt.view(), t).unwrap();
                for j in 0..2 {
                    assert!(
                        (s_direct[j] - s_via_v[j]).abs() < 1e-9,
                        "t={t} x={x}: {} vs {}",
                        s_direct[j],
                        s_via_v[j]
                    );
                }
            }
        }
    }

    #[test]
    fn gamma_weight_values() {
        assert_eq!(gamma_weight(0.5).unwrap(), 1.0);
        assert_eq!(gamma_weight(1.0).unwrap(), 0.0);
        assert!((gamma_weight(0.1).unwrap() - 9.0).abs() < 1e-12);
        assert!(gamma_weight(0.0).is_err());
    }

    #[test]
    fn flow_map_shifts_standard_case() {
        // Data N(2, 1), prior N(0, 1): rho(0) = rho(1) = 1, so f(x; 1, 0) = x + 2.
        let flow = LinearGaussianFlow::new(array![2.0], 1.0).unwrap();
        let f = flow.flow_map(array![0.7].view(), 1.0, 0.0);
        assert!((f[0] - 2.7).abs() < 1e-12);
    }

    #[test]
    fn flow_map_identity_and_semigroup() {
        let flow = LinearGaussianFlow::new(array![1.5, -0.5], 0.7).unwrap();
        let x = array![0.3, 1.1];
        for &t in &[0.0, 0.25, 0.9, 1.0] {
            let f = flow.flow_map(x.view(), t, t);
            for j in 0..2 {
                assert_eq!(f[j], x[j]);
            }
        }
        let full = flow.flow_map(x.view(), 1.0, 0.0);
        let half = flow.flow_map(x.view(), 1.0, 0.5);
        let composed = flow.flow_map(half.view(), 0.5, 0.0);
        for j in 0..2 {
            assert!((full[j] - composed[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn flow_map_round_trip() {
        let flow = LinearGaussianFlow::new(array![2.0], 1.3).unwrap();
        for &t in &[0.1, 0.5, 0.95] {
            let x = array![0.42];
            let fwd = flow.flow_map(x.view(), 0.0, t);
            let back = flow.flow_map(fwd.view(), t, 0.0);
            assert!((back[0] - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn average_velocity_matches_quadrature_of_marginal_velocity() {
        // (x_t - f(x_t; t, 0)) / t equals the time average of the marginal
        // velocity along the exact trajectory; midpoint rule, 1e4 nodes.
        let spec = GaussianMixtureSpec::g1(&[2.0], 1.0).unwrap();
        let flow = LinearGaussianFlow::from_g1(&spec).unwrap();
        for &(x0, t) in &[(0.8, 0.9), (-0.3, 0.5), (1.7, 0.35)] {
            let x = array![x0];
            let endpoint = flow.flow_map(x.view(), t, 0.0);
            let avg = (x[0] - endpoint[0]) / t;

            let nodes = 10_000;
            let h = t / nodes as f64;
            let mut acc = 0.0;
            for k in 0..nodes {
                let tau = (k as f64 + 0.5) * h;
                let x_tau = flow.flow_map(x.view(), t, tau);
                let v = spec.marginal_velocity(x_tau.view(), tau).unwrap();
                acc += v[0];
            }
            let quad = acc / nodes as f64;
            assert!((avg - quad).abs() < 1e-6, "avg {avg} vs quad {quad}");
        }
    }
}
