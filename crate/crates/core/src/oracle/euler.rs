//! Fixed-step explicit Euler integration of the probability-flow ODE.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Integrates `dx = v(x, t) dt` from `t_start` to `t_end` in `steps` equal
/// steps for a whole batch of rows at once.
pub fn euler_pf_ode_batch<F>(
    field: F,
    x_start: Array2<f64>,
    t_start: f64,
    t_end: f64,
    steps: usize,
) -> Result<Array2<f64>>
where
    F: Fn(&Array2<f64>, f64) -> Result<Array2<f64>>,
{
    if steps == 0 {
        return Err(Error::InvalidArgument("euler integration needs at least one step".into()));
    }
    let dt = (t_end - t_start) / steps as f64;
    let mut x = x_start;
    for k in 0..steps {
        let t = t_start + dt * k as f64;
        let v = field(&x, t)?;
        x = &x + &(v * dt);
        if !x.sum().is_finite() {
            return Err(Error::NonFinite { context: format!("euler state at step {k}") });
        }
    }
    Ok(x)
}

/// Single-trajectory wrapper around [`euler_pf_ode_batch`].
pub fn euler_pf_ode<F>(
    field: F,
    x_start: &Array1<f64>,
    t_start: f64,
    t_end: f64,
    steps: usize,
) -> Result<Array1<f64>>
where
    F: Fn(&Array1<f64>, f64) -> Result<Array1<f64>>,
{
    let x0 = x_start.clone().insert_axis(ndarray::Axis(0));
    let out = euler_pf_ode_batch(
        |x, t| {
            let row = x.row(0).to_owned();
            let v = field(&row, t)?;
            Ok(v.insert_axis(ndarray::Axis(0)))
        },
        x0,
        t_start,
        t_end,
        steps,
    )?;
    Ok(out.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::flow::LinearGaussianFlow;
    use crate::oracle::mixture::GaussianMixtureSpec;
    use ndarray::array;

    #[test]
    fn zero_field_is_identity() {
        let x = array![1.0, -2.0];
        let out = euler_pf_ode(|x, _| Ok(Array1::zeros(x.len())), &x, 1.0, 0.0, 16).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn constant_field_is_linear() {
        let x = array![0.5];
        let out = euler_pf_ode(|_, _| Ok(array![3.0]), &x, 1.0, 0.0, 64).unwrap();
        assert!((out[0] - (0.5 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn matches_analytic_flow_map_on_single_gaussian() {
        let spec = GaussianMixtureSpec::g1(&[2.0], 1.0).unwrap();
        let flow = LinearGaussianFlow::from_g1(&spec).unwrap();
        let x = array![0.9];
        let exact = flow.flow_map(x.view(), 1.0, 0.0);
        let approx = euler_pf_ode(
            |x, t| Ok(flow.velocity(x.view(), t)),
            &x,
            1.0,
            0.0,
            4096,
        )
        .unwrap();
        assert!((approx[0] - exact[0]).abs() < 1e-3, "{} vs {}", approx[0], exact[0]);
    }

    #[test]
    fn first_order_convergence() {
        // Error halves (within 10%) when the step count doubles.
        let spec = GaussianMixtureSpec::g1(&[1.5], 0.8).unwrap();
        let flow = LinearGaussianFlow::from_g1(&spec).unwrap();
        let x = array![0.4];
        let exact = flow.flow_map(x.view(), 1.0, 0.0)[0];
        let err_at = |steps: usize| {
            let got = euler_pf_ode(|x, t| Ok(flow.velocity(x.view(), t)), &x, 1.0, 0.0, steps)
                .unwrap()[0];
            (got - exact).abs()
        };
        let e1 = err_at(256);
        let e2 = err_at(512);
        let ratio = e1 / e2;
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn non_finite_state_is_an_error() {
        let x = array![1.0];
        let res = euler_pf_ode(|_, _| Ok(array![f64::INFINITY]), &x, 1.0, 0.0, 4);
        assert!(res.is_err());
    }
}
