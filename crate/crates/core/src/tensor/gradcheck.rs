//! Central-finite-difference gradient oracles.
//!
//! Loss closures receive the *live* parameter store only. Anything a loss
//! treats as gradient-opaque must be evaluated from a frozen copy captured by
//! the closure, so that perturbing the live store moves exactly the paths the
//! analytic gradient claims to differentiate.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::Result;
use crate::tensor::param::ParamStore;

/// Central finite differences of `f` with respect to every entry of `params`.
pub fn central_diff_grads<F>(
    f: &F,
    params: &ParamStore,
    h: f64,
) -> Result<BTreeMap<String, Array2<f64>>>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let mut out = BTreeMap::new();
    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for name in names {
        let shape = params.get(&name).unwrap().dim();
        let mut grad = Array2::zeros(shape);
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let mut plus = params.clone();
                plus.get_mut(&name).unwrap()[(i, j)] += h;
                let fp = f(&plus)?;
                let mut minus = params.clone();
                minus.get_mut(&name).unwrap()[(i, j)] -= h;
                let fm = f(&minus)?;
                grad[(i, j)] = (fp - fm) / (2.0 * h);
            }
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// Largest relative error between two gradient maps,
/// `|a - b| / max(floor, |a|, |b|)` over all entries.
pub fn max_rel_err(
    a: &BTreeMap<String, Array2<f64>>,
    b: &BTreeMap<String, Array2<f64>>,
    floor: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, ga) in a {
        let gb = &b[name];
        for (x, y) in ga.iter().zip(gb.iter()) {
            let denom = floor.max(x.abs()).max(y.abs());
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

/// Flattened L2 norm of a gradient map.
pub fn grad_norm(grads: &BTreeMap<String, Array2<f64>>) -> f64 {
    grads
        .values()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Largest absolute entry of a gradient map.
pub fn grad_max_abs(grads: &BTreeMap<String, Array2<f64>>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()))
}
