//! Adam, EMA shadowing, and parameter blending.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::param::ParamStore;

/// Bias-corrected Adam state.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: BTreeMap<String, Array2<f64>>,
    second_moment: BTreeMap<String, Array2<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        assert!(beta1 > 0.0 && beta1 < 1.0, "beta1 out of range");
        assert!(beta2 > 0.0 && beta2 < 1.0, "beta2 out of range");
        assert!(epsilon > 0.0, "epsilon must be positive");
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, arr) in params.iter() {
            m.insert(name.to_string(), Array2::zeros(arr.dim()));
            v.insert(name.to_string(), Array2::zeros(arr.dim()));
        }
        AdamState { first_moment: m, second_moment: v, beta1, beta2, epsilon, learning_rate }
    }

    /// Default optimizer for this crate: Adam(0.9, 0.95, 1e-8).
    pub fn with_defaults(params: &ParamStore, learning_rate: f64) -> Self {
        Self::new(params, learning_rate, 0.9, 0.95, 1e-8)
    }

    pub fn moments(&self) -> (&BTreeMap<String, Array2<f64>>, &BTreeMap<String, Array2<f64>>) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn restore_moments(
        &mut self,
        first: BTreeMap<String, Array2<f64>>,
        second: BTreeMap<String, Array2<f64>>,
    ) {
        self.first_moment = first;
        self.second_moment = second;
    }
}

/// One bias-corrected Adam update. Increments the store's step count.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Array2<f64>>,
    state: &mut AdamState,
) -> Result<()> {
    params.check_same_keys(grads.keys().map(|k| k.as_str()), "adam_step grads")?;
    params.bump_step_count();
    let t = params.step_count() as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads {
        let m = state.first_moment.get_mut(name).unwrap();
        let v = state.second_moment.get_mut(name).unwrap();
        m.zip_mut_with(g, |m, &g| *m = state.beta1 * *m + (1.0 - state.beta1) * g);
        v.zip_mut_with(g, |v, &g| *v = state.beta2 * *v + (1.0 - state.beta2) * g * g);
        let p = params.get_mut(name).unwrap();
        ndarray::Zip::from(p)
            .and(&*m)
            .and(&*v)
            .for_each(|p, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
            });
    }
    Ok(())
}

/// Exponential moving average of a parameter store.
#[derive(Debug, Clone)]
pub struct EmaState {
    shadow: BTreeMap<String, Array2<f64>>,
    pub decay: f64,
}

impl EmaState {
    /// Shadow initialized to a copy of the current parameters.
    pub fn new(params: &ParamStore, decay: f64) -> Self {
        assert!((0.0..=1.0).contains(&decay), "decay must lie in [0, 1]");
        let shadow = params
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        EmaState { shadow, decay }
    }

    pub fn shadow(&self) -> &BTreeMap<String, Array2<f64>> {
        &self.shadow
    }

    pub fn restore_shadow(&mut self, shadow: BTreeMap<String, Array2<f64>>) {
        self.shadow = shadow;
    }

    /// View the shadow as a parameter store (for evaluation).
    pub fn as_param_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        for (k, v) in &self.shadow {
            s.insert(k, v.clone()).expect("shadow keys are unique");
        }
        s
    }
}

/// shadow <- decay * shadow + (1 - decay) * param, elementwise.
pub fn ema_update(ema: &mut EmaState, params: &ParamStore) -> Result<()> {
    params.check_same_keys(ema.shadow.keys().map(|k| k.as_str()), "ema_update shadow")?;
    let decay = ema.decay;
    for (name, p) in params.iter() {
        let s = ema.shadow.get_mut(name).unwrap();
        s.zip_mut_with(p, |s, &p| *s = decay * *s + (1.0 - decay) * p);
    }
    Ok(())
}

/// psi <- lambda * psi + (1 - lambda) * theta, elementwise.
pub fn ida_blend(psi: &mut ParamStore, theta: &ParamStore, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("ida lambda {lambda} outside [0, 1]")));
    }
    psi.check_same_keys(theta.names(), "ida_blend")?;
    let names: Vec<String> = psi.names().map(|s| s.to_string()).collect();
    for name in names {
        let t = theta.get(&name).unwrap().clone();
        let p = psi.get_mut(&name).unwrap();
        p.zip_mut_with(&t, |p, &t| *p = lambda * *p + (1.0 - lambda) * t);
    }
    Ok(())
}
