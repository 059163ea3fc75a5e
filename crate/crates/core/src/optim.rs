//! First-order optimizers. Each step consumes the accumulated gradients in
//! the store and zeroes them.

use serde::{Deserialize, Serialize};

use crate::config::Minimizer;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-7;

fn check_finite(store: &ParamStore) -> Result<()> {
    for id in store.ids() {
        if store.grad(id).data().iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(store.name(id).to_string()));
        }
    }
    Ok(())
}

/// `θ ← θ − lr·g`.
pub fn sgd_step(store: &mut ParamStore, lr: f64) -> Result<()> {
    check_finite(store)?;
    let (values, grads) = store.values_and_grads_mut();
    for (v, g) in values.iter_mut().zip(grads.iter()) {
        for (p, &d) in v.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * d;
        }
    }
    store.zero_grads();
    Ok(())
}

/// Running average of squared gradients, one tensor per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropState {
    pub mean_square: Vec<Tensor>,
}

impl RmsPropState {
    pub fn new(store: &ParamStore) -> Self {
        RmsPropState {
            mean_square: store.values().iter().map(|v| Tensor::zeros(v.shape())).collect(),
        }
    }
}

/// `v ← ρv + (1−ρ)g²;  θ ← θ − lr·g/(√v + ε)`.
pub fn rmsprop_step(store: &mut ParamStore, state: &mut RmsPropState, lr: f64, rho: f64, epsilon: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
    }
    if state.mean_square.len() != store.len() {
        return Err(Error::shape("rmsprop", "optimizer state does not match the parameters"));
    }
    check_finite(store)?;
    let (values, grads) = store.values_and_grads_mut();
    for ((v, g), ms) in values.iter_mut().zip(grads.iter()).zip(state.mean_square.iter_mut()) {
        for ((p, &d), m) in v.data_mut().iter_mut().zip(g.data()).zip(ms.data_mut()) {
            *m = rho * *m + (1.0 - rho) * d * d;
            *p -= lr * d / (m.sqrt() + epsilon);
        }
    }
    store.zero_grads();
    Ok(())
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    RmsProp { lr: f64, rho: f64, epsilon: f64, state: RmsPropState },
}

impl Optimizer {
    pub fn new(minimizer: Minimizer, lr: f64, store: &ParamStore) -> Self {
        match minimizer {
            Minimizer::Sgd => Optimizer::Sgd { lr },
            Minimizer::Rmsprop => Optimizer::RmsProp {
                lr,
                rho: DEFAULT_RHO,
                epsilon: DEFAULT_EPSILON,
                state: RmsPropState::new(store),
            },
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } | Optimizer::RmsProp { lr, .. } => *lr,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(store, *lr),
            Optimizer::RmsProp { lr, rho, epsilon, state } => rmsprop_step(store, state, *lr, *rho, *epsilon),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(values.to_vec())).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: &[f64]) {
        let (_, grads) = s.split_mut();
        grads[0].data_mut().copy_from_slice(g);
    }

    #[test]
    fn sgd_examples() {
        let mut s = store(&[1.0]);
        set_grad(&mut s, &[2.0]);
        sgd_step(&mut s, 0.1).unwrap();
        assert!((s.values()[0].data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(s.grads()[0].data(), &[0.0]);
        sgd_step(&mut s, 0.1).unwrap();
        assert!((s.values()[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_two_steps_equal_one_doubled() {
        let mut a = store(&[0.3, -1.0]);
        let mut b = a.clone();
        for _ in 0..2 {
            set_grad(&mut a, &[0.25, -0.5]);
            sgd_step(&mut a, 0.1).unwrap();
        }
        set_grad(&mut b, &[0.25, -0.5]);
        sgd_step(&mut b, 0.2).unwrap();
        for (x, y) in a.values()[0].data().iter().zip(b.values()[0].data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn rmsprop_first_step() {
        let mut s = store(&[0.0]);
        let mut st = RmsPropState::new(&s);
        set_grad(&mut s, &[1.0]);
        rmsprop_step(&mut s, &mut st, 0.001, 0.9, 1e-7).unwrap();
        assert!((st.mean_square[0].data()[0] - 0.1).abs() < 1e-15);
        let expected = -0.001 / (0.1f64.sqrt() + 1e-7);
        assert!((s.values()[0].data()[0] - expected).abs() < 1e-15);
        assert!((expected + 0.0031623).abs() < 1e-7);
    }

    #[test]
    fn rmsprop_zero_gradient_decays_state() {
        let mut s = store(&[1.5]);
        let mut st = RmsPropState::new(&s);
        st.mean_square[0].data_mut()[0] = 1.0;
        for k in 1..=3 {
            rmsprop_step(&mut s, &mut st, 0.001, 0.9, 1e-7).unwrap();
            assert!((st.mean_square[0].data()[0] - 0.9f64.powi(k)).abs() < 1e-15);
        }
        assert_eq!(s.values()[0].data(), &[1.5]);
    }

    #[test]
    fn rmsprop_step_size_is_scale_free() {
        for g in [1e-3, 1.0, 1e3] {
            let mut s = store(&[0.0]);
            let mut st = RmsPropState::new(&s);
            let mut last = 0.0;
            for _ in 0..200 {
                let before = s.values()[0].data()[0];
                set_grad(&mut s, &[g]);
                rmsprop_step(&mut s, &mut st, 0.001, 0.9, 1e-7).unwrap();
                last = before - s.values()[0].data()[0];
            }
            assert!((last - 0.001).abs() < 1e-6, "g={g}: step {last}");
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(&[1.0]);
        set_grad(&mut s, &[f64::NAN]);
        match sgd_step(&mut s, 0.1) {
            Err(Error::Divergence(name)) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.values()[0].data(), &[1.0]);
    }
}
