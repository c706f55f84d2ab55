//! Numeric foundation: parameter vectors, loss/gradient pairs, an Adam
//! optimizer and a central-difference gradient checker.
//!
//! Every routine here is a pure function of its inputs; repeated calls give
//! bit-identical results.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat vector of model parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// A scalar loss together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub grad: ParamVector,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam moment accumulators and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self { config, step: 0, first_moment: vec![0.0; len], second_moment: vec![0.0; len] }
    }

    /// In-place bias-corrected Adam update.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n {
            return Err(Error::LengthMismatch { context: "adam params", expected: n, got: params.len() });
        }
        if grad.len() != n {
            return Err(Error::LengthMismatch { context: "adam gradient", expected: n, got: grad.len() });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for i in 0..n {
            let g = grad[i];
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / correction1;
            let v_hat = v / correction2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Pure form of one Adam step: returns the advanced state and updated
/// parameters, leaving the inputs untouched.
pub fn adam_step(state: &OptimizerState, params: &ParamVector, grad: &[f64]) -> Result<(OptimizerState, ParamVector)> {
    let mut next_state = state.clone();
    let mut next_params = params.clone();
    next_state.apply(&mut next_params, grad)?;
    Ok((next_state, next_params))
}

/// Central-difference gradient with a fixed step `h` for every coordinate.
pub fn finite_diff_grad<F>(loss_fn: F, at: &[f64], h: f64) -> Result<ParamVector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0) || !h.is_finite() {
        return crate::error::contract(format!("finite-difference step must be positive, got {h}"));
    }
    finite_diff_with(loss_fn, at, |_| h)
}

/// Central differences with the relative step `1e-5 * max(1, |x_i|)`.
pub fn finite_diff_grad_relative<F>(loss_fn: F, at: &[f64]) -> Result<ParamVector>
where
    F: Fn(&[f64]) -> f64,
{
    finite_diff_with(loss_fn, at, relative_step)
}

pub fn relative_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

fn finite_diff_with<F, H>(loss_fn: F, at: &[f64], step: H) -> Result<ParamVector>
where
    F: Fn(&[f64]) -> f64,
    H: Fn(f64) -> f64,
{
    let mut probe = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let h = step(at[i]);
        probe[i] = at[i] + h;
        let plus = loss_fn(&probe);
        probe[i] = at[i] - h;
        let minus = loss_fn(&probe);
        probe[i] = at[i];
        for value in [plus, minus] {
            if !value.is_finite() {
                return Err(Error::NonFiniteProbe { coordinate: i, value });
            }
        }
        // (x+h) - (x-h) is not exactly 2h in floating point.
        let span = (at[i] + h) - (at[i] - h);
        grad.push((plus - minus) / span);
    }
    Ok(ParamVector(grad))
}

/// Denominators of the relative error are floored here so coordinates whose
/// true derivative is zero compare on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Symmetric relative error `|a - f| / (|a| + |f|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / (analytic.abs() + numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_relative_error: f64,
    pub worst_coordinate: Option<usize>,
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares an analytic gradient to relative-step central differences.
pub fn check_gradient<F, G>(loss_fn: F, analytic_grad_fn: G, at: &[f64], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(tol > 0.0) {
        return crate::error::contract(format!("tolerance must be positive, got {tol}"));
    }
    let analytic = analytic_grad_fn(at)?;
    if analytic.len() != at.len() {
        return Err(Error::LengthMismatch { context: "analytic gradient", expected: at.len(), got: analytic.len() });
    }
    let numeric = finite_diff_grad_relative(&loss_fn, at)?.into_inner();
    let relative_errors: Vec<f64> = analytic.iter().zip(&numeric).map(|(&a, &f)| relative_error(a, f)).collect();
    let (worst_coordinate, max_relative_error) =
        relative_errors.iter().copied().enumerate().fold((None, 0.0_f64), |(wi, wv), (i, v)| {
            if v > wv || (wi.is_none() && v >= wv) {
                (Some(i), v)
            } else {
                (wi, wv)
            }
        });
    Ok(GradCheckReport {
        passed: max_relative_error <= tol,
        max_relative_error,
        worst_coordinate,
        relative_errors,
        analytic,
        numeric,
    })
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
