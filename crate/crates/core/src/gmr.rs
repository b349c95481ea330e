//! Gaussian mixture regression: the conditional distribution of the output
//! block given the input block of a fitted mixture.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gmm::{GaussianComponent, GmmModel};
use crate::types::{ControlVariable, CONTROL_DIM};

/// Below this best input log-density a query is flagged as out of support.
pub const OUT_OF_SUPPORT_LOG_DENSITY: f64 = -700.0;

/// Per-component conditioning terms, precomputed once per model.
#[derive(Debug, Clone)]
struct Conditional {
    input: GaussianComponent,
    out_mean: DVector<f64>,
    /// `Σ_wv Σ_vv⁻¹`
    gain: DMatrix<f64>,
    /// `Σ_ww − Σ_wv Σ_vv⁻¹ Σ_vw`
    cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Regressor {
    log_weights: Vec<f64>,
    parts: Vec<Conditional>,
    input_dim: usize,
    output_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmrPrediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Input-conditioned responsibilities `h_k(v)`, summing to one.
    pub responsibilities: Vec<f64>,
    pub component_means: Vec<DVector<f64>>,
    /// `max_k log(π_k N(v | μ_kᵛ, Σ_kᵛᵛ))`.
    pub max_input_log_density: f64,
    pub out_of_support: bool,
}

impl Regressor {
    pub fn new(model: &GmmModel) -> Result<Self> {
        let (p, q) = (model.input_dim(), model.output_dim());
        if p == 0 || q == 0 {
            return Err(Error::invalid("regression needs non-empty input and output blocks"));
        }
        let mut parts = Vec::with_capacity(model.k());
        for c in model.components() {
            let s = c.cov();
            let s_vv = s.view((0, 0), (p, p)).into_owned();
            let s_vw = s.view((0, p), (p, q)).into_owned();
            let s_ww = s.view((p, p), (q, q)).into_owned();
            let input = GaussianComponent::new(c.mean().rows(0, p).into_owned(), s_vv.clone())?;
            let chol = s_vv
                .cholesky()
                .ok_or_else(|| Error::invalid("input covariance block is not positive definite"))?;
            let x = chol.solve(&s_vw);
            let gain = x.transpose();
            let mut cov = s_ww - s_vw.transpose() * &x;
            cov = (&cov + cov.transpose()) * 0.5;
            parts.push(Conditional {
                input,
                out_mean: c.mean().rows(p, q).into_owned(),
                gain,
                cov,
            });
        }
        Ok(Regressor {
            log_weights: model.weights().iter().map(|w| w.ln()).collect(),
            parts,
            input_dim: p,
            output_dim: q,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Conditional mean and covariance of the outputs given `v`. The mean
    /// aggregates with `h_k`, the covariance with `h_k²`.
    pub fn predict(&self, v: &[f64]) -> Result<GmrPrediction> {
        if v.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "input has {} dimensions, model expects {}",
                v.len(),
                self.input_dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite regression input"));
        }
        let logs: Vec<f64> = self
            .parts
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.input.log_density(v))
            .collect();
        let responsibilities = normalized_from_logs(&logs);
        let max_input_log_density = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let vin = DVector::from_column_slice(v);
        let q = self.output_dim;
        let mut mean = DVector::zeros(q);
        let mut cov = DMatrix::zeros(q, q);
        let mut component_means = Vec::with_capacity(self.parts.len());
        for (c, &h) in self.parts.iter().zip(&responsibilities) {
            let mu = &c.out_mean + &c.gain * (&vin - c.input.mean());
            mean.axpy(h, &mu, 1.0);
            cov += &c.cov * (h * h);
            component_means.push(mu);
        }
        Ok(GmrPrediction {
            mean,
            cov,
            responsibilities,
            component_means,
            max_input_log_density,
            out_of_support: max_input_log_density < OUT_OF_SUPPORT_LOG_DENSITY,
        })
    }
}

/// `exp(l_k − logsumexp(l))`; shifting by the maximum keeps at least one
/// term at exactly `exp(0)` so nothing underflows to an all-zero vector.
pub fn normalized_from_logs(logs: &[f64]) -> Vec<f64> {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// One-off prediction; prefer a cached [`Regressor`] for repeated queries.
pub fn predict(model: &GmmModel, v: &[f64]) -> Result<GmrPrediction> {
    Regressor::new(model)?.predict(v)
}

/// Splits a 10-D prediction into a control variable, renormalizing the
/// quaternion. Returns the control and the quaternion part's original norm.
pub fn prediction_to_control(pred: &GmrPrediction) -> Result<(ControlVariable, f64)> {
    if pred.mean.len() != CONTROL_DIM {
        return Err(Error::invalid(format!(
            "prediction has {} outputs, a control variable needs {CONTROL_DIM}",
            pred.mean.len()
        )));
    }
    ControlVariable::unflatten_with_norm(pred.mean.as_slice())
}
