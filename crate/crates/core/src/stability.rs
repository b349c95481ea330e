//! Per-component likelihood bounds and the stable/unstable test.
//!
//! All likelihoods are kept in log space. With the analytic bounds a node is
//! stable exactly when it lies inside some component's m-sigma ellipsoid.

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::types::LatentNode;

pub const DEFAULT_SIGMA: f64 = 3.0;

/// Slack on the lower bound so that points constructed on the ellipsoid
/// surface are not lost to rounding.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundsMode {
    /// Closed form over the m-sigma Mahalanobis ellipsoid.
    #[default]
    Analytic,
    /// Min and max over the training nodes that fall inside the ellipsoid.
    Empirical,
}

impl BoundsMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "analytic" => Some(BoundsMode::Analytic),
            "empirical" => Some(BoundsMode::Empirical),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BoundsMode::Analytic => "analytic",
            BoundsMode::Empirical => "empirical",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodBounds {
    /// `(a_k, b_k)` per component, log-density units.
    pub ranges: Vec<(f64, f64)>,
    pub sigma: f64,
    pub dim: usize,
}

impl LikelihoodBounds {
    pub fn k(&self) -> usize {
        self.ranges.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Component with the smallest Mahalanobis distance; lowest index on ties.
    pub best_component: usize,
    pub log_likelihoods: Vec<f64>,
    pub mahalanobis: Vec<f64>,
    pub sigma: f64,
}

fn check_sigma(m: f64) -> Result<()> {
    if m > 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("sigma level must be positive, got {m}")))
    }
}

/// `b_k` is the peak log density, `a_k = b_k − m²/2`.
pub fn likelihood_bounds(model: &GmmModel, m: f64) -> Result<LikelihoodBounds> {
    check_sigma(m)?;
    let ranges = model
        .components()
        .iter()
        .map(|c| {
            let b = c.peak_log_density();
            (b - 0.5 * m * m, b)
        })
        .collect();
    Ok(LikelihoodBounds {
        ranges,
        sigma: m,
        dim: model.dim(),
    })
}

/// Bounds taken from the training points inside each component's m-sigma
/// ellipsoid. Components with no such point keep the analytic range.
pub fn empirical_likelihood_bounds(model: &GmmModel, m: f64, points: &[Vec<f64>]) -> Result<LikelihoodBounds> {
    let mut bounds = likelihood_bounds(model, m)?;
    let mut seen: Vec<Option<(f64, f64)>> = vec![None; model.k()];
    for p in points {
        if p.len() != model.dim() {
            return Err(Error::invalid("training point dimension does not match the model"));
        }
        for (k, c) in model.components().iter().enumerate() {
            let d2 = c.mahalanobis_sq(p);
            if d2 <= m * m {
                let ll = c.peak_log_density() - 0.5 * d2;
                let r = seen[k].get_or_insert((ll, ll));
                r.0 = r.0.min(ll);
                r.1 = r.1.max(ll);
            }
        }
    }
    for (r, s) in bounds.ranges.iter_mut().zip(seen) {
        if let Some(s) = s {
            *r = s;
        }
    }
    Ok(bounds)
}

/// Classifies a raw point of the model's full dimension.
pub fn classify_point(model: &GmmModel, bounds: &LikelihoodBounds, d: &[f64]) -> Result<StabilityVerdict> {
    if bounds.k() != model.k() || bounds.dim != model.dim() {
        return Err(Error::invalid(format!(
            "bounds are for K={} dim={}, model has K={} dim={}",
            bounds.k(),
            bounds.dim,
            model.k(),
            model.dim()
        )));
    }
    if d.len() != model.dim() {
        return Err(Error::invalid(format!(
            "node has {} dimensions, model has {}",
            d.len(),
            model.dim()
        )));
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite node"));
    }
    let k = model.k();
    let mut log_likelihoods = Vec::with_capacity(k);
    let mut mahalanobis = Vec::with_capacity(k);
    let mut stable = false;
    let mut best = 0;
    for (i, (c, &(a, b))) in model.components().iter().zip(&bounds.ranges).enumerate() {
        let d2 = c.mahalanobis_sq(d);
        let ll = c.peak_log_density() - 0.5 * d2;
        if ll >= a - BOUND_SLACK && ll <= b + BOUND_SLACK {
            stable = true;
        }
        let dist = d2.sqrt();
        if dist < mahalanobis.get(best).copied().unwrap_or(f64::INFINITY) {
            best = i;
        }
        log_likelihoods.push(ll);
        mahalanobis.push(dist);
    }
    Ok(StabilityVerdict {
        stable,
        best_component: best,
        log_likelihoods,
        mahalanobis,
        sigma: bounds.sigma,
    })
}

pub fn classify(model: &GmmModel, bounds: &LikelihoodBounds, node: &LatentNode) -> Result<StabilityVerdict> {
    classify_point(model, bounds, &node.to_array())
}
