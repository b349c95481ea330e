//! Snapping unstable predictions onto the nearest component.

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::gmr::Regressor;
use crate::stability::{classify_point, likelihood_bounds, LikelihoodBounds, StabilityVerdict};
use crate::types::{ControlVariable, Features, LatentNode, CONTROL_DIM, FEATURE_DIM, NODE_DIM};

/// Output block of component `k` as a control variable.
pub fn component_control(model: &GmmModel, k: usize) -> Result<ControlVariable> {
    let c = model.component(k)?;
    let p = model.input_dim();
    ControlVariable::unflatten(&c.mean().as_slice()[p..])
}

/// Stable nodes pass through; unstable ones take the output mean of the
/// verdict's Mahalanobis-nearest component.
pub fn adapt(model: &GmmModel, node: &LatentNode, verdict: &StabilityVerdict) -> Result<ControlVariable> {
    if verdict.mahalanobis.len() != model.k() {
        return Err(Error::invalid("verdict was computed against a different model"));
    }
    if verdict.stable {
        Ok(node.w)
    } else {
        component_control(model, verdict.best_component)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedPrediction {
    pub control: ControlVariable,
    /// Verdict on the raw regression output, before any snap.
    pub verdict: StabilityVerdict,
    pub adapted: bool,
    pub out_of_support: bool,
}

/// Regression, stability check and adaptation with the per-model terms
/// computed once.
#[derive(Debug, Clone)]
pub struct SkillPredictor {
    model: GmmModel,
    regressor: Regressor,
    bounds: LikelihoodBounds,
    adapt: bool,
}

impl SkillPredictor {
    pub fn new(model: GmmModel, sigma: f64, adapt: bool) -> Result<Self> {
        let bounds = likelihood_bounds(&model, sigma)?;
        Self::with_bounds(model, bounds, adapt)
    }

    pub fn with_bounds(model: GmmModel, bounds: LikelihoodBounds, adapt: bool) -> Result<Self> {
        if model.input_dim() != FEATURE_DIM || model.output_dim() != CONTROL_DIM {
            return Err(Error::invalid(format!(
                "skill model must split {FEATURE_DIM}+{CONTROL_DIM}, got {}+{}",
                model.input_dim(),
                model.output_dim()
            )));
        }
        if bounds.k() != model.k() || bounds.dim != model.dim() {
            return Err(Error::invalid("bounds were built from a different model"));
        }
        let regressor = Regressor::new(&model)?;
        Ok(SkillPredictor {
            model,
            regressor,
            bounds,
            adapt,
        })
    }

    pub fn model(&self) -> &GmmModel {
        &self.model
    }

    pub fn bounds(&self) -> &LikelihoodBounds {
        &self.bounds
    }

    pub fn predict(&self, v: &Features) -> Result<AdaptedPrediction> {
        let pred = self.regressor.predict(v)?;
        let mut node = [0.0; NODE_DIM];
        node[..FEATURE_DIM].copy_from_slice(v);
        // The raw mean stands in when its quaternion part cannot be normalized.
        let control = match ControlVariable::unflatten(pred.mean.as_slice()) {
            Ok(c) => {
                node[FEATURE_DIM..].copy_from_slice(&c.flatten());
                Some(c)
            }
            Err(Error::DegenerateOrientation { .. }) => {
                node[FEATURE_DIM..].copy_from_slice(pred.mean.as_slice());
                None
            }
            Err(e) => return Err(e),
        };
        let verdict = classify_point(&self.model, &self.bounds, &node)?;
        let snap = self.adapt && (!verdict.stable || control.is_none());
        let control = if snap {
            component_control(&self.model, verdict.best_component)?
        } else {
            match control {
                Some(c) => c,
                None => ControlVariable::unflatten(pred.mean.as_slice())?,
            }
        };
        Ok(AdaptedPrediction {
            control,
            verdict,
            adapted: snap,
            out_of_support: pred.out_of_support,
        })
    }
}

/// One-off predict → classify → adapt.
pub fn predict_adapted(model: &GmmModel, bounds: &LikelihoodBounds, v: &Features) -> Result<(ControlVariable, StabilityVerdict)> {
    let p = SkillPredictor::with_bounds(model.clone(), bounds.clone(), true)?.predict(v)?;
    Ok((p.control, p.verdict))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianComponent;
    use crate::quat::Quaternion;
    use crate::stability::classify;
    use crate::types::Wrench;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node_mean(shift: f64, q: Quaternion, force: f64) -> DVector<f64> {
        let mut m = DVector::from_element(NODE_DIM, shift);
        let w = ControlVariable {
            p: q,
            f: Wrench::new([0.0, 0.0, force], [0.1, 0.0, 0.0]).unwrap(),
        };
        m.rows_mut(FEATURE_DIM, CONTROL_DIM).copy_from_slice(&w.flatten());
        m
    }

    fn two_component_model(coupled: bool) -> GmmModel {
        let mut cov = DMatrix::identity(NODE_DIM, NODE_DIM) * 0.04;
        if coupled {
            for i in 0..FEATURE_DIM {
                cov[(i, FEATURE_DIM + 6)] = 0.01;
                cov[(FEATURE_DIM + 6, i)] = 0.01;
            }
            cov[(FEATURE_DIM + 6, FEATURE_DIM + 6)] = 0.2;
        }
        let q2 = Quaternion::from_axis_angle([1.0, 0.0, 0.0], 20.0).unwrap();
        GmmModel::new(
            vec![0.4, 0.6],
            vec![
                GaussianComponent::new(node_mean(0.0, Quaternion::identity(), 5.0), cov.clone()).unwrap(),
                GaussianComponent::new(node_mean(30.0, q2, 8.0), cov).unwrap(),
            ],
            FEATURE_DIM,
        )
        .unwrap()
    }

    fn node_from(d: &[f64]) -> LatentNode {
        LatentNode::from_slice(d).unwrap()
    }

    #[test]
    fn stable_nodes_pass_through() {
        let model = two_component_model(false);
        let bounds = likelihood_bounds(&model, 3.0).unwrap();
        let n = node_from(model.components()[0].mean().as_slice());
        let v = classify(&model, &bounds, &n).unwrap();
        assert!(v.stable);
        assert_eq!(adapt(&model, &n, &v).unwrap(), n.w);
    }

    #[test]
    fn unstable_node_takes_nearest_component_mean() {
        let model = two_component_model(false);
        let bounds = likelihood_bounds(&model, 3.0).unwrap();
        let mut d: Vec<f64> = model.components()[1].mean().iter().copied().collect();
        d[0] += 5.0;
        let n = node_from(&d);
        let v = classify(&model, &bounds, &n).unwrap();
        assert!(!v.stable);
        let dists: Vec<f64> = (0..2).map(|k| model.mahalanobis(k, &n.to_array()).unwrap()).collect();
        let k = if dists[1] < dists[0] { 1 } else { 0 };
        assert_eq!(k, 1);
        let out = adapt(&model, &n, &v).unwrap();
        assert_eq!(out, component_control(&model, 1).unwrap());
        // w-marginal distance to the chosen component is zero.
        let c = model.component(1).unwrap();
        let ww = c.cov().view((FEATURE_DIM, FEATURE_DIM), (CONTROL_DIM, CONTROL_DIM)).into_owned();
        let wc = GaussianComponent::new(c.mean().rows(FEATURE_DIM, CONTROL_DIM).into_owned(), ww).unwrap();
        assert!(wc.mahalanobis_sq(&out.flatten()) < 1e-20);
    }

    #[test]
    fn single_component_always_snaps_to_its_mean() {
        let c = GaussianComponent::new(node_mean(1.0, Quaternion::identity(), 4.0), DMatrix::identity(NODE_DIM, NODE_DIM)).unwrap();
        let model = GmmModel::new(vec![1.0], vec![c], FEATURE_DIM).unwrap();
        let bounds = likelihood_bounds(&model, 1.0).unwrap();
        let n = node_from(node_mean(9.0, Quaternion::identity(), 0.0).as_slice());
        let v = classify(&model, &bounds, &n).unwrap();
        assert!(!v.stable);
        assert_eq!(adapt(&model, &n, &v).unwrap(), component_control(&model, 0).unwrap());
    }

    #[test]
    fn choice_ignores_weight_scale() {
        let model = two_component_model(false);
        let other = GmmModel::new(vec![0.9, 0.1], model.components().to_vec(), FEATURE_DIM).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let mut d: Vec<f64> = (0..NODE_DIM).map(|_| rng.random_range(-5.0..35.0)).collect();
            d[FEATURE_DIM] = 1.0;
            let n = node_from(&d);
            let a = classify(&model, &likelihood_bounds(&model, 3.0).unwrap(), &n).unwrap();
            let b = classify(&other, &likelihood_bounds(&other, 3.0).unwrap(), &n).unwrap();
            assert_eq!(a.best_component, b.best_component);
        }
    }

    #[test]
    fn block_diagonal_snap_reduces_joint_distance() {
        let model = two_component_model(false);
        let bounds = likelihood_bounds(&model, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut d: Vec<f64> = model.components()[0].mean().iter().map(|m| m + rng.random_range(-1.0..1.0)).collect();
            d[FEATURE_DIM] = 1.0;
            let n = node_from(&d);
            let v = classify(&model, &bounds, &n).unwrap();
            if v.stable {
                continue;
            }
            let out = adapt(&model, &n, &v).unwrap();
            let after = LatentNode::new(n.v, out).unwrap();
            let k = v.best_component;
            assert!(model.mahalanobis(k, &after.to_array()).unwrap() < v.mahalanobis[k]);
        }
    }

    #[test]
    fn pipeline_cases() {
        let model = two_component_model(true);
        let predictor = SkillPredictor::new(model.clone(), 3.0, true).unwrap();
        let mut v = [0.0; FEATURE_DIM];
        let p = predictor.predict(&v).unwrap();
        assert!(p.verdict.stable);
        assert!(!p.adapted);
        let want = component_control(&model, 0).unwrap();
        assert!((p.control.f.force[2] - want.f.force[2]).abs() < 1e-9);

        v.iter_mut().for_each(|x| *x = 200.0);
        let p = predictor.predict(&v).unwrap();
        assert!(!p.verdict.stable && p.adapted);
        assert_eq!(p.control, component_control(&model, p.verdict.best_component).unwrap());
        assert_eq!(p.verdict.best_component, 1);
        assert_eq!(predictor.predict(&v).unwrap(), p);

        let bounds = likelihood_bounds(&model, 3.0).unwrap();
        let (c, verdict) = predict_adapted(&model, &bounds, &v).unwrap();
        assert_eq!((c, verdict), (p.control, p.verdict));

        let raw = SkillPredictor::new(model, 3.0, false).unwrap().predict(&v).unwrap();
        assert!(!raw.adapted);
        assert!(!raw.verdict.stable);
    }

    #[test]
    fn wrong_split_is_rejected() {
        let c = GaussianComponent::new(DVector::zeros(4), DMatrix::identity(4, 4)).unwrap();
        let model = GmmModel::new(vec![1.0], vec![c], 2).unwrap();
        assert!(SkillPredictor::new(model, 3.0, true).is_err());
    }
}
