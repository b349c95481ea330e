//! Full-covariance Gaussian mixture over latent nodes.
//!
//! Every component keeps its lower Cholesky factor and log-determinant so
//! that densities and Mahalanobis distances cost one triangular solve.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kmeans::kmeans_pp_seeds;
use crate::textfmt::{Reader, Writer};
use crate::types::{LatentNode, CONTROL_DIM, FEATURE_DIM, NODE_DIM};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, mean has {d} entries",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite component parameters"));
        }
        let scale = cov.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
            }
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance is not positive definite"))?
            .unpack();
        let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(GaussianComponent {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular `L` with `L·Lᵀ = Σ`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `(x-μ)ᵀ Σ⁻¹ (x-μ)` by forward substitution against the factor.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let mut z = [0.0f64; NODE_DIM];
        let mut heap;
        let z: &mut [f64] = if d <= NODE_DIM {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[(i, j)] * z[j];
            }
            z[i] = s / self.chol[(i, i)];
            acc += z[i] * z[i];
        }
        acc
    }

    /// Log density at the mean.
    pub fn peak_log_density(&self) -> f64 {
        -0.5 * (self.log_det + self.dim() as f64 * LN_2PI)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.peak_log_density() - 0.5 * self.mahalanobis_sq(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
    input_dim: usize,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    /// `input_dim` splits every node into conditioning inputs (leading block)
    /// and predicted outputs (trailing block).
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>, input_dim: usize) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid("need one positive weight per component"));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::invalid("components disagree on dimension"));
        }
        if input_dim > dim {
            return Err(Error::invalid("input block wider than the model"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(GmmModel {
            weights,
            components,
            input_dim,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.dim() - self.input_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, k: usize) -> Result<&GaussianComponent> {
        self.components
            .get(k)
            .ok_or_else(|| Error::invalid(format!("component {k} out of range (K = {})", self.k())))
    }

    /// Free parameters: weights, means and the upper triangle of each covariance.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim();
        self.k() * (1 + d + d * (d + 1) / 2)
    }

    fn check_dim(&self, d: &[f64]) -> Result<()> {
        if d.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has {} dimensions, model has {}",
                d.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `log Σ_k π_k N(d | μ_k, Σ_k)` via log-sum-exp.
    pub fn log_density(&self, d: &[f64]) -> Result<f64> {
        self.check_dim(d)?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w.ln() + c.log_density(d))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    pub fn component_log_density(&self, k: usize, d: &[f64]) -> Result<f64> {
        self.check_dim(d)?;
        Ok(self.component(k)?.log_density(d))
    }

    pub fn mahalanobis(&self, k: usize, d: &[f64]) -> Result<f64> {
        self.check_dim(d)?;
        Ok(self.component(k)?.mahalanobis_sq(d).sqrt())
    }

    /// Same mixture with components reordered so that new index `i` holds old
    /// component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k() {
            return Err(Error::invalid("permutation length must equal K"));
        }
        GmmModel::new(
            perm.iter().map(|&i| self.weights[i]).collect(),
            perm.iter().map(|&i| self.components[i].clone()).collect(),
            self.input_dim,
        )
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::new("gmm", 1);
        w.record(
            "dims",
            &[
                ("k", self.k().to_string()),
                ("input", self.input_dim.to_string()),
                ("output", self.output_dim().to_string()),
            ],
        );
        w.matrix("weights", 1, self.k(), |_, c| self.weights[c]);
        for (i, c) in self.components.iter().enumerate() {
            w.record("component", &[("index", i.to_string())]);
            w.matrix("mean", 1, c.dim(), |_, j| c.mean[j]);
            w.record("cov_lower", &[("rows", c.dim().to_string())]);
            for r in 0..c.dim() {
                w.row((0..=r).map(|j| c.cov[(r, j)]));
            }
        }
        w.finish()
    }

    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut rd = Reader::new(name, text, "gmm", 1)?;
        let dims = rd.record("dims")?;
        let (k, input, output) = (dims.usize("k")?, dims.usize("input")?, dims.usize("output")?);
        let d = input + output;
        if k == 0 || d == 0 {
            return Err(Error::schema(format!("{}: empty model", dims.location)));
        }
        let weights = rd.matrix("weights", 1, k)?;
        let mut components = Vec::with_capacity(k);
        for i in 0..k {
            let rec = rd.record("component")?;
            if rec.usize("index")? != i {
                return Err(Error::parse(&rec.location, format!("expected component {i}")));
            }
            let mean = DVector::from_vec(rd.matrix("mean", 1, d)?);
            let rec = rd.record("cov_lower")?;
            if rec.usize("rows")? != d {
                return Err(Error::schema(format!("{}: covariance must have {d} rows", rec.location)));
            }
            let mut cov = DMatrix::zeros(d, d);
            for r in 0..d {
                for (j, v) in rd.row(r + 1)?.into_iter().enumerate() {
                    cov[(r, j)] = v;
                    cov[(j, r)] = v;
                }
            }
            components.push(
                GaussianComponent::new(mean, cov)
                    .map_err(|e| Error::schema(format!("{name}: component {i}: {e}")))?,
            );
        }
        GmmModel::new(weights, components, input).map_err(|e| Error::schema(format!("{name}: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&path.display().to_string(), &text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the mean per-point log-likelihood improves by less than this.
    pub tol: f64,
    /// Ridge added to every covariance diagonal after each M-step.
    pub reg: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 300,
            tol: 1e-6,
            reg: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    /// Mean per-point log-likelihood of the initial model and after every M-step.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
}

impl EmFit {
    pub fn iterations(&self) -> usize {
        self.log_likelihoods.len() - 1
    }
}

/// Fits a 40-in/10-out mixture over latent nodes.
pub fn fit_nodes(nodes: &[LatentNode], k: usize, cfg: &EmConfig) -> Result<EmFit> {
    let data = DMatrix::from_fn(NODE_DIM, nodes.len(), |r, c| nodes[c].to_array()[r]);
    let fit = fit_em(&data, FEATURE_DIM, k, cfg)?;
    debug_assert_eq!(fit.model.output_dim(), CONTROL_DIM);
    Ok(fit)
}

/// Responsibilities (K × N) and the mean log-likelihood of `data`.
fn e_step(
    data: &DMatrix<f64>,
    weights: &[f64],
    comps: &[GaussianComponent],
) -> Result<(DMatrix<f64>, f64)> {
    let (d, n) = data.shape();
    let k = comps.len();
    let mut logp = DMatrix::zeros(k, n);
    for (j, c) in comps.iter().enumerate() {
        let linv = c
            .chol
            .clone()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::invalid("singular Cholesky factor"))?;
        let mut centered = data.clone();
        for mut col in centered.column_iter_mut() {
            col -= &c.mean;
        }
        let z = &linv * &centered;
        let base = weights[j].ln() + c.peak_log_density();
        for (i, col) in z.column_iter().enumerate() {
            logp[(j, i)] = base - 0.5 * col.norm_squared();
        }
    }
    let mut total = 0.0;
    for mut col in logp.column_iter_mut() {
        let m = col.max();
        let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse;
        col.apply(|v| *v = (*v - lse).exp());
    }
    if !total.is_finite() {
        return Err(Error::invalid("non-finite log-likelihood during EM"));
    }
    Ok((logp, total / n as f64))
}

fn m_step(
    data: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    prev: &[GaussianComponent],
    reg: f64,
) -> Result<(Vec<f64>, Vec<GaussianComponent>)> {
    let (d, n) = data.shape();
    let k = prev.len();
    let mut weights = Vec::with_capacity(k);
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let r = resp.row(j);
        let nk: f64 = r.sum();
        // A component with no support keeps its parameters.
        if !(nk > 1e-10) {
            weights.push(1e-10);
            comps.push(prev[j].clone());
            continue;
        }
        let mean = (data * r.transpose()) / nk;
        let mut weighted = data.clone();
        for (i, mut col) in weighted.column_iter_mut().enumerate() {
            col -= &mean;
            col *= (r[i] / nk).sqrt();
        }
        let mut cov = &weighted * weighted.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..d {
            cov[(i, i)] += reg;
        }
        weights.push(nk / n as f64);
        comps.push(GaussianComponent::new(mean, cov)?);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((weights, comps))
}

fn renormalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
}

/// Expectation-maximization over the columns of `data` (one point per column).
///
/// Means start at k-means++ seeds, covariances at the global sample
/// covariance, weights uniform.
pub fn fit_em(data: &DMatrix<f64>, input_dim: usize, k: usize, cfg: &EmConfig) -> Result<EmFit> {
    let (d, n) = data.shape();
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} points cannot support {k} components")));
    }
    if d == 0 || input_dim > d {
        return Err(Error::invalid("bad dimension split"));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training data"));
    }
    if !(cfg.reg >= 0.0) || !(cfg.tol >= 0.0) {
        return Err(Error::invalid("reg and tol must be non-negative"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = kmeans_pp_seeds(data, k, &mut rng);
    let global_mean = data.column_mean();
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &global_mean;
    }
    let mut global_cov = (&centered * centered.transpose()) / n as f64;
    global_cov = (&global_cov + global_cov.transpose()) * 0.5;
    for i in 0..d {
        global_cov[(i, i)] += cfg.reg.max(1e-12);
    }
    let mut comps = seeds
        .iter()
        .map(|&s| GaussianComponent::new(data.column(s).into_owned(), global_cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut weights = vec![1.0 / k as f64; k];
    renormalize(&mut weights);

    let (mut resp, ll0) = e_step(data, &weights, &comps)?;
    let mut lls = vec![ll0];
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let (w, c) = m_step(data, &resp, &comps, cfg.reg)?;
        let (r, ll) = e_step(data, &w, &c)?;
        let prev = *lls.last().expect("non-empty");
        lls.push(ll);
        // The ridge makes the update inexact, so a step can lose likelihood;
        // the previous iterate is then kept.
        if ll >= prev {
            weights = w;
            comps = c;
            resp = r;
        }
        if ll - prev < cfg.tol {
            converged = true;
            break;
        }
    }
    // Summing to exactly 1 within the model's tolerance.
    renormalize(&mut weights);
    Ok(EmFit {
        model: GmmModel::new(weights, comps, input_dim)?,
        log_likelihoods: lls,
        converged,
    })
}

/// `log N(x | 0, I_d)` at the origin.
pub fn standard_peak_log_density(d: usize) -> f64 {
    -0.5 * d as f64 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    fn random_model(k: usize, d: usize, input: usize, seed: u64) -> GmmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps = (0..k)
            .map(|_| {
                let mean = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
                GaussianComponent::new(mean, random_spd(d, &mut rng)).unwrap()
            })
            .collect();
        let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        renormalize(&mut w);
        GmmModel::new(w, comps, input).unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        let c = GaussianComponent::new(DVector::zeros(50), DMatrix::identity(50, 50)).unwrap();
        let m = GmmModel::new(vec![1.0], vec![c], 40).unwrap();
        let expected = -25.0 * (2.0 * PI).ln();
        assert!((m.log_density(&[0.0; 50]).unwrap() - expected).abs() < 1e-12);
        assert_eq!(standard_peak_log_density(50), expected);
        let mut e = [0.0; 50];
        e[7] = 1.0;
        assert!((m.mahalanobis(0, &e).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(m.mahalanobis(0, &[0.0; 50]).unwrap(), 0.0);
    }

    #[test]
    fn cached_log_det_matches_dense_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cov = random_spd(6, &mut rng);
        let c = GaussianComponent::new(DVector::zeros(6), cov.clone()).unwrap();
        assert!((c.log_det() - cov.determinant().ln()).abs() < 1e-9);
    }

    #[test]
    fn mahalanobis_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(3, 50, 40, 6);
        for _ in 0..20 {
            let x: Vec<f64> = (0..50).map(|_| rng.random_range(-4.0..4.0)).collect();
            for k in 0..3 {
                let c = m.component(k).unwrap();
                let diff = DVector::from_vec(x.clone()) - c.mean();
                let inv = c.cov().clone().try_inverse().unwrap();
                let oracle = (diff.transpose() * inv * &diff)[(0, 0)];
                let got = m.mahalanobis(k, &x).unwrap().powi(2);
                assert!((got - oracle).abs() <= 1e-8 * oracle.max(1.0), "{got} vs {oracle}");
            }
        }
    }

    #[test]
    fn log_density_matches_naive_sum_and_bounds() {
        let m = random_model(4, 5, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let got = m.log_density(&x).unwrap();
            let naive: f64 = (0..m.k())
                .map(|k| m.weights()[k] * m.component(k).unwrap().log_density(&x).exp())
                .sum::<f64>()
                .ln();
            assert!((got - naive).abs() < 1e-9);
            for k in 0..m.k() {
                let t = m.weights()[k].ln() + m.component_log_density(k, &x).unwrap();
                assert!(got >= t);
            }
        }
    }

    #[test]
    fn log_density_is_permutation_invariant() {
        let m = random_model(4, 5, 3, 9);
        let p = m.permuted(&[2, 0, 3, 1]).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5, 0.0];
        assert!((m.log_density(&x).unwrap() - p.log_density(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_triangle_inequality() {
        let m = random_model(2, 6, 3, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = m.component(1).unwrap();
        let mean: Vec<f64> = c.mean().iter().copied().collect();
        // Distance in the Σ-metric between arbitrary points a, b: shift so one is the mean.
        let dist = |a: &[f64], b: &[f64]| {
            let x: Vec<f64> = a.iter().zip(b).zip(&mean).map(|((p, q), mu)| p - q + mu).collect();
            c.mahalanobis_sq(&x).sqrt()
        };
        for _ in 0..200 {
            let pts: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..6).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let (a, b, cc) = (&pts[0], &pts[1], &pts[2]);
            assert!(dist(a, cc) <= dist(a, b) + dist(b, cc) + 1e-9);
        }
    }

    #[test]
    fn errors_for_bad_inputs() {
        let m = random_model(2, 4, 2, 12);
        assert!(m.log_density(&[0.0; 3]).is_err());
        assert!(m.mahalanobis(2, &[0.0; 4]).is_err());
        let data = DMatrix::from_element(2, 3, 1.0);
        assert!(fit_em(&data, 1, 4, &EmConfig::default()).is_err());
        let mut bad = DMatrix::from_element(2, 5, 1.0);
        bad[(0, 0)] = f64::NAN;
        assert!(fit_em(&bad, 1, 1, &EmConfig::default()).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(GaussianComponent::new(DVector::zeros(2), asym).is_err());
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = 3;
        let n = 2000;
        let chol = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 0.6]);
        let data = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = &chol * data;
        let fit = fit_em(&data, 2, 1, &EmConfig::default()).unwrap();
        let mean = data.column_mean();
        let mut c = data.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        let scov = (&c * c.transpose()) / n as f64;
        let comp = fit.model.component(0).unwrap();
        for i in 0..d {
            let se = (scov[(i, i)] / n as f64).sqrt();
            assert!((comp.mean()[i] - mean[i]).abs() < 3.0 * se);
        }
        assert!((comp.cov() - &scov).norm() < 0.1 * scov.norm());
    }

    #[test]
    fn two_clusters_recovered_with_monotone_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 600;
        let data = DMatrix::from_fn(2, n, |_, c| {
            let s = if c % 2 == 0 { 5.0 } else { -5.0 };
            s + rng.sample::<f64, _>(StandardNormal)
        });
        let fit = fit_em(&data, 1, 2, &EmConfig::default()).unwrap();
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        for truth in [[5.0, 5.0], [-5.0, -5.0]] {
            let best = fit
                .model
                .components()
                .iter()
                .map(|c| ((c.mean()[0] - truth[0]).powi(2) + (c.mean()[1] - truth[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.5);
        }
        for w in fit.model.weights() {
            assert!((w - 0.5).abs() < 0.1);
        }
        assert!((fit.model.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_point_per_component_stays_finite() {
        let data = DMatrix::from_fn(3, 5, |r, c| (r * 5 + c) as f64 * 0.37);
        let fit = fit_em(&data, 2, 5, &EmConfig::default()).unwrap();
        assert!(fit.log_likelihoods.iter().all(|v| v.is_finite()));
        assert_eq!(fit.model.k(), 5);
    }

    #[test]
    fn text_round_trip() {
        let m = random_model(3, 5, 3, 15);
        let back = GmmModel::from_text("mem", &m.to_text()).unwrap();
        assert_eq!(back.weights(), m.weights());
        for (a, b) in back.components().iter().zip(m.components()) {
            assert_eq!(a.mean(), b.mean());
            assert_eq!(a.cov(), b.cov());
        }
    }

    #[test]
    fn sixteen_component_parameter_count() {
        let m = random_model(16, 50, 40, 16);
        assert_eq!(m.parameter_count(), 16 * (1 + 50 + 1275));
    }
}
