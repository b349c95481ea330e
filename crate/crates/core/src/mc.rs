//! Monte-Carlo baseline: an MLP scores joint nodes and the best of N random
//! candidate controls is returned.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quat::MIN_QUAT_NORM;
use crate::textfmt::{Reader, Writer};
use crate::types::{ControlVariable, Features, LatentNode, CONTROL_DIM, FEATURE_DIM, NODE_DIM};

pub const MC_SAMPLE_COUNTS: [usize; 8] = [50, 100, 200, 500, 1000, 2000, 5000, 10000];

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Positives used per fit, taken evenly across the input.
    pub max_positives: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![128, 64],
            learning_rate: 0.05,
            epochs: 400,
            seed: 0,
            max_positives: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Fully connected scorer with tanh hidden layers and a linear output.
/// Inputs are standardized by a fixed affine map taken from the training
/// positives.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub shift: DVector<f64>,
    pub scale: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBounds {
    pub min: [f64; CONTROL_DIM],
    pub max: [f64; CONTROL_DIM],
}

#[derive(Debug, Clone)]
pub struct MlpTraining {
    pub model: MlpModel,
    pub bounds: SampleBounds,
    /// Loss before training and after every epoch.
    pub losses: Vec<f64>,
}

impl SampleBounds {
    pub fn from_nodes(nodes: &[LatentNode]) -> Result<Self> {
        let mut min = [f64::INFINITY; CONTROL_DIM];
        let mut max = [f64::NEG_INFINITY; CONTROL_DIM];
        for n in nodes {
            for (i, x) in n.w.flatten().into_iter().enumerate() {
                min[i] = min[i].min(x);
                max[i] = max[i].max(x);
            }
        }
        let b = SampleBounds { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.iter().chain(&self.max).any(|x| !x.is_finite()) {
            return Err(Error::invalid("sample bounds need at least one finite node"));
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| a > b) {
            return Err(Error::invalid("sample bounds have min > max"));
        }
        if self.min == self.max {
            return Err(Error::invalid("sample bounds are degenerate in every dimension"));
        }
        Ok(())
    }

    /// Uniform draw in the box; the quaternion part is redrawn until it can
    /// be normalized, then normalized.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; CONTROL_DIM]> {
        let mut w = [0.0; CONTROL_DIM];
        for _ in 0..1000 {
            for (i, x) in w.iter_mut().enumerate() {
                *x = if self.min[i] < self.max[i] {
                    rng.random_range(self.min[i]..=self.max[i])
                } else {
                    self.min[i]
                };
            }
            let n = w[..4].iter().map(|x| x * x).sum::<f64>().sqrt();
            if n >= MIN_QUAT_NORM {
                w[..4].iter_mut().for_each(|x| *x /= n);
                return Ok(w);
            }
        }
        Err(Error::invalid("sample bounds only admit degenerate quaternions"))
    }
}

fn xavier(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = (6.0 / (inp + out) as f64).sqrt();
    DMatrix::from_fn(out, inp, |_, _| rng.random_range(-a..a))
}

impl MlpModel {
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|p| Layer {
                weight: xavier(p[1], p[0], &mut rng),
                bias: DVector::zeros(p[1]),
            })
            .collect();
        Ok(MlpModel {
            layers,
            shift: DVector::zeros(sizes[0]),
            scale: DVector::from_element(sizes[0], 1.0),
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weight.ncols()];
        s.extend(self.layers.iter().map(|l| l.weight.nrows()));
        s
    }

    fn standardize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for (r, mut row) in z.row_iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v = (*v - self.shift[r]) / self.scale[r]);
        }
        z
    }

    /// Activations of every layer for a batch given column-wise, already
    /// standardized. Element 0 is the input itself.
    fn forward_all(&self, z: DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![z];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = &l.weight * acts.last().unwrap();
            for mut col in a.column_iter_mut() {
                col += &l.bias;
            }
            if i < last {
                a.apply(|v| *v = v.tanh());
            }
            acts.push(a);
        }
        acts
    }

    /// Scores for a batch of raw inputs, one per column.
    pub fn score_batch(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let acts = self.forward_all(self.standardize(x));
        acts.last().unwrap().iter().copied().collect()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.score_batch(&DMatrix::from_column_slice(x.len(), 1, x))[0]
    }

    /// Mean squared error and its gradient over standardized inputs.
    fn loss_and_grad(&self, z: &DMatrix<f64>, targets: &[f64]) -> (f64, Vec<Layer>) {
        let n = targets.len() as f64;
        let acts = self.forward_all(z.clone());
        let out = acts.last().unwrap();
        let mut delta = DMatrix::from_fn(1, targets.len(), |_, j| out[(0, j)] - targets[j]);
        let loss = delta.iter().map(|e| e * e).sum::<f64>() / n;
        delta *= 2.0 / n;
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = &acts[i];
            let gw = &delta * input.transpose();
            let gb = delta.column_sum();
            if i > 0 {
                let mut back = self.layers[i].weight.transpose() * &delta;
                back.zip_apply(input, |d, a| *d *= 1.0 - a * a);
                delta = back;
            }
            grads.push(Layer { weight: gw, bias: gb });
        }
        grads.reverse();
        (loss, grads)
    }

    fn step(&mut self, grads: &[Layer], lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            l.weight -= &g.weight * lr;
            l.bias.axpy(-lr, &g.bias, 1.0);
        }
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

fn evenly_spaced(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * n / max).collect()
    }
}

/// Positives are the nodes (target 1); each gets one negative with its
/// control redrawn uniformly in the sample bounds (target 0).
pub fn train_mlp(nodes: &[LatentNode], cfg: &MlpConfig) -> Result<MlpTraining> {
    if nodes.len() < 10 {
        return Err(Error::invalid(format!("need at least 10 nodes, got {}", nodes.len())));
    }
    if cfg.learning_rate <= 0.0 || !cfg.learning_rate.is_finite() {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let bounds = SampleBounds::from_nodes(nodes)?;
    let picked = evenly_spaced(nodes.len(), cfg.max_positives.max(10));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d63);
    let n = picked.len();
    let mut x = DMatrix::zeros(NODE_DIM, 2 * n);
    let mut targets = vec![0.0; 2 * n];
    for (j, &i) in picked.iter().enumerate() {
        let d = nodes[i].to_array();
        x.column_mut(j).copy_from_slice(&d);
        targets[j] = 1.0;
        let mut neg = d;
        neg[FEATURE_DIM..].copy_from_slice(&bounds.sample(&mut rng)?);
        x.column_mut(n + j).copy_from_slice(&neg);
    }

    let mut sizes = vec![NODE_DIM];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut model = MlpModel::init(&sizes, cfg.seed)?;
    for r in 0..NODE_DIM {
        let row = x.view((r, 0), (1, n));
        let mean = row.sum() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        model.shift[r] = mean;
        model.scale[r] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
    }
    let z = model.standardize(&x);

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    let (mut loss, mut grads) = model.loss_and_grad(&z, &targets);
    losses.push(loss);
    for _ in 0..cfg.epochs {
        model.step(&grads, cfg.learning_rate);
        if !model.is_finite() {
            return Err(Error::invalid("MLP training diverged"));
        }
        (loss, grads) = model.loss_and_grad(&z, &targets);
        losses.push(loss);
    }
    Ok(MlpTraining { model, bounds, losses })
}

/// Candidate controls drawn from a seeded stream.
pub fn mc_candidates(bounds: &SampleBounds, n: usize, seed: u64) -> Result<Vec<[f64; CONTROL_DIM]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| bounds.sample(&mut rng)).collect()
}

/// Index and score of the best candidate; lowest index wins ties.
pub fn best_candidate(mlp: &MlpModel, v: &Features, candidates: &[[f64; CONTROL_DIM]]) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to score"));
    }
    let mut x = DMatrix::zeros(NODE_DIM, candidates.len());
    for (j, c) in candidates.iter().enumerate() {
        let mut col = x.column_mut(j);
        col.rows_mut(0, FEATURE_DIM).copy_from_slice(v);
        col.rows_mut(FEATURE_DIM, CONTROL_DIM).copy_from_slice(c);
    }
    let scores = mlp.score_batch(&x);
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((best, scores[best]))
}

pub fn mc_predict(mlp: &MlpModel, bounds: &SampleBounds, v: &Features, n_samples: usize, seed: u64) -> Result<ControlVariable> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let cands = mc_candidates(bounds, n_samples, seed)?;
    let (i, _) = best_candidate(mlp, v, &cands)?;
    ControlVariable::unflatten(&cands[i])
}

pub fn mc_to_text(mlp: &MlpModel, bounds: &SampleBounds) -> String {
    let mut w = Writer::new("mlp", 1);
    let sizes = mlp.sizes();
    w.record(
        "dims",
        &[("layers", sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "))],
    );
    w.record("shift", &[]);
    w.row(mlp.shift.iter().copied());
    w.record("scale", &[]);
    w.row(mlp.scale.iter().copied());
    for (i, l) in mlp.layers.iter().enumerate() {
        w.matrix(&format!("weight{i}"), l.weight.nrows(), l.weight.ncols(), |r, c| l.weight[(r, c)]);
        w.matrix(&format!("bias{i}"), 1, l.bias.len(), |_, c| l.bias[c]);
    }
    w.record("bounds", &[]);
    w.row(bounds.min);
    w.row(bounds.max);
    w.finish()
}

pub fn mc_from_text(name: &str, text: &str) -> Result<(MlpModel, SampleBounds)> {
    let mut rd = Reader::new(name, text, "mlp", 1)?;
    let dims = rd.record("dims")?;
    let sizes = dims
        .get("layers")?
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::parse(&dims.location, "bad layer sizes"))?;
    if sizes.first() != Some(&NODE_DIM) || sizes.last() != Some(&1) {
        return Err(Error::schema(format!("{}: layers must run {NODE_DIM} -> 1", dims.location)));
    }
    let mut mlp = MlpModel::init(&sizes, 0)?;
    rd.record("shift")?;
    mlp.shift = DVector::from_vec(rd.row(NODE_DIM)?);
    rd.record("scale")?;
    mlp.scale = DVector::from_vec(rd.row(NODE_DIM)?);
    if mlp.scale.iter().any(|s| *s <= 0.0) {
        return Err(Error::schema(format!("{name}: input scales must be positive")));
    }
    for (i, p) in sizes.windows(2).enumerate() {
        let wv = rd.matrix(&format!("weight{i}"), p[1], p[0])?;
        let bv = rd.matrix(&format!("bias{i}"), 1, p[1])?;
        mlp.layers[i] = Layer {
            weight: DMatrix::from_row_slice(p[1], p[0], &wv),
            bias: DVector::from_vec(bv),
        };
    }
    rd.record("bounds")?;
    let mut bounds = SampleBounds {
        min: [0.0; CONTROL_DIM],
        max: [0.0; CONTROL_DIM],
    };
    bounds.min.copy_from_slice(&rd.row(CONTROL_DIM)?);
    bounds.max.copy_from_slice(&rd.row(CONTROL_DIM)?);
    bounds.validate()?;
    Ok((mlp, bounds))
}

pub fn save_mc(path: impl AsRef<Path>, mlp: &MlpModel, bounds: &SampleBounds) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, mc_to_text(mlp, bounds)).map_err(|e| Error::io(path, e))
}

pub fn load_mc(path: impl AsRef<Path>) -> Result<(MlpModel, SampleBounds)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    mc_from_text(&path.display().to_string(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quaternion;
    use crate::types::Wrench;

    fn toy_nodes(n: usize, seed: u64) -> Vec<LatentNode> {
        // Force tracks the first feature; everything else is fixed.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s: f64 = rng.random_range(0.0..1.0);
                let mut v = [0.0; FEATURE_DIM];
                v[0] = s;
                v[1] = rng.random_range(-0.1..0.1);
                let q = Quaternion::from_axis_angle([1.0, 0.0, 0.0], 10.0 * s).unwrap();
                let w = ControlVariable {
                    p: q,
                    f: Wrench::new([0.0, 0.0, 2.0 + 8.0 * s], [0.0; 3]).unwrap(),
                };
                LatentNode::new(v, w).unwrap()
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = MlpModel::init(&[4, 3, 2, 1], 5).unwrap();
        for l in &mut m.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let z = DMatrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let t = [1.0, 0.0, 1.0, 0.0, 0.5];
        let (_, g) = m.loss_and_grad(&z, &t);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for li in 0..m.layers.len() {
            for idx in 0..m.layers[li].weight.len() + m.layers[li].bias.len() {
                let nw = m.layers[li].weight.len();
                let mut plus = m.clone();
                let mut minus = m.clone();
                let (an, p, q) = if idx < nw {
                    (g[li].weight[idx], &mut plus.layers[li].weight[idx], &mut minus.layers[li].weight[idx])
                } else {
                    (g[li].bias[idx - nw], &mut plus.layers[li].bias[idx - nw], &mut minus.layers[li].bias[idx - nw])
                };
                *p += h;
                *q -= h;
                let fd = (plus.loss_and_grad(&z, &t).0 - minus.loss_and_grad(&z, &t).0) / (2.0 * h);
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "relative error {worst}");
    }

    #[test]
    fn training_separates_positives_from_negatives() {
        let nodes = toy_nodes(300, 1);
        let cfg = MlpConfig {
            hidden: vec![16, 8],
            epochs: 300,
            learning_rate: 0.1,
            ..MlpConfig::default()
        };
        let t = train_mlp(&nodes, &cfg).unwrap();
        assert!(t.losses.windows(2).all(|w| w[1] <= w[0] + 1e-12), "loss increased");
        assert!(t.losses.last().unwrap() < &t.losses[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut pos, mut neg) = (0.0, 0.0);
        for n in &nodes {
            pos += t.model.score(&n.to_array());
            let mut d = n.to_array();
            d[FEATURE_DIM..].copy_from_slice(&t.bounds.sample(&mut rng).unwrap());
            neg += t.model.score(&d);
        }
        assert!(pos > neg, "{pos} vs {neg}");
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let nodes = toy_nodes(20, 2);
        let cfg = MlpConfig {
            epochs: 0,
            ..MlpConfig::default()
        };
        let t = train_mlp(&nodes, &cfg).unwrap();
        let init = MlpModel::init(&[NODE_DIM, 128, 64, 1], cfg.seed).unwrap();
        assert_eq!(t.model.layers, init.layers);
        assert_eq!(t.losses.len(), 1);
    }

    #[test]
    fn precondition_errors() {
        assert!(train_mlp(&toy_nodes(9, 1), &MlpConfig::default()).is_err());
        let same: Vec<LatentNode> = std::iter::repeat_n(toy_nodes(1, 1)[0], 12).collect();
        assert!(matches!(train_mlp(&same, &MlpConfig::default()), Err(Error::InvalidArgument(_))));
    }

    fn small_trained() -> (MlpModel, SampleBounds) {
        let nodes = toy_nodes(50, 4);
        let t = train_mlp(
            &nodes,
            &MlpConfig {
                hidden: vec![8, 4],
                epochs: 20,
                ..MlpConfig::default()
            },
        )
        .unwrap();
        (t.model, t.bounds)
    }

    #[test]
    fn prediction_properties() {
        let (mlp, bounds) = small_trained();
        let v = [0.3; FEATURE_DIM];
        let one = mc_predict(&mlp, &bounds, &v, 1, 7).unwrap();
        assert_eq!(one.flatten(), mc_candidates(&bounds, 1, 7).unwrap()[0]);
        assert_eq!(mc_predict(&mlp, &bounds, &v, 200, 7).unwrap(), mc_predict(&mlp, &bounds, &v, 200, 7).unwrap());
        assert!(mc_predict(&mlp, &bounds, &v, 0, 7).is_err());

        let cands = mc_candidates(&bounds, 500, 11).unwrap();
        let (best, score) = best_candidate(&mlp, &v, &cands).unwrap();
        for c in &cands {
            let mut d = [0.0; NODE_DIM];
            d[..FEATURE_DIM].copy_from_slice(&v);
            d[FEATURE_DIM..].copy_from_slice(c);
            assert!(mlp.score(&d) <= score + 1e-12);
        }
        // The stream is prefix-stable, so more samples never score worse.
        let (_, small) = best_candidate(&mlp, &v, &cands[..50]).unwrap();
        assert!(score >= small);

        let mut doubled = cands.clone();
        doubled.extend_from_slice(&cands);
        assert_eq!(best_candidate(&mlp, &v, &doubled).unwrap(), (best, score));

        for c in &cands {
            let n = c[..4].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            for i in 4..CONTROL_DIM {
                assert!(c[i] >= bounds.min[i] && c[i] <= bounds.max[i]);
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let (mlp, bounds) = small_trained();
        let (m2, b2) = mc_from_text("t", &mc_to_text(&mlp, &bounds)).unwrap();
        assert_eq!(m2, mlp);
        assert_eq!(b2, bounds);
        assert!(mc_from_text("t", "# sonoskill mlp v1\ndims,layers=3 1\n").is_err());
    }
}
