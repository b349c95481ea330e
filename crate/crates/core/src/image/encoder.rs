//! Masked linear autoencoder.
//!
//! Each image contributes its 40 kept patches and 24 masked patches. The kept
//! patches are encoded by one affine map (patch → hidden) and pooled; one
//! affine decoder (hidden → patch) must then reconstruct every masked patch.
//! Because both maps are affine, the pooled code equals the encoding of the
//! mean kept patch, which is what training exploits.
//!
//! Features are read off per kept patch: patch `i` is encoded and decoded on
//! its own and its reconstruction is averaged over the 784 pixels.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::patch::{patchify, select_mask, MaskSelection, PATCH_LEN};
use crate::error::{Error, Result};
use crate::textfmt::{Reader, Writer};
use crate::types::{Dataset, Features, GrayImage, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Upper bound on training images, taken evenly across the dataset.
    pub max_images: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            learning_rate: 1e-3,
            epochs: 200,
            seed: 0,
            max_images: 200,
        }
    }
}

/// Affine encoder/decoder pair over flattened patches.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    /// patch_len × hidden; code = enc_weightᵀ·x + enc_bias.
    pub enc_weight: DMatrix<f64>,
    pub enc_bias: DVector<f64>,
    /// hidden × patch_len; reconstruction = dec_weightᵀ·code + dec_bias.
    pub dec_weight: DMatrix<f64>,
    pub dec_bias: DVector<f64>,
}

impl AutoencoderParams {
    fn init(patch_len: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (patch_len as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        AutoencoderParams {
            enc_weight: DMatrix::from_fn(patch_len, hidden, |_, _| u.sample(&mut rng)),
            enc_bias: DVector::zeros(hidden),
            dec_weight: DMatrix::from_fn(hidden, patch_len, |_, _| u.sample(&mut rng)),
            dec_bias: DVector::zeros(patch_len),
        }
    }

    fn patch_len(&self) -> usize {
        self.enc_weight.nrows()
    }

    fn reconstruct(&self, x: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(x);
        let code = self.enc_weight.tr_mul(&x) + &self.enc_bias;
        self.dec_weight.tr_mul(&code) + &self.dec_bias
    }

    fn step(&mut self, g: &AutoencoderParams, lr: f64) {
        self.enc_weight -= &g.enc_weight * lr;
        self.enc_bias -= &g.enc_bias * lr;
        self.dec_weight -= &g.dec_weight * lr;
        self.dec_bias -= &g.dec_bias * lr;
    }

    fn is_finite(&self) -> bool {
        self.enc_weight.iter().all(|v| v.is_finite())
            && self.enc_bias.iter().all(|v| v.is_finite())
            && self.dec_weight.iter().all(|v| v.is_finite())
            && self.dec_bias.iter().all(|v| v.is_finite())
    }
}

/// Training set reduced to sufficient statistics: for each image the mean
/// kept patch, the mean masked patch and the masked patches' spread.
pub(crate) struct MaskedBatch {
    pooled: DMatrix<f64>,
    target: DMatrix<f64>,
    spread: f64,
}

impl MaskedBatch {
    pub(crate) fn new(patch_len: usize, samples: &[(Vec<&[f64]>, Vec<&[f64]>)]) -> Self {
        let n = samples.len();
        let mut pooled: DMatrix<f64> = DMatrix::zeros(patch_len, n);
        let mut target: DMatrix<f64> = DMatrix::zeros(patch_len, n);
        let mut spread = 0.0;
        for (col, (kept, masked)) in samples.iter().enumerate() {
            for p in kept {
                for (i, v) in p.iter().enumerate() {
                    pooled[(i, col)] += v / kept.len() as f64;
                }
            }
            for p in masked {
                for (i, v) in p.iter().enumerate() {
                    target[(i, col)] += v / masked.len() as f64;
                }
            }
            for p in masked {
                spread += p
                    .iter()
                    .enumerate()
                    .map(|(i, v): (usize, &f64)| (v - target[(i, col)]).powi(2))
                    .sum::<f64>()
                    / masked.len() as f64;
            }
        }
        MaskedBatch {
            pooled,
            target,
            spread: spread / n as f64,
        }
    }

    /// Mean over images and masked patches of the summed squared pixel error.
    pub(crate) fn loss(&self, p: &AutoencoderParams) -> f64 {
        self.loss_and_grad(p, false).0
    }

    pub(crate) fn loss_and_grad(
        &self,
        p: &AutoencoderParams,
        with_grad: bool,
    ) -> (f64, Option<AutoencoderParams>) {
        let n = self.pooled.ncols() as f64;
        let mut code = p.enc_weight.tr_mul(&self.pooled);
        for mut col in code.column_iter_mut() {
            col += &p.enc_bias;
        }
        let mut err = p.dec_weight.tr_mul(&code);
        for (mut col, tcol) in err.column_iter_mut().zip(self.target.column_iter()) {
            col += &p.dec_bias;
            col -= tcol;
        }
        let loss = err.norm_squared() / n + self.spread;
        if !with_grad {
            return (loss, None);
        }
        let g = err * (2.0 / n);
        let dec_bias = g.column_sum();
        let dec_weight = &code * g.transpose();
        let dcode = &p.dec_weight * &g;
        let enc_bias = dcode.column_sum();
        let enc_weight = &self.pooled * dcode.transpose();
        (
            loss,
            Some(AutoencoderParams {
                enc_weight,
                enc_bias,
                dec_weight,
                dec_bias,
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub params: AutoencoderParams,
    pub mask: MaskSelection,
    pub config: EncoderConfig,
}

#[derive(Debug, Clone)]
pub struct EncoderTraining {
    pub model: EncoderModel,
    /// Full-batch loss before each epoch, then after the last one.
    pub losses: Vec<f64>,
}

impl EncoderModel {
    pub fn init(cfg: &EncoderConfig) -> Result<Self> {
        if cfg.hidden == 0 {
            return Err(Error::invalid("encoder hidden width must be at least 1"));
        }
        Ok(EncoderModel {
            params: AutoencoderParams::init(PATCH_LEN, cfg.hidden, cfg.seed),
            mask: select_mask(cfg.seed),
            config: cfg.clone(),
        })
    }

    pub fn hidden(&self) -> usize {
        self.params.enc_bias.len()
    }

    /// Collapses encode → decode → pixel mean into one affine functional
    /// `u·x + k` on a patch.
    fn feature_projection(&self) -> (Vec<f64>, f64) {
        let p = &self.params;
        let len = p.patch_len() as f64;
        let dec_rows = DVector::from_iterator(
            p.dec_weight.nrows(),
            p.dec_weight.row_iter().map(|r| r.sum()),
        );
        let u = (&p.enc_weight * &dec_rows) / len;
        let k = (p.enc_bias.dot(&dec_rows) + p.dec_bias.sum()) / len;
        (u.as_slice().to_vec(), k)
    }

    /// Equivalent to [`encode_features`] with this model's frozen mask.
    pub fn encode(&self, img: &GrayImage) -> Result<Features> {
        let (u, k) = self.feature_projection();
        self.encode_with(img, &u, k)
    }

    fn encode_with(&self, img: &GrayImage, u: &[f64], k: f64) -> Result<Features> {
        let grid = patchify(img)?;
        let mut v = [0.0; FEATURE_DIM];
        for (slot, &idx) in v.iter_mut().zip(&self.mask.kept) {
            *slot = grid.patches[idx].iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + k;
        }
        Ok(v)
    }

    /// Fills `features` for every frame that carries an image. Images are
    /// dropped afterwards when `drop_images` is set.
    pub fn encode_dataset(&self, ds: &mut Dataset, drop_images: bool) -> Result<()> {
        let (u, k) = self.feature_projection();
        for s in &mut ds.subjects {
            for d in &mut s.demos {
                for f in &mut d.frames {
                    if let Some(img) = &f.image {
                        f.features = Some(self.encode_with(img, &u, k)?);
                    }
                    if drop_images {
                        f.image = None;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut w = Writer::new("encoder", 1);
        w.record(
            "dims",
            &[("patch", p.patch_len().to_string()), ("hidden", self.hidden().to_string())],
        );
        w.record(
            "train",
            &[
                ("learning_rate", crate::trajectory::fmt_num(self.config.learning_rate)),
                ("epochs", self.config.epochs.to_string()),
                ("seed", self.config.seed.to_string()),
                ("max_images", self.config.max_images.to_string()),
            ],
        );
        let kept: Vec<String> = self.mask.kept.iter().map(|i| i.to_string()).collect();
        w.record("mask", &[("seed", self.mask.seed.to_string()), ("kept", kept.join(" "))]);
        w.matrix("enc_weight", p.patch_len(), self.hidden(), |r, c| p.enc_weight[(r, c)]);
        w.matrix("enc_bias", 1, self.hidden(), |_, c| p.enc_bias[c]);
        w.matrix("dec_weight", self.hidden(), p.patch_len(), |r, c| p.dec_weight[(r, c)]);
        w.matrix("dec_bias", 1, p.patch_len(), |_, c| p.dec_bias[c]);
        w.finish()
    }

    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut rd = Reader::new(name, text, "encoder", 1)?;
        let dims = rd.record("dims")?;
        let (patch, hidden) = (dims.usize("patch")?, dims.usize("hidden")?);
        if patch != PATCH_LEN || hidden == 0 {
            return Err(Error::schema(format!(
                "{}: encoder dims patch={patch} hidden={hidden} unsupported",
                dims.location
            )));
        }
        let train = rd.record("train")?;
        let config = EncoderConfig {
            hidden,
            learning_rate: train.f64("learning_rate")?,
            epochs: train.usize("epochs")?,
            seed: train.u64("seed")?,
            max_images: train.usize("max_images")?,
        };
        let m = rd.record("mask")?;
        let kept = m
            .get("kept")?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(&m.location, "bad kept index"))?;
        let mask = MaskSelection { kept, seed: m.u64("seed")? };
        mask.validate()
            .map_err(|e| Error::schema(format!("{}: {e}", m.location)))?;
        let enc_weight = DMatrix::from_row_slice(patch, hidden, &rd.matrix("enc_weight", patch, hidden)?);
        let enc_bias = DVector::from_vec(rd.matrix("enc_bias", 1, hidden)?);
        let dec_weight = DMatrix::from_row_slice(hidden, patch, &rd.matrix("dec_weight", hidden, patch)?);
        let dec_bias = DVector::from_vec(rd.matrix("dec_bias", 1, patch)?);
        Ok(EncoderModel {
            params: AutoencoderParams { enc_weight, enc_bias, dec_weight, dec_bias },
            mask,
            config,
        })
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

/// 40 features of `img`: each kept patch is encoded, decoded, and its
/// reconstruction averaged over its 784 values.
pub fn encode_features(img: &GrayImage, enc: &EncoderModel, mask: &MaskSelection) -> Result<Features> {
    mask.validate()?;
    let grid = patchify(img)?;
    let mut v = [0.0; FEATURE_DIM];
    for (slot, &idx) in v.iter_mut().zip(&mask.kept) {
        let r = enc.params.reconstruct(&grid.patches[idx]);
        *slot = r.sum() / r.len() as f64;
    }
    Ok(v)
}

/// Masked-patch reconstruction loss over a fixed image set.
pub struct MaskedObjective {
    batch: MaskedBatch,
}

impl MaskedObjective {
    pub fn new(images: &[&GrayImage], mask: &MaskSelection) -> Result<Self> {
        mask.validate()?;
        if images.is_empty() {
            return Err(Error::invalid("objective needs at least one image"));
        }
        let masked_idx = mask.masked();
        let grids = images.iter().map(|img| patchify(img)).collect::<Result<Vec<_>>>()?;
        let samples: Vec<(Vec<&[f64]>, Vec<&[f64]>)> = grids
            .iter()
            .map(|g| {
                let kept = mask.kept.iter().map(|&i| &g.patches[i][..]).collect();
                let masked = masked_idx.iter().map(|&i| &g.patches[i][..]).collect();
                (kept, masked)
            })
            .collect();
        Ok(MaskedObjective {
            batch: MaskedBatch::new(PATCH_LEN, &samples),
        })
    }

    pub fn loss(&self, p: &AutoencoderParams) -> f64 {
        self.batch.loss(p)
    }

    pub fn loss_and_grad(&self, p: &AutoencoderParams) -> (f64, AutoencoderParams) {
        let (l, g) = self.batch.loss_and_grad(p, true);
        (l, g.expect("gradient requested"))
    }
}

/// Full-batch gradient descent on the masked-patch reconstruction loss.
pub fn train_encoder(ds: &Dataset, cfg: &EncoderConfig) -> Result<EncoderTraining> {
    let images: Vec<&GrayImage> = ds.frames().filter_map(|f| f.image.as_deref()).collect();
    if images.is_empty() {
        return Err(Error::invalid("dataset carries no images to train the encoder on"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid("encoder learning rate must be positive"));
    }
    let take = cfg.max_images.max(1).min(images.len());
    let chosen: Vec<&GrayImage> = (0..take).map(|i| images[i * images.len() / take]).collect();

    let mut model = EncoderModel::init(cfg)?;
    let objective = MaskedObjective::new(&chosen, &model.mask)?;

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let (loss, grad) = objective.loss_and_grad(&model.params);
        losses.push(loss);
        model.params.step(&grad, cfg.learning_rate);
        if !model.params.is_finite() {
            return Err(Error::invalid("encoder training diverged; lower the learning rate"));
        }
    }
    losses.push(objective.loss(&model.params));
    Ok(EncoderTraining { model, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::patch::{PATCHES, PATCH_SIDE};
    use crate::types::IMAGE_SIDE;
    use rand::Rng;

    fn random_image(seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..IMAGE_SIDE * IMAGE_SIDE).map(|_| rng.random::<f64>()).collect();
        GrayImage::new(IMAGE_SIDE, IMAGE_SIDE, data).unwrap()
    }

    fn small_model() -> EncoderModel {
        EncoderModel::init(&EncoderConfig { hidden: 8, seed: 3, ..Default::default() }).unwrap()
    }

    #[test]
    fn zero_image_with_zero_biases_gives_zero_features() {
        let m = small_model();
        let img = GrayImage::filled(IMAGE_SIDE, IMAGE_SIDE, 0.0);
        assert_eq!(encode_features(&img, &m, &m.mask).unwrap(), [0.0; FEATURE_DIM]);
        assert_eq!(m.encode(&img).unwrap(), [0.0; FEATURE_DIM]);
    }

    #[test]
    fn fast_path_matches_literal_path() {
        let mut m = small_model();
        m.params.enc_bias.fill(0.3);
        m.params.dec_bias.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).sin());
        let img = random_image(9);
        let a = encode_features(&img, &m, &m.mask).unwrap();
        let b = m.encode(&img).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn masked_patches_do_not_matter() {
        let m = small_model();
        let img = random_image(1);
        let mut grid = patchify(&img).unwrap();
        let masked = m.mask.masked();
        let first = grid.patches[masked[0]];
        for w in masked.windows(2) {
            grid.patches[w[0]] = grid.patches[w[1]];
        }
        grid.patches[*masked.last().unwrap()] = first;
        let shuffled = crate::image::unpatchify(&grid).unwrap();
        assert_eq!(m.encode(&img).unwrap(), m.encode(&shuffled).unwrap());
        assert_eq!(grid.patches.len(), PATCHES);
    }

    #[test]
    fn linear_encoder_is_homogeneous() {
        let m = small_model();
        let img = random_image(2);
        let doubled = GrayImage::new(IMAGE_SIDE, IMAGE_SIDE, img.data.iter().map(|v| v * 2.0).collect()).unwrap();
        let a = encode_features(&img, &m, &m.mask).unwrap();
        let b = encode_features(&doubled, &m, &m.mask).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        // Three 4-pixel patches per sample: two kept, one masked; hidden width 2.
        let patch_len = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|_| (0..3).map(|_| (0..patch_len).map(|_| rng.random::<f64>()).collect()).collect())
            .collect();
        let samples: Vec<(Vec<&[f64]>, Vec<&[f64]>)> = raw
            .iter()
            .map(|s| (vec![&s[0][..], &s[1][..]], vec![&s[2][..]]))
            .collect();
        let batch = MaskedBatch::new(patch_len, &samples);
        let mut p = AutoencoderParams::init(patch_len, 2, 5);
        p.enc_bias = DVector::from_vec(vec![0.1, -0.2]);
        p.dec_bias = DVector::from_vec(vec![0.05, 0.0, -0.1, 0.2]);
        let (_, g) = batch.loss_and_grad(&p, true);
        let g = g.unwrap();

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut check = |analytic: f64, bump: &dyn Fn(&mut AutoencoderParams, f64)| {
            let mut plus = p.clone();
            bump(&mut plus, h);
            let mut minus = p.clone();
            bump(&mut minus, -h);
            let fd = (batch.loss(&plus) - batch.loss(&minus)) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        };
        for i in 0..patch_len {
            for j in 0..2 {
                check(g.enc_weight[(i, j)], &|q, d| q.enc_weight[(i, j)] += d);
                check(g.dec_weight[(j, i)], &|q, d| q.dec_weight[(j, i)] += d);
            }
            check(g.dec_bias[i], &|q, d| q.dec_bias[i] += d);
        }
        for j in 0..2 {
            check(g.enc_bias[j], &|q, d| q.enc_bias[j] += d);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn loss_matches_explicit_masked_mse() {
        let patch_len = 3;
        let data = [
            vec![vec![0.1, 0.2, 0.3], vec![0.5, 0.1, 0.0], vec![0.9, 0.4, 0.2], vec![0.3, 0.3, 0.8]],
            vec![vec![0.7, 0.0, 0.1], vec![0.2, 0.6, 0.4], vec![0.0, 0.5, 0.5], vec![0.6, 0.2, 0.9]],
        ];
        let samples: Vec<(Vec<&[f64]>, Vec<&[f64]>)> = data
            .iter()
            .map(|s| (vec![&s[0][..], &s[1][..]], vec![&s[2][..], &s[3][..]]))
            .collect();
        let batch = MaskedBatch::new(patch_len, &samples);
        let p = AutoencoderParams::init(patch_len, 2, 1);
        let mut explicit = 0.0;
        for s in &data {
            let pooled: Vec<f64> = (0..patch_len).map(|i| (s[0][i] + s[1][i]) / 2.0).collect();
            let r = p.reconstruct(&pooled);
            for m in &s[2..] {
                explicit += (0..patch_len).map(|i| (r[i] - m[i]).powi(2)).sum::<f64>() / 2.0;
            }
        }
        explicit /= data.len() as f64;
        assert!((batch.loss(&p) - explicit).abs() < 1e-12);
    }

    fn phantom_dataset(n: usize) -> Dataset {
        use crate::types::*;
        let meta = SubjectMeta::new(1, 30, Gender::Male, 1.8, 75.0).unwrap();
        let frames = (0..n)
            .map(|i| {
                let mut img = GrayImage::filled(IMAGE_SIDE, IMAGE_SIDE, 0.1);
                let (cr, cc) = (40.0 + 3.0 * i as f64, 60.0 + 2.0 * i as f64);
                for r in 0..IMAGE_SIDE {
                    for c in 0..IMAGE_SIDE {
                        let dr = (r as f64 - cr) / 30.0;
                        let dc = (c as f64 - cc) / 45.0;
                        if dr * dr + dc * dc < 1.0 {
                            img.set(r, c, 0.8);
                        }
                    }
                }
                Frame {
                    timestamp: i as f64,
                    image: Some(std::sync::Arc::new(img)),
                    features: None,
                    w: ControlVariable::default(),
                }
            })
            .collect();
        Dataset { subjects: vec![Subject { meta, demos: vec![Demonstration { frames }] }] }
    }

    #[test]
    fn training_reduces_loss_monotonically() {
        let ds = phantom_dataset(20);
        let cfg = EncoderConfig { epochs: 60, ..Default::default() };
        let t = train_encoder(&ds, &cfg).unwrap();
        assert_eq!(t.losses.len(), 61);
        for w in t.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
        assert!(t.losses[60] < t.losses[0]);
        assert_eq!(PATCH_SIDE, 28);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = phantom_dataset(3);
        let cfg = EncoderConfig { epochs: 0, ..Default::default() };
        let t = train_encoder(&ds, &cfg).unwrap();
        assert_eq!(t.model, EncoderModel::init(&cfg).unwrap());
        assert_eq!(t.losses.len(), 1);
    }

    #[test]
    fn no_images_is_an_error() {
        let mut ds = phantom_dataset(2);
        ds.subjects[0].demos[0].frames.iter_mut().for_each(|f| f.image = None);
        assert!(matches!(train_encoder(&ds, &EncoderConfig::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn text_round_trip() {
        let m = small_model();
        let back = EncoderModel::from_text("mem", &m.to_text()).unwrap();
        assert_eq!(back, m);
    }
}
