//! Training loops, checkpoints and prediction.
//!
//! Occupancy crops become network tensors by nearest-neighbor resizing to
//! the model's input size and mapping pixel values `[0, 255]` onto
//! `[-1, 1]`. Predictions go the other way and are ternarized with the
//! grid's banded pixel decoding.

mod checkpoint;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Expansion, Split, INPUT_CELLS};
use crate::grid::{Cell, CropWindow, OccGrid, Point2, DEFAULT_RESOLUTION};
use crate::models::{
    bce_with_logits, loss_feedforward_grad, Arch, Model, ModelError, ModelSpec, BASE_WIDTH,
    DROPOUT, INIT_STD, INPUT_SIZE,
};
use crate::nn::{Adam, Module, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data has no targets at expansion {0}")]
    MissingExpansion(Expansion),
    #[error("no training samples")]
    EmptyTrainingSet,
    #[error("non-finite loss {value} at epoch {epoch}, sample {sample}")]
    NonFiniteLoss {
        epoch: usize,
        sample: usize,
        value: f64,
    },
    #[error("checkpoint was trained for {trained}, asked to predict {requested}")]
    ExpansionMismatch {
        trained: Expansion,
        requested: Expansion,
    },
    #[error("input crop must be {expected}x{expected} cells, got {width}x{height}")]
    InputSize {
        expected: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(DatasetError),
}

impl From<DatasetError> for TrainError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::MissingExpansion(x) => TrainError::MissingExpansion(x),
            other => TrainError::Dataset(other),
        }
    }
}

/// Optimizer and schedule settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Only 1 is supported.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Dropout rate of the decoder layers that use dropout; 0 disables it.
    pub dropout: f32,
    pub init_std: f64,
    /// Weight of the L1 term in the adversarial generator objective.
    pub lambda_l1: f64,
    /// First epoch (0-based) of a linear decay of the learning rate to zero
    /// at the end of training; `None` keeps it constant.
    pub lr_decay_start: Option<usize>,
    pub expansion: Expansion,
    pub seed: u64,
    /// Base filter count of the networks.
    pub width: usize,
    pub input_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 1,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            dropout: DROPOUT,
            init_std: INIT_STD,
            lambda_l1: 100.0,
            lr_decay_start: None,
            expansion: Expansion::ALL[0],
            seed: 0,
            width: BASE_WIDTH,
            input_size: INPUT_SIZE,
        }
    }
}

impl TrainConfig {
    /// 200 epochs at full width.
    pub fn full_scale() -> Self {
        Self {
            epochs: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.batch_size != 1 {
            return bad("batch_size must be 1");
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return bad("learning_rate must be positive and betas in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.init_std > 0.0) || !(self.lambda_l1 > 0.0) {
            return bad("init_std and lambda_l1 must be positive");
        }
        Ok(())
    }

    /// Learning rate used during `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_start {
            Some(start) if epoch >= start && self.epochs > start => {
                let span = (self.epochs - start + 1) as f64;
                self.learning_rate * (1.0 - (epoch - start + 1) as f64 / span)
            }
            _ => self.learning_rate,
        }
    }

    fn optimizer(&self) -> Adam {
        Adam::new(self.learning_rate, self.beta1, self.beta2)
    }

    /// Generator schedule for `kind` at this config's width and input size.
    pub fn generator_spec(&self, kind: crate::models::ModelKind) -> Result<ModelSpec, TrainError> {
        Ok(ModelSpec::generator(kind, self.width, self.input_size)?)
    }

    pub fn discriminator_spec(&self) -> Result<ModelSpec, TrainError> {
        Ok(crate::models::patch_spec(self.width, self.input_size)?)
    }
}

/// Maps pixel value `[0, 255]` to `[-1, 1]`.
pub fn pixel_to_unit(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

/// Inverse of [`pixel_to_unit`], clamped and rounded.
pub fn unit_to_pixel(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Nearest-resizes `grid` to `size x size` and encodes it as a `1 x size x size` tensor.
pub fn grid_to_tensor(grid: &OccGrid, size: usize) -> Tensor {
    let resized = grid.resize_nearest(size);
    Tensor::from_vec(
        1,
        size,
        size,
        resized
            .encode_image()
            .into_iter()
            .map(pixel_to_unit)
            .collect(),
    )
}

/// Nearest-neighbor resample of a square single-channel image, using the
/// same index map as [`OccGrid::resize_nearest`].
pub fn resize_image<T: Copy>(src: &[T], n: usize, target: usize) -> Vec<T> {
    assert_eq!(src.len(), n * n);
    let map = |t: usize| ((2 * t + 1) * n) / (2 * target);
    let mut out = Vec::with_capacity(target * target);
    for r in 0..target {
        let row = &src[map(r) * n..(map(r) + 1) * n];
        out.extend((0..target).map(|c| row[map(c)]));
    }
    out
}

fn with_dropout(spec: &ModelSpec, p: f32) -> ModelSpec {
    let mut s = spec.clone();
    for l in &mut s.layers {
        if l.dropout > 0.0 {
            l.dropout = p;
        }
    }
    s
}

fn check_pairs(pairs: &[(OccGrid, OccGrid)], e: Expansion) -> Result<(), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if pairs.iter().any(|(_, t)| t.width() != e.cells()) {
        return Err(TrainError::MissingExpansion(e));
    }
    Ok(())
}

fn finite(loss: f64, epoch: usize, sample: usize) -> Result<f64, TrainError> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(TrainError::NonFiniteLoss {
            epoch,
            sample,
            value: loss,
        })
    }
}

/// Called after every epoch with `(epoch, mean loss)`.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, f64);

/// L1 training on the train split at `cfg.expansion`.
pub fn train_feedforward(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Checkpoint, TrainError> {
    let pairs = data.pairs(Split::Train, cfg.expansion)?;
    train_feedforward_pairs(spec, &pairs, cfg, &mut |_, _| {})
}

/// One epoch = one pass over `pairs` in a seeded shuffled order with an
/// Adam step per sample.
pub fn train_feedforward_pairs(
    spec: &ModelSpec,
    pairs: &[(OccGrid, OccGrid)],
    cfg: &TrainConfig,
    on_epoch: EpochHook,
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    check_pairs(pairs, cfg.expansion)?;
    let mut model =
        Model::build_with_std(&with_dropout(spec, cfg.dropout), cfg.seed, cfg.init_std)?;
    let size = spec.input_size;
    let mut opt = cfg.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let x = grid_to_tensor(&pairs[i].0, size);
            let t = grid_to_tensor(&pairs[i].1, size);
            model.zero_grad();
            let y = model.forward(&x)?;
            let (loss, dy) = loss_feedforward_grad(&y, &t)?;
            sum += finite(loss, epoch, i)?;
            model.backward(&dy);
            opt.step(model.params_mut());
        }
        let mean = sum / pairs.len() as f64;
        history.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(Checkpoint {
        model,
        config: cfg.clone(),
        expansion: cfg.expansion,
        epoch: cfg.epochs,
        loss_history: history,
    })
}

/// Conditional pair `[input; candidate]` fed to the discriminator.
fn pair(x: &Tensor, y: &Tensor) -> Tensor {
    Tensor::concat(x, y)
}

fn scale(mut t: Tensor, s: f32) -> Tensor {
    t.data.iter_mut().for_each(|v| *v *= s);
    t
}

/// One discriminator update on a real and a generated pair; returns the
/// mean of the two cross-entropies.
pub fn discriminator_step(
    disc: &mut Model,
    opt: &mut Adam,
    x: &Tensor,
    real: &Tensor,
    fake: &Tensor,
) -> Result<f64, TrainError> {
    disc.zero_grad();
    let logits = disc.forward(&pair(x, real))?;
    let (l_real, g) = bce_with_logits(&logits, 1.0);
    disc.backward(&scale(g, 0.5));
    let logits = disc.forward(&pair(x, fake))?;
    let (l_fake, g) = bce_with_logits(&logits, 0.0);
    disc.backward(&scale(g, 0.5));
    opt.step(disc.params_mut());
    Ok(0.5 * (l_real + l_fake))
}

/// Fraction of patch scores on the correct side of 0.5 over one real and
/// one generated pair.
pub fn discriminator_accuracy(
    disc: &Model,
    x: &Tensor,
    real: &Tensor,
    fake: &Tensor,
) -> Result<f64, TrainError> {
    let r = disc.infer(&pair(x, real))?;
    let f = disc.infer(&pair(x, fake))?;
    let right =
        r.data.iter().filter(|&&z| z > 0.0).count() + f.data.iter().filter(|&&z| z < 0.0).count();
    Ok(right as f64 / (r.len() + f.len()) as f64)
}

/// Adversarial training on the train split at `cfg.expansion`.
pub fn train_gan(
    gen_spec: &ModelSpec,
    disc_spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Checkpoint), TrainError> {
    let pairs = data.pairs(Split::Train, cfg.expansion)?;
    train_gan_pairs(gen_spec, disc_spec, &pairs, cfg, &mut |_, _| {})
}

/// Per sample: one discriminator step on (real, generated) pairs, then one
/// generator step on `BCE(D(x, G(x)), real) + lambda * L1(G(x), y)`.
///
/// The generator checkpoint's history holds the mean L1 term per epoch;
/// the discriminator's holds its mean cross-entropy.
pub fn train_gan_pairs(
    gen_spec: &ModelSpec,
    disc_spec: &ModelSpec,
    pairs: &[(OccGrid, OccGrid)],
    cfg: &TrainConfig,
    on_epoch: EpochHook,
) -> Result<(Checkpoint, Checkpoint), TrainError> {
    cfg.validate()?;
    check_pairs(pairs, cfg.expansion)?;
    if disc_spec.arch != Arch::PatchDiscriminator || disc_spec.input_size != gen_spec.input_size {
        return Err(TrainError::InvalidConfig(
            "discriminator must match the generator's input size".into(),
        ));
    }
    let mut gen =
        Model::build_with_std(&with_dropout(gen_spec, cfg.dropout), cfg.seed, cfg.init_std)?;
    let mut disc = Model::build_with_std(disc_spec, cfg.seed.wrapping_add(1), cfg.init_std)?;
    let size = gen_spec.input_size;
    let (mut opt_g, mut opt_d) = (cfg.optimizer(), cfg.optimizer());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let (mut g_hist, mut d_hist) = (Vec::new(), Vec::new());
    let lambda = cfg.lambda_l1;
    for epoch in 0..cfg.epochs {
        opt_g.lr = cfg.learning_rate_at(epoch);
        opt_d.lr = opt_g.lr;
        order.shuffle(&mut rng);
        let (mut l1_sum, mut d_sum) = (0.0, 0.0);
        for &i in &order {
            let x = grid_to_tensor(&pairs[i].0, size);
            let t = grid_to_tensor(&pairs[i].1, size);
            gen.zero_grad();
            let fake = gen.forward(&x)?;
            d_sum += finite(
                discriminator_step(&mut disc, &mut opt_d, &x, &t, &fake)?,
                epoch,
                i,
            )?;

            disc.zero_grad();
            let logits = disc.forward(&pair(&x, &fake))?;
            let (adv, g_logits) = bce_with_logits(&logits, 1.0);
            let (_, d_fake) = disc.backward(&g_logits).split(x.c);
            let (l1, mut dy) = loss_feedforward_grad(&fake, &t)?;
            finite(adv + lambda * l1, epoch, i)?;
            l1_sum += l1;
            dy.data
                .iter_mut()
                .zip(&d_fake.data)
                .for_each(|(g, a)| *g = *g * lambda as f32 + a);
            gen.backward(&dy);
            opt_g.step(gen.params_mut());
        }
        let n = pairs.len() as f64;
        g_hist.push(l1_sum / n);
        d_hist.push(d_sum / n);
        on_epoch(epoch, l1_sum / n);
    }
    let ckpt = |model, loss_history| Checkpoint {
        model,
        config: cfg.clone(),
        expansion: cfg.expansion,
        epoch: cfg.epochs,
        loss_history,
    };
    Ok((ckpt(gen, g_hist), ckpt(disc, d_hist)))
}

fn check_predict(ckpt: &Checkpoint, input: &OccGrid, e: Expansion) -> Result<(), TrainError> {
    if ckpt.expansion != e {
        return Err(TrainError::ExpansionMismatch {
            trained: ckpt.expansion,
            requested: e,
        });
    }
    if (input.width(), input.height()) != (INPUT_CELLS, INPUT_CELLS) {
        return Err(TrainError::InputSize {
            expected: INPUT_CELLS,
            width: input.width(),
            height: input.height(),
        });
    }
    Ok(())
}

/// Raw network output for `input`, resized to the target's native
/// `round(100 e)` cells per side, as 8-bit-range pixel values (not rounded).
pub fn predict_raw(
    ckpt: &Checkpoint,
    input: &OccGrid,
    e: Expansion,
) -> Result<Vec<f64>, TrainError> {
    check_predict(ckpt, input, e)?;
    let size = ckpt.spec().input_size;
    let y = ckpt.model.infer(&grid_to_tensor(input, size))?;
    let px: Vec<f64> = y
        .data
        .iter()
        .map(|&v| (v.clamp(-1.0, 1.0) as f64 + 1.0) * 127.5)
        .collect();
    Ok(resize_image(&px, size, e.cells()))
}

/// Predicted ground-truth window around the same center as `input`,
/// ternarized, `round(100 e)` cells per side at 0.05 m.
pub fn predict(ckpt: &Checkpoint, input: &OccGrid, e: Expansion) -> Result<OccGrid, TrainError> {
    check_predict(ckpt, input, e)?;
    let size = ckpt.spec().input_size;
    let y = ckpt.model.infer(&grid_to_tensor(input, size))?;
    let cells: Vec<Cell> = y
        .data
        .iter()
        .map(|&v| Cell::from_pixel(unit_to_pixel(v)))
        .collect();
    let n = e.cells();
    let half = input.width() as f64 * input.resolution() / 2.0;
    let center = Point2::new(input.origin().x + half, input.origin().y + half);
    let origin = CropWindow::expanded(center, e.factor()).origin_for(n, DEFAULT_RESOLUTION);
    OccGrid::from_cells(
        n,
        n,
        DEFAULT_RESOLUTION,
        origin,
        resize_image(&cells, size, n),
    )
    .map_err(|e| TrainError::InvalidConfig(e.to_string()))
}
