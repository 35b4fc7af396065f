//! Mini-batch training on randomly placed, augmented patches.

use crate::autodiff::{Graph, Var};
use crate::baseline::AutoencoderNet;
use crate::config::RunConfig;
use crate::data::image::SurfaceImage;
use crate::data::patch::{extract_training_patch, to_batch, AugmentConfig, PatchSample};
use crate::error::{invalid_arg, Result};
use crate::model::{Model, ModelKind};
use crate::net::CompletionNet;
use crate::optim::Adam;
use crate::rng::{stream, substream, Rng};
use crate::tensor::Tensor;

use rand::Rng as _;

/// Freshly initialized model for `cfg`, seeded from its weight stream.
pub fn build_model(cfg: &RunConfig) -> Result<Model<f32>> {
    let mut rng = substream(cfg.seed, stream::WEIGHTS);
    Ok(match cfg.model {
        ModelKind::Completion => Model::Completion(CompletionNet::build_for(
            cfg.arch.layers(),
            cfg.patch_size(),
            cfg.init(),
            &mut rng,
        )?),
        ModelKind::Autoencoder => {
            Model::Autoencoder(AutoencoderNet::build(cfg.patch_size(), cfg.init(), &mut rng)?)
        }
    })
}

fn sample_patches(
    images: &[SurfaceImage],
    count: usize,
    patch: usize,
    augment: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Vec<PatchSample>> {
    (0..count)
        .map(|_| {
            let image = &images[rng.random_range(0..images.len())];
            extract_training_patch(image, patch, augment, rng)
        })
        .collect()
}

/// Fixed held-out patches: random positions, no augmentation.
pub fn validation_patches(cfg: &RunConfig, images: &[SurfaceImage]) -> Result<Vec<PatchSample>> {
    if images.is_empty() || cfg.val_patches == 0 {
        return Ok(Vec::new());
    }
    let mut rng = substream(cfg.seed, stream::VAL_PATCH);
    sample_patches(images, cfg.val_patches, cfg.patch_size(), &AugmentConfig::none(), &mut rng)
}

fn batch_loss(model: &Model<f32>, clean: &Tensor<f32>, lambda: f64, with_grad: bool) -> Result<(f64, Vec<Option<Tensor<f32>>>)> {
    let mut g = Graph::new();
    let params: Vec<Var> = model
        .parameters()
        .iter()
        .map(|p| g.leaf(p.value.clone(), with_grad))
        .collect();
    let input = g.constant(model.prepare_input(clean)?);
    let target = g.constant(clean.clone());
    let output = model.forward(&mut g, &params, input)?;
    let loss = model.loss(&mut g, target, output, lambda)?;
    let value = g.value(loss).data()[0] as f64;
    if !with_grad {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    Ok((value, params.iter().map(|&p| g.take_grad(p)).collect()))
}

/// Mean loss over `patches`, evaluated `batch` at a time.
pub fn mean_loss(model: &Model<f32>, patches: &[PatchSample], lambda: f64, batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in patches.chunks(batch.max(1)) {
        let (l, _) = batch_loss(model, &to_batch(chunk)?, lambda, false)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / patches.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// Number of optimizer steps taken after this record.
    pub batch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("batch,train_loss,val_loss\n");
    for r in records {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.batch, r.train_loss, val));
    }
    out
}

/// State handed to the progress callback after every step.
pub struct Progress<'a> {
    pub record: &'a LossRecord,
    pub model: &'a Model<f32>,
    pub optimizer: &'a Adam<f32>,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
    pub losses: Vec<LossRecord>,
    /// Lowest validation loss seen, with its batch and weights.
    pub best: Option<(usize, f64, Model<f32>)>,
}

/// Trains a fresh model for `cfg.batches` steps.
pub fn train(
    cfg: &RunConfig,
    train_images: &[SurfaceImage],
    val_images: &[SurfaceImage],
    on_step: impl FnMut(&Progress) -> Result<()>,
) -> Result<TrainOutcome> {
    let model = build_model(cfg)?;
    train_model(cfg, model, train_images, val_images, on_step)
}

/// Trains `model` in place of a fresh one; used by [`train`].
pub fn train_model(
    cfg: &RunConfig,
    mut model: Model<f32>,
    train_images: &[SurfaceImage],
    val_images: &[SurfaceImage],
    mut on_step: impl FnMut(&Progress) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_images.is_empty() {
        return Err(invalid_arg!("training set is empty"));
    }
    let patch = cfg.patch_size();
    let augment = cfg.augment();
    let val = validation_patches(cfg, val_images)?;
    let mut optimizer = Adam::new(cfg.adam(), model.parameters());
    let mut losses = Vec::with_capacity(cfg.batches);
    let mut best: Option<(usize, f64, Model<f32>)> = None;
    let mut rng = substream(cfg.seed, stream::TRAIN_PATCH);

    for step in 1..=cfg.batches {
        let samples = sample_patches(train_images, cfg.batch_size, patch, &augment, &mut rng)?;
        let (train_loss, grads) = batch_loss(&model, &to_batch(&samples)?, cfg.lambda, true)?;
        optimizer.step(model.parameters_mut(), &grads)?;

        let due = cfg.validate_every > 0 && (step % cfg.validate_every == 0 || step == cfg.batches);
        let val_loss = if due && !val.is_empty() {
            Some(mean_loss(&model, &val, cfg.lambda, cfg.batch_size)?)
        } else {
            None
        };
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((step, v, model.clone()));
            }
        }
        losses.push(LossRecord {
            batch: step,
            train_loss,
            val_loss,
        });
        on_step(&Progress {
            record: losses.last().expect("just pushed"),
            model: &model,
            optimizer: &optimizer,
        })?;
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        losses,
        best,
    })
}
