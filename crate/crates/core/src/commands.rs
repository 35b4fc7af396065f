//! The four top-level operations behind the command-line verbs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::image::{list_images, SurfaceImage};
use crate::data::synth::DatasetSpec;
use crate::error::{invalid_arg, Error, Result};
use crate::metrics::{evaluate, EvalSummary, Evaluation, PixelSet};
use crate::model::Model;
use crate::scoring::{scan_image, AnomalyMap};
use crate::train::{loss_csv, train, LossRecord};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Loads every image in a dataset split directory.
pub fn load_split(dir: &Path) -> Result<Vec<SurfaceImage>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("dataset directory {} not found", dir.display())));
    }
    list_images(dir)?
        .iter()
        .map(|p| SurfaceImage::load(p).map_err(|e| Error::Data(format!("{}: {e}", p.display()))))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub losses: Vec<LossRecord>,
    pub best: Option<(usize, f64)>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains per `cfg`, writing into `cfg.out_dir`:
/// `config.toml`, `loss.csv`, `ckpt_<batch>.icad` at the configured
/// interval, `last.icad`, and `best.icad` (lowest validation loss, or the
/// last weights when no validation ran).
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    create_dir(&out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;

    let train_images = load_split(&cfg.train_dir)?;
    if train_images.is_empty() {
        return Err(Error::Data(format!("no training images in {}", cfg.train_dir.display())));
    }
    let val_images = if cfg.val_dir.is_dir() {
        load_split(&cfg.val_dir)?
    } else {
        Vec::new()
    };

    let mut checkpoints = Vec::new();
    let outcome = train(cfg, &train_images, &val_images, |p| {
        if cfg.checkpoint_every > 0 && p.record.batch % cfg.checkpoint_every == 0 {
            let path = out.join(format!("ckpt_{:06}.icad", p.record.batch));
            Checkpoint {
                model: p.model.clone(),
                config: cfg.clone(),
                optimizer: Some(p.optimizer.clone()),
            }
            .save(&path)?;
            checkpoints.push(path);
        }
        Ok(())
    })?;

    write_text(&out.join("loss.csv"), &loss_csv(&outcome.losses))?;
    let last = out.join("last.icad");
    Checkpoint {
        model: outcome.model.clone(),
        config: cfg.clone(),
        optimizer: Some(outcome.optimizer),
    }
    .save(&last)?;
    checkpoints.push(last);
    let best_model = outcome.best.as_ref().map_or(&outcome.model, |b| &b.2);
    let best = out.join("best.icad");
    Checkpoint {
        model: best_model.clone(),
        config: cfg.clone(),
        optimizer: None,
    }
    .save(&best)?;
    checkpoints.push(best);

    Ok(TrainSummary {
        out_dir: out,
        losses: outcome.losses,
        best: outcome.best.map(|(b, v, _)| (b, v)),
        checkpoints,
    })
}

/// A labelled test image.
#[derive(Clone, Debug)]
pub struct TestImage {
    pub name: String,
    pub image: SurfaceImage,
}

/// Loads a test split. Images without a `_mask` file are skipped with a warning.
pub fn load_test_split(dir: &Path) -> Result<(Vec<TestImage>, Vec<String>)> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("test directory {} not found", dir.display())));
    }
    let mut images = Vec::new();
    let mut warnings = Vec::new();
    for path in list_images(dir)? {
        let (image, has_mask) = SurfaceImage::load_with_mask(&path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if has_mask {
            images.push(TestImage {
                name: file_stem(&path),
                image,
            });
        } else {
            warnings.push(format!("{}: no label mask, image excluded", path.display()));
        }
    }
    Ok((images, warnings))
}

/// Scans every image and pools their scored pixels.
pub fn evaluate_model(
    model: &Model<f32>,
    images: &[TestImage],
    stride: usize,
    scan_batch: usize,
) -> Result<(Evaluation, Vec<AnomalyMap>, PixelSet)> {
    let mut pixels = PixelSet::default();
    let mut maps = Vec::with_capacity(images.len());
    for t in images {
        let labels = t
            .image
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{} has no labels", t.name)))?;
        let map = scan_image(model, &t.image, stride, scan_batch)?.map;
        pixels.push_map(&map, labels)?;
        maps.push(map);
    }
    let eval = evaluate(&pixels)?;
    Ok((eval, maps, pixels))
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub warnings: Vec<String>,
}

fn write_map(map: &AnomalyMap, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let amap = dir.join(format!("{stem}.amap"));
    let png = dir.join(format!("{stem}.png"));
    map.write_amap(&amap)?;
    map.to_gray().save(&png)?;
    Ok((amap, png))
}

/// Evaluates a checkpoint on a labelled test split, writing
/// `metrics.json`, `roc.csv`, `pr.csv`, optional SVG plots and
/// `maps/<image>.{amap,png}`.
pub fn cmd_eval(
    checkpoint: &Path,
    test_dir: &Path,
    out_dir: &Path,
    stride: Option<usize>,
    plots: bool,
) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let stride = stride.unwrap_or(ck.config.stride);
    let (images, mut warnings) = load_test_split(test_dir)?;
    if images.is_empty() {
        return Err(Error::Data(format!("no labelled test images in {}", test_dir.display())));
    }
    let (eval, maps, pixels) = evaluate_model(&ck.model, &images, stride, ck.config.scan_batch)?;
    if pixels.excluded_positive > 0 {
        warnings.push(format!(
            "{} defective pixels lie outside every scoring block and were excluded",
            pixels.excluded_positive
        ));
    }
    let map_dir = out_dir.join("maps");
    create_dir(&map_dir)?;
    for (t, map) in images.iter().zip(&maps) {
        write_map(map, &map_dir, &t.name)?;
    }
    eval.write(out_dir, plots)?;
    Ok(EvalReport {
        summary: eval.summary,
        warnings,
    })
}

#[derive(Clone, Debug)]
pub struct InferReport {
    pub amap: PathBuf,
    pub png: PathBuf,
    pub windows: usize,
    pub patches_per_second: f64,
}

/// Scans one image, writing `<stem>.amap` and `<stem>.png` into `out_dir`.
pub fn cmd_infer(
    checkpoint: &Path,
    image: &Path,
    out_dir: &Path,
    stride: Option<usize>,
) -> Result<InferReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let img = SurfaceImage::load(image).map_err(|e| Error::Data(format!("{}: {e}", image.display())))?;
    let report = scan_image(&ck.model, &img, stride.unwrap_or(ck.config.stride), ck.config.scan_batch)?;
    create_dir(out_dir)?;
    let (amap, png) = write_map(&report.map, out_dir, &file_stem(image))?;
    Ok(InferReport {
        amap,
        png,
        windows: report.windows,
        patches_per_second: report.patches_per_second(),
    })
}

/// Generates a synthetic dataset from a TOML spec file.
pub fn cmd_synth(spec_file: &Path, out_dir: &Path, force: bool) -> Result<DatasetSpec> {
    let text = fs::read_to_string(spec_file)
        .map_err(|e| Error::Config(format!("{}: {e}", spec_file.display())))?;
    let spec = DatasetSpec::from_toml(&text)?;
    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)
            .map_err(|e| Error::io(out_dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(invalid_arg!(
                "{} is not empty; pass --force to overwrite",
                out_dir.display()
            ));
        }
        if non_empty {
            for split in ["train", "val", "test"] {
                let dir = out_dir.join(split);
                if dir.is_dir() {
                    fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                }
            }
        }
    }
    spec.write(out_dir)?;
    Ok(spec)
}
