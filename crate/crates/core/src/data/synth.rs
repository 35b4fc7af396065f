//! Procedural periodic surfaces with optional injected defects.
//!
//! Texture and defects are drawn from two independent generators split off
//! the caller's one, so the defect-free rendering of a surface is available
//! alongside the defective one and their difference is exactly the label
//! support.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::image::SurfaceImage;
use crate::error::{invalid_arg, Error, Result};
use crate::mask::{ScoreGeometry, PATCH_SIZE};
use crate::rng::{stream, substream, Rng};

/// Largest defect side the generator produces.
pub const MAX_DEFECT_SIZE: usize = 24;
pub const MIN_DEFECT_SIZE: usize = 4;

/// Clean texture is kept inside this band so that any defect contrast
/// changes every pixel of its support, even after clamping to `[-1, 1]`.
const TEXTURE_LIMIT: f64 = 0.9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Product of two orthogonal cosine gratings.
    #[default]
    Grid,
    /// Superposition of three plane waves at 60° spacing.
    Waves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefectSpec {
    pub count_min: usize,
    pub count_max: usize,
    pub size_min: usize,
    pub size_max: usize,
    /// Magnitude range; the sign is drawn per defect.
    pub contrast_min: f64,
    pub contrast_max: f64,
}

impl Default for DefectSpec {
    fn default() -> Self {
        Self {
            count_min: 1,
            count_max: 3,
            size_min: 6,
            size_max: 20,
            contrast_min: 0.4,
            contrast_max: 0.8,
        }
    }
}

impl DefectSpec {
    pub fn none() -> Self {
        Self {
            count_min: 0,
            count_max: 0,
            ..Self::default()
        }
    }

    pub fn requested(&self) -> bool {
        self.count_max > 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureSpec {
    pub family: Family,
    pub width: usize,
    pub height: usize,
    /// Pattern period in pixels.
    pub period: f64,
    /// Base orientation in degrees.
    pub orientation: f64,
    /// Per-image geometric variation in `[0, 1]`: period, orientation,
    /// phase and a smooth warp all scale with it.
    pub jitter: f64,
    /// Half-width of the uniform per-image brightness offset.
    pub brightness_jitter: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    /// Peak texture amplitude before offsets.
    pub amplitude: f64,
    pub defects: DefectSpec,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            family: Family::Grid,
            width: 256,
            height: 256,
            period: 12.0,
            orientation: 15.0,
            jitter: 0.5,
            brightness_jitter: 0.05,
            noise: 0.02,
            amplitude: 0.5,
            defects: DefectSpec::default(),
        }
    }
}

impl TextureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.period >= 2.0 && self.period.is_finite()) {
            return Err(invalid_arg!("period must be at least 2 px, got {}", self.period));
        }
        if self.width < PATCH_SIZE || self.height < PATCH_SIZE {
            return Err(invalid_arg!(
                "surfaces must be at least {PATCH_SIZE}x{PATCH_SIZE}, got {}x{}",
                self.width,
                self.height
            ));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(invalid_arg!("jitter must lie in [0, 1]"));
        }
        for (name, v) in [
            ("brightness_jitter", self.brightness_jitter),
            ("noise", self.noise),
            ("amplitude", self.amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid_arg!("{name} must be finite and non-negative"));
            }
        }
        let d = &self.defects;
        if d.count_min > d.count_max {
            return Err(invalid_arg!("defect count range is empty"));
        }
        if d.requested() {
            if d.size_min < MIN_DEFECT_SIZE || d.size_max > MAX_DEFECT_SIZE || d.size_min > d.size_max
            {
                return Err(invalid_arg!(
                    "defect sizes must satisfy {MIN_DEFECT_SIZE} <= min <= max <= {MAX_DEFECT_SIZE}"
                ));
            }
            if !(d.contrast_min > 0.0 && d.contrast_min <= d.contrast_max && d.contrast_max <= 2.0) {
                return Err(invalid_arg!("defect contrast must satisfy 0 < min <= max <= 2"));
            }
            let interior = self.interior();
            if interior.0.len() < d.size_max || interior.1.len() < d.size_max {
                return Err(invalid_arg!("surface too small to place defects in the scanned interior"));
            }
        }
        Ok(())
    }

    /// Rows and columns that every scan of this surface scores.
    pub fn interior(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let first = ScoreGeometry::default().block_range().start;
        (
            first..self.height.saturating_sub(first),
            first..self.width.saturating_sub(first),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectShape {
    /// Filled ellipse.
    Blob,
    /// Thin line segment.
    Scratch,
    /// Filled axis-aligned rectangle.
    Spot,
}

/// Placement of one defect; its support is confined to the `size x size`
/// box at `(top, left)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectRecord {
    pub shape: DefectShape,
    pub top: usize,
    pub left: usize,
    pub size: usize,
    /// Signed intensity change.
    pub contrast: f64,
    /// Orientation in radians (blob, scratch).
    pub angle: f64,
    /// Minor-to-major axis ratio (blob) or fill fraction (spot).
    pub aspect: f64,
}

impl DefectRecord {
    /// Whether the pixel centre `(y, x)` belongs to the defect.
    pub fn covers(&self, y: usize, x: usize) -> bool {
        if y < self.top || x < self.left || y >= self.top + self.size || x >= self.left + self.size {
            return false;
        }
        let half = self.size as f64 / 2.0;
        let dy = y as f64 + 0.5 - (self.top as f64 + half);
        let dx = x as f64 + 0.5 - (self.left as f64 + half);
        let (s, c) = self.angle.sin_cos();
        let along = c * dx + s * dy;
        let across = -s * dx + c * dy;
        match self.shape {
            DefectShape::Blob => {
                let a = half;
                let b = (half * self.aspect).max(1.0);
                (along / a).powi(2) + (across / b).powi(2) <= 1.0
            }
            DefectShape::Scratch => along.abs() <= half && across.abs() <= 1.0,
            DefectShape::Spot => {
                let hy = (half * self.aspect).max(1.0);
                dx.abs() <= half && dy.abs() <= hy
            }
        }
    }

    /// Adds the defect to `pixels` and marks its support in `labels`.
    pub fn render(&self, width: usize, pixels: &mut [f32], labels: &mut [u8]) {
        let height = pixels.len() / width;
        for y in self.top..(self.top + self.size).min(height) {
            for x in self.left..(self.left + self.size).min(width) {
                if self.covers(y, x) {
                    let i = y * width + x;
                    pixels[i] = (pixels[i] as f64 + self.contrast).clamp(-1.0, 1.0) as f32;
                    labels[i] = 1;
                }
            }
        }
    }
}

/// A generated surface together with its defect-free rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSurface {
    /// Defective surface with its label mask.
    pub image: SurfaceImage,
    /// The same texture before defect injection.
    pub clean: Vec<f32>,
    pub defects: Vec<DefectRecord>,
}

struct Jitter {
    period: f64,
    angle: f64,
    phase: (f64, f64),
    warp_amp: f64,
    warp_freq: (f64, f64),
    warp_phase: (f64, f64),
    offset: f64,
}

fn centred(rng: &mut Rng) -> f64 {
    rng.random_range(-1.0..=1.0)
}

fn draw_jitter(spec: &TextureSpec, rng: &mut Rng) -> Jitter {
    let j = spec.jitter;
    let mut two_pi = || centred(rng) * PI * j;
    let phase = (two_pi(), two_pi());
    let warp_phase = (two_pi(), two_pi());
    Jitter {
        period: spec.period * (1.0 + 0.1 * j * centred(rng)),
        angle: (spec.orientation + 10.0 * j * centred(rng)).to_radians(),
        phase,
        warp_amp: 0.15 * spec.period * j,
        warp_freq: (
            2.0 * PI / (spec.width as f64 * rng.random_range(0.5..=1.0)),
            2.0 * PI / (spec.height as f64 * rng.random_range(0.5..=1.0)),
        ),
        warp_phase,
        offset: spec.brightness_jitter * centred(rng),
    }
}

fn texture_value(spec: &TextureSpec, jit: &Jitter, y: f64, x: f64) -> f64 {
    let wy = y + jit.warp_amp * (x * jit.warp_freq.0 + jit.warp_phase.0).sin();
    let wx = x + jit.warp_amp * (y * jit.warp_freq.1 + jit.warp_phase.1).sin();
    let k = 2.0 * PI / jit.period;
    let wave = |theta: f64, phase: f64| {
        let (s, c) = theta.sin_cos();
        (k * (c * wx + s * wy) + phase).cos()
    };
    let v = match spec.family {
        Family::Grid => (wave(jit.angle, jit.phase.0) + wave(jit.angle + PI / 2.0, jit.phase.1)) / 2.0,
        Family::Waves => {
            (wave(jit.angle, jit.phase.0)
                + wave(jit.angle + PI / 3.0, jit.phase.1)
                + wave(jit.angle + 2.0 * PI / 3.0, jit.phase.0 + jit.phase.1))
                / 3.0
        }
    };
    spec.amplitude * v + jit.offset
}

fn draw_defect(spec: &TextureSpec, rng: &mut Rng) -> DefectRecord {
    let d = &spec.defects;
    let shape = match rng.random_range(0..3) {
        0 => DefectShape::Blob,
        1 => DefectShape::Scratch,
        _ => DefectShape::Spot,
    };
    let size = rng.random_range(d.size_min..=d.size_max);
    let (rows, cols) = spec.interior();
    let top = rng.random_range(rows.start..=rows.end - size);
    let left = rng.random_range(cols.start..=cols.end - size);
    let magnitude = rng.random_range(d.contrast_min..=d.contrast_max);
    let contrast = if rng.random() { magnitude } else { -magnitude };
    DefectRecord {
        shape,
        top,
        left,
        size,
        contrast,
        angle: rng.random_range(0.0..PI),
        aspect: rng.random_range(0.4..=1.0),
    }
}

/// Renders one surface. Deterministic for a given generator state.
pub fn generate_surface(spec: &TextureSpec, rng: &mut Rng) -> Result<GeneratedSurface> {
    spec.validate()?;
    let mut texture_rng = Rng::seed_from_u64(rng.random());
    let mut defect_rng = Rng::seed_from_u64(rng.random());

    let jit = draw_jitter(spec, &mut texture_rng);
    let noise = (spec.noise > 0.0)
        .then(|| Normal::new(0.0, spec.noise))
        .transpose()
        .map_err(|e| invalid_arg!("noise: {e}"))?;
    let (w, h) = (spec.width, spec.height);
    let mut clean = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut v = texture_value(spec, &jit, y as f64, x as f64);
            if let Some(noise) = &noise {
                v += noise.sample(&mut texture_rng);
            }
            clean.push(v.clamp(-TEXTURE_LIMIT, TEXTURE_LIMIT) as f32);
        }
    }

    let mut pixels = clean.clone();
    let mut labels = vec![0u8; w * h];
    let mut defects = Vec::new();
    if spec.defects.requested() {
        let count = defect_rng.random_range(spec.defects.count_min..=spec.defects.count_max);
        for _ in 0..count {
            let d = draw_defect(spec, &mut defect_rng);
            d.render(w, &mut pixels, &mut labels);
            defects.push(d);
        }
    }
    let image = SurfaceImage::new(w, h, pixels)?.with_labels(labels)?;
    Ok(GeneratedSurface {
        image,
        clean,
        defects,
    })
}

/// Seed, split sizes and texture for a synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub texture: TextureSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 8,
            n_val: 2,
            n_test: 4,
            texture: TextureSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.texture.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("dataset spec serializes")
    }

    fn clean_texture(&self) -> TextureSpec {
        TextureSpec {
            defects: DefectSpec::none(),
            ..self.texture.clone()
        }
    }

    pub fn train_surface(&self, index: usize) -> Result<SurfaceImage> {
        let mut rng = substream(self.seed, stream::SYNTH_TRAIN + index as u64);
        Ok(generate_surface(&self.clean_texture(), &mut rng)?.image)
    }

    pub fn val_surface(&self, index: usize) -> Result<SurfaceImage> {
        let mut rng = substream(self.seed, stream::SYNTH_VAL + index as u64);
        Ok(generate_surface(&self.clean_texture(), &mut rng)?.image)
    }

    pub fn test_surface(&self, index: usize) -> Result<GeneratedSurface> {
        let mut rng = substream(self.seed, stream::SYNTH_TEST + index as u64);
        generate_surface(&self.texture, &mut rng)
    }

    /// Writes `train/`, `val/` and `test/` (with `_mask` files) as PNG.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        self.texture.validate()?;
        for split in ["train", "val", "test"] {
            let dir = out_dir.join(split);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for i in 0..self.n_train {
            self.train_surface(i)?
                .save(&out_dir.join(format!("train/train_{i:03}.png")))?;
        }
        for i in 0..self.n_val {
            self.val_surface(i)?
                .save(&out_dir.join(format!("val/val_{i:03}.png")))?;
        }
        for i in 0..self.n_test {
            let s = self.test_surface(i)?;
            s.image.save(&out_dir.join(format!("test/test_{i:03}.png")))?;
            s.image
                .label_image()
                .expect("generated surfaces carry labels")
                .save(&out_dir.join(format!("test/test_{i:03}_mask.png")))?;
        }
        let spec_path = out_dir.join("dataset.toml");
        fs::write(&spec_path, self.to_toml()).map_err(|e| Error::io(&spec_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn still() -> TextureSpec {
        TextureSpec {
            jitter: 0.0,
            noise: 0.0,
            brightness_jitter: 0.0,
            defects: DefectSpec::none(),
            ..TextureSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed_and_varied_across_seeds() {
        let spec = still();
        let a = generate_surface(&spec, &mut seeded(1)).unwrap();
        let b = generate_surface(&spec, &mut seeded(2)).unwrap();
        assert_eq!(a.image, b.image);

        let spec = TextureSpec::default();
        let a = generate_surface(&spec, &mut seeded(1)).unwrap();
        let again = generate_surface(&spec, &mut seeded(1)).unwrap();
        let b = generate_surface(&spec, &mut seeded(2)).unwrap();
        assert_eq!(a, again);
        assert_ne!(a.image.pixels, b.image.pixels);
    }

    #[test]
    fn defect_free_spec_has_empty_labels() {
        for family in [Family::Grid, Family::Waves] {
            let spec = TextureSpec {
                family,
                defects: DefectSpec::none(),
                ..TextureSpec::default()
            };
            let s = generate_surface(&spec, &mut seeded(5)).unwrap();
            assert!(s.defects.is_empty());
            assert!(s.image.labels.unwrap().iter().all(|&v| v == 0));
            assert_eq!(s.image.pixels, s.clean);
        }
    }

    #[test]
    fn injected_dark_blob_support_matches_its_record() {
        let spec = still();
        let s = generate_surface(&spec, &mut seeded(9)).unwrap();
        let blob = DefectRecord {
            shape: DefectShape::Blob,
            top: 100,
            left: 90,
            size: 16,
            contrast: -0.8,
            angle: 0.3,
            aspect: 0.6,
        };
        let mut pixels = s.clean.clone();
        let mut labels = vec![0u8; pixels.len()];
        blob.render(spec.width, &mut pixels, &mut labels);
        let mut support = 0;
        for y in 0..spec.height {
            for x in 0..spec.width {
                let i = y * spec.width + x;
                let changed = pixels[i] != s.clean[i];
                assert_eq!(changed, labels[i] == 1, "pixel ({y}, {x})");
                assert_eq!(labels[i] == 1, blob.covers(y, x));
                if changed {
                    support += 1;
                    assert!(pixels[i] < s.clean[i]);
                }
            }
        }
        // ellipse with semi-axes 8 and 4.8: area ~121
        assert!((100..=140).contains(&support), "{support}");
    }

    #[test]
    fn generated_defects_match_labels_and_stay_in_the_interior() {
        let spec = TextureSpec::default();
        let (rows, cols) = spec.interior();
        for seed in 0..20 {
            let s = generate_surface(&spec, &mut seeded(seed)).unwrap();
            assert!(!s.defects.is_empty());
            let labels = s.image.labels.as_ref().unwrap();
            for (i, (&a, &b)) in s.image.pixels.iter().zip(&s.clean).enumerate() {
                assert_eq!(a != b, labels[i] == 1);
                if labels[i] == 1 {
                    let (y, x) = (i / spec.width, i % spec.width);
                    assert!(rows.contains(&y) && cols.contains(&x));
                }
            }
            for d in &s.defects {
                assert!((6..=20).contains(&d.size));
                assert!((0.4..=0.8).contains(&d.contrast.abs()));
            }
        }
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let bad = [
            TextureSpec {
                period: 1.5,
                ..TextureSpec::default()
            },
            TextureSpec {
                width: 100,
                ..TextureSpec::default()
            },
            TextureSpec {
                defects: DefectSpec {
                    size_max: 25,
                    ..DefectSpec::default()
                },
                ..TextureSpec::default()
            },
            TextureSpec {
                defects: DefectSpec {
                    size_min: 3,
                    ..DefectSpec::default()
                },
                ..TextureSpec::default()
            },
        ];
        for spec in bad {
            assert!(generate_surface(&spec, &mut seeded(0)).is_err());
        }
    }

    #[test]
    fn dataset_spec_toml_round_trip() {
        let spec = DatasetSpec {
            seed: 42,
            n_train: 10,
            ..DatasetSpec::default()
        };
        assert_eq!(DatasetSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let partial = DatasetSpec::from_toml("seed = 3\n[texture]\nfamily = \"waves\"\n").unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.texture.family, Family::Waves);
        assert!(DatasetSpec::from_toml("[texture]\nperiod = 1.0\n").is_err());
    }

    #[test]
    fn write_lays_out_the_directory_convention() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            n_train: 2,
            n_val: 1,
            n_test: 1,
            ..DatasetSpec::default()
        };
        spec.write(dir.path()).unwrap();
        let test = dir.path().join("test/test_000.png");
        let (img, has_mask) = SurfaceImage::load_with_mask(&test).unwrap();
        assert!(has_mask);
        assert!(img.labels.unwrap().contains(&1));
        assert!(dir.path().join("train/train_001.png").exists());
        assert!(dir.path().join("val/val_000.png").exists());
    }
}
