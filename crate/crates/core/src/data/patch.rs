//! Training patch extraction with oversized-crop augmentation.
//!
//! A crop larger than the patch is chosen so that every rotation, flip and
//! scale of the patch footprint stays inside it; the patch is then resampled
//! from the crop around its centre. Nothing outside the source image is ever
//! read, so patches carry no border fill.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::image::SurfaceImage;
use crate::error::{invalid_arg, Result};
use crate::mask::MaskSpec;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const BRIGHTNESS_RANGE: f64 = 0.1;

/// Individually switchable augmentations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rotation: bool,
    pub flip: bool,
    pub scale: bool,
    pub brightness: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation: true,
            flip: true,
            scale: true,
            brightness: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rotation: false,
            flip: false,
            scale: false,
            brightness: false,
        }
    }

    /// Side of the square crop that contains the patch footprint under any
    /// enabled transform, rounded up to keep crop and patch centres aligned.
    pub fn crop_size(&self, patch: usize) -> usize {
        if !self.rotation && !self.scale {
            return patch;
        }
        let half_diag = (patch as f64 - 1.0) / 2.0 * if self.rotation { SQRT_2 } else { 1.0 };
        let min_scale = if self.scale { SCALE_RANGE.0 } else { 1.0 };
        // bilinear taps reach one pixel past the footprint
        let side = (2.0 * half_diag / min_scale + 1.0).ceil() as usize + 1;
        side + (side - patch) % 2
    }
}

/// One draw of the augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    /// Rotation in radians.
    pub angle: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    /// Magnification; values above 1 zoom in.
    pub scale: f64,
    pub brightness: f32,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        angle: 0.0,
        flip_h: false,
        flip_v: false,
        scale: 1.0,
        brightness: 0.0,
    };

    pub fn sample(config: &AugmentConfig, rng: &mut Rng) -> Self {
        let mut t = Self::IDENTITY;
        if config.rotation {
            t.angle = rng.random_range(-PI..=PI);
        }
        if config.flip {
            t.flip_h = rng.random();
            t.flip_v = rng.random();
        }
        if config.scale {
            t.scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        }
        if config.brightness {
            t.brightness = rng.random_range(-BRIGHTNESS_RANGE..=BRIGHTNESS_RANGE) as f32;
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub size: usize,
    /// Row-major values in `[-1, 1]`.
    pub patch: Vec<f32>,
    pub mask: MaskSpec,
    pub labels: Option<Vec<u8>>,
    /// Top-left corner of the crop the patch was resampled from.
    pub crop_origin: (usize, usize),
    pub crop_size: usize,
}

impl PatchSample {
    /// `M̄ ⊙ x` for this patch.
    pub fn masked(&self) -> Vec<f32> {
        let mut out = self.patch.clone();
        self.mask.apply_in_place(&mut out);
        out
    }
}

/// Stacks patches into a `[B, 1, P, P]` tensor.
pub fn to_batch(samples: &[PatchSample]) -> Result<Tensor<f32>> {
    let Some(first) = samples.first() else {
        return Err(invalid_arg!("cannot batch zero patches"));
    };
    let p = first.size;
    let mut data = Vec::with_capacity(samples.len() * p * p);
    for s in samples {
        if s.size != p {
            return Err(invalid_arg!("mixed patch sizes in one batch"));
        }
        data.extend_from_slice(&s.patch);
    }
    Tensor::new(&[samples.len(), 1, p, p], data)
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else {
        v
    }
}

/// Resamples a `patch x patch` view centred in the crop at `origin`.
///
/// Fails if the crop leaves the image or if the transform would read
/// outside the crop.
pub fn extract_patch_at(
    image: &SurfaceImage,
    origin: (usize, usize),
    crop: usize,
    patch: usize,
    t: &Transform,
) -> Result<PatchSample> {
    let (top, left) = origin;
    if crop < patch || top + crop > image.height || left + crop > image.width {
        return Err(invalid_arg!(
            "crop of {crop} at ({top}, {left}) does not fit a {}x{} image",
            image.height,
            image.width
        ));
    }
    let centre = (crop as f64 - 1.0) / 2.0;
    let half = (patch as f64 - 1.0) / 2.0;
    let (sin, cos) = t.angle.sin_cos();
    let (sin, cos) = (snap(sin) / t.scale, snap(cos) / t.scale);
    let mut values = Vec::with_capacity(patch * patch);
    let mut labels = image.labels.as_ref().map(|_| Vec::with_capacity(patch * patch));
    let limit = (crop - 1) as f64;
    for i in 0..patch {
        for j in 0..patch {
            let mut u = i as f64 - half;
            let mut v = j as f64 - half;
            if t.flip_v {
                u = -u;
            }
            if t.flip_h {
                v = -v;
            }
            let sy = centre + cos * u - sin * v;
            let sx = centre + sin * u + cos * v;
            if !(0.0..=limit).contains(&sy) || !(0.0..=limit).contains(&sx) {
                return Err(invalid_arg!("transform leaves the {crop}px crop"));
            }
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let (y1, x1) = ((y0 + 1).min(crop - 1), (x0 + 1).min(crop - 1));
            let px = |y: usize, x: usize| image.get(top + y, left + x) as f64;
            let top_row = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
            let bottom_row = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
            let value = top_row * (1.0 - fy) + bottom_row * fy;
            values.push((value as f32 + t.brightness).clamp(-1.0, 1.0));
            if let (Some(out), Some(src)) = (labels.as_mut(), image.labels.as_ref()) {
                let (ny, nx) = (sy.round() as usize, sx.round() as usize);
                out.push(src[(top + ny) * image.width + left + nx]);
            }
        }
    }
    Ok(PatchSample {
        size: patch,
        patch: values,
        mask: MaskSpec {
            patch_size: patch,
            ..MaskSpec::default()
        },
        labels,
        crop_origin: origin,
        crop_size: crop,
    })
}

/// Draws a random crop position and augmentation and resamples a patch.
pub fn extract_training_patch(
    image: &SurfaceImage,
    patch: usize,
    augment: &AugmentConfig,
    rng: &mut Rng,
) -> Result<PatchSample> {
    let crop = augment.crop_size(patch);
    if image.height < crop || image.width < crop {
        return Err(invalid_arg!(
            "a {}x{} image is smaller than the {crop}px augmentation crop",
            image.height,
            image.width
        ));
    }
    let top = rng.random_range(0..=image.height - crop);
    let left = rng.random_range(0..=image.width - crop);
    let t = Transform::sample(augment, rng);
    extract_patch_at(image, (top, left), crop, patch, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn ramp(w: usize, h: usize) -> SurfaceImage {
        let px = (0..w * h)
            .map(|i| ((i % w) as f32 * 0.003 + (i / w) as f32 * 0.005) - 0.9)
            .collect();
        SurfaceImage::new(w, h, px).unwrap()
    }

    #[test]
    fn crop_sizes() {
        assert_eq!(AugmentConfig::none().crop_size(128), 128);
        let rot_only = AugmentConfig {
            scale: false,
            ..AugmentConfig::default()
        };
        assert_eq!(rot_only.crop_size(128), 182);
        assert_eq!(AugmentConfig::default().crop_size(128), 202);
    }

    #[test]
    fn identity_transform_copies_the_sub_image() {
        let img = ramp(200, 190);
        let s = extract_patch_at(&img, (17, 29), 128, 128, &Transform::IDENTITY).unwrap();
        for i in 0..128 {
            for j in 0..128 {
                assert_eq!(s.patch[i * 128 + j], img.get(17 + i, 29 + j));
            }
        }
        // an oversized crop with no transform still yields the centred sub-image
        let s = extract_patch_at(&img, (0, 0), 182, 128, &Transform::IDENTITY).unwrap();
        assert_eq!(s.patch[0], img.get(27, 27));
    }

    #[test]
    fn half_turn_of_a_point_symmetric_pattern_is_exact() {
        // f(y, x) symmetric under (y, x) -> (2c - y, 2c - x) about the crop centre
        let n = 182;
        let c = (n as f32 - 1.0) / 2.0;
        let px = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f32 - c, (i % n) as f32 - c);
                ((y * y + 2.0 * x * x) * 1e-4).min(1.0) - 0.5
            })
            .collect();
        let img = SurfaceImage::new(n, n, px).unwrap();
        let plain = extract_patch_at(&img, (0, 0), n, 128, &Transform::IDENTITY).unwrap();
        let turned = Transform {
            angle: PI,
            ..Transform::IDENTITY
        };
        let turned = extract_patch_at(&img, (0, 0), n, 128, &turned).unwrap();
        assert_eq!(plain.patch, turned.patch);
    }

    #[test]
    fn random_draws_stay_inside_the_image() {
        let n = 256;
        let img = ramp(n, n);
        let mut rng = seeded(11);
        for _ in 0..10_000 {
            let s = extract_training_patch(&img, 128, &AugmentConfig::default(), &mut rng).unwrap();
            let (top, left) = s.crop_origin;
            assert!(top + s.crop_size <= n && left + s.crop_size <= n);
            assert!(s.patch.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn random_transforms_never_read_outside_the_crop() {
        // NaN sentinel ring around a 202px crop: any read outside it would leak
        // into the patch through the bilinear weights
        let crop = AugmentConfig::default().crop_size(128);
        let n = crop + 2;
        let mut img = ramp(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    img.pixels[i * n + j] = f32::NAN;
                }
            }
        }
        let mut rng = seeded(12);
        for _ in 0..10_000 {
            let t = Transform::sample(&AugmentConfig::default(), &mut rng);
            let s = extract_patch_at(&img, (1, 1), crop, 128, &t).unwrap();
            assert!(s.patch.iter().all(|v| v.is_finite()), "{t:?}");
        }
    }

    #[test]
    fn every_extreme_transform_fits_the_crop() {
        let img = ramp(202, 202);
        for k in 0..72 {
            for &scale in &[SCALE_RANGE.0, 1.0, SCALE_RANGE.1] {
                let t = Transform {
                    angle: -PI + k as f64 * PI / 36.0,
                    flip_h: k % 2 == 0,
                    flip_v: k % 3 == 0,
                    scale,
                    brightness: 0.1,
                };
                extract_patch_at(&img, (0, 0), 202, 128, &t).unwrap();
            }
        }
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = ramp(190, 300);
        let err = extract_training_patch(&img, 128, &AugmentConfig::default(), &mut seeded(0));
        assert!(err.is_err());
        assert!(extract_training_patch(&img, 128, &AugmentConfig::none(), &mut seeded(0)).is_ok());
    }

    #[test]
    fn labels_follow_the_geometry() {
        let mut img = ramp(160, 160);
        let mut labels = vec![0u8; 160 * 160];
        labels[(16 + 40) * 160 + 16 + 70] = 1;
        img = img.with_labels(labels).unwrap();
        let s = extract_patch_at(&img, (16, 16), 128, 128, &Transform::IDENTITY).unwrap();
        let l = s.labels.unwrap();
        assert_eq!(l.iter().map(|&v| v as usize).sum::<usize>(), 1);
        assert_eq!(l[40 * 128 + 70], 1);
        let flipped = Transform {
            flip_h: true,
            ..Transform::IDENTITY
        };
        let s = extract_patch_at(&img, (16, 16), 128, 128, &flipped).unwrap();
        assert_eq!(s.labels.unwrap()[40 * 128 + 127 - 70], 1);
    }

    #[test]
    fn defect_free_source_gives_empty_labels() {
        let img = ramp(256, 256).with_labels(vec![0; 256 * 256]).unwrap();
        let mut rng = seeded(4);
        for _ in 0..50 {
            let s = extract_training_patch(&img, 128, &AugmentConfig::default(), &mut rng).unwrap();
            assert!(s.labels.unwrap().iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn batches_stack_patches() {
        let img = ramp(128, 128);
        let s = extract_patch_at(&img, (0, 0), 128, 128, &Transform::IDENTITY).unwrap();
        let b = to_batch(&[s.clone(), s]).unwrap();
        assert_eq!(b.shape(), &[2, 1, 128, 128]);
        assert!(to_batch(&[]).is_err());
    }
}
