//! Patch geometry: the centred hole that is cut out before completion and
//! the smaller centred block whose reconstruction error is used as score.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::tensor::{Real, Tensor};

pub const PATCH_SIZE: usize = 128;
pub const HOLE_SIZE: usize = 32;
pub const SCORE_BLOCK: usize = 24;
pub const SCAN_STRIDE: usize = 16;

fn centered(outer: usize, inner: usize) -> Range<usize> {
    let start = (outer - inner) / 2;
    start..start + inner
}

/// Square hole `M` centred in a square patch. `M̄ = 1 - M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub patch_size: usize,
    pub hole_size: usize,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            patch_size: PATCH_SIZE,
            hole_size: HOLE_SIZE,
        }
    }
}

impl MaskSpec {
    pub fn new(patch_size: usize, hole_size: usize) -> Result<Self> {
        if hole_size == 0 || hole_size > patch_size || !(patch_size - hole_size).is_multiple_of(2) {
            return Err(invalid_arg!(
                "hole {hole_size} cannot be centred in patch {patch_size}"
            ));
        }
        Ok(Self {
            patch_size,
            hole_size,
        })
    }

    /// Rows (and columns) covered by the hole.
    pub fn hole(&self) -> Range<usize> {
        centered(self.patch_size, self.hole_size)
    }

    pub fn in_hole(&self, y: usize, x: usize) -> bool {
        let r = self.hole();
        r.contains(&y) && r.contains(&x)
    }

    /// Binary `M` as a row-major `patch x patch` plane.
    pub fn mask<T: Real>(&self) -> Vec<T> {
        let n = self.patch_size;
        (0..n * n)
            .map(|i| if self.in_hole(i / n, i % n) { T::one() } else { T::zero() })
            .collect()
    }

    /// Per-pixel loss weight: `lambda` inside the hole, `1 - lambda` outside.
    pub fn loss_weights<T: Real>(&self, lambda: f64) -> Result<Vec<T>> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid_arg!("lambda must lie in [0, 1], got {lambda}"));
        }
        let (inside, outside) = (T::lit(lambda), T::lit(1.0 - lambda));
        Ok(self
            .mask::<T>()
            .into_iter()
            .map(|m| if m == T::one() { inside } else { outside })
            .collect())
    }

    /// Zeroes the hole of every `patch x patch` plane in place (`M̄ ⊙ X`).
    pub fn apply_in_place<T: Real>(&self, data: &mut [T]) {
        let n = self.patch_size;
        let hole = self.hole();
        for plane in data.chunks_exact_mut(n * n) {
            for y in hole.clone() {
                plane[y * n + hole.start..y * n + hole.end].fill(T::zero());
            }
        }
    }

    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, h, w] = x.dims4()?;
        if h != self.patch_size || w != self.patch_size {
            return Err(invalid_arg!(
                "mask for {0}x{0} patches applied to a {h}x{w} tensor",
                self.patch_size
            ));
        }
        let mut out = x.clone();
        self.apply_in_place(out.data_mut());
        Ok(out)
    }
}

/// Centred scoring block inside the hole.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreGeometry {
    pub mask: MaskSpec,
    pub block: usize,
}

impl Default for ScoreGeometry {
    fn default() -> Self {
        Self {
            mask: MaskSpec::default(),
            block: SCORE_BLOCK,
        }
    }
}

impl ScoreGeometry {
    pub fn new(mask: MaskSpec, block: usize) -> Result<Self> {
        if block == 0 || block > mask.hole_size || !(mask.hole_size - block).is_multiple_of(2) {
            return Err(invalid_arg!(
                "score block {block} cannot be centred in hole {}",
                mask.hole_size
            ));
        }
        Ok(Self { mask, block })
    }

    pub fn patch_size(&self) -> usize {
        self.mask.patch_size
    }

    /// Rows (and columns) of the scoring block within a patch.
    pub fn block_range(&self) -> Range<usize> {
        centered(self.mask.patch_size, self.block)
    }

    /// Width of the excluded ring between the block and the hole border.
    pub fn margin(&self) -> usize {
        (self.mask.hole_size - self.block) / 2
    }
}
