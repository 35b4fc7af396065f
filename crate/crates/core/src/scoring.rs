//! Sliding-window scan: every window is reconstructed, and the absolute
//! reconstruction error inside the central scoring block is merged into a
//! whole-image anomaly map.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::data::image::{GrayImage, SurfaceImage};
use crate::error::{invalid_arg, Error, Result};
use crate::mask::ScoreGeometry;
use crate::model::Model;
use crate::tensor::Tensor;

/// Score stored for pixels that no scoring block reached.
pub const UNSCORED: f32 = -1.0;

pub const AMAP_MAGIC: &[u8; 4] = b"AMAP";
pub const AMAP_VERSION: u32 = 1;

/// Per-pixel anomaly scores with per-pixel window coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyMap {
    pub width: usize,
    pub height: usize,
    /// Row-major; [`UNSCORED`] where `coverage` is zero, `>= 0` elsewhere.
    pub scores: Vec<f32>,
    pub coverage: Vec<u32>,
}

impl AnomalyMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            scores: vec![UNSCORED; width * height],
            coverage: vec![0; width * height],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> Option<f32> {
        let i = y * self.width + x;
        (self.coverage[i] > 0).then_some(self.scores[i])
    }

    pub fn scored_pixels(&self) -> usize {
        self.coverage.iter().filter(|&&c| c > 0).count()
    }

    /// Max-merges a square block of scores with its top-left at `(top, left)`.
    pub fn merge_block(&mut self, top: usize, left: usize, side: usize, block: &[f32]) {
        debug_assert_eq!(block.len(), side * side);
        for (r, row) in block.chunks_exact(side).enumerate() {
            let start = (top + r) * self.width + left;
            for (k, &v) in row.iter().enumerate() {
                let i = start + k;
                self.scores[i] = if self.coverage[i] == 0 { v } else { self.scores[i].max(v) };
                self.coverage[i] += 1;
            }
        }
    }

    /// Smallest and largest scored value.
    pub fn range(&self) -> Option<(f32, f32)> {
        self.scores
            .iter()
            .zip(&self.coverage)
            .filter(|(_, &c)| c > 0)
            .map(|(&s, _)| s)
            .fold(None, |acc, s| match acc {
                None => Some((s, s)),
                Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
            })
    }

    /// Little-endian `AMAP | version | height | width | f32 scores`.
    pub fn to_amap_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.scores.len());
        out.extend_from_slice(AMAP_MAGIC);
        out.extend_from_slice(&AMAP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        for s in &self.scores {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    /// Parses an AMAP buffer. Coverage is not stored, so scored pixels come
    /// back with a coverage of one.
    pub fn from_amap_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<u32> {
            let b = bytes
                .get(i..i + 4)
                .ok_or_else(|| Error::format("amap", "truncated header"))?;
            Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
        };
        if bytes.get(..4) != Some(AMAP_MAGIC.as_slice()) {
            return Err(Error::format("amap", "bad magic"));
        }
        let version = word(4)?;
        if version != AMAP_VERSION {
            return Err(Error::format("amap", format!("unsupported version {version}")));
        }
        let (height, width) = (word(8)? as usize, word(12)? as usize);
        let body = &bytes[16..];
        if body.len() != 4 * width * height {
            return Err(Error::format(
                "amap",
                format!("{}x{} map needs {} payload bytes, found {}", height, width, 4 * width * height, body.len()),
            ));
        }
        let scores: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let coverage = scores.iter().map(|&s| u32::from(s >= 0.0)).collect();
        Ok(Self {
            width,
            height,
            scores,
            coverage,
        })
    }

    pub fn write_amap(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_amap_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_amap(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_amap_bytes(&bytes)
    }

    /// Min-max normalized 8-bit rendering: the smallest scored value maps to
    /// 0, the largest to 255; unscored pixels are 0.
    pub fn to_gray(&self) -> GrayImage {
        let (lo, hi) = self.range().unwrap_or((0.0, 0.0));
        let span = hi - lo;
        let pixels = self
            .scores
            .iter()
            .zip(&self.coverage)
            .map(|(&s, &c)| {
                if c == 0 || span <= 0.0 {
                    0
                } else {
                    (255.0 * (s - lo) / span).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

/// Window offsets along one axis: stride steps, plus a final window flush
/// with the far border when the steps fall short of it.
pub fn window_offsets(extent: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(invalid_arg!("stride must be positive"));
    }
    if extent < window {
        return Err(invalid_arg!("extent {extent} is smaller than the {window}px window"));
    }
    let last = extent - window;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride).collect();
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    Ok(offsets)
}

/// `|x - recon|` over the scoring block of one patch, row-major.
pub fn score_block(geom: &ScoreGeometry, patch: &[f32], recon: &[f32]) -> Vec<f32> {
    let p = geom.patch_size();
    let r = geom.block_range();
    let mut out = Vec::with_capacity(geom.block * geom.block);
    for y in r.clone() {
        for x in r.clone() {
            out.push((patch[y * p + x] - recon[y * p + x]).abs());
        }
    }
    out
}

/// Scores one unmasked patch; masking (for the completion model) happens inside.
pub fn score_patch(model: &Model<f32>, geom: &ScoreGeometry, patch: &[f32]) -> Result<Vec<f32>> {
    let p = geom.patch_size();
    if model.patch_size() != p {
        return Err(invalid_arg!(
            "model works on {}px patches, scoring geometry on {p}px",
            model.patch_size()
        ));
    }
    let x = Tensor::new(&[1, 1, p, p], patch.to_vec())?;
    let recon = model.reconstruct(&x)?;
    Ok(score_block(geom, patch, recon.data()))
}

#[derive(Clone, Debug)]
pub struct ScanReport {
    pub map: AnomalyMap,
    pub windows: usize,
    pub seconds: f64,
}

impl ScanReport {
    pub fn patches_per_second(&self) -> f64 {
        if self.seconds > 0.0 {
            self.windows as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

/// Scans `image` with windows at `stride`, reconstructing `batch` windows per
/// forward pass.
pub fn scan_image(
    model: &Model<f32>,
    image: &SurfaceImage,
    stride: usize,
    batch: usize,
) -> Result<ScanReport> {
    let geom = ScoreGeometry {
        mask: model.mask(),
        ..ScoreGeometry::default()
    };
    let p = geom.patch_size();
    if image.width < p || image.height < p {
        return Err(invalid_arg!(
            "a {}x{} image is smaller than one {p}px window",
            image.height,
            image.width
        ));
    }
    let rows = window_offsets(image.height, p, stride)?;
    let cols = window_offsets(image.width, p, stride)?;
    let origins: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&y| cols.iter().map(move |&x| (y, x)))
        .collect();

    let start = Instant::now();
    let mut map = AnomalyMap::new(image.width, image.height);
    let block_start = geom.block_range().start;
    for chunk in origins.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * p * p);
        for &(top, left) in chunk {
            for y in top..top + p {
                let row = y * image.width;
                data.extend_from_slice(&image.pixels[row + left..row + left + p]);
            }
        }
        let x = Tensor::new(&[chunk.len(), 1, p, p], data)?;
        let recon = model.reconstruct(&x)?;
        for (i, &(top, left)) in chunk.iter().enumerate() {
            let range = i * p * p..(i + 1) * p * p;
            let block = score_block(&geom, &x.data()[range.clone()], &recon.data()[range]);
            map.merge_block(top + block_start, left + block_start, geom.block, &block);
        }
    }
    Ok(ScanReport {
        map,
        windows: origins.len(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
