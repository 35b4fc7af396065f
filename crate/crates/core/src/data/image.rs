//! Grayscale surface images and their 8-bit PNG / PGM (P5) encodings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid_arg, Error, Result};

/// Maps an 8-bit sample to `[-1, 1]` via `v / 127.5 - 1`.
pub fn normalize(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Inverse of [`normalize`], rounding and saturating.
pub fn denormalize(x: f32) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Row-major 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(invalid_arg!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            ));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Loads a PNG or binary PGM, chosen by the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        match extension(path).as_deref() {
            Some("png") => read_png(path),
            Some("pgm") => read_pgm(path),
            _ => Err(Error::Data(format!(
                "unsupported image type: {}",
                path.display()
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match extension(path).as_deref() {
            Some("png") => write_png(self, path),
            Some("pgm") => write_pgm(self, path),
            _ => Err(invalid_arg!("unsupported image type: {}", path.display())),
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn is_image_path(path: &Path) -> bool {
    matches!(extension(path).as_deref(), Some("png" | "pgm"))
}

fn read_png(path: &Path) -> Result<GrayImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("png", "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("png", format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let channels = info.color_type.samples();
    let pixels = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
            buf.chunks_exact(channels).map(|c| c[0]).collect()
        }
        png::ColorType::Rgb | png::ColorType::Rgba => buf
            .chunks_exact(channels)
            .map(|c| {
                let l = 299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32;
                ((l + 500) / 1000) as u8
            })
            .collect(),
        png::ColorType::Indexed => {
            return Err(Error::format("png", "indexed colour was not expanded"))
        }
    };
    GrayImage::new(w, h, pixels)
}

fn write_png(img: &GrayImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format("png", e.to_string()))?;
    writer
        .write_image_data(&img.pixels)
        .map_err(|e| Error::format("png", e.to_string()))?;
    writer
        .finish()
        .map_err(|e| Error::format("png", e.to_string()))
}

fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Parses a binary `P5` PGM with `maxval <= 255`.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pgm", "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::format("pgm", "only binary P5 files are supported"));
    }
    let mut number = |what: &str| -> Result<usize> {
        token()?
            .parse::<usize>()
            .map_err(|_| Error::format("pgm", format!("bad {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("pgm", "maxval must be in 1..=255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data_start = pos + 1;
    let data = bytes
        .get(data_start..data_start + width * height)
        .ok_or_else(|| Error::format("pgm", "truncated raster"))?;
    let pixels = if maxval == 255 {
        data.to_vec()
    } else {
        data.iter()
            .map(|&v| ((v as usize * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    GrayImage::new(width, height, pixels)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// A normalized surface image with optional defect labels and region of interest.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceImage {
    pub width: usize,
    pub height: usize,
    /// Row-major values in `[-1, 1]`.
    pub pixels: Vec<f32>,
    /// `1` marks a defective pixel.
    pub labels: Option<Vec<u8>>,
    /// `1` marks a pixel that should be evaluated.
    pub roi: Option<Vec<u8>>,
}

impl SurfaceImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(invalid_arg!("pixel buffer does not match {width}x{height}"));
        }
        Ok(Self {
            width,
            height,
            pixels,
            labels: None,
            roi: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.width * self.height {
            return Err(invalid_arg!("label mask does not match image dimensions"));
        }
        self.labels = Some(labels.into_iter().map(|v| u8::from(v != 0)).collect());
        Ok(self)
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            pixels: img.pixels.iter().map(|&v| normalize(v)).collect(),
            labels: None,
            roi: None,
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| denormalize(v)).collect(),
        }
    }

    /// Label mask as a `{0, 255}` raster.
    pub fn label_image(&self) -> Option<GrayImage> {
        self.labels.as_ref().map(|l| GrayImage {
            width: self.width,
            height: self.height,
            pixels: l.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_gray(&GrayImage::load(path)?))
    }

    /// Loads an image and, if present, its `<stem>_mask.<ext>` label mask.
    pub fn load_with_mask(path: &Path) -> Result<(Self, bool)> {
        let mut img = Self::load(path)?;
        let Some(mask_path) = mask_path_for(path) else {
            return Ok((img, false));
        };
        if !mask_path.exists() {
            return Ok((img, false));
        }
        let mask = GrayImage::load(&mask_path)?;
        if (mask.width, mask.height) != (img.width, img.height) {
            return Err(Error::Data(format!(
                "mask {} does not match its image size",
                mask_path.display()
            )));
        }
        img = img.with_labels(mask.pixels)?;
        Ok((img, true))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_gray().save(path)
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

/// `dir/name.ext` → `dir/name_mask.ext`.
pub fn mask_path_for(path: &Path) -> Option<std::path::PathBuf> {
    let stem = path.file_stem()?.to_str()?;
    let ext = path.extension()?.to_str()?;
    Some(path.with_file_name(format!("{stem}_mask.{ext}")))
}

pub fn is_mask_path(path: &Path) -> bool {
    path.file_stem()
        .and_then(|s| s.to_str())
        .is_some_and(|s| s.ends_with("_mask"))
}

/// Image files directly inside `dir` (mask files excluded), sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_path(&path) && !is_mask_path(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}
