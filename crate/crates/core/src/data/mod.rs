//! Images on disk, training patches and synthetic surfaces.

pub mod image;
pub mod patch;
pub mod synth;

pub use image::{GrayImage, SurfaceImage};
pub use patch::{extract_training_patch, AugmentConfig, PatchSample};
pub use synth::{generate_surface, DatasetSpec, TextureSpec};
