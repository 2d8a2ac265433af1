//! Labeled RGB texture patches: loading, synthesis, preprocessing.
//!
//! Patches keep their native heterogeneous sizes. CNN pipelines resize
//! each patch to the network's declared input size and subtract the
//! training-fold mean RGB; hand-crafted pipelines consume patches at
//! native size. No further standardization is applied anywhere.

mod io;
mod synth;

pub use io::{load_dataset, save_patch_png};
pub use synth::{generate_synthetic, SyntheticSpec, TextureFamily};

use crate::net::Tensor;
use crate::{Error, Result};

/// One labeled RGB patch; `pixels` is row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub pixels: Vec<u8>,
    pub width: u32,
    pub height: u32,
    pub label: usize,
    pub id: String,
}

impl ImagePatch {
    pub fn new(
        pixels: Vec<u8>,
        width: u32,
        height: u32,
        label: usize,
        id: impl Into<String>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSpec("patch dimensions must be >= 1".to_string()));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: pixels.len(),
            });
        }
        Ok(ImagePatch {
            pixels,
            width,
            height,
            label,
            id: id.into(),
        })
    }

    #[inline]
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Luma conversion (0.299 R + 0.587 G + 0.114 B), row-major f32.
    pub fn to_gray(&self) -> Vec<f32> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect()
    }
}

/// An immutable ordered collection of patches plus the class name table.
#[derive(Debug, Clone)]
pub struct Dataset {
    patches: Vec<ImagePatch>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(patches: Vec<ImagePatch>, class_names: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &patches {
            if p.label >= class_names.len() {
                return Err(Error::InvalidSpec(format!(
                    "patch {} has label {} but only {} classes declared",
                    p.id,
                    p.label,
                    class_names.len()
                )));
            }
            if !seen.insert(p.id.clone()) {
                return Err(Error::InvalidSpec(format!("duplicate patch id {}", p.id)));
            }
        }
        Ok(Dataset {
            patches,
            class_names,
        })
    }

    pub fn patches(&self) -> &[ImagePatch] {
        &self.patches
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.patches.iter().map(|p| p.label).collect()
    }
}

/// Fixed target size plus the training-set channel means to subtract.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSpec {
    pub target_width: u32,
    pub target_height: u32,
    pub mean_rgb: [f32; 3],
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_width < 8 || self.target_height < 8 {
            return Err(Error::InvalidSpec(
                "preprocess target dimensions must be >= 8".to_string(),
            ));
        }
        if self.mean_rgb.iter().any(|&m| !(0.0..=255.0).contains(&m)) {
            return Err(Error::InvalidSpec(
                "mean rgb components must lie in [0, 255]".to_string(),
            ));
        }
        Ok(())
    }
}

/// Bilinear resize with the half-pixel-center convention; aspect ratio is
/// not preserved. Output values are convex combinations of input values.
pub fn resize_bilinear(patch: &ImagePatch, target_width: u32, target_height: u32) -> ImagePatch {
    assert!(target_width >= 1 && target_height >= 1);
    if target_width == patch.width && target_height == patch.height {
        return patch.clone();
    }
    let (sw, sh) = (patch.width as usize, patch.height as usize);
    let scale_x = patch.width as f32 / target_width as f32;
    let scale_y = patch.height as f32 / target_height as f32;
    let mut out = vec![0u8; target_width as usize * target_height as usize * 3];
    for dy in 0..target_height as usize {
        let sy = ((dy as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f32;
        for dx in 0..target_width as usize {
            let sx = ((dx as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f32;
            let o = (dy * target_width as usize + dx) * 3;
            for c in 0..3 {
                let p00 = patch.pixels[(y0 * sw + x0) * 3 + c] as f32;
                let p01 = patch.pixels[(y0 * sw + x1) * 3 + c] as f32;
                let p10 = patch.pixels[(y1 * sw + x0) * 3 + c] as f32;
                let p11 = patch.pixels[(y1 * sw + x1) * 3 + c] as f32;
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                out[o + c] = (top + (bot - top) * fy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImagePatch {
        pixels: out,
        width: target_width,
        height: target_height,
        label: patch.label,
        id: patch.id.clone(),
    }
}

/// Resize, convert to f32 and subtract the per-channel means.
/// Output shape is [3, target_height, target_width] in RGB channel order.
pub fn preprocess(patch: &ImagePatch, spec: &PreprocessSpec) -> Result<Tensor> {
    spec.validate()?;
    let resized = resize_bilinear(patch, spec.target_width, spec.target_height);
    let (w, h) = (spec.target_width as usize, spec.target_height as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        let plane = &mut data[c * h * w..(c + 1) * h * w];
        for (i, px) in resized.pixels.chunks_exact(3).enumerate() {
            plane[i] = px[c] as f32 - spec.mean_rgb[c];
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Per-channel mean over all pixels of all patches after resizing each to
/// the target size.
pub fn compute_mean_rgb(
    patches: &[&ImagePatch],
    target_width: u32,
    target_height: u32,
) -> Result<[f32; 3]> {
    if patches.is_empty() {
        return Err(Error::EmptyInput("mean rgb over no patches".to_string()));
    }
    let mut sums = [0.0f64; 3];
    for p in patches {
        let resized = resize_bilinear(p, target_width, target_height);
        for px in resized.pixels.chunks_exact(3) {
            sums[0] += px[0] as f64;
            sums[1] += px[1] as f64;
            sums[2] += px[2] as f64;
        }
    }
    let total = (patches.len() as f64) * (target_width as f64) * (target_height as f64);
    Ok([
        (sums[0] / total) as f32,
        (sums[1] / total) as f32,
        (sums[2] / total) as f32,
    ])
}

/// Per-class histogram of max(width, height) with the given bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeHistogram {
    pub bin_width: u32,
    /// counts[class][bin], bin i covering [i*bin_width, (i+1)*bin_width).
    pub counts: Vec<Vec<u64>>,
}

pub fn size_histogram(dataset: &Dataset, bin_width: u32) -> SizeHistogram {
    assert!(bin_width >= 1);
    let max_bin = dataset
        .patches()
        .iter()
        .map(|p| (p.width.max(p.height) / bin_width) as usize)
        .max()
        .map(|b| b + 1)
        .unwrap_or(0);
    let mut counts = vec![vec![0u64; max_bin]; dataset.num_classes()];
    for p in dataset.patches() {
        let bin = (p.width.max(p.height) / bin_width) as usize;
        counts[p.label][bin] += 1;
    }
    SizeHistogram { bin_width, counts }
}
