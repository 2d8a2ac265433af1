//! Dense-grid keypoints and upright SIFT descriptors.
//!
//! Descriptors are the classic 4x4 spatial cells by 8 orientation bins of
//! gradient magnitude, soft-binned trilinearly and weighted by a Gaussian
//! of sigma equal to half the support window. No dominant-orientation
//! estimation: dense sampling uses the upright variant. Gradients come
//! from central differences with a replicated border. The final vector is
//! L2-normalized, clamped at 0.2 per entry, and renormalized; a window
//! with no gradient at all yields the all-zero descriptor.

use crate::dataset::ImagePatch;
use crate::{Error, Result};

pub const DESCRIPTOR_DIM: usize = 128;
const SPATIAL_CELLS: usize = 4;
const ORIENT_BINS: usize = 8;
const CLAMP: f32 = 0.2;

/// Dense sampling grid: stride, multi-scale support sizes, and the border
/// margin that keeps every support window inside the image.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSamplingSpec {
    pub step: u32,
    pub patch_sizes: Vec<u32>,
    pub boundary_margin: u32,
}

impl Default for DenseSamplingSpec {
    fn default() -> Self {
        DenseSamplingSpec {
            step: 8,
            patch_sizes: vec![16, 24, 32],
            boundary_margin: 16,
        }
    }
}

impl DenseSamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.step < 1 {
            return Err(Error::InvalidSpec("sampling step must be >= 1".to_string()));
        }
        if self.patch_sizes.is_empty() {
            return Err(Error::InvalidSpec("need at least one patch size".to_string()));
        }
        if self.patch_sizes.iter().any(|&s| s < 8) {
            return Err(Error::InvalidSpec("descriptor support must be >= 8 px".to_string()));
        }
        let max = *self.patch_sizes.iter().max().unwrap();
        if self.boundary_margin < max.div_ceil(2) {
            return Err(Error::InvalidSpec(format!(
                "margin {} too small for support {max}",
                self.boundary_margin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub vector: Vec<f32>,
    pub x: f32,
    pub y: f32,
    pub scale: f32,
}

/// Grayscale image as a dense f32 array.
#[derive(Debug, Clone)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn from_patch(patch: &ImagePatch) -> Self {
        GrayImage {
            width: patch.width as usize,
            height: patch.height as usize,
            data: patch.to_gray(),
        }
    }

    /// Replicated-border access.
    #[inline]
    fn at(&self, x: isize, y: isize) -> f32 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yi * self.width + xi]
    }
}

/// Regular grid starting at the margin with the given stride, crossed with
/// every patch size; ordering is scale-major, then row-major. An image too
/// small for even one grid point yields an empty list.
pub fn dense_keypoints(width: u32, height: u32, spec: &DenseSamplingSpec) -> Vec<Keypoint> {
    debug_assert!(spec.validate().is_ok());
    let mut out = Vec::new();
    let m = spec.boundary_margin;
    if width <= 2 * m || height <= 2 * m {
        return out;
    }
    for &scale in &spec.patch_sizes {
        for y in (m..height - m).step_by(spec.step as usize) {
            for x in (m..width - m).step_by(spec.step as usize) {
                out.push(Keypoint {
                    x: x as f32,
                    y: y as f32,
                    scale: scale as f32,
                });
            }
        }
    }
    out
}

/// Upright SIFT descriptor at one keypoint.
pub fn sift_descriptor(gray: &GrayImage, keypoint: Keypoint) -> Result<Descriptor> {
    let Keypoint { x: cx, y: cy, scale } = keypoint;
    let half = scale / 2.0;
    let x_first = (cx - half).ceil() as isize;
    let x_last = ((cx + half).ceil() - 1.0) as isize;
    let y_first = (cy - half).ceil() as isize;
    let y_last = ((cy + half).ceil() - 1.0) as isize;
    if x_first < 0
        || y_first < 0
        || x_last >= gray.width as isize
        || y_last >= gray.height as isize
    {
        return Err(Error::InvalidSpec(format!(
            "descriptor support at ({cx}, {cy}) scale {scale} extends outside {}x{} image",
            gray.width, gray.height
        )));
    }

    let cell = scale / SPATIAL_CELLS as f32;
    let sigma = half;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut hist = [0.0f32; DESCRIPTOR_DIM];

    for py in y_first..=y_last {
        let dy = py as f32 - cy;
        for px in x_first..=x_last {
            let dx = px as f32 - cx;
            let gx = (gray.at(px + 1, py) - gray.at(px - 1, py)) * 0.5;
            let gy = (gray.at(px, py + 1) - gray.at(px, py - 1)) * 0.5;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx);
            if angle < 0.0 {
                angle += std::f32::consts::TAU;
            }
            let mut obin = angle / std::f32::consts::TAU * ORIENT_BINS as f32;
            if obin >= ORIENT_BINS as f32 {
                obin -= ORIENT_BINS as f32;
            }
            let weight = mag * (-(dx * dx + dy * dy) * inv_two_sigma_sq).exp();

            let u = dx / cell + 1.5;
            let v = dy / cell + 1.5;
            let u0 = u.floor();
            let v0 = v.floor();
            let o0 = obin.floor();
            let fu = u - u0;
            let fv = v - v0;
            let fo = obin - o0;

            for (du, wu) in [(0i32, 1.0 - fu), (1, fu)] {
                let ub = u0 as i32 + du;
                if !(0..SPATIAL_CELLS as i32).contains(&ub) || wu == 0.0 {
                    continue;
                }
                for (dv, wv) in [(0i32, 1.0 - fv), (1, fv)] {
                    let vb = v0 as i32 + dv;
                    if !(0..SPATIAL_CELLS as i32).contains(&vb) || wv == 0.0 {
                        continue;
                    }
                    for (do_, wo) in [(0i32, 1.0 - fo), (1, fo)] {
                        let ob = (o0 as i32 + do_).rem_euclid(ORIENT_BINS as i32);
                        let idx = ((vb as usize * SPATIAL_CELLS) + ub as usize) * ORIENT_BINS
                            + ob as usize;
                        hist[idx] += weight * wu * wv * wo;
                    }
                }
            }
        }
    }

    // Clamp-renormalize to a fixpoint: repeat until no entry exceeds the
    // clamp after normalization (a single pass necessarily leaves clamped
    // entries above 0.2 once renormalized). Windows with too few active
    // bins to hold unit norm under the clamp exit at the iteration cap.
    let mut vector = hist.to_vec();
    let mut norm: f32 = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 0.0 {
        let mut rounds = 0;
        loop {
            for v in vector.iter_mut() {
                *v /= norm;
            }
            let max = vector.iter().cloned().fold(0.0f32, f32::max);
            rounds += 1;
            if max <= CLAMP + 1e-7 || rounds >= 32 {
                break;
            }
            for v in vector.iter_mut() {
                *v = v.min(CLAMP);
            }
            norm = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        }
    }
    Ok(Descriptor {
        vector,
        x: cx,
        y: cy,
        scale,
    })
}

/// Grayscale conversion followed by a descriptor at every dense keypoint,
/// in [`dense_keypoints`] order.
pub fn extract_dense_sift(patch: &ImagePatch, spec: &DenseSamplingSpec) -> Vec<Descriptor> {
    let gray = GrayImage::from_patch(patch);
    dense_keypoints(patch.width, patch.height, spec)
        .into_iter()
        .map(|kp| sift_descriptor(&gray, kp).expect("grid keypoints satisfy the margin"))
        .collect()
}
