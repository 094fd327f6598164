//! Synthetic test data: kernel presets, a high-contrast test chart and
//! seeded Gaussian noise.

use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::{convolve, ConvMode};
use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};
use crate::kernel_est::project_kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPreset {
    /// full-width line through the middle row
    HorizontalLine,
    /// main diagonal, top-left to bottom-right
    DiagonalLine,
    /// uniform box
    Box,
    /// left half of the middle row joined to the lower half of the middle column
    LCurve,
}

impl FromStr for KernelPreset {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "line" | "hline" | "horizontal" => Ok(KernelPreset::HorizontalLine),
            "diag" | "diagonal" => Ok(KernelPreset::DiagonalLine),
            "box" => Ok(KernelPreset::Box),
            "curve" | "lcurve" | "l-curve" => Ok(KernelPreset::LCurve),
            other => Err(DeblurError::invalid(format!(
                "unknown kernel preset {other:?} (expected line, diag, box or curve)"
            ))),
        }
    }
}

impl KernelPreset {
    pub fn kernel(self, size: usize) -> Result<Kernel> {
        if size < 1 || size.is_multiple_of(2) {
            return Err(DeblurError::invalid(format!("preset kernel size must be odd, got {size}")));
        }
        let c = size / 2;
        let mut w = Array2::<f64>::zeros((size, size));
        match self {
            KernelPreset::HorizontalLine => w.row_mut(c).fill(1.0),
            KernelPreset::DiagonalLine => (0..size).for_each(|i| w[[i, i]] = 1.0),
            KernelPreset::Box => w.fill(1.0),
            KernelPreset::LCurve => {
                (0..=c).for_each(|x| w[[c, x]] = 1.0);
                (c..size).for_each(|y| w[[y, c]] = 1.0);
            }
        }
        Ok(project_kernel(&w).0)
    }
}

/// High-contrast test chart: blocks, disks, a triangle, bars at several
/// orientations and a checkerboard on a dark background. Shapes are laid
/// out in relative coordinates, so any size works.
pub fn test_chart(width: usize, height: usize) -> Plane {
    let (wf, hf) = (width as f64, height as f64);
    Array2::from_shape_fn((height, width), |(y, x)| {
        // relative pixel-center coordinates
        let u = (x as f64 + 0.5) / wf;
        let v = (y as f64 + 0.5) / hf;
        let mut val = 0.12;
        if (0.08..0.38).contains(&u) && (0.08..0.34).contains(&v) {
            val = 0.88;
            if (0.16..0.24).contains(&u) && (0.14..0.26).contains(&v) {
                val = 0.3;
            }
        }
        let (du, dv) = (u - 0.7, v - 0.22);
        let r = (du * du + dv * dv).sqrt();
        if r < 0.14 {
            val = if r < 0.06 { 0.2 } else { 0.82 };
        }
        // triangle with vertices (0.1, 0.9), (0.45, 0.9), (0.28, 0.55)
        let inside = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| (bx - ax) * (v - ay) - (by - ay) * (u - ax) >= 0.0;
        let (p0, p1, p2) = ((0.1, 0.9), (0.45, 0.9), (0.28, 0.55));
        if inside(p0, p2) && inside(p2, p1) && inside(p1, p0) {
            val = 0.9;
        }
        // checkerboard
        if (0.58..0.94).contains(&u) && (0.6..0.94).contains(&v) {
            let cu = ((u - 0.58) / 0.06).floor() as i64;
            let cv = ((v - 0.6) / 0.06).floor() as i64;
            val = if (cu + cv) % 2 == 0 { 0.9 } else { 0.1 };
        }
        // horizontal, vertical and slanted bars
        if (0.42..0.44).contains(&v) && (0.05..0.5).contains(&u) {
            val = 0.95;
        }
        if (0.48..0.5).contains(&u) && (0.05..0.5).contains(&v) {
            val = 0.95;
        }
        let slant = v - 0.5 - 0.6 * (u - 0.55);
        if slant.abs() < 0.012 && (0.52..0.9).contains(&u) && v < 0.58 {
            val = 0.05;
        }
        val
    })
}

/// Blur every channel with replicate boundaries.
pub fn blur(img: &Image, k: &Kernel) -> Result<Image> {
    convolve(img, k, ConvMode::Spatial)
}

/// Add zero-mean Gaussian noise with standard deviation `sigma`, then clamp
/// to `[0, 1]`. The same seed always produces the same image.
pub fn add_gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(DeblurError::invalid(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clamped());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| DeblurError::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    img.map_planes(|p| Ok(p.mapv(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))))
}

/// Blur a sharp image by `k` and add seeded noise.
pub fn synthesize(sharp: &Image, k: &Kernel, sigma: f64, seed: u64) -> Result<Image> {
    add_gaussian_noise(&blur(sharp, k)?, sigma, seed)
}
