//! Image, gradient-field and kernel containers plus the discrete derivative
//! operators shared by every stage.
//!
//! All 2D grids are `ndarray::Array2<f64>` indexed `[[row, col]]`, i.e.
//! `[[y, x]]`.

use ndarray::{Array2, Zip};

use crate::error::{DeblurError, Result};

/// A single-channel 2D grid of samples.
pub type Plane = Array2<f64>;

/// BT.601 luminance weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A 1- or 3-channel image with samples nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    planes: Vec<Plane>,
}

impl Image {
    pub fn new(planes: Vec<Plane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| DeblurError::invalid("image has no channels"))?;
        let dim = first.dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(DeblurError::invalid("image has zero width or height"));
        }
        if planes.iter().any(|p| p.dim() != dim) {
            return Err(DeblurError::invalid("image channels differ in size"));
        }
        if planes.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(DeblurError::invalid("image contains non-finite samples"));
        }
        Ok(Image { planes })
    }

    pub fn gray(plane: Plane) -> Result<Self> {
        Image::new(vec![plane])
    }

    /// Build an image from interleaved row-major samples (`RGBRGB...`).
    pub fn from_interleaved(
        width: usize,
        height: usize,
        channels: usize,
        samples: &[f64],
    ) -> Result<Self> {
        if samples.len() != width * height * channels {
            return Err(DeblurError::invalid(format!(
                "expected {} samples for {}x{}x{}, got {}",
                width * height * channels,
                width,
                height,
                channels,
                samples.len()
            )));
        }
        let planes = (0..channels)
            .map(|c| Array2::from_shape_fn((height, width), |(y, x)| samples[(y * width + x) * channels + c]))
            .collect();
        Image::new(planes)
    }

    pub fn width(&self) -> usize {
        self.planes[0].ncols()
    }

    pub fn height(&self) -> usize {
        self.planes[0].nrows()
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn plane(&self, channel: usize) -> &Plane {
        &self.planes[channel]
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    pub fn map_planes<F>(&self, mut f: F) -> Result<Image>
    where
        F: FnMut(&Plane) -> Result<Plane>,
    {
        let planes = self.planes.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Image::new(planes)
    }

    /// Copy with every sample clamped to `[0, 1]`.
    pub fn clamped(&self) -> Image {
        Image {
            planes: self
                .planes
                .iter()
                .map(|p| p.mapv(|v| v.clamp(0.0, 1.0)))
                .collect(),
        }
    }

    /// Sub-rectangle `(x, y, w, h)` of every channel.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x + w > self.width() || y + h > self.height() {
            return Err(DeblurError::invalid(format!(
                "crop {x},{y},{w},{h} outside {}x{} image",
                self.width(),
                self.height()
            )));
        }
        let planes = self
            .planes
            .iter()
            .map(|p| p.slice(ndarray::s![y..y + h, x..x + w]).to_owned())
            .collect();
        Ok(Image { planes })
    }
}

/// Collapse to a single luminance channel.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => {
            let p = img.planes();
            let mut out = Array2::zeros(p[0].dim());
            Zip::from(&mut out)
                .and(&p[0])
                .and(&p[1])
                .and(&p[2])
                .for_each(|o, &r, &g, &b| {
                    *o = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
                });
            Image::gray(out)
        }
        n => Err(DeblurError::invalid(format!(
            "grayscale conversion needs 1 or 3 channels, got {n}"
        ))),
    }
}

/// A pair of x- and y-derivative grids of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: Plane,
    pub gy: Plane,
}

impl GradientField {
    pub fn new(gx: Plane, gy: Plane) -> Result<Self> {
        if gx.dim() != gy.dim() {
            return Err(DeblurError::invalid("gradient components differ in size"));
        }
        Ok(GradientField { gx, gy })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        GradientField {
            gx: Array2::zeros((height, width)),
            gy: Array2::zeros((height, width)),
        }
    }

    /// `(height, width)`
    pub fn dim(&self) -> (usize, usize) {
        self.gx.dim()
    }

    pub fn magnitude(&self) -> Plane {
        let mut out = Array2::zeros(self.dim());
        Zip::from(&mut out)
            .and(&self.gx)
            .and(&self.gy)
            .for_each(|m, &x, &y| *m = x.hypot(y));
        out
    }

    pub fn is_zero(&self) -> bool {
        self.gx.iter().chain(self.gy.iter()).all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        let dx: f64 = Zip::from(&self.gx)
            .and(&other.gx)
            .fold(0.0, |acc, &a, &b| acc + a * b);
        let dy: f64 = Zip::from(&self.gy)
            .and(&other.gy)
            .fold(0.0, |acc, &a, &b| acc + a * b);
        dx + dy
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

/// Forward differences; the last column (x) and last row (y) are zero.
pub fn gradients(img: &Plane) -> GradientField {
    let (h, w) = img.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let v = img[[y, x]];
            if x + 1 < w {
                gx[[y, x]] = img[[y, x + 1]] - v;
            }
            if y + 1 < h {
                gy[[y, x]] = img[[y + 1, x]] - v;
            }
        }
    }
    GradientField { gx, gy }
}

/// Negative adjoint of [`gradients`]: `<gradients(u), g> = -<u, divergence(g)>`.
pub fn divergence(g: &GradientField) -> Plane {
    let (h, w) = g.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut d = 0.0;
            if x + 1 < w {
                d += g.gx[[y, x]];
            }
            if x >= 1 {
                d -= g.gx[[y, x - 1]];
            }
            if y + 1 < h {
                d += g.gy[[y, x]];
            }
            if y >= 1 {
                d -= g.gy[[y - 1, x]];
            }
            out[[y, x]] = d;
        }
    }
    out
}

/// A non-negative, unit-sum blur kernel with odd side lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    weights: Plane,
}

/// Allowed deviation of a kernel's total mass from 1.
pub const KERNEL_SUM_TOLERANCE: f64 = 1e-10;

impl Kernel {
    /// Validates every kernel invariant; use `project_kernel` to repair a raw grid.
    pub fn new(weights: Plane) -> Result<Self> {
        let (h, w) = weights.dim();
        if h % 2 == 0 || w % 2 == 0 {
            return Err(DeblurError::invalid(format!(
                "kernel sides must be odd, got {w}x{h}"
            )));
        }
        if weights.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(DeblurError::invalid(
                "kernel weights must be finite and non-negative",
            ));
        }
        let sum = weights.sum();
        if (sum - 1.0).abs() > KERNEL_SUM_TOLERANCE {
            return Err(DeblurError::invalid(format!(
                "kernel weights sum to {sum}, expected 1"
            )));
        }
        Ok(Kernel { weights })
    }

    /// Centered unit impulse.
    pub fn delta(height: usize, width: usize) -> Self {
        assert!(height % 2 == 1 && width % 2 == 1, "kernel sides must be odd");
        let mut weights = Array2::zeros((height, width));
        weights[[height / 2, width / 2]] = 1.0;
        Kernel { weights }
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        assert!(height % 2 == 1 && width % 2 == 1, "kernel sides must be odd");
        let n = (height * width) as f64;
        Kernel {
            weights: Array2::from_elem((height, width), 1.0 / n),
        }
    }

    pub(crate) fn from_projected(weights: Plane) -> Self {
        debug_assert!(weights.nrows() % 2 == 1 && weights.ncols() % 2 == 1);
        Kernel { weights }
    }

    pub fn weights(&self) -> &Plane {
        &self.weights
    }

    pub fn into_weights(self) -> Plane {
        self.weights
    }

    pub fn width(&self) -> usize {
        self.weights.ncols()
    }

    pub fn height(&self) -> usize {
        self.weights.nrows()
    }

    pub fn max_side(&self) -> usize {
        self.width().max(self.height())
    }
}
