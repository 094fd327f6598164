//! 2D convolution with edge-replicated boundaries, in the spatial domain and
//! through the FFT, plus the adjoint used by the normal-equation solvers.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvMode {
    #[default]
    Spatial,
    Fft,
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Row-major 2D FFT of a fixed size.
pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.height * self.width
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform, normalized so that `inverse(forward(x)) == x`.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len());
        let (h, w) = (self.height, self.width);
        rows.process(data);
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x in 0..w {
                t[x * h + y] = data[y * w + x];
            }
        }
        cols.process(&mut t);
        for x in 0..w {
            for y in 0..h {
                data[y * w + x] = t[x * h + y];
            }
        }
    }
}

fn check_fits(img: &Plane, k: &Kernel) -> Result<()> {
    if k.height() > img.nrows() || k.width() > img.ncols() {
        return Err(DeblurError::invalid(format!(
            "kernel {}x{} larger than image {}x{}",
            k.width(),
            k.height(),
            img.ncols(),
            img.nrows()
        )));
    }
    Ok(())
}

/// Same-size convolution of one plane with edge replication.
pub fn convolve_plane(img: &Plane, k: &Kernel, mode: ConvMode) -> Result<Plane> {
    check_fits(img, k)?;
    Ok(match mode {
        ConvMode::Spatial => convolve_spatial(img, k.weights()),
        ConvMode::Fft => ConvOperator::new(img.nrows(), img.ncols(), k.weights()).apply(img),
    })
}

/// Convolve every channel of `img` with `k`.
pub fn convolve(img: &Image, k: &Kernel, mode: ConvMode) -> Result<Image> {
    img.map_planes(|p| convolve_plane(p, k, mode))
}

pub(crate) fn convolve_spatial(img: &Plane, k: &Plane) -> Plane {
    let (h, w) = img.dim();
    let (kh, kw) = k.dim();
    let (ry, rx) = (kh as isize / 2, kw as isize / 2);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for a in 0..kh {
            let sy = clamp(y as isize + ry - a as isize, h);
            for b in 0..kw {
                let sx = clamp(x as isize + rx - b as isize, w);
                acc += k[[a, b]] * img[[sy, sx]];
            }
        }
        acc
    })
}

/// Replicate-boundary convolution by a fixed kernel on a fixed image size,
/// with its exact adjoint. Both directions go through one cached FFT plan.
pub struct ConvOperator {
    height: usize,
    width: usize,
    ry: usize,
    rx: usize,
    fft: Fft2,
    spectrum: Vec<Complex64>,
}

impl ConvOperator {
    pub fn new(height: usize, width: usize, kernel: &Plane) -> Self {
        let (kh, kw) = kernel.dim();
        let (ry, rx) = (kh / 2, kw / 2);
        let (ph, pw) = (height + 2 * ry, width + 2 * rx);
        let (nh, nw) = (next_fast_len(ph), next_fast_len(pw));
        let fft = Fft2::new(nh, nw);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); nh * nw];
        for ((a, b), &v) in kernel.indexed_iter() {
            spectrum[a * nw + b] = Complex64::new(v, 0.0);
        }
        fft.forward(&mut spectrum);
        ConvOperator {
            height,
            width,
            ry,
            rx,
            fft,
            spectrum,
        }
    }

    fn padded_dims(&self) -> (usize, usize) {
        (self.height + 2 * self.ry, self.width + 2 * self.rx)
    }

    fn nw(&self) -> usize {
        self.fft.width
    }

    /// `k * img` with edge replication.
    pub fn apply(&self, img: &Plane) -> Plane {
        assert_eq!(img.dim(), (self.height, self.width));
        let (ph, pw) = self.padded_dims();
        let nw = self.nw();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft.len()];
        for py in 0..ph {
            let sy = py.saturating_sub(self.ry).min(self.height - 1);
            for px in 0..pw {
                let sx = px.saturating_sub(self.rx).min(self.width - 1);
                buf[py * nw + px] = Complex64::new(img[[sy, sx]], 0.0);
            }
        }
        self.fft.forward(&mut buf);
        buf.iter_mut().zip(&self.spectrum).for_each(|(v, s)| *v *= s);
        self.fft.inverse(&mut buf);
        let (oy, ox) = (2 * self.ry, 2 * self.rx);
        Array2::from_shape_fn((self.height, self.width), |(y, x)| buf[(y + oy) * nw + x + ox].re)
    }

    /// Adjoint of [`ConvOperator::apply`].
    pub fn apply_adjoint(&self, r: &Plane) -> Plane {
        assert_eq!(r.dim(), (self.height, self.width));
        let (ph, pw) = self.padded_dims();
        let nw = self.nw();
        let (oy, ox) = (2 * self.ry, 2 * self.rx);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft.len()];
        for ((y, x), &v) in r.indexed_iter() {
            buf[(y + oy) * nw + x + ox] = Complex64::new(v, 0.0);
        }
        self.fft.forward(&mut buf);
        buf.iter_mut()
            .zip(&self.spectrum)
            .for_each(|(v, s)| *v *= s.conj());
        self.fft.inverse(&mut buf);
        // fold the replicated border back onto the edge pixels
        let mut out = Array2::zeros((self.height, self.width));
        for py in 0..ph {
            let sy = py.saturating_sub(self.ry).min(self.height - 1);
            for px in 0..pw {
                let sx = px.saturating_sub(self.rx).min(self.width - 1);
                out[[sy, sx]] += buf[py * nw + px].re;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Plane {
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    fn random_kernel(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Kernel {
        let raw = random_plane(rng, h, w);
        let s = raw.sum();
        let mut k = raw / s;
        // exact unit sum is not needed for convolution tests, but keep Kernel honest
        let err = 1.0 - k.sum();
        k[[h / 2, w / 2]] += err;
        Kernel::new(k).unwrap()
    }

    #[test]
    fn fast_len() {
        assert_eq!(next_fast_len(1), 1);
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(269), 270);
        assert_eq!(next_fast_len(97), 100);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_plane(&mut rng, 9, 12);
        for mode in [ConvMode::Spatial, ConvMode::Fft] {
            let out = convolve_plane(&img, &Kernel::delta(3, 5), mode).unwrap();
            let err = (&out - &img).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-12, "{mode:?}: {err}");
        }
    }

    #[test]
    fn uniform_kernel_preserves_constant() {
        let img = Array2::from_elem((8, 8), 0.37);
        let out = convolve_plane(&img, &Kernel::uniform(3, 3), ConvMode::Spatial).unwrap();
        assert!(out.iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn oversize_kernel_rejected() {
        let img = Array2::zeros((4, 4));
        let k = Kernel::delta(5, 3);
        assert!(matches!(
            convolve_plane(&img, &k, ConvMode::Fft),
            Err(DeblurError::InvalidInput(_))
        ));
    }

    #[test]
    fn spatial_and_fft_agree_17x17_5x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_plane(&mut rng, 17, 17);
        let k = random_kernel(&mut rng, 5, 5);
        let a = convolve_plane(&img, &k, ConvMode::Spatial).unwrap();
        let b = convolve_plane(&img, &k, ConvMode::Fft).unwrap();
        let err = (&a - &b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(err <= 1e-8, "max abs diff {err}");
    }

    #[test]
    fn asymmetric_kernel_orientation() {
        // k = [0, 0, 1] in one row shifts content right by one pixel
        let mut w = Array2::zeros((1, 3));
        w[[0, 2]] = 1.0;
        let k = Kernel::new(w).unwrap();
        let img = Array2::from_shape_fn((1, 6), |(_, x)| x as f64);
        let out = convolve_plane(&img, &k, ConvMode::Spatial).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let out_fft = convolve_plane(&img, &k, ConvMode::Fft).unwrap();
        for (a, b) in out.iter().zip(out_fft.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w, kh, kw) in [(10, 13, 3, 5), (7, 7, 7, 7), (20, 9, 1, 3)] {
            let k = random_kernel(&mut rng, kh, kw);
            let op = ConvOperator::new(h, w, k.weights());
            let u = random_plane(&mut rng, h, w);
            let v = random_plane(&mut rng, h, w);
            let lhs = (&op.apply(&u) * &v).sum();
            let rhs = (&u * &op.apply_adjoint(&v)).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }
}
