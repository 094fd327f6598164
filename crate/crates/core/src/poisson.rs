//! Least-squares image reconstruction from a gradient field.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::conv::Fft2;
use crate::image::{GradientField, Plane};

/// Transfer functions of the periodic forward differences along x and y,
/// laid out row-major on an `height x width` frequency grid.
pub(crate) fn difference_spectra(height: usize, width: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut dx = Vec::with_capacity(height * width);
    let mut dy = Vec::with_capacity(height * width);
    for v in 0..height {
        let ey = Complex64::from_polar(1.0, 2.0 * PI * v as f64 / height as f64) - 1.0;
        for u in 0..width {
            let ex = Complex64::from_polar(1.0, 2.0 * PI * u as f64 / width as f64) - 1.0;
            dx.push(ex);
            dy.push(ey);
        }
    }
    (dx, dy)
}

/// Forward differences with wrap-around at the last row and column.
pub fn periodic_gradients(img: &Plane) -> GradientField {
    let (h, w) = img.dim();
    GradientField {
        gx: Array2::from_shape_fn((h, w), |(y, x)| img[[y, (x + 1) % w]] - img[[y, x]]),
        gy: Array2::from_shape_fn((h, w), |(y, x)| img[[(y + 1) % h, x]] - img[[y, x]]),
    }
}

pub(crate) fn to_complex(p: &Plane) -> Vec<Complex64> {
    p.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Minimizes `||D I - g||^2` over periodic images `I`, where `D` is the
/// periodic forward difference. The free additive constant is fixed so the
/// mean of the result is 0.5. Values are not clamped.
pub fn poisson_reconstruct(g: &GradientField) -> Plane {
    let (h, w) = g.dim();
    let fft = Fft2::new(h, w);
    let mut gx = to_complex(&g.gx);
    let mut gy = to_complex(&g.gy);
    fft.forward(&mut gx);
    fft.forward(&mut gy);
    let (dx, dy) = difference_spectra(h, w);
    let mut out: Vec<Complex64> = (0..h * w)
        .map(|i| {
            let denom = dx[i].norm_sqr() + dy[i].norm_sqr();
            if denom < 1e-14 {
                Complex64::new(0.0, 0.0)
            } else {
                (dx[i].conj() * gx[i] + dy[i].conj() * gy[i]) / denom
            }
        })
        .collect();
    fft.inverse(&mut out);
    let mean = out.iter().map(|c| c.re).sum::<f64>() / (h * w) as f64;
    Array2::from_shape_fn((h, w), |(y, x)| out[y * w + x].re - mean + 0.5)
}
