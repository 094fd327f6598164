use ndarray::Array2;

use crate::error::{DeblurError, Result};
use crate::image::{Image, Plane};

/// Bilinear resize to an explicit size, pixel centers aligned. No clamping.
pub fn resize_plane(src: &Plane, height: usize, width: usize) -> Plane {
    let (sh, sw) = src.dim();
    let ys: Vec<_> = (0..height).map(|y| sample_pos(y, sh, height)).collect();
    let xs: Vec<_> = (0..width).map(|x| sample_pos(x, sw, width)).collect();
    Array2::from_shape_fn((height, width), |(y, x)| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

fn sample_pos(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    if src_len == dst_len {
        return (dst, dst, 0.0);
    }
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
        .clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Output side for a scale factor: `round(dim * factor)`.
pub fn scaled_len(dim: usize, factor: f64) -> usize {
    (dim as f64 * factor).round() as usize
}

/// Bilinear rescale by `factor`; output samples clamped to `[0, 1]`.
pub fn resample(img: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(DeblurError::invalid(format!("resample factor must be positive, got {factor}")));
    }
    let (h, w) = (scaled_len(img.height(), factor), scaled_len(img.width(), factor));
    if h < 1 || w < 1 {
        return Err(DeblurError::invalid(format!(
            "resampling {}x{} by {factor} leaves an empty image",
            img.width(),
            img.height()
        )));
    }
    img.map_planes(|p| Ok(resize_plane(p, h, w).mapv(|v| v.clamp(0.0, 1.0))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rmse(a: &Plane, b: &Plane) -> f64 {
        ((a - b).mapv(|v| v * v).mean().unwrap()).sqrt()
    }

    #[test]
    fn unit_factor_is_identity() {
        let p = Array2::from_shape_fn((5, 7), |(y, x)| (y * 7 + x) as f64 / 35.0);
        let img = Image::gray(p).unwrap();
        assert_eq!(resample(&img, 1.0).unwrap(), img);
    }

    #[test]
    fn constants_stay_constant() {
        let img = Image::gray(Array2::from_elem((9, 6), 0.42)).unwrap();
        for f in [0.3, std::f64::consts::FRAC_1_SQRT_2, 1.7, 3.0] {
            let out = resample(&img, f).unwrap();
            assert!(out.plane(0).iter().all(|&v| (v - 0.42).abs() < 1e-12));
        }
    }

    #[test]
    fn ramp_down_up_roundtrip() {
        // Down by 0.5 averages 2x2 blocks of the ramp exactly; the way back is
        // exact in the interior and clamps at the first and last column, where
        // the error is half the ramp step.
        let ramp = Array2::from_shape_fn((8, 8), |(_, x)| x as f64 / 7.0);
        let img = Image::gray(ramp.clone()).unwrap();
        let down = resample(&img, 0.5).unwrap();
        assert_eq!(down.width(), 4);
        let up = resample(&down, 2.0).unwrap();
        let e = rmse(up.plane(0), &ramp);
        let step = 1.0 / 7.0;
        let expected = (2.0 * (0.5 * step) * (0.5 * step) / 8.0f64).sqrt();
        assert!((e - expected).abs() < 1e-12, "rmse {e}, expected {expected}");
        assert!(e <= 0.05);
    }

    #[test]
    fn collapse_to_empty_rejected() {
        let img = Image::gray(Array2::zeros((3, 3))).unwrap();
        assert!(resample(&img, 0.1).is_err());
        assert!(resample(&img, 0.0).is_err());
    }
}
