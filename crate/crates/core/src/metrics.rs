//! Kernel and image quality measures.

use ndarray::{s, Array2};

use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Reported error ratio when the reference restoration is already exact.
pub const ERROR_RATIO_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ssde: f64,
    pub psnr_db: f64,
    pub error_ratio: f64,
    /// `(dy, dx)` applied to the estimated kernel before comparison
    pub alignment_shift: (isize, isize),
}

/// Sum of squared differences between kernels after normalizing both to unit
/// sum and shifting the estimate by the integer offset (within half the
/// kernel side per axis) that maximizes their cross-correlation.
///
/// Returns the error and the `(dy, dx)` shift applied to `k_est`.
pub fn ssde(k_est: &Kernel, k_true: &Kernel) -> (f64, (isize, isize)) {
    ssde_grids(k_est.weights(), k_true.weights())
}

pub fn ssde_grids(est: &Plane, truth: &Plane) -> (f64, (isize, isize)) {
    let h = est.nrows().max(truth.nrows());
    let w = est.ncols().max(truth.ncols());
    let (sy, sx) = (h / 2, w / 2);
    // canvas large enough that no shift in the search window clips mass
    let (ch, cw) = (h + 2 * sy, w + 2 * sx);
    let place = |g: &Plane| {
        let mut c = Array2::zeros((ch, cw));
        let total: f64 = g.sum();
        let scale = if total.abs() > 0.0 { 1.0 / total } else { 1.0 };
        let oy = sy + (h - g.nrows()) / 2;
        let ox = sx + (w - g.ncols()) / 2;
        c.slice_mut(s![oy..oy + g.nrows(), ox..ox + g.ncols()])
            .assign(&(g * scale));
        c
    };
    let a = place(est);
    let b = place(truth);
    let shifted = |dy: isize, dx: isize| {
        let mut out = Array2::zeros((ch, cw));
        for ((y, x), &v) in a.indexed_iter() {
            if v == 0.0 {
                continue;
            }
            let ty = y as isize + dy;
            let tx = x as isize + dx;
            if ty >= 0 && tx >= 0 && (ty as usize) < ch && (tx as usize) < cw {
                out[[ty as usize, tx as usize]] = v;
            }
        }
        out
    };
    let mut best = (f64::NEG_INFINITY, (0isize, 0isize));
    for dy in -(sy as isize)..=(sy as isize) {
        for dx in -(sx as isize)..=(sx as isize) {
            let corr = (&shifted(dy, dx) * &b).sum();
            // ties go to the smallest shift so the result is deterministic
            let better = corr > best.0
                || (corr == best.0 && dy.abs() + dx.abs() < best.1 .0.abs() + best.1 .1.abs());
            if better {
                best = (corr, (dy, dx));
            }
        }
    }
    let (dy, dx) = best.1;
    let err = (&shifted(dy, dx) - &b).mapv(|v| v * v).sum();
    (err, (dy, dx))
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(DeblurError::invalid(format!(
            "image sizes differ: {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

fn squared_error(a: &Image, b: &Image) -> f64 {
    a.planes()
        .iter()
        .zip(b.planes())
        .map(|(p, q)| (p - q).mapv(|v| v * v).sum())
        .sum()
}

/// `10 log10(1 / MSE)` for samples in `[0, 1]`, capped at 99 dB.
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    check_dims(img, reference)?;
    let n = (img.width() * img.height() * img.channels()) as f64;
    let mse = squared_error(img, reference) / n;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// `||I_r - I_g||^2 / ||I_t - I_g||^2`, capped at `1e6` when the
/// denominator is below `1e-12`.
pub fn error_ratio(restored: &Image, restored_true: &Image, ground_truth: &Image) -> Result<f64> {
    check_dims(restored, ground_truth)?;
    check_dims(restored_true, ground_truth)?;
    let num = squared_error(restored, ground_truth);
    let den = squared_error(restored_true, ground_truth);
    if den < 1e-12 {
        return Ok(if num < 1e-12 { 0.0 } else { ERROR_RATIO_CAP });
    }
    Ok(num / den)
}

/// Thresholds of the cumulative error-ratio table.
pub const RATIO_BINS: [f64; 8] = [1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];

/// Percentage of cases whose error ratio is below each threshold.
pub fn cumulative_histogram(ratios: &[f64], thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds
        .iter()
        .map(|&t| {
            let n = ratios.iter().filter(|&&r| r < t).count();
            let pct = if ratios.is_empty() {
                0.0
            } else {
                100.0 * n as f64 / ratios.len() as f64
            };
            (t, pct)
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(p: Plane) -> Image {
        Image::gray(p).unwrap()
    }

    #[test]
    fn ssde_identical_is_zero() {
        let k = Kernel::uniform(5, 5);
        assert_eq!(ssde(&k, &k), (0.0, (0, 0)));
    }

    #[test]
    fn ssde_aligns_shift() {
        let mut a = Array2::zeros((5, 5));
        a[[2, 1]] = 0.5;
        a[[2, 2]] = 0.5;
        let mut b = Array2::zeros((5, 5));
        b[[2, 2]] = 0.5;
        b[[2, 3]] = 0.5;
        let (e, shift) = ssde_grids(&a, &b);
        assert!(e.abs() < 1e-15);
        assert_eq!(shift, (0, 1));
    }

    #[test]
    fn ssde_delta_vs_box() {
        let (e, _) = ssde(&Kernel::delta(3, 3), &Kernel::uniform(3, 3));
        let expected = (1.0 - 1.0 / 9.0f64).powi(2) + 8.0 * (1.0 / 9.0f64).powi(2);
        assert!((e - expected).abs() < 1e-12);
        assert!((e - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn ssde_symmetric_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let a = Array2::from_shape_fn((7, 7), |_| rng.random::<f64>());
            let b = Array2::from_shape_fn((7, 7), |_| rng.random::<f64>());
            let (e1, _) = ssde_grids(&a, &b);
            let (e2, _) = ssde_grids(&b, &a);
            assert!((e1 - e2).abs() <= 1e-12, "{e1} vs {e2}");
        }
    }

    #[test]
    fn ssde_handles_size_mismatch() {
        let (e, _) = ssde(&Kernel::delta(3, 3), &Kernel::delta(7, 7));
        assert!(e.abs() < 1e-15);
    }

    #[test]
    fn psnr_values() {
        let a = gray(Array2::from_elem((10, 10), 0.5));
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b = gray(Array2::from_elem((10, 10), 0.6));
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = gray(Array2::zeros((10, 10)));
        let d = gray(Array2::ones((10, 10)));
        assert!(psnr(&c, &d).unwrap().abs() < 1e-12);
        let e = gray(Array2::zeros((10, 9)));
        assert!(psnr(&a, &e).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = Array2::from_elem((32, 32), 0.5);
        let unit = Array2::from_shape_fn((32, 32), |_| rng.random::<f64>() - 0.5);
        let mut last = f64::INFINITY;
        for s in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let p = psnr(&gray(&base + &(&unit * s)), &gray(base.clone())).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn error_ratio_cases() {
        let g = gray(Array2::from_elem((4, 4), 0.5));
        let r = gray(Array2::from_elem((4, 4), 0.7));
        let t = gray(Array2::from_elem((4, 4), 0.6));
        assert!((error_ratio(&r, &r, &g).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(error_ratio(&g, &t, &g).unwrap(), 0.0);
        assert_eq!(error_ratio(&r, &g, &g).unwrap(), ERROR_RATIO_CAP);
        // quadratic in the residual for fixed (I_t, I_g)
        let r2 = gray(Array2::from_elem((4, 4), 0.9));
        let base = error_ratio(&r, &t, &g).unwrap();
        assert!((error_ratio(&r2, &t, &g).unwrap() - 4.0 * base).abs() < 1e-9);
    }

    #[test]
    fn histogram_and_median() {
        let ratios = [1.2, 1.8, 2.2, 6.0];
        let h = cumulative_histogram(&ratios, &[1.5, 2.0, 5.0]);
        assert_eq!(h, vec![(1.5, 25.0), (2.0, 50.0), (5.0, 75.0)]);
        assert_eq!(median(&ratios), Some(2.0));
        assert_eq!(median(&[]), None);
    }
}
