//! Salient-structure extraction: local gradient coherence (r-map), spatially
//! adaptive TV smoothing, shock-filter enhancement, gradient masking and the
//! initial threshold rule.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};

use crate::error::{DeblurError, Result};
use crate::image::{divergence, gradients, GradientField, Plane};

/// How the three components of `G` are combined against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskRule {
    /// keep a pixel when `||grad||_2 >= t`
    #[default]
    Magnitude,
    /// keep a pixel only when all three components of `G` reach `t`
    Conjunction,
}

impl FromStr for MaskRule {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "magnitude" => Ok(MaskRule::Magnitude),
            "conjunction" => Ok(MaskRule::Conjunction),
            other => Err(DeblurError::invalid(format!(
                "unknown mask rule {other:?} (expected magnitude or conjunction)"
            ))),
        }
    }
}

impl fmt::Display for MaskRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskRule::Magnitude => "magnitude",
            MaskRule::Conjunction => "conjunction",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureParams {
    /// TV fidelity scale
    pub theta: f64,
    /// odd side of the r-map window
    pub window: usize,
    /// gradient threshold for the salient-edge mask
    pub threshold: f64,
    pub shock_dt: f64,
    pub shock_steps: usize,
    pub mask_rule: MaskRule,
}

impl Default for StructureParams {
    fn default() -> Self {
        StructureParams {
            theta: 1.0,
            window: 5,
            threshold: 0.0,
            shock_dt: 1.0,
            shock_steps: 1,
            mask_rule: MaskRule::Magnitude,
        }
    }
}

impl StructureParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(DeblurError::invalid("theta must be positive"));
        }
        if !(self.threshold >= 0.0) {
            return Err(DeblurError::invalid("threshold must be non-negative"));
        }
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(DeblurError::invalid("window must be odd and at least 3"));
        }
        if !(self.shock_dt > 0.0 && self.shock_dt <= 1.0) {
            return Err(DeblurError::invalid("shock time step must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Summed-area table with a zero guard row and column.
fn integral(p: &Plane) -> Array2<f64> {
    let (h, w) = p.dim();
    let mut s = Array2::zeros((h + 1, w + 1));
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += p[[y, x]];
            s[[y + 1, x + 1]] = s[[y, x + 1]] + row;
        }
    }
    s
}

fn box_sum(s: &Array2<f64>, y0: usize, x0: usize, y1: usize, x1: usize) -> f64 {
    s[[y1, x1]] - s[[y0, x1]] - s[[y1, x0]] + s[[y0, x0]]
}

/// Ratio of the summed gradient vector to the summed gradient magnitude in a
/// `window x window` neighbourhood (clipped at the borders):
/// `r = ||sum grad B|| / (sum ||grad B|| + 0.5)`.
pub fn r_map(blurred: &Plane, window: usize) -> Plane {
    let g = gradients(blurred);
    let sx = integral(&g.gx);
    let sy = integral(&g.gy);
    let sm = integral(&g.magnitude());
    let (h, w) = blurred.dim();
    let half = window / 2;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1) = (y.saturating_sub(half), (y + half + 1).min(h));
        let (x0, x1) = (x.saturating_sub(half), (x + half + 1).min(w));
        let vx = box_sum(&sx, y0, x0, y1, x1);
        let vy = box_sum(&sy, y0, x0, y1, x1);
        // clamp away round-off from the summed-area differences
        let mag = box_sum(&sm, y0, x0, y1, x1).max(0.0);
        vx.hypot(vy) / (mag + 0.5)
    })
}

/// `omega = exp(-r^0.8)`
pub fn smooth_weight(r: &Plane) -> Plane {
    r.mapv(|v| (-v.abs().powf(0.8)).exp())
}

/// Value of `sum ||grad u||_2 + (u - f)^2 / (2 theta omega)`.
pub fn tv_objective(u: &Plane, f: &Plane, theta: f64, omega: &Plane) -> f64 {
    let tv: f64 = gradients(u).magnitude().sum();
    let fid: f64 = Zip::from(u)
        .and(f)
        .and(omega)
        .fold(0.0, |acc, &a, &b, &w| acc + (a - b) * (a - b) / (2.0 * theta * w));
    tv + fid
}

#[derive(Debug, Clone)]
pub struct TvOutcome {
    pub image: Plane,
    pub iterations: usize,
    /// objective of the returned iterate after each iteration (index 0 is the input)
    pub objective: Vec<f64>,
}

pub const TV_MAX_ITERS: usize = 100;
pub const TV_REL_TOL: f64 = 1e-3;

/// Structure component of `img` under a spatially varying fidelity weight.
pub fn adaptive_tv_denoise(img: &Plane, theta: f64, omega: &Plane) -> Plane {
    adaptive_tv_denoise_traced(img, theta, omega).image
}

/// Accelerated projection on the dual of the weighted ROF model.
///
/// With `lambda = theta * omega` the primal solution is
/// `u = f + lambda * div p` for a dual field `|p| <= 1`. The best primal
/// iterate seen so far is returned, so the recorded objective never increases.
pub fn adaptive_tv_denoise_traced(img: &Plane, theta: f64, omega: &Plane) -> TvOutcome {
    assert_eq!(img.dim(), omega.dim(), "weight map must match the image");
    let (h, w) = img.dim();
    let lambda = omega.mapv(|o| theta * o);
    let lmax = lambda.fold(0.0f64, |a, &b| a.max(b));
    let mut best = img.clone();
    let mut best_obj = tv_objective(img, img, theta, omega);
    let mut objective = vec![best_obj];
    if lmax <= 0.0 {
        return TvOutcome {
            image: best,
            iterations: 0,
            objective,
        };
    }
    let tau = 1.0 / (8.0 * lmax);
    let primal = |p: &GradientField| -> Plane {
        let mut u = divergence(p);
        Zip::from(&mut u)
            .and(img)
            .and(&lambda)
            .for_each(|u, &f, &l| *u = f + l * *u);
        u
    };

    let mut p = GradientField::zeros(h, w);
    let mut q = p.clone();
    let mut t = 1.0f64;
    let mut u_prev = img.clone();
    let mut iterations = 0;
    for _ in 0..TV_MAX_ITERS {
        iterations += 1;
        let gu = gradients(&primal(&q));
        let mut p_next = GradientField::zeros(h, w);
        Zip::from(&mut p_next.gx)
            .and(&mut p_next.gy)
            .and(&q.gx)
            .and(&q.gy)
            .and(&gu.gx)
            .and(&gu.gy)
            .for_each(|px, py, &qx, &qy, &gx, &gy| {
                let ax = qx + tau * gx;
                let ay = qy + tau * gy;
                let n = ax.hypot(ay).max(1.0);
                *px = ax / n;
                *py = ay / n;
            });
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let m = (t - 1.0) / t_next;
        q = GradientField {
            gx: &p_next.gx + &((&p_next.gx - &p.gx) * m),
            gy: &p_next.gy + &((&p_next.gy - &p.gy) * m),
        };
        p = p_next;
        t = t_next;

        let u = primal(&p);
        let obj = tv_objective(&u, img, theta, omega);
        let change = (&u - &u_prev).mapv(|v| v * v).sum().sqrt();
        let norm = u.mapv(|v| v * v).sum().sqrt().max(1e-12);
        if obj < best_obj {
            best_obj = obj;
            best = u.clone();
        }
        objective.push(best_obj);
        u_prev = u;
        if change / norm < TV_REL_TOL {
            break;
        }
    }
    TvOutcome {
        image: best,
        iterations,
        objective,
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Shock-filter evolution `dI/dt = -sign(I_x^2 I_xx + 2 I_x I_y I_xy + I_y^2 I_yy) ||grad I||`.
///
/// Second derivatives use central differences, `||grad I||` is upwinded with
/// minmod, borders are replicated, and each step is clamped to the range of
/// the input.
pub fn shock_filter(img: &Plane, dt: f64, steps: usize) -> Plane {
    let (h, w) = img.dim();
    let lo = img.fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = img.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut cur = img.clone();
    for _ in 0..steps {
        let at = |p: &Plane, y: isize, x: isize| {
            p[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]]
        };
        let next = Array2::from_shape_fn((h, w), |(y, x)| {
            let (y, x) = (y as isize, x as isize);
            let c = at(&cur, y, x);
            let (e, wv) = (at(&cur, y, x + 1), at(&cur, y, x - 1));
            let (s, n) = (at(&cur, y + 1, x), at(&cur, y - 1, x));
            let ix = 0.5 * (e - wv);
            let iy = 0.5 * (s - n);
            let ixx = e - 2.0 * c + wv;
            let iyy = s - 2.0 * c + n;
            let ixy = 0.25
                * (at(&cur, y + 1, x + 1) - at(&cur, y - 1, x + 1) - at(&cur, y + 1, x - 1)
                    + at(&cur, y - 1, x - 1));
            let edge = ix * ix * ixx + 2.0 * ix * iy * ixy + iy * iy * iyy;
            let mx = minmod(e - c, c - wv);
            let my = minmod(s - c, c - n);
            let grad = mx.hypot(my);
            let sign = if edge > 0.0 {
                1.0
            } else if edge < 0.0 {
                -1.0
            } else {
                0.0
            };
            (c - dt * sign * grad).clamp(lo, hi)
        });
        cur = next;
    }
    cur
}

/// Components of `G` in the order (magnitude, |d_x|/(5 sqrt 2), |d_y|/(5 sqrt 2)).
fn g_components(gx: f64, gy: f64) -> [f64; 3] {
    let s = 5.0 * SQRT_2;
    [gx.hypot(gy), gx.abs() / s, gy.abs() / s]
}

/// Binary mask of pixels whose gradient passes the threshold under `rule`.
pub fn salient_mask(grad: &GradientField, t: f64, rule: MaskRule) -> Array2<bool> {
    let mut mask = Array2::from_elem(grad.dim(), false);
    Zip::from(&mut mask)
        .and(&grad.gx)
        .and(&grad.gy)
        .for_each(|m, &gx, &gy| {
            let g = g_components(gx, gy);
            *m = match rule {
                MaskRule::Magnitude => g[0] >= t,
                MaskRule::Conjunction => g.iter().all(|&c| c >= t),
            };
        });
    mask
}

/// Masked gradient field of an enhanced structure image.
pub fn select_salient_edges(enhanced: &Plane, t: f64, rule: MaskRule) -> GradientField {
    let g = gradients(enhanced);
    mask_field(&g, &salient_mask(&g, t, rule))
}

pub(crate) fn mask_field(g: &GradientField, mask: &Array2<bool>) -> GradientField {
    let keep = |v: &Plane| {
        let mut out = v.clone();
        Zip::from(&mut out).and(mask).for_each(|o, &m| {
            if !m {
                *o = 0.0
            }
        });
        out
    };
    GradientField {
        gx: keep(&g.gx),
        gy: keep(&g.gy),
    }
}

/// Index of the 45-degree orientation group for a gradient (angle mod 180).
pub fn direction_group(gx: f64, gy: f64) -> usize {
    let mut deg = gy.atan2(gx).to_degrees();
    if deg < 0.0 {
        deg += 180.0;
    }
    if deg >= 180.0 {
        deg -= 180.0;
    }
    ((deg / 45.0) as usize).min(3)
}

/// Initial gradient threshold: the largest `t` that still keeps at least
/// `ceil(sqrt(n_image * n_kernel) / 2)` pixels in every orientation group
/// that has that many nonzero gradients. Sparser groups are ignored; returns
/// 0 when every group is sparse.
pub fn init_threshold(grad: &GradientField, n_image: usize, n_kernel: usize) -> f64 {
    let m = required_per_group(n_image, n_kernel);
    let mut groups: [Vec<f64>; 4] = Default::default();
    Zip::from(&grad.gx).and(&grad.gy).for_each(|&gx, &gy| {
        let mag = gx.hypot(gy);
        if mag > 0.0 {
            groups[direction_group(gx, gy)].push(mag);
        }
    });
    groups
        .iter_mut()
        .filter(|g| g.len() >= m)
        .map(|g| {
            g.sort_by(|a, b| b.total_cmp(a));
            g[m - 1]
        })
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
        .unwrap_or(0.0)
}

/// `ceil(sqrt(n_image * n_kernel) / 2)`
pub fn required_per_group(n_image: usize, n_kernel: usize) -> usize {
    ((0.5 * ((n_image.max(1) * n_kernel.max(1)) as f64).sqrt()).ceil() as usize).max(1)
}

/// Output of one structure pass over a latent estimate.
#[derive(Debug, Clone)]
pub struct StructurePass {
    /// TV structure component
    pub smoothed: Plane,
    /// shock-filtered structure
    pub enhanced: Plane,
}

/// Adaptive TV smoothing followed by shock filtering.
pub fn structure_pass(latent: &Plane, omega: &Plane, params: &StructureParams) -> StructurePass {
    let smoothed = adaptive_tv_denoise(latent, params.theta, omega);
    let enhanced = shock_filter(&smoothed, params.shock_dt, params.shock_steps);
    StructurePass { smoothed, enhanced }
}
