//! Non-blind deconvolution with (weighted) anisotropic TV priors, solved by
//! iteratively reweighted least squares with conjugate-gradient inner solves.

use ndarray::{Array2, Zip};

use crate::cg::cg_solve;
use crate::conv::ConvOperator;
use crate::error::{DeblurError, Result};
use crate::image::{divergence, gradients, GradientField, Image, Kernel, Plane};

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvParams {
    /// TV weight of the interim restoration
    pub lambda_c: f64,
    /// weight of the final, structure-adaptive restoration
    pub lambda: f64,
    pub irls_iters: usize,
    pub cg_iters_interim: usize,
    pub cg_iters_final: usize,
    /// floor on `|dI|` in the reweighting denominators
    pub weight_floor: f64,
}

impl Default for DeconvParams {
    fn default() -> Self {
        DeconvParams {
            lambda_c: 0.005,
            lambda: 0.003,
            irls_iters: 3,
            cg_iters_interim: 30,
            cg_iters_final: 100,
            weight_floor: 0.001,
        }
    }
}

impl DeconvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c > 0.0) || !(self.lambda > 0.0) {
            return Err(DeblurError::invalid("deconvolution weights must be positive"));
        }
        if !(self.weight_floor > 0.0) {
            return Err(DeblurError::invalid("weight floor must be positive"));
        }
        Ok(())
    }
}

/// `exp(-|d|^0.8)` per pixel: the smoothness weight of a salient-edge channel.
pub fn edge_smoothness(d: &Plane) -> Plane {
    d.mapv(|v| (-v.abs().powf(0.8)).exp())
}

/// `||B - k*I||^2 + lambda * sum (sx |d_x I| + sy |d_y I|)`
pub fn deconv_objective(
    op: &ConvOperator,
    blurred: &Plane,
    latent: &Plane,
    lambda: f64,
    sx: &Plane,
    sy: &Plane,
) -> f64 {
    let data = (&op.apply(latent) - blurred).mapv(|v| v * v).sum();
    let g = gradients(latent);
    let reg_x = Zip::from(&g.gx).and(sx).fold(0.0, |a, &d, &w| a + w * d.abs());
    let reg_y = Zip::from(&g.gy).and(sy).fold(0.0, |a, &d, &w| a + w * d.abs());
    data + lambda * (reg_x + reg_y)
}

/// `K'K v + D' diag(w) D v`: the matrix of one reweighted quadratic.
pub(crate) fn normal_apply(op: &ConvOperator, wx: &Plane, wy: &Plane, v: &Plane) -> Plane {
    let data = op.apply_adjoint(&op.apply(v));
    let gv = gradients(v);
    let weighted = GradientField {
        gx: &gv.gx * wx,
        gy: &gv.gy * wy,
    };
    data - divergence(&weighted)
}

#[derive(Debug, Clone)]
pub struct DeconvTrace {
    pub image: Plane,
    /// true objective at the initial image and after each reweighting
    pub objective: Vec<f64>,
}

/// Shared IRLS core. Starts at `init` (the blurred image when `None`);
/// every reweighting solves the majorizing quadratic by CG (warm-started at
/// the current image) and keeps the objective non-increasing by shortening
/// the step if needed.
#[allow(clippy::too_many_arguments)]
pub fn irls_deconv(
    blurred: &Plane,
    init: Option<&Plane>,
    k: &Kernel,
    lambda: f64,
    sx: &Plane,
    sy: &Plane,
    irls_iters: usize,
    cg_iters: usize,
    floor: f64,
) -> Result<DeconvTrace> {
    let (h, w) = blurred.dim();
    if k.height() > h || k.width() > w {
        return Err(DeblurError::invalid(format!(
            "kernel {}x{} larger than image {w}x{h}",
            k.width(),
            k.height()
        )));
    }
    if init.is_some_and(|i| i.dim() != blurred.dim()) {
        return Err(DeblurError::invalid("initial image size differs from the blurred image"));
    }
    let op = ConvOperator::new(h, w, k.weights());
    let kt_b = op.apply_adjoint(blurred);
    let mut latent = init.unwrap_or(blurred).clone();
    let mut obj = deconv_objective(&op, blurred, &latent, lambda, sx, sy);
    let mut objective = vec![obj];

    for _ in 0..irls_iters {
        let g = gradients(&latent);
        // half of lambda * smoothness / max(|d I|, floor)
        let wx = Zip::from(&g.gx)
            .and(sx)
            .map_collect(|&d, &s| 0.5 * lambda * s / d.abs().max(floor));
        let wy = Zip::from(&g.gy)
            .and(sy)
            .map_collect(|&d, &s| 0.5 * lambda * s / d.abs().max(floor));
        let apply_plane = |v: &Plane| normal_apply(&op, &wx, &wy, v);
        let a_latent = apply_plane(&latent);
        let residual: Vec<f64> = kt_b.iter().zip(a_latent.iter()).map(|(b, a)| b - a).collect();
        let step = cg_solve(
            |v, out| {
                let vp = Array2::from_shape_vec((h, w), v.to_vec()).expect("shape");
                let r = apply_plane(&vp);
                out.iter_mut().zip(r.iter()).for_each(|(o, &x)| *o = x);
            },
            &residual,
            cg_iters,
        )?;
        let delta = Array2::from_shape_vec((h, w), step.x).expect("shape");
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(DeblurError::numerical("deconvolution", "non-finite update"));
        }
        let mut t = 1.0;
        for _ in 0..12 {
            let trial = &latent + &(&delta * t);
            let trial_obj = deconv_objective(&op, blurred, &trial, lambda, sx, sy);
            if !trial_obj.is_finite() {
                return Err(DeblurError::numerical("deconvolution", "non-finite objective"));
            }
            if trial_obj <= obj {
                latent = trial;
                obj = trial_obj;
                break;
            }
            t *= 0.5;
        }
        objective.push(obj);
    }
    Ok(DeconvTrace {
        image: latent,
        objective,
    })
}

/// Interim restoration `min ||B - k*I||^2 + lambda_c ||grad I||_1`.
pub fn tv_deconv(blurred: &Plane, k: &Kernel, lambda_c: f64, params: &DeconvParams) -> Result<Plane> {
    tv_deconv_traced(blurred, k, lambda_c, params).map(|t| t.image)
}

pub fn tv_deconv_traced(
    blurred: &Plane,
    k: &Kernel,
    lambda_c: f64,
    params: &DeconvParams,
) -> Result<DeconvTrace> {
    tv_deconv_from(blurred, None, k, lambda_c, params)
}

/// Interim restoration starting from `init` instead of the blurred image.
pub fn tv_deconv_from(
    blurred: &Plane,
    init: Option<&Plane>,
    k: &Kernel,
    lambda_c: f64,
    params: &DeconvParams,
) -> Result<DeconvTrace> {
    if !(lambda_c > 0.0) {
        return Err(DeblurError::invalid("lambda_c must be positive"));
    }
    let ones = Array2::ones(blurred.dim());
    irls_deconv(
        blurred,
        init,
        k,
        lambda_c,
        &ones,
        &ones,
        params.irls_iters,
        params.cg_iters_interim,
        params.weight_floor,
    )
}

/// Final restoration of one channel with TV weights damped along salient edges.
pub fn adaptive_deconv_traced(
    blurred: &Plane,
    k: &Kernel,
    grad_s: &GradientField,
    lambda: f64,
    params: &DeconvParams,
) -> Result<DeconvTrace> {
    if grad_s.dim() != blurred.dim() {
        return Err(DeblurError::invalid(format!(
            "salient edges are {:?} but the image is {:?}",
            grad_s.dim(),
            blurred.dim()
        )));
    }
    if !(lambda > 0.0) {
        return Err(DeblurError::invalid("lambda must be positive"));
    }
    irls_deconv(
        blurred,
        None,
        k,
        lambda,
        &edge_smoothness(&grad_s.gx),
        &edge_smoothness(&grad_s.gy),
        params.irls_iters,
        params.cg_iters_final,
        params.weight_floor,
    )
}

pub fn adaptive_deconv_plane(
    blurred: &Plane,
    k: &Kernel,
    grad_s: &GradientField,
    lambda: f64,
    params: &DeconvParams,
) -> Result<Plane> {
    adaptive_deconv_traced(blurred, k, grad_s, lambda, params).map(|t| t.image)
}

/// Every channel is restored separately with the same salient edges.
pub fn adaptive_deconv(
    blurred: &Image,
    k: &Kernel,
    grad_s: &GradientField,
    lambda: f64,
    params: &DeconvParams,
) -> Result<Image> {
    blurred.map_planes(|p| adaptive_deconv_plane(p, k, grad_s, lambda, params))
}
