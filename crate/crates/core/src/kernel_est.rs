//! Blur-kernel estimation from a blurred gradient field and salient edges.
//!
//! Each outer alternation runs a reweighted least-squares fit of
//! `||grad B - k * grad S||^2 + gamma ||k||_alpha^alpha` under the kernel
//! constraints, then an L0 gradient-count smoothing of the result, then a
//! projection back onto the constraints.

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::cg::{cg_solve, dense_matvec};
use crate::conv::Fft2;
use crate::error::{DeblurError, Result};
use crate::image::{GradientField, Kernel, Plane};
use crate::poisson::{difference_spectra, to_complex};

/// Floor on `|k|` inside the IRLS weights.
pub const IRLS_WEIGHT_FLOOR: f64 = 1e-4;
/// Final coupling weight of the L0 splitting.
pub const L0_BETA_MAX: f64 = 1e5;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstParams {
    /// weight of the sparsity term
    pub gamma: f64,
    /// sparsity exponent
    pub alpha: f64,
    /// weight of the gradient-count term
    pub mu: f64,
    /// outer alternations
    pub itr: usize,
    pub irls_iters: usize,
    pub cg_iters: usize,
}

impl Default for KernelEstParams {
    fn default() -> Self {
        KernelEstParams {
            gamma: 0.01,
            alpha: 0.5,
            mu: mu_schedule(25),
            itr: 2,
            irls_iters: 3,
            cg_iters: 25,
        }
    }
}

impl KernelEstParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.mu >= 0.0) {
            return Err(DeblurError::invalid("gamma and mu must be non-negative"));
        }
        // alpha = 2 turns the sparsity term into a ridge penalty, which is useful for testing
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(DeblurError::invalid("alpha must lie in (0, 2]"));
        }
        if self.itr == 0 || self.irls_iters == 0 {
            return Err(DeblurError::invalid("itr and irls_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Gradient-count weight as a function of the kernel side:
/// `clamp(5e-3 * side / 25, 1e-3, 2e-2)`.
pub fn mu_schedule(kernel_side: usize) -> f64 {
    (5e-3 * kernel_side as f64 / 25.0).clamp(1e-3, 2e-2)
}

/// Clamp negatives to zero and rescale to unit sum. A grid without positive
/// mass (sum <= 1e-12) becomes the centered delta and is flagged degenerate.
/// Even sides are grown by one zero row/column at the end.
pub fn project_kernel(raw: &Plane) -> (Kernel, bool) {
    let (h, w) = raw.dim();
    let (oh, ow) = (h | 1, w | 1);
    let mut out = Array2::zeros((oh, ow));
    for ((y, x), &v) in raw.indexed_iter() {
        out[[y, x]] = if v.is_finite() { v.max(0.0) } else { 0.0 };
    }
    let sum = out.sum();
    if sum <= 1e-12 {
        return (Kernel::delta(oh, ow), true);
    }
    out.mapv_inplace(|v| v / sum);
    (Kernel::from_projected(out), false)
}

/// Number of pixels with a nonzero forward difference in x or y
/// (replicate boundary: the last column/row contribute no difference).
pub fn gradient_count(k: &Plane) -> usize {
    let (h, w) = k.dim();
    let mut n = 0;
    for y in 0..h {
        for x in 0..w {
            let dx = if x + 1 < w { k[[y, x + 1]] - k[[y, x]] } else { 0.0 };
            let dy = if y + 1 < h { k[[y + 1, x]] - k[[y, x]] } else { 0.0 };
            if dx.abs() + dy.abs() != 0.0 {
                n += 1;
            }
        }
    }
    n
}

/// `||k_hat - k||^2 + mu * C(k_hat)`
pub fn l0_energy(k_hat: &Plane, k: &Plane, mu: f64) -> f64 {
    let fid: f64 = (k_hat - k).mapv(|v| v * v).sum();
    fid + mu * gradient_count(k_hat) as f64
}

/// Normal equations of the data term restricted to pixels where the kernel
/// fully overlaps the image, summed over the x and y gradient channels.
///
/// With `n = kh * kw` unknowns (row-major), `gram` is `n x n` and
/// `||grad B - k * grad S||^2 = k' G k - 2 k' rhs + b_norm`.
#[derive(Debug, Clone)]
pub struct GramSystem {
    pub kh: usize,
    pub kw: usize,
    pub gram: Vec<f64>,
    pub rhs: Vec<f64>,
    pub b_norm: f64,
}

impl GramSystem {
    pub fn new(grad_b: &GradientField, grad_s: &GradientField, kh: usize, kw: usize) -> Result<Self> {
        if grad_b.dim() != grad_s.dim() {
            return Err(DeblurError::invalid("blurred and salient gradient fields differ in size"));
        }
        let (h, w) = grad_s.dim();
        if kh > h || kw > w || kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(DeblurError::invalid(format!(
                "kernel {kw}x{kh} must be odd and fit inside the {w}x{h} gradient field"
            )));
        }
        let n = kh * kw;
        let mut sys = GramSystem {
            kh,
            kw,
            gram: vec![0.0; n * n],
            rhs: vec![0.0; n],
            b_norm: 0.0,
        };
        for (b, s) in [(&grad_b.gx, &grad_s.gx), (&grad_b.gy, &grad_s.gy)] {
            sys.accumulate(b, s);
        }
        Ok(sys)
    }

    pub fn unknowns(&self) -> usize {
        self.kh * self.kw
    }

    // (k * S)(p) = sum_a k(a) S(p + c - a) over the valid region
    // p in [ry, h - ry) x [rx, w - rx).
    fn accumulate(&mut self, b: &Plane, s: &Plane) {
        let (h, w) = s.dim();
        let (kh, kw) = (self.kh, self.kw);
        let (ry, rx) = (kh / 2, kw / 2);
        let n = kh * kw;

        for y in ry..h - ry {
            for x in rx..w - rx {
                let bv = b[[y, x]];
                self.b_norm += bv * bv;
            }
        }
        for ay in 0..kh {
            for ax in 0..kw {
                let mut acc = 0.0;
                for y in ry..h - ry {
                    let sy = y + ry - ay;
                    for x in rx..w - rx {
                        acc += b[[y, x]] * s[[sy, x + rx - ax]];
                    }
                }
                self.rhs[ay * kw + ax] += acc;
            }
        }

        // G(a, b) = sum_{q in V + c - a} S(q) S(q + a - b); for every lag the
        // products go into one summed-area table, then each entry is a box sum.
        let mut table = Array2::<f64>::zeros((h + 1, w + 1));
        let lag_y = kh as isize - 1;
        let lag_x = kw as isize - 1;
        for dy in 0..=lag_y {
            let dx_start = if dy == 0 { 0 } else { -lag_x };
            for dx in dx_start..=lag_x {
                // table of S(q) S(q + d), zero where q + d leaves the grid
                for qy in 0..h {
                    let ty = qy as isize + dy;
                    let mut row = 0.0;
                    for qx in 0..w {
                        let tx = qx as isize + dx;
                        if ty < h as isize && tx >= 0 && tx < w as isize {
                            row += s[[qy, qx]] * s[[ty as usize, tx as usize]];
                        }
                        table[[qy + 1, qx + 1]] = table[[qy, qx + 1]] + row;
                    }
                }
                // a - b = d  =>  a = b + d
                for by in 0..kh {
                    let ay = by as isize + dy;
                    if ay < 0 || ay >= kh as isize {
                        continue;
                    }
                    let ay = ay as usize;
                    for bx in 0..kw {
                        let ax = bx as isize + dx;
                        if ax < 0 || ax >= kw as isize {
                            continue;
                        }
                        let ax = ax as usize;
                        let (y0, y1) = (2 * ry - ay, h - ay);
                        let (x0, x1) = (2 * rx - ax, w - ax);
                        let v = table[[y1, x1]] - table[[y0, x1]] - table[[y1, x0]] + table[[y0, x0]];
                        let ia = ay * kw + ax;
                        let ib = by * kw + bx;
                        self.gram[ia * n + ib] += v;
                        if ia != ib {
                            self.gram[ib * n + ia] += v;
                        }
                    }
                }
            }
        }
    }

    /// `||grad B - k * grad S||^2` over the valid region.
    pub fn residual(&self, k: &[f64]) -> f64 {
        let n = self.unknowns();
        let mut gk = vec![0.0; n];
        dense_matvec(&self.gram, n, k, &mut gk);
        let quad: f64 = k.iter().zip(&gk).map(|(a, b)| a * b).sum();
        let lin: f64 = k.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        (quad - 2.0 * lin + self.b_norm).max(0.0)
    }

    pub fn is_degenerate(&self) -> bool {
        self.gram.iter().all(|&v| v == 0.0)
    }
}

/// Data residual plus `gamma * sum |k|^alpha`.
pub fn sparse_objective(sys: &GramSystem, k: &[f64], gamma: f64, alpha: f64) -> f64 {
    let reg: f64 = k.iter().map(|v| v.abs().powf(alpha)).sum();
    sys.residual(k) + gamma * reg
}

fn irls_weights(k: &[f64], gamma: f64, alpha: f64) -> Vec<f64> {
    k.iter()
        .map(|v| gamma * alpha * v.abs().max(IRLS_WEIGHT_FLOOR).powf(alpha - 2.0))
        .collect()
}

/// One reweighted quadratic solve, without projection: minimizes
/// `k' G k - 2 k' rhs + sum w_i k_i^2 / 2` by CG warm-started at `k`.
pub fn irls_quadratic_solve(
    sys: &GramSystem,
    k: &[f64],
    gamma: f64,
    alpha: f64,
    cg_iters: usize,
) -> Result<Vec<f64>> {
    let n = sys.unknowns();
    let half_w: Vec<f64> = irls_weights(k, gamma, alpha).iter().map(|w| 0.5 * w).collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        dense_matvec(&sys.gram, n, v, out);
        for i in 0..n {
            out[i] += half_w[i] * v[i];
        }
    };
    let mut ak = vec![0.0; n];
    apply(k, &mut ak);
    let r0: Vec<f64> = sys.rhs.iter().zip(&ak).map(|(b, a)| b - a).collect();
    let step = cg_solve(apply, &r0, cg_iters)?;
    let out: Vec<f64> = k.iter().zip(&step.x).map(|(a, d)| a + d).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(DeblurError::numerical("kernel IRLS", "non-finite kernel update"));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct IrlsTrace {
    pub kernel: Kernel,
    /// sparse objective at the start and after each reweighting
    pub objective: Vec<f64>,
}

fn project_vec(v: &[f64], kh: usize, kw: usize) -> Vec<f64> {
    let grid = Array2::from_shape_vec((kh, kw), v.to_vec()).expect("kernel shape");
    project_kernel(&grid).0.into_weights().into_raw_vec_and_offset().0
}

/// Reweighted least squares on a prepared Gram system, starting from a
/// feasible kernel. After each solve the candidate is projected onto the
/// constraints; if that raises the objective, the step is shortened along the
/// segment from the current kernel (which stays feasible), and dropped if no
/// shortening helps.
pub fn irls_on_system(sys: &GramSystem, k0: &Kernel, params: &KernelEstParams) -> Result<IrlsTrace> {
    let (kh, kw) = (sys.kh, sys.kw);
    if k0.height() != kh || k0.width() != kw {
        return Err(DeblurError::invalid("initial kernel size differs from the Gram system"));
    }
    let mut k: Vec<f64> = k0.weights().iter().copied().collect();
    let mut obj = sparse_objective(sys, &k, params.gamma, params.alpha);
    let mut objective = vec![obj];
    for _ in 0..params.irls_iters {
        let cand = irls_quadratic_solve(sys, &k, params.gamma, params.alpha, params.cg_iters)?;
        let proj = project_vec(&cand, kh, kw);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial: Vec<f64> = k.iter().zip(&proj).map(|(a, b)| a + step * (b - a)).collect();
            let trial_obj = sparse_objective(sys, &trial, params.gamma, params.alpha);
            if trial_obj <= obj {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        if let Some(trial) = accepted {
            // renormalize so the sum stays exact after the convex combination
            let s: f64 = trial.iter().sum();
            k = trial.iter().map(|v| v / s).collect();
            obj = sparse_objective(sys, &k, params.gamma, params.alpha);
        }
        objective.push(obj);
    }
    let grid = Array2::from_shape_vec((kh, kw), k).expect("kernel shape");
    let (kernel, _) = project_kernel(&grid);
    Ok(IrlsTrace { kernel, objective })
}

/// Reweighted least-squares kernel update for fixed `grad B`, `grad S`.
pub fn kernel_irls_step(
    grad_b: &GradientField,
    grad_s: &GradientField,
    k0: &Kernel,
    params: &KernelEstParams,
) -> Result<Kernel> {
    params.validate()?;
    if grad_s.is_zero() {
        return Err(DeblurError::DegenerateStructure);
    }
    let sys = GramSystem::new(grad_b, grad_s, k0.height(), k0.width())?;
    if sys.is_degenerate() {
        return Err(DeblurError::DegenerateStructure);
    }
    Ok(irls_on_system(&sys, k0, params)?.kernel)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Minimizer of `||k_hat - k||^2` among grids that are constant wherever the
/// auxiliary gradients are zero: each linked region takes the mean of `k`.
fn snap_to_support(k: &Plane, h_aux: &Plane, v_aux: &Plane) -> Plane {
    let (kh, kw) = k.dim();
    let mut uf = UnionFind::new(kh * kw);
    for y in 0..kh {
        for x in 0..kw {
            if x + 1 < kw && h_aux[[y, x]] == 0.0 {
                uf.union(y * kw + x, y * kw + x + 1);
            }
            if y + 1 < kh && v_aux[[y, x]] == 0.0 {
                uf.union(y * kw + x, (y + 1) * kw + x);
            }
        }
    }
    let mut sums = vec![0.0; kh * kw];
    let mut counts = vec![0usize; kh * kw];
    let roots: Vec<usize> = (0..kh * kw).map(|i| uf.find(i)).collect();
    for (i, &r) in roots.iter().enumerate() {
        sums[r] += k[[i / kw, i % kw]];
        counts[r] += 1;
    }
    Array2::from_shape_fn((kh, kw), |(y, x)| {
        let r = roots[y * kw + x];
        sums[r] / counts[r] as f64
    })
}

/// L0 gradient-count smoothing `min ||k_hat - k||^2 + mu C(k_hat)` by
/// half-quadratic splitting with periodic differences (beta from `2 mu`,
/// doubling past `1e5`). The final split support is imposed exactly by
/// averaging `k` over each flat region. The lowest-energy grid among that,
/// the constant mean and `k` itself (energy `mu C(k)`) is returned, so the
/// energy never exceeds `mu C(k)`. The result is not projected.
pub fn l0_gradient_smooth(k: &Plane, mu: f64) -> Plane {
    if mu <= 0.0 {
        return k.clone();
    }
    let (kh, kw) = k.dim();
    let fft = Fft2::new(kh, kw);
    let (dx, dy) = difference_spectra(kh, kw);
    let mut k_spec = to_complex(k);
    fft.forward(&mut k_spec);
    let denom_grad: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).collect();

    let mut k_hat = k.clone();
    let mut h_aux = Array2::zeros((kh, kw));
    let mut v_aux = Array2::zeros((kh, kw));
    let mut beta = 2.0 * mu;
    while beta <= L0_BETA_MAX {
        let thresh = mu / beta;
        for y in 0..kh {
            for x in 0..kw {
                let c = k_hat[[y, x]];
                let gx = k_hat[[y, (x + 1) % kw]] - c;
                let gy = k_hat[[(y + 1) % kh, x]] - c;
                if gx * gx + gy * gy >= thresh {
                    h_aux[[y, x]] = gx;
                    v_aux[[y, x]] = gy;
                } else {
                    h_aux[[y, x]] = 0.0;
                    v_aux[[y, x]] = 0.0;
                }
            }
        }
        let mut hs = to_complex(&h_aux);
        let mut vs = to_complex(&v_aux);
        fft.forward(&mut hs);
        fft.forward(&mut vs);
        let mut sol: Vec<Complex64> = (0..kh * kw)
            .map(|i| {
                (k_spec[i] + beta * (dx[i].conj() * hs[i] + dy[i].conj() * vs[i]))
                    / (1.0 + beta * denom_grad[i])
            })
            .collect();
        fft.inverse(&mut sol);
        k_hat = Array2::from_shape_fn((kh, kw), |(y, x)| sol[y * kw + x].re);
        beta *= 2.0;
    }

    // candidates: the split support, a single flat region, and k itself
    let snapped = snap_to_support(k, &h_aux, &v_aux);
    let flat = Array2::from_elem((kh, kw), k.mean().unwrap_or(0.0));
    let mut best = k.clone();
    let mut best_energy = l0_energy(k, k, mu);
    for cand in [snapped, flat] {
        let e = l0_energy(&cand, k, mu);
        if e < best_energy {
            best = cand;
            best_energy = e;
        }
    }
    best
}

/// Alternate IRLS, L0 smoothing and projection `params.itr` times.
pub fn estimate_kernel(
    grad_b: &GradientField,
    grad_s: &GradientField,
    k0: &Kernel,
    params: &KernelEstParams,
) -> Result<Kernel> {
    params.validate()?;
    if grad_s.is_zero() {
        return Err(DeblurError::DegenerateStructure);
    }
    let sys = GramSystem::new(grad_b, grad_s, k0.height(), k0.width())?;
    if sys.is_degenerate() {
        return Err(DeblurError::DegenerateStructure);
    }
    let mut k = k0.clone();
    for _ in 0..params.itr {
        let fitted = irls_on_system(&sys, &k, params)?.kernel;
        // smooth at unit peak so mu does not depend on how spread the kernel is
        let peak = fitted.weights().fold(0.0f64, |a, &b| a.max(b));
        let smoothed = l0_gradient_smooth(&(fitted.weights() / peak), params.mu) * peak;
        let (projected, degenerate) = project_kernel(&smoothed);
        k = if degenerate { fitted } else { projected };
    }
    Ok(k)
}
