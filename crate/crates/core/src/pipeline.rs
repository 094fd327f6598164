//! Coarse-to-fine blind deblurring: per-level structure selection, kernel
//! estimation and interim restoration, then a final structure-adaptive
//! restoration of every channel.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::deconv::{adaptive_deconv, tv_deconv, tv_deconv_from, DeconvParams};
use crate::error::{DeblurError, Result};
use crate::image::{gradients, to_grayscale, GradientField, Image, Kernel, Plane};
use crate::kernel_est::{estimate_kernel, mu_schedule, project_kernel, KernelEstParams};
use crate::resample::resize_plane;
use crate::structure::{
    init_threshold, r_map, select_salient_edges, smooth_weight, structure_pass, MaskRule,
    StructureParams,
};

/// Downsampling factor between consecutive pyramid levels.
pub const LEVEL_FACTOR: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Largest kernel side allowed at the coarsest level.
pub const COARSEST_MAX_SIDE: usize = 7;
/// How many times the edge threshold is halved before giving up.
pub const THRESHOLD_RELAXATIONS: usize = 5;

/// Rectangle in pixel coordinates of the full image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl FromStr for CropRect {
    type Err = DeblurError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let nums: Option<Vec<usize>> = parts.iter().map(|p| p.parse().ok()).collect();
        match nums.as_deref() {
            Some(&[x, y, width, height]) if width > 0 && height > 0 => Ok(CropRect {
                x,
                y,
                width,
                height,
            }),
            _ => Err(DeblurError::invalid(format!(
                "crop must be x,y,w,h with positive w and h, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for CropRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeblurConfig {
    /// odd side of the kernel at full resolution
    pub kernel_size: usize,
    pub theta0: f64,
    pub lambda_c: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub itr: usize,
    /// inner iterations per level
    pub inner_iters: usize,
    /// divisor applied to the threshold and theta after every inner iteration
    pub decay: f64,
    pub window: usize,
    pub mask_rule: MaskRule,
    /// overrides the size-dependent gradient-count weight
    pub mu: Option<f64>,
    pub shock_dt: f64,
    pub shock_steps: usize,
    pub kernel_irls_iters: usize,
    pub kernel_cg_iters: usize,
    pub deconv_irls_iters: usize,
    pub cg_iters_interim: usize,
    pub cg_iters_final: usize,
    pub weight_floor: f64,
    /// restrict kernel estimation to this region
    pub crop: Option<CropRect>,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        let k = KernelEstParams::default();
        let d = DeconvParams::default();
        let s = StructureParams::default();
        DeblurConfig {
            kernel_size: 25,
            theta0: 1.0,
            lambda_c: d.lambda_c,
            lambda: d.lambda,
            gamma: k.gamma,
            alpha: k.alpha,
            itr: k.itr,
            inner_iters: 5,
            decay: 1.1,
            window: s.window,
            mask_rule: s.mask_rule,
            mu: None,
            shock_dt: s.shock_dt,
            shock_steps: s.shock_steps,
            kernel_irls_iters: k.irls_iters,
            kernel_cg_iters: k.cg_iters,
            deconv_irls_iters: d.irls_iters,
            cg_iters_interim: d.cg_iters_interim,
            cg_iters_final: d.cg_iters_final,
            weight_floor: d.weight_floor,
            crop: None,
        }
    }
}

/// Keys accepted by [`DeblurConfig::set`] and in configuration files.
pub const CONFIG_KEYS: &[&str] = &[
    "kernel_size",
    "theta0",
    "lambda_c",
    "lambda",
    "gamma",
    "alpha",
    "itr",
    "inner_iters",
    "decay",
    "window",
    "mask_rule",
    "mu",
    "shock_dt",
    "shock_steps",
    "kernel_irls_iters",
    "kernel_cg_iters",
    "deconv_irls_iters",
    "cg_iters_interim",
    "cg_iters_final",
    "weight_floor",
    "crop",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

impl DeblurConfig {
    pub fn with_kernel_size(kernel_size: usize) -> Self {
        DeblurConfig {
            kernel_size,
            ..DeblurConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return Err(DeblurError::invalid(format!(
                "kernel_size must be odd and at least 3, got {}",
                self.kernel_size
            )));
        }
        if !(self.decay > 1.0) {
            return Err(DeblurError::invalid("decay must exceed 1"));
        }
        if self.inner_iters == 0 {
            return Err(DeblurError::invalid("inner_iters must be at least 1"));
        }
        self.structure_params(self.theta0, 0.0).validate()?;
        self.kernel_params(self.kernel_size).validate()?;
        self.deconv_params().validate()
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let res: std::result::Result<(), String> = (|| {
            match key {
                "kernel_size" => self.kernel_size = parse_num(key, v)?,
                "theta0" => self.theta0 = parse_num(key, v)?,
                "lambda_c" => self.lambda_c = parse_num(key, v)?,
                "lambda" => self.lambda = parse_num(key, v)?,
                "gamma" => self.gamma = parse_num(key, v)?,
                "alpha" => self.alpha = parse_num(key, v)?,
                "itr" => self.itr = parse_num(key, v)?,
                "inner_iters" => self.inner_iters = parse_num(key, v)?,
                "decay" => self.decay = parse_num(key, v)?,
                "window" => self.window = parse_num(key, v)?,
                "mask_rule" => self.mask_rule = v.parse().map_err(|e: DeblurError| e.to_string())?,
                "mu" => {
                    self.mu = match v {
                        "" | "auto" => None,
                        _ => Some(parse_num(key, v)?),
                    }
                }
                "shock_dt" => self.shock_dt = parse_num(key, v)?,
                "shock_steps" => self.shock_steps = parse_num(key, v)?,
                "kernel_irls_iters" => self.kernel_irls_iters = parse_num(key, v)?,
                "kernel_cg_iters" => self.kernel_cg_iters = parse_num(key, v)?,
                "deconv_irls_iters" => self.deconv_irls_iters = parse_num(key, v)?,
                "cg_iters_interim" => self.cg_iters_interim = parse_num(key, v)?,
                "cg_iters_final" => self.cg_iters_final = parse_num(key, v)?,
                "weight_floor" => self.weight_floor = parse_num(key, v)?,
                "crop" => {
                    self.crop = match v {
                        "" | "none" => None,
                        _ => Some(v.parse().map_err(|e: DeblurError| e.to_string())?),
                    }
                }
                _ => return Err(format!("unknown configuration key {key:?}")),
            }
            Ok(())
        })();
        res.map_err(DeblurError::InvalidInput)
    }

    /// Apply `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| DeblurError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got {line:?}")))?;
            self.set(key.trim(), value).map_err(|e| match e {
                DeblurError::InvalidInput(m) => parse_err(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DeblurError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = DeblurConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn structure_params(&self, theta: f64, threshold: f64) -> StructureParams {
        StructureParams {
            theta,
            window: self.window,
            threshold,
            shock_dt: self.shock_dt,
            shock_steps: self.shock_steps,
            mask_rule: self.mask_rule,
        }
    }

    pub fn kernel_params(&self, kernel_side: usize) -> KernelEstParams {
        KernelEstParams {
            gamma: self.gamma,
            alpha: self.alpha,
            mu: self.mu.unwrap_or_else(|| mu_schedule(kernel_side)),
            itr: self.itr,
            irls_iters: self.kernel_irls_iters,
            cg_iters: self.kernel_cg_iters,
        }
    }

    pub fn deconv_params(&self) -> DeconvParams {
        DeconvParams {
            lambda_c: self.lambda_c,
            lambda: self.lambda,
            irls_iters: self.deconv_irls_iters,
            cg_iters_interim: self.cg_iters_interim,
            cg_iters_final: self.cg_iters_final,
            weight_floor: self.weight_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleLevel {
    pub height: usize,
    pub width: usize,
    pub kernel_size: usize,
    /// theta at the first inner iteration of the level
    pub theta: f64,
}

/// Pyramid levels, coarsest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSchedule {
    pub levels: Vec<ScaleLevel>,
}

impl ScaleSchedule {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn coarsest(&self) -> &ScaleLevel {
        &self.levels[0]
    }

    pub fn finest(&self) -> &ScaleLevel {
        self.levels.last().expect("schedule has at least one level")
    }
}

/// Nearest odd integer, at least 3.
pub fn round_odd(x: f64) -> usize {
    let r = 2.0 * ((x - 1.0) / 2.0).round() + 1.0;
    (r.max(3.0)) as usize
}

/// Number of downsampling steps: the smallest `n` with
/// `kernel_size * factor^n <= 7`.
pub fn pyramid_steps(kernel_size: usize) -> usize {
    let mut n = 0;
    while kernel_size as f64 * LEVEL_FACTOR.powi(n as i32) > COARSEST_MAX_SIDE as f64 {
        n += 1;
    }
    n
}

/// Schedule with the default theta progression (`theta0 = 1`, five inner
/// iterations per level, decay 1.1).
pub fn build_schedule(dims: (usize, usize), kernel_size: usize) -> Result<ScaleSchedule> {
    build_schedule_with(dims, &DeblurConfig::with_kernel_size(kernel_size))
}

pub fn build_schedule_with(dims: (usize, usize), config: &DeblurConfig) -> Result<ScaleSchedule> {
    let (h, w) = dims;
    let ks = config.kernel_size;
    if ks < 3 || ks.is_multiple_of(2) {
        return Err(DeblurError::invalid(format!("kernel size must be odd and at least 3, got {ks}")));
    }
    if ks > h || ks > w {
        return Err(DeblurError::invalid(format!(
            "kernel size {ks} does not fit in a {w}x{h} image"
        )));
    }
    let n = pyramid_steps(ks);
    let levels = (0..=n)
        .map(|i| {
            let down = (n - i) as i32;
            let f = LEVEL_FACTOR.powi(down);
            let side = if down == 0 { ks } else { round_odd(ks as f64 * f).min(ks) };
            let scale = |d: usize| ((d as f64 * f).round() as usize).max(side);
            let theta = config.theta0 / config.decay.powi((i * config.inner_iters) as i32);
            ScaleLevel {
                height: if down == 0 { h } else { scale(h) },
                width: if down == 0 { w } else { scale(w) },
                kernel_size: side,
                theta,
            }
        })
        .collect();
    Ok(ScaleSchedule { levels })
}

/// State after one inner iteration, handed to the trace observer.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub level: usize,
    pub iteration: usize,
    /// edge threshold used in this iteration
    pub threshold: f64,
    /// TV fidelity scale used in this iteration
    pub theta: f64,
    pub kernel: Kernel,
    /// number of pixels kept in the salient-edge mask
    pub kept_edges: usize,
}

/// Output of the estimation stage on the grayscale image.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub kernel: Kernel,
    /// interim latent image at full resolution
    pub latent: Plane,
    /// salient edges of the last inner iteration
    pub grad_s: GradientField,
    /// threshold and theta after the last decay
    pub threshold: f64,
    pub theta: f64,
}

#[derive(Debug, Clone)]
pub struct BlindResult {
    pub kernel: Kernel,
    pub image: Image,
    pub grad_s: GradientField,
}

fn initial_kernel(side: usize) -> Kernel {
    let mix = Kernel::delta(side, side).weights() * 0.9 + Kernel::uniform(side, side).weights() * 0.1;
    project_kernel(&mix).0
}

fn kept_pixels(g: &GradientField) -> usize {
    g.gx.iter()
        .zip(g.gy.iter())
        .filter(|(a, b)| **a != 0.0 || **b != 0.0)
        .count()
}

/// Kernel estimation over the pyramid on a single-channel image.
pub fn estimate_blind(
    gray: &Plane,
    config: &DeblurConfig,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<Estimation> {
    config.validate()?;
    let schedule = build_schedule_with(gray.dim(), config)?;
    let deconv = config.deconv_params();
    let mut theta = config.theta0;
    let mut threshold = 0.0;
    let mut latent: Option<Plane> = None;
    let mut kernel: Option<Kernel> = None;
    let mut grad_s = GradientField::zeros(0, 0);

    for (li, level) in schedule.levels.iter().enumerate() {
        let (h, w, side) = (level.height, level.width, level.kernel_size);
        let blurred = if (h, w) == gray.dim() {
            gray.clone()
        } else {
            resize_plane(gray, h, w)
        };
        let omega = smooth_weight(&r_map(&blurred, config.window));
        let grad_b = gradients(&blurred);
        let mut img = match latent.take() {
            None => blurred.clone(),
            Some(prev) => resize_plane(&prev, h, w),
        };
        let mut k = match kernel.take() {
            None => initial_kernel(side),
            Some(prev) => {
                let (proj, degenerate) = project_kernel(&resize_plane(prev.weights(), side, side));
                if degenerate {
                    initial_kernel(side)
                } else {
                    proj
                }
            }
        };
        let kparams = config.kernel_params(side);

        for it in 0..config.inner_iters {
            let params = config.structure_params(theta, threshold);
            let pass = structure_pass(&img, &omega, &params);
            if li == 0 && it == 0 {
                threshold = init_threshold(&gradients(&pass.enhanced), h * w, side * side);
            }
            let mut edges = select_salient_edges(&pass.enhanced, threshold, config.mask_rule);
            let mut relaxations = 0;
            while edges.is_zero() {
                if relaxations == THRESHOLD_RELAXATIONS || threshold == 0.0 {
                    return Err(DeblurError::Textureless { threshold });
                }
                threshold *= 0.5;
                relaxations += 1;
                edges = select_salient_edges(&pass.enhanced, threshold, config.mask_rule);
            }
            k = estimate_kernel(&grad_b, &edges, &k, &kparams)?;
            // warm start: reweightings accumulate over the inner iterations
            img = tv_deconv_from(&blurred, Some(&img), &k, config.lambda_c, &deconv)?.image;
            observer(&IterationRecord {
                level: li,
                iteration: it,
                threshold,
                theta,
                kernel: k.clone(),
                kept_edges: kept_pixels(&edges),
            });
            grad_s = edges;
            threshold /= config.decay;
            theta /= config.decay;
        }
        latent = Some(img);
        kernel = Some(k);
    }
    Ok(Estimation {
        kernel: kernel.expect("at least one level"),
        latent: latent.expect("at least one level"),
        grad_s,
        threshold,
        theta,
    })
}

/// Salient edges of a whole frame for a known kernel: one structure pass on
/// the interim restoration. Without a threshold, it is initialized from the
/// enhanced structure as at the start of estimation.
pub fn salient_edges_for(
    gray: &Plane,
    kernel: &Kernel,
    config: &DeblurConfig,
    theta: f64,
    threshold: Option<f64>,
) -> Result<GradientField> {
    let latent = tv_deconv(gray, kernel, config.lambda_c, &config.deconv_params())?;
    let omega = smooth_weight(&r_map(gray, config.window));
    let pass = structure_pass(&latent, &omega, &config.structure_params(theta, threshold.unwrap_or(0.0)));
    let t = threshold.unwrap_or_else(|| {
        init_threshold(&gradients(&pass.enhanced), gray.len(), kernel.width() * kernel.height())
    });
    Ok(select_salient_edges(&pass.enhanced, t, config.mask_rule))
}

/// Full blind deblurring: estimate the kernel on the grayscale image (or on
/// the configured crop of it), then restore every channel of the full image.
pub fn deblur_blind(blurred: &Image, config: &DeblurConfig) -> Result<BlindResult> {
    deblur_blind_traced(blurred, config, &mut |_| {})
}

pub fn deblur_blind_traced(
    blurred: &Image,
    config: &DeblurConfig,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<BlindResult> {
    config.validate()?;
    let gray = to_grayscale(blurred)?.into_planes().remove(0);
    let (kernel, grad_s) = match config.crop {
        None => {
            let est = estimate_blind(&gray, config, observer)?;
            (est.kernel, est.grad_s)
        }
        Some(c) => {
            let region = Image::gray(gray.clone())?
                .crop(c.x, c.y, c.width, c.height)?
                .into_planes()
                .remove(0);
            let est = estimate_blind(&region, config, observer)?;
            let edges = salient_edges_for(&gray, &est.kernel, config, est.theta, Some(est.threshold))?;
            (est.kernel, edges)
        }
    };
    let image = adaptive_deconv(blurred, &kernel, &grad_s, config.lambda, &config.deconv_params())?.clamped();
    Ok(BlindResult {
        kernel,
        image,
        grad_s,
    })
}

/// Binary image of the kept salient-edge pixels.
pub fn edge_mask_plane(g: &GradientField) -> Plane {
    let (h, w) = g.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        if g.gx[[y, x]] != 0.0 || g.gy[[y, x]] != 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_odd_values() {
        assert_eq!(round_odd(6.36), 7);
        assert_eq!(round_odd(5.63), 5);
        assert_eq!(round_odd(1.2), 3);
        assert_eq!(round_odd(9.0), 9);
        assert_eq!(round_odd(7.99), 7);
    }

    #[test]
    fn schedule_level_counts() {
        for (ks, levels, coarsest) in [(5, 1, 5), (9, 2, 7), (45, 7, 5), (15, 4, 5), (3, 1, 3)] {
            let s = build_schedule((400, 400), ks).unwrap();
            assert_eq!(s.len(), levels, "kernel {ks}");
            assert_eq!(s.coarsest().kernel_size, coarsest, "kernel {ks}");
            assert_eq!(s.finest().kernel_size, ks);
            assert_eq!((s.finest().height, s.finest().width), (400, 400));
        }
    }

    #[test]
    fn schedule_dims_shrink_by_factor() {
        let s = build_schedule((200, 100), 15).unwrap();
        let dims: Vec<_> = s.levels.iter().map(|l| (l.height, l.width)).collect();
        assert_eq!(dims, vec![(71, 35), (100, 50), (141, 71), (200, 100)]);
        // theta continues to decay across levels
        let t = &s.levels;
        assert!((t[1].theta - 1.0 / 1.1f64.powi(5)).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_large_kernel() {
        assert!(build_schedule((10, 40), 11).is_err());
        assert!(build_schedule((40, 40), 10).is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = DeblurConfig::default();
        cfg.apply_text(
            "# comment\nkernel_size = 15\nlambda = 0.004 # inline\nmask_rule = conjunction\nmu = 0.002\ncrop = 1,2,30,40\n",
            Path::new("c.cfg"),
        )
        .unwrap();
        assert_eq!(cfg.kernel_size, 15);
        assert_eq!(cfg.lambda, 0.004);
        assert_eq!(cfg.mask_rule, MaskRule::Conjunction);
        assert_eq!(cfg.mu, Some(0.002));
        assert_eq!(cfg.crop, Some(CropRect { x: 1, y: 2, width: 30, height: 40 }));
        cfg.validate().unwrap();
    }

    #[test]
    fn config_errors_name_line() {
        let mut cfg = DeblurConfig::default();
        let err = cfg.apply_text("gamma = 0.1\nbogus = 3\n", Path::new("c.cfg")).unwrap_err();
        match err {
            DeblurError::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(cfg.apply_text("gamma 0.1", Path::new("c.cfg")).is_err());
        assert!(cfg.apply_text("itr = two", Path::new("c.cfg")).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DeblurConfig::with_kernel_size(4).validate().is_err());
        let c = DeblurConfig {
            decay: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = DeblurConfig {
            inner_iters: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(DeblurConfig::default().validate().is_ok());
    }

    #[test]
    fn every_key_is_settable() {
        let samples = [
            ("kernel_size", "9"),
            ("mask_rule", "magnitude"),
            ("mu", "auto"),
            ("crop", "none"),
        ];
        for key in CONFIG_KEYS {
            let mut c = DeblurConfig::default();
            let v = samples.iter().find(|(k, _)| k == key).map(|(_, v)| *v).unwrap_or("2");
            c.set(key, v).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn constant_image_is_textureless() {
        let img = Image::gray(Array2::from_elem((40, 40), 0.5)).unwrap();
        let err = deblur_blind(&img, &DeblurConfig::with_kernel_size(5)).unwrap_err();
        assert!(matches!(err, DeblurError::Textureless { .. }), "{err:?}");
    }

    #[test]
    fn crop_parsing() {
        assert_eq!("3,4,5,6".parse::<CropRect>().unwrap().to_string(), "3,4,5,6");
        assert!("3,4,5".parse::<CropRect>().is_err());
        assert!("3,4,0,6".parse::<CropRect>().is_err());
    }
}
