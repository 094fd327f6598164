//! `deblur` command-line tool.
//!
//! Exit codes: 0 on success, 1 when the method itself fails (textureless
//! input, degenerate structure, numerical breakdown), 2 for usage, input
//! and I/O errors.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use deblur_core::eval::evaluate_dataset;
use deblur_core::image::{gradients, to_grayscale, Image, Kernel};
use deblur_core::io::{load_image, read_kernel, save_image, save_kernel_png, save_plane_normalized, write_kernel, BitDepth};
use deblur_core::pipeline::{
    deblur_blind, edge_mask_plane, estimate_blind, salient_edges_for, DeblurConfig,
};
use deblur_core::poisson::poisson_reconstruct;
use deblur_core::structure::{init_threshold, r_map, select_salient_edges, smooth_weight, structure_pass, MaskRule};
use deblur_core::synth::{synthesize, test_chart, KernelPreset};
use deblur_core::{adaptive_deconv, tv_deconv, DeblurError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROCESSING: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "deblur", version, about = "Blind motion deblurring from salient structure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the blur kernel and restore the image
    Deblur(DeblurArgs),
    /// Estimate the blur kernel only
    EstimateKernel(EstimateArgs),
    /// Non-blind deconvolution with a known kernel
    Deconv(DeconvArgs),
    /// Write the structure component, the salient-edge mask and its reconstruction
    Structure(StructureArgs),
    /// Blur a sharp image with a kernel and add seeded Gaussian noise
    Synth(SynthArgs),
    /// Evaluate a dataset of cases and report kernel and restoration errors
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Depth {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<Depth> for BitDepth {
    fn from(d: Depth) -> Self {
        match d {
            Depth::Eight => BitDepth::Eight,
            Depth::Sixteen => BitDepth::Sixteen,
        }
    }
}

/// Estimation settings. Flags override values read from `--config`.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` configuration file
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// odd kernel side at full resolution
    #[arg(long, value_name = "N")]
    kernel_size: Option<usize>,
    /// salient-edge mask rule
    #[arg(long, value_name = "RULE", value_parser = ["magnitude", "conjunction"])]
    mask_rule: Option<String>,
    /// estimate the kernel inside this rectangle only
    #[arg(long, value_name = "X,Y,W,H")]
    crop: Option<String>,
    /// initial TV fidelity scale
    #[arg(long, value_name = "F")]
    theta0: Option<String>,
    /// interim TV weight
    #[arg(long, value_name = "F")]
    lambda_c: Option<String>,
    /// final restoration weight
    #[arg(long, value_name = "F")]
    lambda: Option<String>,
    /// kernel sparsity weight
    #[arg(long, value_name = "F")]
    gamma: Option<String>,
    /// kernel sparsity exponent
    #[arg(long, value_name = "F")]
    alpha: Option<String>,
    /// kernel gradient-count weight (default depends on the kernel size)
    #[arg(long, value_name = "F")]
    mu: Option<String>,
    /// kernel estimation alternations
    #[arg(long, value_name = "N")]
    itr: Option<String>,
    /// inner iterations per pyramid level
    #[arg(long, value_name = "N")]
    inner_iters: Option<String>,
    /// threshold and theta divisor per inner iteration
    #[arg(long, value_name = "F")]
    decay: Option<String>,
    /// odd window side of the r-map
    #[arg(long, value_name = "N")]
    window: Option<String>,
    /// shock filter time step
    #[arg(long, value_name = "F")]
    shock_dt: Option<String>,
    /// shock filter steps per iteration
    #[arg(long, value_name = "N")]
    shock_steps: Option<String>,
    /// kernel reweighting iterations
    #[arg(long, value_name = "N")]
    kernel_irls_iters: Option<String>,
    /// CG iterations per kernel reweighting
    #[arg(long, value_name = "N")]
    kernel_cg_iters: Option<String>,
    /// deconvolution reweighting iterations
    #[arg(long, value_name = "N")]
    deconv_irls_iters: Option<String>,
    /// CG iterations of the interim restoration
    #[arg(long, value_name = "N")]
    cg_iters_interim: Option<String>,
    /// CG iterations of the final restoration
    #[arg(long, value_name = "N")]
    cg_iters_final: Option<String>,
    /// floor on |dI| in the reweighting
    #[arg(long, value_name = "F")]
    weight_floor: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<DeblurConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => DeblurConfig::load(p).map_err(|e| CliError::new("reading configuration", e))?,
            None => DeblurConfig::default(),
        };
        let ks = self.kernel_size.map(|v| v.to_string());
        let overrides = [
            ("kernel_size", &ks),
            ("mask_rule", &self.mask_rule),
            ("crop", &self.crop),
            ("theta0", &self.theta0),
            ("lambda_c", &self.lambda_c),
            ("lambda", &self.lambda),
            ("gamma", &self.gamma),
            ("alpha", &self.alpha),
            ("mu", &self.mu),
            ("itr", &self.itr),
            ("inner_iters", &self.inner_iters),
            ("decay", &self.decay),
            ("window", &self.window),
            ("shock_dt", &self.shock_dt),
            ("shock_steps", &self.shock_steps),
            ("kernel_irls_iters", &self.kernel_irls_iters),
            ("kernel_cg_iters", &self.kernel_cg_iters),
            ("deconv_irls_iters", &self.deconv_irls_iters),
            ("cg_iters_interim", &self.cg_iters_interim),
            ("cg_iters_final", &self.cg_iters_final),
            ("weight_floor", &self.weight_floor),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v).map_err(|e| CliError::new("parsing options", e))?;
            }
        }
        cfg.validate().map_err(|e| CliError::new("validating configuration", e))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct DeblurArgs {
    /// blurred image (PNG, PGM or PPM)
    #[arg(long, short)]
    input: PathBuf,
    /// restored image
    #[arg(long, short)]
    output: PathBuf,
    /// kernel text file; a PNG rendering is written next to it
    /// [default: <output stem>_kernel.txt]
    #[arg(long, value_name = "FILE")]
    kernel_out: Option<PathBuf>,
    /// bits per sample of the restored image
    #[arg(long, value_enum, default_value = "8")]
    depth: Depth,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// blurred image
    #[arg(long, short)]
    input: PathBuf,
    /// kernel text file; a PNG rendering is written next to it
    #[arg(long, short)]
    output: PathBuf,
    /// also write the interim latent image here
    #[arg(long, value_name = "FILE")]
    latent_out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    /// TV weights damped along salient edges
    Adaptive,
    /// plain anisotropic TV
    Tv,
}

#[derive(Debug, Args)]
struct DeconvArgs {
    /// blurred image
    #[arg(long, short)]
    input: PathBuf,
    /// kernel text file
    #[arg(long, short)]
    kernel: PathBuf,
    /// restored image
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "adaptive")]
    method: Method,
    #[arg(long, value_enum, default_value = "8")]
    depth: Depth,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct StructureArgs {
    /// input image
    #[arg(long, short)]
    input: PathBuf,
    /// directory receiving structure.png, mask.png and reconstruction.png
    #[arg(long, short)]
    output: PathBuf,
    /// TV fidelity scale
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// edge threshold [default: chosen from the gradient statistics]
    #[arg(long)]
    threshold: Option<f64>,
    /// kernel side used to choose the threshold
    #[arg(long, default_value_t = 25)]
    kernel_size: usize,
    /// odd window side of the r-map
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value = "magnitude", value_parser = ["magnitude", "conjunction"])]
    mask_rule: String,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// sharp image; omit to use the built-in test chart
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// size of the built-in test chart
    #[arg(long, value_name = "WxH", default_value = "255x255")]
    chart: String,
    /// blurred output image
    #[arg(long, short)]
    output: PathBuf,
    /// kernel text file (overrides --preset)
    #[arg(long, short)]
    kernel: Option<PathBuf>,
    /// named kernel: line, diag, box or curve
    #[arg(long, default_value = "diag")]
    preset: String,
    /// odd side of the preset kernel
    #[arg(long, default_value_t = 15)]
    kernel_size: usize,
    /// standard deviation of the added Gaussian noise
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    /// noise seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// write the kernel used, as text
    #[arg(long, value_name = "FILE")]
    kernel_out: Option<PathBuf>,
    /// write the sharp image used
    #[arg(long, value_name = "FILE")]
    sharp_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "8")]
    depth: Depth,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// dataset root with one directory per case
    /// (blurred.png, sharp.png, kernel_true.txt, optional kernel_est.txt)
    #[arg(long, short)]
    input: PathBuf,
    /// CSV report [default: stdout]
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// cumulative error-ratio table [default: stdout]
    #[arg(long, value_name = "FILE")]
    histogram: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

/// An error tagged with the stage that produced it.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub error: DeblurError,
}

impl CliError {
    fn new(stage: &'static str, error: DeblurError) -> Self {
        CliError { stage, error }
    }

    pub fn exit_code(&self) -> i32 {
        if self.error.is_processing_failure() {
            EXIT_PROCESSING
        } else {
            EXIT_USAGE
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for deblur_core::Result<T> {
    fn stage(self, name: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(name, e))
    }
}

fn check_input(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::new(
            "checking inputs",
            DeblurError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            },
        ));
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        if !dir.is_dir() {
            return Err(CliError::new(
                "checking outputs",
                DeblurError::Io {
                    path: dir.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
                },
            ));
        }
    }
    Ok(())
}

fn default_kernel_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}_kernel.txt"))
}

fn write_kernel_files(path: &Path, k: &Kernel) -> Result<(), CliError> {
    write_kernel(path, k).stage("writing kernel")?;
    save_kernel_png(path.with_extension("png"), k).stage("writing kernel")
}

fn gray_plane(img: &Image) -> Result<deblur_core::Plane, CliError> {
    Ok(to_grayscale(img).stage("converting to grayscale")?.into_planes().remove(0))
}

fn cmd_deblur(a: DeblurArgs) -> Result<(), CliError> {
    check_input(&a.input)?;
    check_output(&a.output)?;
    let kernel_path = a.kernel_out.clone().unwrap_or_else(|| default_kernel_path(&a.output));
    check_output(&kernel_path)?;
    let cfg = a.config.resolve()?;
    let blurred = load_image(&a.input).stage("loading input")?;
    let res = deblur_blind(&blurred, &cfg).stage("blind deblurring")?;
    save_image(&a.output, &res.image, a.depth.into()).stage("writing output")?;
    write_kernel_files(&kernel_path, &res.kernel)
}

fn cmd_estimate(a: EstimateArgs) -> Result<(), CliError> {
    check_input(&a.input)?;
    check_output(&a.output)?;
    if let Some(p) = &a.latent_out {
        check_output(p)?;
    }
    let cfg = a.config.resolve()?;
    let blurred = load_image(&a.input).stage("loading input")?;
    let mut gray = gray_plane(&blurred)?;
    if let Some(c) = cfg.crop {
        gray = Image::gray(gray)
            .and_then(|g| g.crop(c.x, c.y, c.width, c.height))
            .stage("cropping")?
            .into_planes()
            .remove(0);
    }
    let est = estimate_blind(&gray, &cfg, &mut |_| {}).stage("kernel estimation")?;
    write_kernel_files(&a.output, &est.kernel)?;
    if let Some(p) = &a.latent_out {
        let latent = Image::gray(est.latent).stage("writing latent image")?.clamped();
        save_image(p, &latent, BitDepth::Eight).stage("writing latent image")?;
    }
    Ok(())
}

fn cmd_deconv(a: DeconvArgs) -> Result<(), CliError> {
    check_input(&a.input)?;
    check_input(&a.kernel)?;
    check_output(&a.output)?;
    let cfg = a.config.resolve()?;
    let blurred = load_image(&a.input).stage("loading input")?;
    let k = read_kernel(&a.kernel).stage("reading kernel")?;
    let params = cfg.deconv_params();
    let restored = match a.method {
        Method::Tv => blurred
            .map_planes(|p| tv_deconv(p, &k, cfg.lambda_c, &params))
            .stage("TV deconvolution")?,
        Method::Adaptive => {
            let gray = gray_plane(&blurred)?;
            let edges = salient_edges_for(&gray, &k, &cfg, cfg.theta0, None).stage("salient edge selection")?;
            adaptive_deconv(&blurred, &k, &edges, cfg.lambda, &params).stage("adaptive deconvolution")?
        }
    };
    save_image(&a.output, &restored.clamped(), a.depth.into()).stage("writing output")
}

fn cmd_structure(a: StructureArgs) -> Result<(), CliError> {
    check_input(&a.input)?;
    if !a.output.is_dir() {
        std::fs::create_dir_all(&a.output)
            .map_err(|source| DeblurError::Io {
                path: a.output.clone(),
                source,
            })
            .stage("creating output directory")?;
    }
    let rule: MaskRule = a.mask_rule.parse().stage("parsing options")?;
    let mut cfg = DeblurConfig {
        theta0: a.theta,
        window: a.window,
        mask_rule: rule,
        ..DeblurConfig::default()
    };
    cfg.kernel_size = a.kernel_size | 1;
    let params = cfg.structure_params(a.theta, a.threshold.unwrap_or(0.0));
    params.validate().stage("validating options")?;
    let img = load_image(&a.input).stage("loading input")?;
    let gray = gray_plane(&img)?;
    let omega = smooth_weight(&r_map(&gray, a.window));
    let pass = structure_pass(&gray, &omega, &params);
    let t = a.threshold.unwrap_or_else(|| {
        init_threshold(&gradients(&pass.enhanced), gray.len(), cfg.kernel_size * cfg.kernel_size)
    });
    let edges = select_salient_edges(&pass.enhanced, t, rule);
    let save = |name: &str, p: deblur_core::Plane| -> Result<(), CliError> {
        let img = Image::gray(p).stage("writing structure outputs")?.clamped();
        save_image(a.output.join(name), &img, BitDepth::Eight).stage("writing structure outputs")
    };
    save("structure.png", pass.smoothed)?;
    save("mask.png", edge_mask_plane(&edges))?;
    save_plane_normalized(a.output.join("reconstruction.png"), &poisson_reconstruct(&edges))
        .stage("writing structure outputs")?;
    println!("threshold {t}");
    Ok(())
}

fn parse_chart(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::new("parsing options", DeblurError::InvalidInput(format!("chart size must be WxH, got {s:?}")));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    match (w.trim().parse(), h.trim().parse()) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(bad()),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    if let Some(p) = &a.input {
        check_input(p)?;
    }
    if let Some(p) = &a.kernel {
        check_input(p)?;
    }
    check_output(&a.output)?;
    let sharp = match &a.input {
        Some(p) => load_image(p).stage("loading input")?,
        None => {
            let (w, h) = parse_chart(&a.chart)?;
            Image::gray(test_chart(w, h)).stage("building test chart")?
        }
    };
    let k = match &a.kernel {
        Some(p) => read_kernel(p).stage("reading kernel")?,
        None => a
            .preset
            .parse::<KernelPreset>()
            .and_then(|p| p.kernel(a.kernel_size))
            .stage("building kernel")?,
    };
    let blurred = synthesize(&sharp, &k, a.noise_sigma, a.seed).stage("synthesizing blur")?;
    save_image(&a.output, &blurred, a.depth.into()).stage("writing output")?;
    if let Some(p) = &a.kernel_out {
        write_kernel(p, &k).stage("writing kernel")?;
    }
    if let Some(p) = &a.sharp_out {
        save_image(p, &sharp.clamped(), a.depth.into()).stage("writing sharp image")?;
    }
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|source| DeblurError::Io {
                path: p.to_path_buf(),
                source,
            })
            .stage("writing report"),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    if !a.input.is_dir() {
        return Err(CliError::new(
            "checking inputs",
            DeblurError::Io {
                path: a.input.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            },
        ));
    }
    for p in [&a.output, &a.histogram].into_iter().flatten() {
        check_output(p)?;
    }
    let cfg = a.config.resolve()?;
    let report = evaluate_dataset(&a.input, &cfg).stage("evaluation")?;
    write_or_print(a.output.as_deref(), &report.to_csv())?;
    write_or_print(a.histogram.as_deref(), &report.histogram_table())?;
    if let Some(m) = report.median_ratio() {
        eprintln!("median error ratio {m:.3} over {} cases", report.cases.len());
    }
    Ok(())
}

/// Run the tool on `argv` (including the program name) and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Deblur(a) => cmd_deblur(a),
        Command::EstimateKernel(a) => cmd_estimate(a),
        Command::Deconv(a) => cmd_deconv(a),
        Command::Structure(a) => cmd_structure(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("deblur: {e}");
            e.exit_code()
        }
    }
}
