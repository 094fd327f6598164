//! Batch evaluation over a directory of cases.
//!
//! Each case is a subdirectory holding `blurred.png`, `sharp.png` and
//! `kernel_true.txt`. An optional `kernel_est.txt` is used instead of running
//! the estimator. Both restorations of the error ratio use the interim TV
//! deconvolver with a fixed weight, so the ratio isolates kernel quality.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::deconv::tv_deconv;
use crate::error::{DeblurError, Result};
use crate::image::{to_grayscale, Image, Kernel};
use crate::io::{load_image, read_kernel};
use crate::metrics::{cumulative_histogram, error_ratio, median, psnr, ssde, EvalReport, RATIO_BINS};
use crate::pipeline::{deblur_blind, DeblurConfig};

/// Fixed TV weight of the common non-blind deconvolver.
pub const COMMON_LAMBDA_C: f64 = 0.005;

pub const BLURRED_FILE: &str = "blurred.png";
pub const SHARP_FILE: &str = "sharp.png";
pub const KERNEL_TRUE_FILE: &str = "kernel_true.txt";
pub const KERNEL_EST_FILE: &str = "kernel_est.txt";

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub report: EvalReport,
    pub kernel: Kernel,
}

#[derive(Debug, Clone)]
pub struct DatasetReport {
    pub cases: Vec<CaseResult>,
}

fn restore_common(blurred: &Image, k: &Kernel, config: &DeblurConfig) -> Result<Image> {
    let params = config.deconv_params();
    blurred
        .map_planes(|p| tv_deconv(p, k, COMMON_LAMBDA_C, &params))
        .map(|img| img.clamped())
}

/// Evaluate one case directory. The kernel size comes from the true kernel.
pub fn evaluate_case(dir: &Path, config: &DeblurConfig) -> Result<CaseResult> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let blurred = to_grayscale(&load_image(dir.join(BLURRED_FILE))?)?;
    let sharp = to_grayscale(&load_image(dir.join(SHARP_FILE))?)?;
    if (blurred.width(), blurred.height()) != (sharp.width(), sharp.height()) {
        return Err(DeblurError::invalid(format!(
            "{}: blurred and sharp images differ in size",
            dir.display()
        )));
    }
    let k_true = read_kernel(dir.join(KERNEL_TRUE_FILE))?;
    let est_path = dir.join(KERNEL_EST_FILE);

    let (k_est, restored_final) = if est_path.exists() {
        let k = read_kernel(&est_path)?;
        let restored = restore_common(&blurred, &k, config)?;
        (k, restored)
    } else {
        let side = k_true.max_side();
        let cfg = DeblurConfig {
            kernel_size: side,
            ..config.clone()
        };
        let res = deblur_blind(&blurred, &cfg)?;
        (res.kernel, res.image)
    };

    let restored = restore_common(&blurred, &k_est, config)?;
    let restored_true = restore_common(&blurred, &k_true, config)?;
    let (kernel_err, shift) = ssde(&k_est, &k_true);
    let report = EvalReport {
        ssde: kernel_err,
        psnr_db: psnr(&restored_final, &sharp)?,
        error_ratio: error_ratio(&restored, &restored_true, &sharp)?,
        alignment_shift: shift,
    };
    Ok(CaseResult {
        name,
        report,
        kernel: k_est,
    })
}

/// Case directories under `root`, sorted by name. A directory counts as a
/// case when it contains the blurred image.
pub fn case_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|source| DeblurError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(BLURRED_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(DeblurError::invalid(format!(
            "{}: no case directories containing {BLURRED_FILE}",
            root.display()
        )));
    }
    Ok(dirs)
}

pub fn evaluate_dataset(root: &Path, config: &DeblurConfig) -> Result<DatasetReport> {
    let cases = case_dirs(root)?
        .iter()
        .map(|d| evaluate_case(d, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetReport { cases })
}

impl DatasetReport {
    pub fn ratios(&self) -> Vec<f64> {
        self.cases.iter().map(|c| c.report.error_ratio).collect()
    }

    pub fn median_ratio(&self) -> Option<f64> {
        median(&self.ratios())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,ssde,psnr,error_ratio\n");
        for c in &self.cases {
            let _ = writeln!(
                out,
                "{},{:.6},{:.4},{:.6}",
                c.name, c.report.ssde, c.report.psnr_db, c.report.error_ratio
            );
        }
        out
    }

    /// Percentage of cases below each error-ratio threshold.
    pub fn histogram_table(&self) -> String {
        let mut out = String::from("error_ratio_below,percent_of_cases\n");
        for (t, pct) in cumulative_histogram(&self.ratios(), &RATIO_BINS) {
            let _ = writeln!(out, "{t},{pct:.1}");
        }
        out
    }
}
