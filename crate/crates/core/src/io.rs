//! PNG / PNM image files and the plain-text kernel format.
//!
//! Kernel text format: the first line holds `width height`, followed by
//! `height` lines of `width` whitespace-separated decimal values.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use ndarray::Array2;

use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};
use crate::kernel_est::project_kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn io_err(path: &Path, source: std::io::Error) -> DeblurError {
    DeblurError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn img_err(path: &Path, source: image::ImageError) -> DeblurError {
    DeblurError::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Load a PNG or PNM file, mapping samples linearly to `[0, 1]`.
/// Alpha is dropped; gray stays 1-channel, everything else becomes RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(io_err(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let dynimg = image::open(path).map_err(|e| img_err(path, e))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let gray = matches!(
        dynimg,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let sixteen = matches!(
        dynimg,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let samples: Vec<f64> = match (gray, sixteen) {
        (true, false) => dynimg.to_luma8().into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        (true, true) => dynimg.to_luma16().into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        (false, false) => dynimg.to_rgb8().into_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        (false, true) => dynimg.to_rgb16().into_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
    };
    Image::from_interleaved(w, h, if gray { 1 } else { 3 }, &samples)
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Save as PNG, PGM or PPM (chosen by extension). Samples are clamped to `[0, 1]`.
pub fn save_image(path: impl AsRef<Path>, img: &Image, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    if img.channels() != 1 && img.channels() != 3 {
        return Err(DeblurError::invalid("only 1- and 3-channel images can be saved"));
    }
    let (w, h) = (img.width(), img.height());
    let mut interleaved = Vec::with_capacity(w * h * img.channels());
    for y in 0..h {
        for x in 0..w {
            for p in img.planes() {
                interleaved.push(p[[y, x]]);
            }
        }
    }
    let gray = img.channels() == 1;
    let color = match (gray, depth) {
        (true, BitDepth::Eight) => ExtendedColorType::L8,
        (true, BitDepth::Sixteen) => ExtendedColorType::L16,
        (false, BitDepth::Eight) => ExtendedColorType::Rgb8,
        (false, BitDepth::Sixteen) => ExtendedColorType::Rgb16,
    };
    let bytes: Vec<u8> = match depth {
        BitDepth::Eight => interleaved.iter().map(|&v| quantize8(v)).collect(),
        // the encoders take 16-bit samples in native byte order
        BitDepth::Sixteen => interleaved
            .iter()
            .flat_map(|&v| quantize16(v).to_ne_bytes())
            .collect(),
    };
    let format = ImageFormat::from_path(path).map_err(|e| img_err(path, e))?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let writer = BufWriter::new(file);
    let (w32, h32) = (w as u32, h as u32);
    match format {
        ImageFormat::Png => image::codecs::png::PngEncoder::new(writer)
            .write_image(&bytes, w32, h32, color)
            .map_err(|e| img_err(path, e)),
        ImageFormat::Pnm => {
            // binary PGM/PPM written directly: the encoder rejects 16-bit samples
            let magic = if gray { "P5" } else { "P6" };
            let maxval = match depth {
                BitDepth::Eight => 255,
                BitDepth::Sixteen => 65535,
            };
            let body: Vec<u8> = match depth {
                BitDepth::Eight => bytes,
                BitDepth::Sixteen => interleaved
                    .iter()
                    .flat_map(|&v| quantize16(v).to_be_bytes())
                    .collect(),
            };
            let mut writer = writer;
            write!(writer, "{magic}\n{w} {h}\n{maxval}\n")
                .and_then(|_| writer.write_all(&body))
                .and_then(|_| writer.flush())
                .map_err(|e| io_err(path, e))
        }
        other => Err(DeblurError::invalid(format!(
            "{}: unsupported output format {other:?} (use .png, .pgm or .ppm)",
            path.display()
        ))),
    }
}

/// Save a single plane rescaled so its minimum maps to 0 and maximum to 1.
pub fn save_plane_normalized(path: impl AsRef<Path>, plane: &Plane) -> Result<()> {
    let lo = plane.fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = plane.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let span = if hi - lo > 1e-15 { hi - lo } else { 1.0 };
    let img = Image::gray(plane.mapv(|v| (v - lo) / span))?;
    save_image(path, &img, BitDepth::Eight)
}

/// Parse the text format into a raw grid (no constraint checks).
pub fn parse_kernel_grid(text: &str, path: &Path) -> Result<Plane> {
    let parse_err = |line: usize, message: String| DeblurError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty kernel file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(hline, format!("bad header {header:?}: {e}")))?;
    let [w, h] = dims[..] else {
        return Err(parse_err(hline, format!("header must be `width height`, got {header:?}")));
    };
    if w == 0 || h == 0 {
        return Err(parse_err(hline, "kernel dimensions must be positive".into()));
    }
    let mut grid = Array2::zeros((h, w));
    for row in 0..h {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(hline + row + 1, format!("expected {h} rows, found {row}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(ln, e.to_string()))?;
        if vals.len() != w {
            return Err(parse_err(ln, format!("expected {w} values, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(ln, "non-finite kernel value".into()));
        }
        for (col, v) in vals.into_iter().enumerate() {
            grid[[row, col]] = v;
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing data after kernel rows".into()));
    }
    Ok(grid)
}

/// Read a kernel file. Odd sides are required; the weights are projected
/// onto the kernel constraints (negatives dropped, renormalized).
pub fn read_kernel(path: impl AsRef<Path>) -> Result<Kernel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let grid = parse_kernel_grid(&text, path)?;
    if grid.nrows() % 2 == 0 || grid.ncols() % 2 == 0 {
        return Err(DeblurError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("kernel sides must be odd, got {}x{}", grid.ncols(), grid.nrows()),
        });
    }
    let (k, degenerate) = project_kernel(&grid);
    if degenerate {
        return Err(DeblurError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "kernel has no positive mass".into(),
        });
    }
    Ok(k)
}

/// Format a grid in the kernel text format. Values use the shortest
/// representation that round-trips exactly.
pub fn format_kernel(grid: &Plane) -> String {
    let mut s = format!("{} {}\n", grid.ncols(), grid.nrows());
    for row in grid.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_kernel(path: impl AsRef<Path>, k: &Kernel) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(format_kernel(k.weights()).as_bytes())
        .map_err(|e| io_err(path, e))
}

/// Visualization: kernel scaled so its peak is white.
pub fn save_kernel_png(path: impl AsRef<Path>, k: &Kernel) -> Result<()> {
    let peak = k.weights().fold(0.0f64, |a, &b| a.max(b));
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    save_image(path, &Image::gray(k.weights() * scale)?, BitDepth::Eight)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_image(channels: usize) -> Image {
        let planes = (0..channels)
            .map(|c| Array2::from_shape_fn((5, 7), |(y, x)| ((x + 2 * y + c) % 9) as f64 / 8.0))
            .collect();
        Image::new(planes).unwrap()
    }

    #[test]
    fn png_and_pnm_roundtrip_both_depths() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let img = sample_image(channels);
            for (ext, depth, tol) in [
                ("png", BitDepth::Eight, 0.5 / 255.0),
                ("png", BitDepth::Sixteen, 0.5 / 65535.0),
                (if channels == 1 { "pgm" } else { "ppm" }, BitDepth::Eight, 0.5 / 255.0),
                (if channels == 1 { "pgm" } else { "ppm" }, BitDepth::Sixteen, 0.5 / 65535.0),
            ] {
                let path = dir.path().join(format!("img_{channels}_{depth:?}.{ext}"));
                save_image(&path, &img, depth).unwrap();
                let back = load_image(&path).unwrap();
                assert_eq!(back.channels(), channels, "{ext} {depth:?}");
                for (a, b) in back.planes().iter().zip(img.planes()) {
                    let err = (a - b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
                    assert!(err <= tol + 1e-12, "{ext} {depth:?}: {err}");
                }
            }
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_image("/nonexistent/blurred.png").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/blurred.png"));
    }

    #[test]
    fn kernel_text_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = Array2::from_shape_fn((3, 5), |(y, x)| (1 + x + y) as f64);
        w /= w.sum();
        let (k, _) = project_kernel(&w);
        let path = dir.path().join("k.txt");
        write_kernel(&path, &k).unwrap();
        assert_eq!(read_kernel(&path).unwrap(), k);
    }

    #[test]
    fn kernel_text_errors() {
        let p = Path::new("k.txt");
        assert!(parse_kernel_grid("3 1\n0.1 0.2\n", p).is_err());
        assert!(parse_kernel_grid("2\n", p).is_err());
        assert!(parse_kernel_grid("1 1\nabc\n", p).is_err());
        assert!(parse_kernel_grid("1 1\n1\n2\n", p).is_err());
        let g = parse_kernel_grid("3 1\n0 1 0\n", p).unwrap();
        assert_eq!(g.dim(), (1, 3));
    }
}
