//! 8-bit grayscale PNG export with per-image min/max scaling (black = min,
//! white = max). 3D volumes are written as their central slice along the
//! first axis.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use pat_core::Real;

use crate::CliError;

/// Rows, columns and 8-bit pixels of the displayed plane.
pub fn grayscale<T: Real>(image: &[T], dims: &[usize]) -> Result<(usize, usize, Vec<u8>), CliError> {
    let (rows, cols, plane) = match *dims {
        [r, c] => (r, c, image),
        [d, r, c] => {
            let mid = d / 2;
            (r, c, &image[mid * r * c..(mid + 1) * r * c])
        }
        _ => return Err(CliError::Usage(format!("cannot render image with dims {dims:?}"))),
    };
    if image.len() != dims.iter().product::<usize>() {
        return Err(CliError::Usage("image length does not match dims".into()));
    }
    let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let x = v.as_f64();
        (lo.min(x), hi.max(x))
    });
    let range = hi - lo;
    let pixels = plane
        .iter()
        .map(|v| {
            if range > 0.0 {
                (255.0 * (v.as_f64() - lo) / range).round() as u8
            } else {
                0
            }
        })
        .collect();
    Ok((rows, cols, pixels))
}

pub fn write_png<T: Real>(path: &Path, image: &[T], dims: &[usize]) -> Result<(), CliError> {
    let (rows, cols, pixels) = grayscale(image, dims)?;
    let err = |e: &dyn std::fmt::Display| CliError::Usage(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(|e| err(&e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), cols as u32, rows as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| err(&e))?;
    w.write_image_data(&pixels).map_err(|e| err(&e))
}
