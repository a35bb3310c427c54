use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::ArrayView2;

use crate::error::{ensure_dim, Result};

const PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

/// Renders 2-D points as colored squares on white, one color per label.
pub fn render_scatter(coords: ArrayView2<f64>, labels: &[usize], size: u32) -> Result<RgbImage> {
    ensure_dim(coords.nrows(), labels.len(), "labels for scatter plot")?;
    ensure_dim(2, coords.ncols(), "scatter coordinates")?;
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    let range = |c: usize| {
        let col = coords.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let (x0, xs) = range(0);
    let (y0, ys) = range(1);
    let margin = 8.0;
    let span = f64::from(size) - 2.0 * margin - 1.0;
    for (row, &l) in coords.rows().into_iter().zip(labels) {
        let px = (margin + (row[0] - x0) / xs * span).round() as i64;
        let py = (margin + (1.0 - (row[1] - y0) / ys) * span).round() as i64;
        let color = Rgb(PALETTE[l % PALETTE.len()]);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && y >= 0 && x < i64::from(size) && y < i64::from(size) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    Ok(img)
}

pub fn save_scatter_png(coords: ArrayView2<f64>, labels: &[usize], path: &Path) -> Result<()> {
    let img = render_scatter(coords, labels, 512)?;
    let tmp = path.with_extension("png.tmp");
    img.save_with_format(&tmp, image::ImageFormat::Png)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn points_are_drawn() {
        let img = render_scatter(array![[0.0, 0.0], [1.0, 1.0]].view(), &[0, 1], 64).unwrap();
        assert_eq!(img.get_pixel(8, 55), &Rgb(PALETTE[0]));
        assert_eq!(img.get_pixel(55, 8), &Rgb(PALETTE[1]));
        assert_eq!(img.get_pixel(32, 32), &Rgb([255, 255, 255]));
    }
}
