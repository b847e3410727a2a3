//! Scatter plots as binary PPM (P6) images.

use std::fs;
use std::path::Path;

use crate::error::{GctmError, Result};
use crate::points::Points;

pub const SIZE: usize = 512;
const MARGIN: f64 = 0.05;
const DISC_RADIUS: i64 = 2;

/// Axis window `(lo, hi)` for a set of coordinates with a 5% margin on each
/// side. A degenerate range becomes a unit window around the value.
fn axis_window(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return (-0.5, 0.5);
    }
    let span = hi - lo;
    if span <= 0.0 {
        return (lo - 0.5, lo + 0.5);
    }
    (lo - MARGIN * span, hi + MARGIN * span)
}

/// Renders 2D points as black discs on white and returns the P6 bytes.
pub fn render(points: &Points) -> Result<Vec<u8>> {
    if points.dim() != 2 && !points.is_empty() {
        return Err(GctmError::shape("scatter plots need 2D points"));
    }
    let finite: Vec<&[f64]> = points
        .rows()
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .collect();
    let (x0, x1) = axis_window(finite.iter().map(|r| r[0]));
    let (y0, y1) = axis_window(finite.iter().map(|r| r[1]));
    let header = format!("P6\n{SIZE} {SIZE}\n255\n");
    let mut pixels = vec![255u8; SIZE * SIZE * 3];
    let last = (SIZE - 1) as f64;
    for r in finite {
        let cx = ((r[0] - x0) / (x1 - x0) * last).round() as i64;
        // Image rows grow downward.
        let cy = ((y1 - r[1]) / (y1 - y0) * last).round() as i64;
        for dy in -DISC_RADIUS..=DISC_RADIUS {
            for dx in -DISC_RADIUS..=DISC_RADIUS {
                if dx * dx + dy * dy > DISC_RADIUS * DISC_RADIUS {
                    continue;
                }
                let (px, py) = (cx + dx, cy + dy);
                if (0..SIZE as i64).contains(&px) && (0..SIZE as i64).contains(&py) {
                    let k = (py as usize * SIZE + px as usize) * 3;
                    pixels[k..k + 3].fill(0);
                }
            }
        }
    }
    let mut out = header.into_bytes();
    out.extend(pixels);
    Ok(out)
}

pub fn emit_plot(points: &Points, path: &Path) -> Result<()> {
    fs::write(path, render(points)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: usize = 15;

    fn pixel(img: &[u8], x: usize, y: usize) -> u8 {
        img[HEADER + (y * SIZE + x) * 3]
    }

    #[test]
    fn empty_set_is_blank_but_valid() {
        let img = render(&Points::zeros(0, 2)).unwrap();
        assert!(img.starts_with(b"P6\n512 512\n255\n"));
        assert_eq!(img.len(), HEADER + SIZE * SIZE * 3);
        assert!(img[HEADER..].iter().all(|&b| b == 255));
    }

    #[test]
    fn single_point_lands_in_the_centre() {
        let img = render(&Points::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(pixel(&img, 256, 256), 0);
        assert_eq!(pixel(&img, 0, 0), 255);
    }

    #[test]
    fn extremes_stay_inside_the_margin() {
        let img = render(&Points::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap()).unwrap();
        // Bottom-left and top-right points sit 5/110 of the width in.
        let inset = (0.05 / 1.1 * 511.0_f64).round() as usize;
        assert_eq!(pixel(&img, inset, 511 - inset), 0);
        assert_eq!(pixel(&img, 511 - inset, inset), 0);
    }

    #[test]
    fn rendering_is_deterministic_and_shape_checked() {
        let p = Points::from_rows(&[[0.3, -1.0], [2.0, 5.0]]).unwrap();
        assert_eq!(render(&p).unwrap(), render(&p).unwrap());
        assert!(render(&Points::zeros(3, 3)).is_err());
    }
}
