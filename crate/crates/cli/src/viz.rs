//! Plot exports. Every image has a CSV twin holding the plotted numbers.

use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};

use crate::error::{CliError, Result};

/// Smallest rendered side; small matrices are upscaled by whole pixels.
const MIN_SIDE: usize = 256;

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

/// Sample order grouping equal labels; stable, so ties keep index order.
/// Without labels this is the identity.
pub fn label_order(labels: Option<&[usize]>, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(l) = labels {
        order.sort_by_key(|&i| l[i]);
    }
    order
}

pub fn reorder(m: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    m.select(Axis(0), order).select(Axis(1), order)
}

/// `count` indices spread evenly over `order`, so every label group in a
/// label-sorted order is represented.
pub fn spread_subset(order: &[usize], count: usize) -> Vec<usize> {
    let n = order.len();
    let count = count.min(n);
    (0..count).map(|i| order[i * n / count]).collect()
}

fn upscale(n: usize) -> u32 {
    MIN_SIDE.div_ceil(n.max(1)).max(1) as u32
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)?;
    Ok(())
}

/// Grayscale heatmap of a nonnegative matrix; darker is larger. Scaled to
/// the 99th percentile of off-diagonal entries so a few large weights do not
/// wash out the block structure.
pub fn affinity_png(m: &Array2<f64>, path: &Path) -> Result<()> {
    let n = m.nrows();
    let mut off: Vec<f64> = m
        .indexed_iter()
        .filter(|((i, j), _)| i != j)
        .map(|(_, &v)| v)
        .collect();
    off.sort_by(f64::total_cmp);
    let scale = off.get(off.len() * 99 / 100).copied().unwrap_or(0.0);
    let s = upscale(n);
    let img = RgbImage::from_fn(n as u32 * s, n as u32 * s, |x, y| {
        let v = m[[(y / s) as usize, (x / s) as usize]];
        let t = if scale > 0.0 { (v / scale).clamp(0.0, 1.0) } else { 0.0 };
        let g = (255.0 * (1.0 - t)).round() as u8;
        Rgb([g, g, g])
    });
    save(&img, path)
}

/// Blue-white-red heatmap for values in [-1, 1].
pub fn diverging_png(m: &Array2<f64>, path: &Path) -> Result<()> {
    let n = m.nrows();
    let s = upscale(n);
    let img = RgbImage::from_fn(n as u32 * s, n as u32 * s, |x, y| {
        let v = m[[(y / s) as usize, (x / s) as usize]].clamp(-1.0, 1.0);
        let fade = (255.0 * (1.0 - v.abs())).round() as u8;
        if v >= 0.0 {
            Rgb([255, fade, fade])
        } else {
            Rgb([fade, fade, 255])
        }
    });
    save(&img, path)
}

/// Projection of the centered rows onto the top-2 principal axes. Axis
/// signs are fixed so the largest-magnitude loading is positive.
pub fn principal_2d(x: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    if n < 2 || d < 2 {
        return Err(CliError::usage(format!("projection needs at least 2 rows and 2 columns, got {n}x{d}")));
    }
    let centered = x - &x.mean_axis(Axis(0)).expect("non-empty");
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Array2::zeros((d, 2));
    for (col, &e) in idx.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(e);
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            axes[[r, col]] = sign * v[r];
        }
    }
    Ok(centered.dot(&axes))
}

/// Scatter of 2-D points, colored by label when labels exist.
pub fn scatter_png(points: &Array2<f64>, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    const SIDE: u32 = 480;
    const MARGIN: f64 = 16.0;
    let mut img = RgbImage::from_pixel(SIDE, SIDE, Rgb([255, 255, 255]));
    let range = |c: usize| {
        let col = points.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x0, xw), (y0, yw)) = (range(0), range(1));
    let span = SIDE as f64 - 2.0 * MARGIN;
    for (i, p) in points.rows().into_iter().enumerate() {
        let px = (MARGIN + (p[0] - x0) / xw * span).round() as i64;
        // Image rows grow downward.
        let py = (SIDE as f64 - MARGIN - (p[1] - y0) / yw * span).round() as i64;
        let color = Rgb(PALETTE[labels.map_or(0, |l| l[i]) % PALETTE.len()]);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (px + dx, py + dy);
                if (0..SIDE as i64).contains(&x) && (0..SIDE as i64).contains(&y) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_order_groups_blocks() {
        let labels = [1, 0, 1, 0, 2];
        assert_eq!(label_order(Some(&labels), 5), [1, 3, 0, 2, 4]);
        assert_eq!(label_order(None, 3), [0, 1, 2]);
    }

    #[test]
    fn ordering_makes_interleaved_blocks_diagonal() {
        let labels = [0, 1, 0, 1];
        let m = Array2::from_shape_fn((4, 4), |(i, j)| if labels[i] == labels[j] && i != j { 1.0 } else { 0.0 });
        let r = reorder(&m, &label_order(Some(&labels), 4));
        assert_eq!(r[[0, 1]], 1.0);
        assert_eq!(r[[2, 3]], 1.0);
        assert_eq!(r[[0, 2]], 0.0);
        assert_eq!(r[[1, 3]], 0.0);
    }

    #[test]
    fn spread_subset_covers_groups() {
        let order: Vec<usize> = (0..10).collect();
        assert_eq!(spread_subset(&order, 5), [0, 2, 4, 6, 8]);
        assert_eq!(spread_subset(&order, 20).len(), 10);
    }

    #[test]
    fn principal_axes_recover_dominant_direction() {
        // Points on the line y = 2x with a small orthogonal wobble.
        let x = Array2::from_shape_fn((40, 2), |(i, c)| {
            let t = i as f64 - 20.0;
            let wobble = if i % 2 == 0 { 0.1 } else { -0.1 };
            if c == 0 { t - 2.0 * wobble } else { 2.0 * t + wobble }
        });
        let p = principal_2d(&x).unwrap();
        let first_var = p.column(0).mapv(|v| v * v).sum();
        let second_var = p.column(1).mapv(|v| v * v).sum();
        assert!(first_var > 1000.0 * second_var);
        // Centered and sign-fixed: the largest point projects positive.
        assert!(p[[39, 0]] > 0.0);
        assert!(p.column(0).sum().abs() < 1e-9);
    }

    #[test]
    fn images_have_expected_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let m = Array2::from_shape_fn((10, 10), |(i, j)| if i == j { 0.0 } else { 0.5 });
        let p = dir.path().join("a.png");
        affinity_png(&m, &p).unwrap();
        let img = image::open(&p).unwrap();
        assert_eq!((img.width(), img.height()), (260, 260));
        diverging_png(&m, &dir.path().join("b.png")).unwrap();
        let pts = Array2::from_shape_fn((5, 2), |(i, c)| (i * (c + 1)) as f64);
        scatter_png(&pts, Some(&[0, 1, 2, 0, 1]), &dir.path().join("c.png")).unwrap();
    }
}
