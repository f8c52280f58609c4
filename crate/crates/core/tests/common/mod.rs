#![allow(dead_code)]

use strokeforge::raster::RasterImage;

/// Five small test scenes with different structure: a disc on a ramp,
/// concentric rings, flat blocks, a diagonal step and smooth noise.
pub fn scenes(w: usize, h: usize) -> Vec<RasterImage> {
    let (fw, fh) = (w as f64, h as f64);
    let disc = RasterImage::from_fn(w, h, 3, |x, y, c| {
        let d = ((x as f64 - fw * 0.6).powi(2) + (y as f64 - fh * 0.45).powi(2)).sqrt();
        let inside = if d < fw.min(fh) * 0.25 { 1.0 } else { 0.0 };
        let ramp = (x + y) as f64 / (fw + fh);
        [0.2 + 0.6 * inside, 0.3 + 0.5 * ramp, 0.8 - 0.6 * inside * ramp][c]
    });
    let rings = RasterImage::from_fn(w, h, 3, |x, y, c| {
        let d = ((x as f64 - fw / 2.0).powi(2) + (y as f64 - fh / 2.0).powi(2)).sqrt();
        let v = 0.5 + 0.5 * (d / 3.0).sin();
        [v, 1.0 - v, 0.5 * v + 0.2][c]
    });
    let blocks = RasterImage::from_fn(w, h, 3, |x, y, c| {
        let cell = (x * 4 / w + 2 * (y * 4 / h)) % 5;
        [0.1 + 0.2 * cell as f64, 0.9 - 0.15 * cell as f64, if cell.is_multiple_of(2) { 0.2 } else { 0.7 }][c]
    });
    let step = RasterImage::from_fn(w, h, 3, |x, y, c| {
        let bright = (x as f64) > 0.7 * y as f64 + fw * 0.2;
        if bright { [0.95, 0.85, 0.3][c] } else { [0.1, 0.15, 0.4][c] }
    });
    let smooth = RasterImage::from_fn(w, h, 3, |x, y, c| {
        let (u, v) = (x as f64 / fw, y as f64 / fh);
        let k = c as f64 + 1.0;
        0.5 + 0.25 * (6.0 * u * k).sin() * (4.0 * v + k).cos() + 0.2 * (9.0 * u * v).sin()
    });
    vec![disc, rings, blocks, step, smooth].into_iter().map(|r| r.unwrap()).collect()
}
