//! Tone quantization and coarse-to-fine curved-brush painting.
//!
//! Each layer blurs the reference at its brush radius, measures the color
//! error between canvas and reference on a grid, and starts a stroke at the
//! worst pixel of every cell that is still too far off. Strokes follow the
//! image contours (perpendicular to the gradient) and are stamped at their
//! control points.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{gaussian_blur, luminance, sobel_gradients, GradientField, RasterImage, DEGENERATE_MAGNITUDE};
use crate::render::{composite_over, polygon_sd, BrushModel, RANDOM_RASTER_KEEP};
use crate::rng;

/// One painting pass at a fixed brush scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerSpec {
    pub radius: f64,
    /// Mean RGB distance a grid cell must exceed to receive a stroke.
    pub error_threshold: f64,
    /// Grid cell side as a multiple of the radius.
    pub grid_step_factor: f64,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            radius: 4.0,
            error_threshold: 0.1,
            grid_step_factor: 1.0,
        }
    }
}

impl LayerSpec {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            ..Self::default()
        }
    }

    /// Side of a grid cell in pixels, at least 1.
    pub fn grid_step(&self) -> usize {
        ((self.grid_step_factor * self.radius).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PainterlyConfig {
    /// Coarse to fine; radii must strictly decrease.
    pub layers: Vec<LayerSpec>,
    /// Tone levels per channel, or `None` to paint from the raw image.
    pub quantize_levels: Option<u32>,
    /// Control points per stroke, start included.
    pub max_stroke_len: usize,
    pub min_stroke_len: usize,
    pub opacity: f64,
    /// Weight of the new direction against the previous one; 1 disables
    /// smoothing.
    pub curvature_filter: f64,
    pub brush: BrushModel,
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for PainterlyConfig {
    fn default() -> Self {
        Self {
            layers: vec![LayerSpec::new(8.0), LayerSpec::new(4.0), LayerSpec::new(2.0)],
            quantize_levels: None,
            max_stroke_len: 16,
            min_stroke_len: 4,
            opacity: 1.0,
            curvature_filter: 1.0,
            brush: BrushModel::Curved,
            rng_seed: 0,
        }
    }
}

impl PainterlyConfig {
    /// Checks every field; errors carry the offending field's path relative
    /// to this section.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.layers.is_empty() {
            return Err(("layers".into(), "at least one layer is required".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.radius >= 1.0) || !l.radius.is_finite() {
                return Err((format!("layers/{i}/radius"), format!("must be >= 1, got {}", l.radius)));
            }
            if !(l.error_threshold >= 0.0) {
                return Err((format!("layers/{i}/error_threshold"), "must be >= 0".into()));
            }
            if !(l.grid_step_factor > 0.0) || !l.grid_step_factor.is_finite() {
                return Err((format!("layers/{i}/grid_step_factor"), "must be > 0".into()));
            }
            if i > 0 && !(l.radius < self.layers[i - 1].radius) {
                return Err((format!("layers/{i}/radius"), "radii must strictly decrease".into()));
            }
        }
        if let Some(n) = self.quantize_levels {
            if n < 2 {
                return Err(("quantize_levels".into(), format!("must be >= 2, got {n}")));
            }
        }
        if self.max_stroke_len == 0 {
            return Err(("max_stroke_len".into(), "must be >= 1".into()));
        }
        if self.min_stroke_len > self.max_stroke_len {
            return Err(("min_stroke_len".into(), "must not exceed max_stroke_len".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(("opacity".into(), format!("must be in [0,1], got {}", self.opacity)));
        }
        if !(0.0..=1.0).contains(&self.curvature_filter) {
            return Err(("curvature_filter".into(), "must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Reduces each channel to `n` evenly spaced levels, rounding half up.
pub fn quantize_tones(image: &RasterImage, n: u32) -> Result<RasterImage> {
    if n < 2 {
        return Err(Error::invalid(format!("quantize levels must be >= 2, got {n}")));
    }
    let steps = f64::from(n - 1);
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v * steps + 0.5).floor() / steps;
    }
    Ok(out)
}

/// A painted polyline stroke.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvedStroke {
    pub points: Vec<(f64, f64)>,
    pub radius: f64,
    pub color: [f64; 3],
    /// Index of the layer that placed the stroke.
    pub layer: usize,
}

impl CurvedStroke {
    pub fn start(&self) -> (usize, usize) {
        let (x, y) = self.points[0];
        (x as usize, y as usize)
    }
}

fn color_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Follows the contour through `start` in `reference`.
///
/// Steps of one radius run perpendicular to the gradient, flipping sign to
/// avoid turns sharper than 90 degrees. Tracing ends at `max_stroke_len`
/// points, at the image border, or, once `min_stroke_len` points exist, when
/// the gradient vanishes or the canvas already matches the reference better
/// than the stroke color would. Where the gradient vanishes before that, the
/// stroke continues straight down (angle pi/2).
pub fn trace_curved_stroke(
    start: (usize, usize),
    reference: &RasterImage,
    canvas: Option<&RasterImage>,
    gradients: &GradientField,
    spec: &LayerSpec,
    config: &PainterlyConfig,
) -> CurvedStroke {
    let (w, h) = (reference.width(), reference.height());
    let color = reference.rgb(start.0, start.1);
    let r = spec.radius;
    let fc = config.curvature_filter;
    let mut points = vec![(start.0 as f64, start.1 as f64)];
    let (mut x, mut y) = points[0];
    let (mut last_dx, mut last_dy) = (0.0, 0.0);

    while points.len() < config.max_stroke_len {
        let (xi, yi) = crate::raster::nearest_pixel(x, y, w, h);
        let settled = points.len() >= config.min_stroke_len;
        if settled {
            if let Some(canvas) = canvas {
                let want = reference.rgb(xi, yi);
                if color_distance(want, canvas.rgb(xi, yi)) < color_distance(want, color) {
                    break;
                }
            }
        }
        let gx = gradients.gx.get(xi, yi);
        let gy = gradients.gy.get(xi, yi);
        let mag = gx.hypot(gy);
        let (mut dx, mut dy) = if mag <= DEGENERATE_MAGNITUDE {
            if settled {
                break;
            }
            (0.0, 1.0)
        } else {
            (-gy / mag, gx / mag)
        };
        if last_dx * dx + last_dy * dy < 0.0 {
            dx = -dx;
            dy = -dy;
        }
        if points.len() > 1 {
            dx = fc * dx + (1.0 - fc) * last_dx;
            dy = fc * dy + (1.0 - fc) * last_dy;
            let n = dx.hypot(dy);
            if n > 0.0 {
                dx /= n;
                dy /= n;
            }
        }
        let (nx, ny) = (x + r * dx, y + r * dy);
        if nx < 0.0 || ny < 0.0 || nx > (w - 1) as f64 || ny > (h - 1) as f64 {
            break;
        }
        x = nx;
        y = ny;
        last_dx = dx;
        last_dy = dy;
        points.push((x, y));
    }

    CurvedStroke {
        points,
        radius: r,
        color,
        layer: 0,
    }
}

fn stamp_sd(p: (f64, f64), center: (f64, f64), dir: (f64, f64), r: f64, brush: BrushModel) -> f64 {
    let (ux, uy) = dir;
    let (nx, ny) = (-uy, ux);
    let at = |u: f64, v: f64| (center.0 + u * ux + v * nx, center.1 + u * uy + v * ny);
    match brush {
        BrushModel::Curved | BrushModel::RandomRaster => {
            (p.0 - center.0).hypot(p.1 - center.1) - r
        }
        BrushModel::Rectangle => {
            // Inscribed in the radius-r disc, 2:1 along the stroke.
            let hl = 2.0 * r / 5f64.sqrt();
            let hw = r / 5f64.sqrt();
            polygon_sd(p, &[at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)])
        }
        BrushModel::Triangle => {
            let c = (2.0 * std::f64::consts::PI / 3.0).cos() * r;
            let s = (2.0 * std::f64::consts::PI / 3.0).sin() * r;
            polygon_sd(p, &[at(r, 0.0), at(c, s), at(c, -s)])
        }
    }
}

fn stamp_direction(points: &[(f64, f64)], i: usize) -> (f64, f64) {
    let (a, b) = if i + 1 < points.len() {
        (points[i], points[i + 1])
    } else if i > 0 {
        (points[i - 1], points[i])
    } else {
        return (1.0, 0.0);
    };
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let n = dx.hypot(dy);
    if n > 0.0 {
        (dx / n, dy / n)
    } else {
        (1.0, 0.0)
    }
}

/// Composites a stroke: brush stamps at every control point, with each
/// pixel taking its highest coverage across stamps.
pub fn paint_stroke(canvas: &mut RasterImage, stroke: &CurvedStroke, brush: BrushModel, opacity: f64, key: u64) {
    let (w, h) = (canvas.width(), canvas.height());
    let reach = stroke.radius + 1.0;
    let xs = stroke.points.iter().map(|p| p.0);
    let ys = stroke.points.iter().map(|p| p.1);
    let x0 = (xs.clone().fold(f64::INFINITY, f64::min) - reach).floor().max(0.0) as usize;
    let y0 = (ys.clone().fold(f64::INFINITY, f64::min) - reach).floor().max(0.0) as usize;
    let x1 = ((xs.fold(f64::NEG_INFINITY, f64::max) + reach).ceil().max(0.0) as usize).min(w - 1);
    let y1 = ((ys.fold(f64::NEG_INFINITY, f64::max) + reach).ceil().max(0.0) as usize).min(h - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let bw = x1 - x0 + 1;
    let mut cover = vec![0.0f64; bw * (y1 - y0 + 1)];
    for (i, &c) in stroke.points.iter().enumerate() {
        let dir = stamp_direction(&stroke.points, i);
        let sx0 = ((c.0 - reach).floor().max(x0 as f64)) as usize;
        let sy0 = ((c.1 - reach).floor().max(y0 as f64)) as usize;
        let sx1 = ((c.0 + reach).ceil() as usize).min(x1);
        let sy1 = ((c.1 + reach).ceil() as usize).min(y1);
        for y in sy0..=sy1 {
            for x in sx0..=sx1 {
                let sd = stamp_sd((x as f64, y as f64), c, dir, stroke.radius, brush);
                let cov = (0.5 - sd).clamp(0.0, 1.0);
                let slot = &mut cover[(y - y0) * bw + (x - x0)];
                if cov > *slot {
                    *slot = cov;
                }
            }
        }
    }
    for (i, &cov) in cover.iter().enumerate() {
        if cov <= 0.0 {
            continue;
        }
        let (x, y) = (x0 + i % bw, y0 + i / bw);
        if brush == BrushModel::RandomRaster && rng::hash_unit(key, x as u64, y as u64) >= RANDOM_RASTER_KEEP {
            continue;
        }
        let a = if cov == 1.0 { opacity } else { cov * opacity };
        composite_over(canvas.pixel_mut(x, y), stroke.color, a);
    }
}

/// Per-pixel RGB distance between two images.
fn distance_map(a: &RasterImage, b: &RasterImage) -> Vec<f64> {
    let (w, h) = (a.width(), a.height());
    (0..w * h)
        .map(|i| color_distance(a.rgb(i % w, i / w), b.rgb(i % w, i / w)))
        .collect()
}

/// One layer of painting. `first` marks a layer painted onto an undefined
/// canvas: every grid cell gets a stroke and tracing ignores the canvas.
pub fn paint_layer(
    canvas: &RasterImage,
    reference: &RasterImage,
    spec: &LayerSpec,
    config: &PainterlyConfig,
    layer: usize,
    first: bool,
) -> Result<(RasterImage, Vec<CurvedStroke>)> {
    if !canvas.same_dims(reference) {
        return Err(Error::DimensionMismatch(format!(
            "canvas {}x{} vs reference {}x{}",
            canvas.width(),
            canvas.height(),
            reference.width(),
            reference.height()
        )));
    }
    let (w, h) = (reference.width(), reference.height());
    let gradients = sobel_gradients(&luminance(reference))?;
    let errors = distance_map(canvas, reference);
    let step = spec.grid_step();

    let mut strokes = Vec::new();
    for cy in (0..h).step_by(step) {
        for cx in (0..w).step_by(step) {
            let mut sum = 0.0;
            let mut worst = (cx, cy);
            let mut worst_err = f64::NEG_INFINITY;
            for y in cy..(cy + step).min(h) {
                for x in cx..(cx + step).min(w) {
                    let e = errors[y * w + x];
                    sum += e;
                    if e > worst_err {
                        worst_err = e;
                        worst = (x, y);
                    }
                }
            }
            let n = ((cy + step).min(h) - cy) * ((cx + step).min(w) - cx);
            if first || sum / n as f64 > spec.error_threshold {
                let prior = (!first).then_some(canvas);
                let mut s = trace_curved_stroke(worst, reference, prior, &gradients, spec, config);
                s.layer = layer;
                strokes.push(s);
            }
        }
    }

    let mut order: Vec<usize> = (0..strokes.len()).collect();
    order.shuffle(&mut rng::seeded(rng::mix64(config.rng_seed ^ layer as u64)));
    let mut out = canvas.clone();
    let mut painted = Vec::with_capacity(strokes.len());
    for i in order {
        let key = rng::mix64(config.rng_seed.wrapping_add(((layer as u64) << 32) | i as u64));
        paint_stroke(&mut out, &strokes[i], config.brush, config.opacity, key);
        painted.push(strokes[i].clone());
    }
    Ok((out, painted))
}

/// Full multi-layer rendering. Returns the canvas and every stroke in paint
/// order. The canvas starts as the mean color of the (quantized) reference.
pub fn render_painterly(image: &RasterImage, config: &PainterlyConfig) -> Result<(RasterImage, Vec<CurvedStroke>)> {
    config.validate().map_err(|(field, message)| Error::Config {
        pointer: format!("/painterly/{field}"),
        message,
    })?;
    let mut reference = image.to_rgb();
    if let Some(n) = config.quantize_levels {
        reference = quantize_tones(&reference, n)?;
    }
    let mut canvas = RasterImage::filled(reference.width(), reference.height(), &reference.mean_color())?;
    let mut all = Vec::new();
    for (i, spec) in config.layers.iter().enumerate() {
        let blurred = gaussian_blur(&reference, spec.radius)?;
        let (next, strokes) = paint_layer(&canvas, &blurred, spec, config, i, i == 0)?;
        canvas = next;
        all.extend(strokes);
    }
    Ok((canvas, all))
}
