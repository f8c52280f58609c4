//! Stroke rasterization, ordered compositing and post-processing.
//!
//! Coverage is computed from a signed distance to the brush footprint,
//! `clamp(0.5 - sd, 0, 1)` at each pixel center, which yields a one-pixel
//! anti-aliased rim. Strokes are composited source-over in sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planning::{Stroke, Texture};
use crate::raster::{clamp01, gaussian_blur, RasterImage};
use crate::rng::hash_unit;

/// Brush footprint families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrushModel {
    #[default]
    Curved,
    Triangle,
    Rectangle,
    RandomRaster,
}

/// Keep probability of a pixel under the random-raster brush.
pub const RANDOM_RASTER_KEEP: f64 = 0.7;
const STIPPLE_KEEP: f64 = 0.5;
const HATCH_PERIOD: f64 = 4.0;
const BILATERAL_RANGE_SIGMA: f64 = 0.1;
const UNSHARP_SIGMA: f64 = 1.5;

// ---------------------------------------------------------------------------
// Geometry

pub(crate) fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (apx - t * abx).hypot(apy - t * aby)
}

/// Signed distance to a convex or simple polygon (negative inside).
pub(crate) fn polygon_sd(p: (f64, f64), verts: &[(f64, f64)]) -> f64 {
    let n = verts.len();
    let mut dist = f64::INFINITY;
    let mut inside = false;
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        dist = dist.min(segment_distance(p, a, b));
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    if inside {
        -dist
    } else {
        dist
    }
}

pub(crate) fn coverage_from_sd(sd: f64) -> f64 {
    (0.5 - sd).clamp(0.0, 1.0)
}

/// A stroke's shape in image space: a spine from `tail` to `head` with a
/// direction frame.
#[derive(Debug, Clone, Copy)]
struct Spine {
    center: (f64, f64),
    dir: (f64, f64),
    normal: (f64, f64),
    half_len: f64,
}

impl Spine {
    fn of(stroke: &Stroke) -> Self {
        let dir = (stroke.theta.cos(), stroke.theta.sin());
        Self {
            center: (stroke.x, stroke.y),
            dir,
            normal: (-dir.1, dir.0),
            half_len: stroke.length.max(0.0) / 2.0,
        }
    }

    fn tail(&self) -> (f64, f64) {
        (
            self.center.0 - self.half_len * self.dir.0,
            self.center.1 - self.half_len * self.dir.1,
        )
    }

    fn head(&self) -> (f64, f64) {
        (
            self.center.0 + self.half_len * self.dir.0,
            self.center.1 + self.half_len * self.dir.1,
        )
    }

    /// Coordinates in the spine frame: along, across.
    fn local(&self, p: (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (p.0 - self.center.0, p.1 - self.center.1);
        (dx * self.dir.0 + dy * self.dir.1, dx * self.normal.0 + dy * self.normal.1)
    }
}

fn stroke_key(stroke: &Stroke) -> u64 {
    stroke.x.to_bits() ^ stroke.y.to_bits().rotate_left(21) ^ stroke.theta.to_bits().rotate_left(42)
}

/// Pixels touched by a stroke with their coverage in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Footprint {
    pub pixels: Vec<(usize, usize, f64)>,
}

impl Footprint {
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn total_coverage(&self) -> f64 {
        self.pixels.iter().map(|p| p.2).sum()
    }
}

/// Footprint of a planned stroke under `brush`, clipped to the image.
///
/// Curved and random-raster strokes are capsules of radius `size` around the
/// spine; rectangles are `length x thickness`; triangles taper from full
/// `thickness` at the tail to a point at the head.
pub fn stroke_footprint(stroke: &Stroke, brush: BrushModel, width: usize, height: usize) -> Footprint {
    let spine = Spine::of(stroke);
    let (tail, head) = (spine.tail(), spine.head());
    let half_t = stroke.thickness.max(0.0) / 2.0;
    let reach = match brush {
        BrushModel::Curved | BrushModel::RandomRaster => stroke.size.max(0.0),
        BrushModel::Rectangle | BrushModel::Triangle => half_t,
    } + spine.half_len
        + 1.0;
    let x0 = (stroke.x - reach).floor().max(0.0) as usize;
    let y0 = (stroke.y - reach).floor().max(0.0) as usize;
    let x1 = ((stroke.x + reach).ceil().max(0.0) as usize).min(width.saturating_sub(1));
    let y1 = ((stroke.y + reach).ceil().max(0.0) as usize).min(height.saturating_sub(1));
    let triangle = [
        (tail.0 + half_t * spine.normal.0, tail.1 + half_t * spine.normal.1),
        head,
        (tail.0 - half_t * spine.normal.0, tail.1 - half_t * spine.normal.1),
    ];
    let key = stroke_key(stroke);

    let mut pixels = Vec::new();
    if x0 >= width || y0 >= height {
        return Footprint { pixels };
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (x as f64, y as f64);
            let sd = match brush {
                BrushModel::Curved | BrushModel::RandomRaster => {
                    segment_distance(p, tail, head) - stroke.size
                }
                BrushModel::Rectangle => {
                    let (u, v) = spine.local(p);
                    let qx = u.abs() - spine.half_len;
                    let qy = v.abs() - half_t;
                    let outside = qx.max(0.0).hypot(qy.max(0.0));
                    outside + qx.max(qy).min(0.0)
                }
                BrushModel::Triangle => polygon_sd(p, &triangle),
            };
            let mut cov = coverage_from_sd(sd);
            if cov <= 0.0 {
                continue;
            }
            if brush == BrushModel::RandomRaster
                && hash_unit(key, x as u64, y as u64) >= RANDOM_RASTER_KEEP
            {
                continue;
            }
            match stroke.texture {
                Texture::Solid => {}
                Texture::Stipple => {
                    if hash_unit(key ^ 0x5717, x as u64, y as u64) >= STIPPLE_KEEP {
                        continue;
                    }
                }
                Texture::Hatch => {
                    let (_, v) = spine.local(p);
                    if (v / (HATCH_PERIOD / 2.0)).floor().rem_euclid(2.0) != 0.0 {
                        continue;
                    }
                }
            }
            cov = cov.min(1.0);
            pixels.push((x, y, cov));
        }
    }
    Footprint { pixels }
}

// ---------------------------------------------------------------------------
// Compositing

/// Source-over of an RGB color with effective opacity `a` onto one pixel.
pub(crate) fn composite_over(px: &mut [f64], rgb: [f64; 3], a: f64) {
    if !(a > 0.0) {
        return;
    }
    let a = a.min(1.0);
    if px.len() == 1 {
        let y = crate::raster::luma(rgb);
        px[0] = if a == 1.0 { clamp01(y) } else { clamp01(px[0] + (y - px[0]) * a) };
        return;
    }
    let dst_alpha = if px.len() == 4 { px[3] } else { 1.0 };
    if a == 1.0 {
        px[..3].copy_from_slice(&rgb);
        if px.len() == 4 {
            px[3] = 1.0;
        }
        return;
    }
    if dst_alpha == 1.0 {
        for c in 0..3 {
            px[c] = clamp01(px[c] + (rgb[c] - px[c]) * a);
        }
        return;
    }
    let out_alpha = a + dst_alpha * (1.0 - a);
    for c in 0..3 {
        px[c] = clamp01((rgb[c] * a + px[c] * dst_alpha * (1.0 - a)) / out_alpha);
    }
    px[3] = clamp01(out_alpha);
}

/// Composites one stroke onto `canvas` in place.
pub fn rasterize_stroke_into(canvas: &mut RasterImage, stroke: &Stroke, brush: BrushModel) {
    let fp = stroke_footprint(stroke, brush, canvas.width(), canvas.height());
    let rgb = [clamp01(stroke.color[0]), clamp01(stroke.color[1]), clamp01(stroke.color[2])];
    let alpha = clamp01(stroke.color[3]);
    for (x, y, cov) in fp.pixels {
        let a = if cov == 1.0 { alpha } else { cov * alpha };
        composite_over(canvas.pixel_mut(x, y), rgb, a);
    }
}

/// Returns a copy of `canvas` with `stroke` composited on top.
pub fn rasterize_stroke(canvas: &RasterImage, stroke: &Stroke, brush: BrushModel) -> RasterImage {
    let mut out = canvas.clone();
    rasterize_stroke_into(&mut out, stroke, brush);
    out
}

// ---------------------------------------------------------------------------
// Sequencing and post-processing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    #[default]
    PriorityAscending,
    InputOrder,
}

/// Optional post-processing passes, applied denoise, then edge enhancement,
/// then harmonization.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostProcess {
    /// Unsharp-mask amount.
    pub edge_enhance: Option<f64>,
    /// Bilateral spatial sigma in pixels.
    pub denoise: Option<f64>,
    /// Fraction of the pull toward the mean chroma, in [0, 1].
    pub harmonize: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub background: [f64; 4],
    pub order_policy: OrderPolicy,
    pub brush: BrushModel,
    pub post: PostProcess,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [1.0, 1.0, 1.0, 1.0],
            order_policy: OrderPolicy::PriorityAscending,
            brush: BrushModel::Curved,
            post: PostProcess::default(),
        }
    }
}

impl RenderOptions {
    /// Returns the offending field name and a message on failure.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        for (i, v) in self.background.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err((format!("background/{i}"), format!("must be in [0,1], got {v}")));
            }
        }
        if let Some(a) = self.post.edge_enhance {
            if !a.is_finite() {
                return Err(("post/edge_enhance".into(), "must be finite".into()));
            }
        }
        if let Some(r) = self.post.denoise {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(("post/denoise".into(), format!("must be >= 0, got {r}")));
            }
        }
        if let Some(s) = self.post.harmonize {
            if !(0.0..=1.0).contains(&s) {
                return Err(("post/harmonize".into(), format!("must be in [0,1], got {s}")));
            }
        }
        Ok(())
    }
}

/// Indices of `strokes` in the order they are composited.
pub fn render_order(strokes: &[Stroke], policy: OrderPolicy) -> Vec<usize> {
    let mut order: Vec<usize> = (0..strokes.len()).collect();
    if policy == OrderPolicy::PriorityAscending {
        order.sort_by(|&a, &b| strokes[a].priority.total_cmp(&strokes[b].priority));
    }
    order
}

/// Background fill, ordered compositing, then post-processing. The output
/// is RGBA.
pub fn render_sequence(
    strokes: &[Stroke],
    width: usize,
    height: usize,
    options: &RenderOptions,
) -> Result<RasterImage> {
    let mut canvas = RasterImage::filled(width, height, &options.background)?;
    for i in render_order(strokes, options.order_policy) {
        rasterize_stroke_into(&mut canvas, &strokes[i], options.brush);
    }
    post_process(&canvas, &options.post)
}

fn bilateral(image: &RasterImage, sigma: f64) -> RasterImage {
    let radius = (2.0 * sigma).ceil() as i64;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut out = image.clone();
    let spatial: Vec<f64> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let span = (2 * radius + 1) as usize;
    for y in 0..h {
        for x in 0..w {
            let center = image.rgb(x as usize, y as usize);
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    let sy = (y + dy).clamp(0, h - 1) as usize;
                    let c = image.rgb(sx, sy);
                    let d2: f64 = (0..3).map(|k| (c[k] - center[k]).powi(2)).sum();
                    let wgt = spatial[(dy + radius) as usize * span + (dx + radius) as usize]
                        * (-d2 / (2.0 * BILATERAL_RANGE_SIGMA * BILATERAL_RANGE_SIGMA)).exp();
                    for k in 0..3 {
                        acc[k] += wgt * c[k];
                    }
                    total += wgt;
                }
            }
            let px = out.pixel_mut(x as usize, y as usize);
            for k in 0..3.min(px.len()) {
                px[k] = clamp01(acc[k] / total);
            }
        }
    }
    out
}

fn unsharp(image: &RasterImage, amount: f64) -> Result<RasterImage> {
    let blurred = gaussian_blur(image, UNSHARP_SIGMA)?;
    let mut out = image.clone();
    let ch = image.channels();
    let color_channels = if ch == 4 { 3 } else { ch };
    let src = image.data();
    let blur = blurred.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if i % ch < color_channels {
            *v = clamp01(src[i] + amount * (src[i] - blur[i]));
        }
    }
    Ok(out)
}

/// Opponent chroma axes paired with Rec. 601 luma.
pub fn to_luma_chroma(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        r - g,
        b - (r + g) / 2.0,
    ]
}

/// Inverse of [`to_luma_chroma`].
pub fn from_luma_chroma(ycc: [f64; 3]) -> [f64; 3] {
    let [y, c1, c2] = ycc;
    // With s = r + g: r = (s + c1)/2, g = (s - c1)/2, b = c2 + s/2, so
    // y = 0.5 s - 0.144 c1 + 0.114 c2.
    let s = (y + 0.144 * c1 - 0.114 * c2) / 0.5;
    let r = (s + c1) / 2.0;
    let g = (s - c1) / 2.0;
    let b = c2 + s / 2.0;
    [r, g, b]
}

fn harmonize(image: &RasterImage, strength: f64) -> RasterImage {
    let n = image.pixel_count() as f64;
    let mut mean = [0.0; 2];
    for y in 0..image.height() {
        for x in 0..image.width() {
            let ycc = to_luma_chroma(image.rgb(x, y));
            mean[0] += ycc[1];
            mean[1] += ycc[2];
        }
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let ycc = to_luma_chroma(image.rgb(x, y));
            let pulled = if strength == 1.0 {
                [ycc[0], mean[0], mean[1]]
            } else {
                [
                    ycc[0],
                    ycc[1] + strength * (mean[0] - ycc[1]),
                    ycc[2] + strength * (mean[1] - ycc[2]),
                ]
            };
            let rgb = from_luma_chroma(pulled);
            let px = out.pixel_mut(x, y);
            if px.len() == 1 {
                continue;
            }
            for k in 0..3 {
                px[k] = clamp01(rgb[k]);
            }
        }
    }
    out
}

/// Applies the enabled passes in the fixed order denoise, edge enhance,
/// harmonize. With nothing enabled the image is returned unchanged.
pub fn post_process(image: &RasterImage, post: &PostProcess) -> Result<RasterImage> {
    let mut out = image.clone();
    if let Some(radius) = post.denoise {
        if !(radius >= 0.0) {
            return Err(Error::invalid(format!("denoise radius must be >= 0, got {radius}")));
        }
        if radius > 0.0 {
            out = bilateral(&out, radius);
        }
    }
    if let Some(amount) = post.edge_enhance {
        if amount != 0.0 {
            out = unsharp(&out, amount)?;
        }
    }
    if let Some(strength) = post.harmonize {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::invalid(format!("harmonize strength {strength} outside [0,1]")));
        }
        if strength > 0.0 {
            out = harmonize(&out, strength);
        }
    }
    Ok(out)
}
