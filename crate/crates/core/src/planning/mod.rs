//! Hybrid stroke planning.
//!
//! The planner turns an image into an ordered stroke list in four stages:
//!
//! 1. feature maps and weighted candidates ([`crate::features`]);
//! 2. rule-based initialization: contour-following orientation, density-
//!    scaled extents, saliency/edge priority, and a per-region budget;
//! 3. refinement by a [`Refiner`], blended back toward the heuristic stroke
//!    by `blend_gamma`;
//! 4. consistency scoring, discarding, and merging of near neighbours.
//!
//! The output is sorted by ascending priority so salient strokes land last.

mod refine;
mod stroke;

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::config::PlanConfig;
use crate::error::{Error, Result};
use crate::features::{
    extract_features, generate_candidates, CandidateSet, FeatureBundle, StrokeCandidate,
    VoronoiPartition,
};
use crate::raster::{gradient_angle, luminance, sobel_gradients, GradientField, RasterImage};
use crate::render::{stroke_footprint, BrushModel};

pub use refine::{
    footprint_error, refine, IdentityRefiner, LocalSearchRefiner, RefineContext, RefineError,
    RefinedPair, Refiner, RefinerKind,
};
pub use stroke::{
    angle_delta, bitwise_eq, interpolate, lerp, lerp_angle, normalize_angle, Stroke, Texture,
    MIN_EXTENT,
};

/// Side of the square regions used by [`RegionMap::Grid`].
pub const DEFAULT_REGION_CELL: usize = 16;
/// Side of the luminance patches compared when merging.
pub const MERGE_PATCH: usize = 9;

/// Tunables for initialization, blending, scoring and merging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridParams {
    /// Influence of the refiner, in [0, 1]; 0 keeps heuristic strokes.
    pub blend_gamma: f64,
    /// Saliency share of the priority, in [0, 1]; the rest is edge strength.
    pub lambda_priority: f64,
    pub q_saliency: f64,
    pub q_edge: f64,
    pub q_penalty: f64,
    /// Strokes scoring strictly below this are dropped; `None` keeps all.
    pub q_discard_threshold: Option<f64>,
    /// Anchors at most this far apart may merge; 0 disables merging of
    /// distinct anchors.
    pub merge_radius: f64,
    pub stroke_budget: usize,
    /// Rotate strokes a quarter turn from the gradient so they run along
    /// contours instead of across them.
    pub follow_contours: bool,
    /// Brush radius at density 1.
    pub size_min: f64,
    /// Brush radius at density 0.
    pub size_max: f64,
    /// Spine length as a multiple of size.
    pub length_ratio: f64,
    /// Thickness as a multiple of size.
    pub thickness_ratio: f64,
    pub opacity: f64,
    pub texture: Texture,
    /// Plan indices (after ordering) to leave out of the final plan.
    pub exclude: Vec<usize>,
}

impl Default for HybridParams {
    fn default() -> Self {
        Self {
            blend_gamma: 0.5,
            lambda_priority: 0.6,
            q_saliency: 0.5,
            q_edge: 0.4,
            q_penalty: 0.3,
            q_discard_threshold: Some(-0.05),
            merge_radius: 1.5,
            stroke_budget: 1200,
            follow_contours: true,
            size_min: 2.0,
            size_max: 8.0,
            length_ratio: 2.5,
            thickness_ratio: 2.0,
            opacity: 1.0,
            texture: Texture::Solid,
            exclude: Vec::new(),
        }
    }
}

impl HybridParams {
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err((name.to_string(), format!("must be in [0,1], got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((name.to_string(), format!("must be a finite value >= 0, got {v}")))
            }
        };
        unit("blend_gamma", self.blend_gamma)?;
        unit("lambda_priority", self.lambda_priority)?;
        unit("opacity", self.opacity)?;
        nonneg("q_saliency", self.q_saliency)?;
        nonneg("q_edge", self.q_edge)?;
        nonneg("q_penalty", self.q_penalty)?;
        nonneg("merge_radius", self.merge_radius)?;
        nonneg("length_ratio", self.length_ratio)?;
        if let Some(t) = self.q_discard_threshold {
            if t.is_nan() {
                return Err(("q_discard_threshold".into(), "must not be NaN".into()));
            }
        }
        if self.stroke_budget == 0 {
            return Err(("stroke_budget".into(), "must be at least 1".into()));
        }
        if !(self.size_min > 0.0) || !self.size_min.is_finite() {
            return Err(("size_min".into(), format!("must be > 0, got {}", self.size_min)));
        }
        if !(self.size_max >= self.size_min) || !self.size_max.is_finite() {
            return Err(("size_max".into(), "must be finite and >= size_min".into()));
        }
        if !(self.thickness_ratio > 0.0) || !self.thickness_ratio.is_finite() {
            return Err(("thickness_ratio".into(), "must be > 0".into()));
        }
        Ok(())
    }

    /// Brush radius for a local density in [0, 1]: dense areas get finer
    /// strokes.
    pub fn size_for_density(&self, density: f64) -> f64 {
        let d = density.clamp(0.0, 1.0);
        self.size_max - (self.size_max - self.size_min) * d
    }

    /// Saliency/edge priority blend.
    pub fn priority(&self, saliency: f64, edge: f64) -> f64 {
        self.lambda_priority * saliency + (1.0 - self.lambda_priority) * edge
    }
}

/// Stroke direction at a pixel: along the contour (gradient angle plus a
/// quarter turn) or along the gradient itself.
pub fn stroke_orientation(gx: f64, gy: f64, follow_contours: bool) -> f64 {
    let base = gradient_angle(gx, gy);
    if follow_contours {
        normalize_angle(base + FRAC_PI_2)
    } else {
        base
    }
}

/// Turns weighted candidates into heuristic strokes.
pub fn init_strokes(
    candidates: &[StrokeCandidate],
    gradients: &GradientField,
    features: &FeatureBundle,
    reference: &RasterImage,
    params: &HybridParams,
) -> Vec<Stroke> {
    candidates
        .iter()
        .map(|c| {
            let (x, y) = (c.x, c.y);
            let theta = stroke_orientation(
                gradients.gx.get(x, y),
                gradients.gy.get(x, y),
                params.follow_contours,
            );
            let size = params.size_for_density(features.density.get(x, y));
            let rgb = reference.rgb(x, y);
            Stroke {
                x: x as f64,
                y: y as f64,
                theta,
                length: params.length_ratio * size,
                thickness: params.thickness_ratio * size,
                size,
                color: [rgb[0], rgb[1], rgb[2], params.opacity],
                texture: params.texture,
                weight: c.weight,
                priority: params.priority(features.saliency.get(x, y), features.edges.get(x, y)),
            }
        })
        .collect()
}

/// How the image is split into regions for density enforcement.
#[derive(Debug, Clone, Copy)]
pub enum RegionMap<'a> {
    /// Cells of the partition the candidates were seeded from.
    Partition(&'a VoronoiPartition),
    /// Square cells of the given side.
    Grid { cell: usize },
}

impl RegionMap<'_> {
    fn region_of(&self, s: &Stroke) -> u64 {
        match self {
            RegionMap::Partition(p) => {
                let (x, y) = crate::raster::nearest_pixel(s.x, s.y, p.width(), p.height());
                p.label(x, y) as u64
            }
            RegionMap::Grid { cell } => {
                let cell = (*cell).max(1) as f64;
                let gx = (s.x.max(0.0) / cell).floor() as u64;
                let gy = (s.y.max(0.0) / cell).floor() as u64;
                (gy << 32) | gx
            }
        }
    }
}

/// Largest-remainder apportionment of `total` units in proportion to
/// `weights`, never exceeding `caps`. Units freed by capped groups are
/// re-apportioned among the rest. Remainder ties go to the lower index.
pub fn apportion(total: usize, weights: &[f64], caps: &[usize]) -> Vec<usize> {
    let n = weights.len();
    let mut alloc = vec![0usize; n];
    let mut remaining = total.min(caps.iter().sum());
    let mut active: Vec<usize> = (0..n).filter(|&i| caps[i] > 0).collect();
    while remaining > 0 && !active.is_empty() {
        let mut w: Vec<f64> = active.iter().map(|&i| weights[i].max(0.0)).collect();
        let mut sum: f64 = w.iter().sum();
        if !(sum > 0.0) {
            // Only zero-weight groups left: fall back to their free capacity.
            w = active.iter().map(|&i| (caps[i] - alloc[i]) as f64).collect();
            sum = w.iter().sum();
        }
        let quotas: Vec<f64> = w.iter().map(|wi| remaining as f64 * wi / sum).collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut left = remaining.saturating_sub(take.iter().sum());
        let mut by_remainder: Vec<usize> = (0..active.len()).collect();
        by_remainder.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(active[a].cmp(&active[b]))
        });
        for &k in by_remainder.iter().cycle().take(active.len() * 2) {
            if left == 0 {
                break;
            }
            take[k] += 1;
            left -= 1;
        }
        let overflow: Vec<usize> = (0..active.len())
            .filter(|&k| alloc[active[k]] + take[k] > caps[active[k]])
            .collect();
        if overflow.is_empty() {
            for (k, &i) in active.iter().enumerate() {
                alloc[i] += take[k];
            }
            break;
        }
        for &k in &overflow {
            let i = active[k];
            remaining -= caps[i] - alloc[i];
            alloc[i] = caps[i];
        }
        let capped: Vec<usize> = overflow.iter().map(|&k| active[k]).collect();
        active.retain(|i| !capped.contains(i));
    }
    alloc
}

/// Limits the stroke count to `budget`, sharing it across regions in
/// proportion to each region's total weight. Within a region the highest
/// priority strokes survive. Survivors keep their input order.
pub fn enforce_density(strokes: &[Stroke], regions: RegionMap<'_>, budget: usize) -> Vec<Stroke> {
    if strokes.len() <= budget {
        return strokes.to_vec();
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in strokes.iter().enumerate() {
        groups.entry(regions.region_of(s)).or_default().push(i);
    }
    let members: Vec<Vec<usize>> = groups.into_values().collect();
    let mut weights: Vec<f64> = members
        .iter()
        .map(|m| m.iter().map(|&i| strokes[i].weight.max(0.0)).sum())
        .collect();
    let z: f64 = weights.iter().sum();
    if z > 0.0 {
        for w in &mut weights {
            *w /= z;
        }
    } else {
        weights = members.iter().map(|m| m.len() as f64).collect();
    }
    let caps: Vec<usize> = members.iter().map(Vec::len).collect();
    let alloc = apportion(budget, &weights, &caps);

    let mut keep = vec![false; strokes.len()];
    for (m, &n) in members.iter().zip(&alloc) {
        let mut ranked = m.clone();
        ranked.sort_by(|&a, &b| strokes[b].priority.total_cmp(&strokes[a].priority).then(a.cmp(&b)));
        for &i in ranked.iter().take(n) {
            keep[i] = true;
        }
    }
    strokes
        .iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(*s))
        .collect()
}

/// Convex blend of a heuristic stroke toward its refined version.
pub fn blend_correction(heuristic: &Stroke, refined: &Stroke, blend_gamma: f64) -> Result<Stroke> {
    if !(0.0..=1.0).contains(&blend_gamma) {
        return Err(Error::invalid(format!("blend_gamma {blend_gamma} outside [0,1]")));
    }
    Ok(interpolate(heuristic, refined, blend_gamma))
}

/// The three terms of the consistency score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyTerms {
    /// Mean saliency under the footprint.
    pub saliency: f64,
    /// Mean edge strength under the footprint.
    pub edge: f64,
    /// How far the blended stroke strayed from its heuristic origin.
    pub deviation: f64,
}

impl ConsistencyTerms {
    pub fn score(&self, params: &HybridParams) -> f64 {
        params.q_saliency * self.saliency + params.q_edge * self.edge
            - params.q_penalty * self.deviation
    }
}

/// Mean of normalized anchor distance, angular change and thickness change.
pub fn modification_deviation(blended: &Stroke, heuristic: &Stroke, width: usize, height: usize) -> f64 {
    let diag = (width as f64).hypot(height as f64);
    let shift = (blended.x - heuristic.x).hypot(blended.y - heuristic.y) / diag;
    let turn = angle_delta(heuristic.theta, blended.theta).abs() / PI;
    let t_max = blended.thickness.max(heuristic.thickness);
    let widen = if t_max > 0.0 {
        (blended.thickness - heuristic.thickness).abs() / t_max
    } else {
        0.0
    };
    (shift + turn + widen) / 3.0
}

pub fn consistency_terms(
    blended: &Stroke,
    heuristic: &Stroke,
    features: &FeatureBundle,
    brush: BrushModel,
) -> ConsistencyTerms {
    let (w, h) = (features.width(), features.height());
    let fp = stroke_footprint(blended, brush, w, h);
    let total = fp.total_coverage();
    let (saliency, edge) = if total > 0.0 {
        let mut s = 0.0;
        let mut e = 0.0;
        for &(x, y, c) in &fp.pixels {
            s += c * features.saliency.get(x, y);
            e += c * features.edges.get(x, y);
        }
        (s / total, e / total)
    } else {
        (
            features.saliency.sample(blended.x, blended.y),
            features.edges.sample(blended.x, blended.y),
        )
    };
    ConsistencyTerms {
        saliency,
        edge,
        deviation: modification_deviation(blended, heuristic, w, h),
    }
}

/// Saliency and edge reward minus the modification penalty.
pub fn consistency_score(
    blended: &Stroke,
    heuristic: &Stroke,
    features: &FeatureBundle,
    params: &HybridParams,
    brush: BrushModel,
) -> f64 {
    consistency_terms(blended, heuristic, features, brush).score(params)
}

fn luminance_patch(lum: &crate::raster::ScalarField, x: f64, y: f64) -> Vec<f64> {
    let (cx, cy) = crate::raster::nearest_pixel(x, y, lum.width(), lum.height());
    let r = (MERGE_PATCH / 2) as i64;
    let mut out = Vec::with_capacity(MERGE_PATCH * MERGE_PATCH);
    for dy in -r..=r {
        for dx in -r..=r {
            out.push(lum.get_clamped(cx as i64 + dx, cy as i64 + dy));
        }
    }
    out
}

/// Normalized cross-correlation of two equal-length samples. Flat patches
/// correlate at 1 when equal and 0 otherwise.
pub fn normalized_cross_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (p, q) in a.iter().zip(b) {
        cov += (p - ma) * (q - mb);
        va += (p - ma).powi(2);
        vb += (q - mb).powi(2);
    }
    if va * vb <= 1e-24 {
        let equal = a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12);
        return if equal { 1.0 } else { 0.0 };
    }
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

/// Structural similarity of the reference around two anchors, in [0, 1].
pub fn patch_similarity(reference: &RasterImage, a: (f64, f64), b: (f64, f64)) -> f64 {
    let lum = luminance(reference);
    patch_similarity_lum(&lum, a, b)
}

fn patch_similarity_lum(lum: &crate::raster::ScalarField, a: (f64, f64), b: (f64, f64)) -> f64 {
    let pa = luminance_patch(lum, a.0, a.1);
    let pb = luminance_patch(lum, b.0, b.1);
    (normalized_cross_correlation(&pa, &pb) + 1.0) / 2.0
}

/// Blends two neighbouring strokes with a weight `omega` toward `a` derived
/// from the similarity of the reference around their anchors.
pub fn merge_strokes(a: &Stroke, b: &Stroke, reference: &RasterImage, merge_radius: f64) -> Result<Stroke> {
    merge_with_luminance(a, b, &luminance(reference), merge_radius).map(|(s, _)| s)
}

fn merge_with_luminance(
    a: &Stroke,
    b: &Stroke,
    lum: &crate::raster::ScalarField,
    merge_radius: f64,
) -> Result<(Stroke, f64)> {
    let dist = (a.x - b.x).hypot(a.y - b.y);
    if dist > merge_radius {
        return Err(Error::invalid(format!(
            "anchors {dist:.3} px apart exceed merge radius {merge_radius}"
        )));
    }
    let omega = patch_similarity_lum(lum, (a.x, a.y), (b.x, b.y));
    Ok((interpolate(b, a, omega), omega))
}

/// Step 1 output, reusable while feature parameters and seed are unchanged.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub reference: RasterImage,
    pub features: FeatureBundle,
    pub gradients: GradientField,
    pub candidates: CandidateSet,
}

/// Counters describing one planning run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PlanReport {
    pub candidates: usize,
    pub after_density: usize,
    pub flagged: usize,
    pub discarded: usize,
    pub merged: usize,
    pub excluded: usize,
    pub strokes: usize,
}

/// An ordered stroke sequence for an image of the given size.
#[derive(Debug, Clone, PartialEq)]
pub struct StrokePlan {
    pub width: usize,
    pub height: usize,
    pub strokes: Vec<Stroke>,
}

/// Extracts features, candidates and gradients for `image`.
pub fn prepare(image: &RasterImage, config: &PlanConfig) -> Result<Prepared> {
    let reference = image.to_rgb();
    let f = &config.features;
    let features = extract_features(&reference, f.edge_threshold, f.density_sigma)?;
    let count = f.candidate_count.min(reference.pixel_count());
    let candidates = generate_candidates(&features, &f.weights(), count, config.seed)?;
    let gradients = sobel_gradients(&luminance(&reference))?;
    Ok(Prepared {
        reference,
        features,
        gradients,
        candidates,
    })
}

fn priority_order(strokes: &mut [Stroke]) {
    strokes.sort_by(|a, b| {
        a.priority
            .total_cmp(&b.priority)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
    });
}

/// Greedy nearest-pair merging: each stroke takes part in at most one merge.
/// In a pair the higher-scoring stroke is the `a` side. Merged strokes take
/// the position of their `a` parent in the list.
fn merge_pass(
    strokes: Vec<Stroke>,
    scores: &[f64],
    lum: &crate::raster::ScalarField,
    radius: f64,
) -> (Vec<Stroke>, usize) {
    let n = strokes.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = (strokes[i].x - strokes[j].x).hypot(strokes[i].y - strokes[j].y);
            if d <= radius {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used = vec![false; n];
    let mut replaced: Vec<Option<Stroke>> = vec![None; n];
    let mut merged = 0;
    for (_, i, j) in pairs {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        let (a, b) = if scores[j] > scores[i] { (j, i) } else { (i, j) };
        if let Ok((s, _)) = merge_with_luminance(&strokes[a], &strokes[b], lum, radius) {
            replaced[a] = Some(s);
            merged += 1;
        }
    }
    let out = (0..n)
        .filter_map(|i| match (&replaced[i], used[i]) {
            (Some(s), _) => Some(*s),
            (None, false) => Some(strokes[i]),
            (None, true) => None,
        })
        .collect();
    (out, merged)
}

/// Runs stages 2 to 4 on prepared features.
pub fn plan_prepared(
    prepared: &Prepared,
    config: &PlanConfig,
    refiner: &dyn Refiner,
) -> Result<(StrokePlan, PlanReport)> {
    let params = &config.hybrid;
    let brush = config.render.brush;
    let (w, h) = (prepared.reference.width(), prepared.reference.height());
    let mut report = PlanReport {
        candidates: prepared.candidates.candidates.len(),
        ..PlanReport::default()
    };

    let initial = init_strokes(
        &prepared.candidates.candidates,
        &prepared.gradients,
        &prepared.features,
        &prepared.reference,
        params,
    );
    let budgeted = enforce_density(
        &initial,
        RegionMap::Partition(&prepared.candidates.partition),
        params.stroke_budget,
    );
    report.after_density = budgeted.len();

    let ctx = RefineContext {
        reference: &prepared.reference,
        features: &prepared.features,
        brush,
    };
    let pairs = refine(&budgeted, refiner, &ctx);
    report.flagged = pairs.iter().filter(|p| p.flagged).count();

    let mut survivors = Vec::with_capacity(pairs.len());
    let mut scores = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let blended = blend_correction(&p.heuristic, &p.refined, params.blend_gamma)?;
        let q = consistency_score(&blended, &p.heuristic, &prepared.features, params, brush);
        if params.q_discard_threshold.is_some_and(|t| q < t) {
            report.discarded += 1;
            continue;
        }
        survivors.push(blended);
        scores.push(q);
    }

    let lum = luminance(&prepared.reference);
    let (mut strokes, merged) = merge_pass(survivors, &scores, &lum, params.merge_radius);
    report.merged = merged;
    priority_order(&mut strokes);

    if !params.exclude.is_empty() {
        let before = strokes.len();
        strokes = strokes
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| (!params.exclude.contains(&i)).then_some(s))
            .collect();
        report.excluded = before - strokes.len();
    }
    report.strokes = strokes.len();
    Ok((
        StrokePlan {
            width: w,
            height: h,
            strokes,
        },
        report,
    ))
}

/// Full planning run for one image.
pub fn plan(image: &RasterImage, config: &PlanConfig, refiner: &dyn Refiner) -> Result<StrokePlan> {
    let prepared = prepare(image, config)?;
    plan_prepared(&prepared, config, refiner).map(|(p, _)| p)
}
