//! Edge, saliency and density maps, and the weighted initial candidate set.
//!
//! A candidate's weight is `alpha_e * E + beta_s * S + gamma_d * D`, sampled
//! at its anchor. Anchors are the relaxed seeds of a density-weighted Voronoi
//! partition, one per cell.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    blur_field, convolve2d, gradient_magnitude_and_angle, luminance, sobel_gradients, Kernel,
    RasterImage, ScalarField,
};
use crate::rng;

/// Smallest image side accepted by [`compute_saliency`].
pub const MIN_SALIENCY_SIDE: usize = 16;
const SALIENCY_SIGMA: f64 = 2.5;
const LLOYD_ITERATIONS: usize = 3;

/// Per-pixel edge strength, saliency and stroke density, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub edges: ScalarField,
    pub saliency: ScalarField,
    pub density: ScalarField,
}

impl FeatureBundle {
    pub fn new(edges: ScalarField, saliency: ScalarField, density: ScalarField) -> Result<Self> {
        if !edges.same_dims(&saliency) || !edges.same_dims(&density) {
            return Err(Error::DimensionMismatch(
                "edge, saliency and density fields differ in size".into(),
            ));
        }
        Ok(Self {
            edges,
            saliency,
            density,
        })
    }

    pub fn width(&self) -> usize {
        self.edges.width()
    }

    pub fn height(&self) -> usize {
        self.edges.height()
    }
}

/// Coefficients of the candidate weight blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureWeights {
    pub alpha_e: f64,
    pub beta_s: f64,
    pub gamma_d: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        Self {
            alpha_e: 0.4,
            beta_s: 0.4,
            gamma_d: 0.2,
        }
    }
}

impl FeatureWeights {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        for (name, v) in [
            ("alpha_e", self.alpha_e),
            ("beta_s", self.beta_s),
            ("gamma_d", self.gamma_d),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err((name, format!("must be a finite value >= 0, got {v}")));
            }
        }
        if self.alpha_e + self.beta_s + self.gamma_d <= 0.0 {
            return Err(("alpha_e", "weights must not all be zero".into()));
        }
        Ok(())
    }

    /// Weight of a point with the given feature samples.
    pub fn weigh(&self, edge: f64, saliency: f64, density: f64) -> f64 {
        self.alpha_e * edge + self.beta_s * saliency + self.gamma_d * density
    }
}

/// A seed location for a stroke, with its blended feature weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeCandidate {
    pub x: usize,
    pub y: usize,
    pub weight: f64,
    /// Index of the Voronoi cell the anchor seeds.
    pub cell: usize,
}

/// Nearest-seed labelling of the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiPartition {
    width: usize,
    height: usize,
    seeds: Vec<(usize, usize)>,
    labels: Vec<usize>,
}

impl VoronoiPartition {
    pub fn seeds(&self) -> &[(usize, usize)] {
        &self.seeds
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.seeds.len()
    }

    /// Labels as a float field, for callers that want a [`ScalarField`].
    pub fn cell_index(&self) -> ScalarField {
        ScalarField::from_fn(self.width, self.height, |x, y| self.label(x, y) as f64)
    }
}

/// Normalized Sobel magnitude of the luminance. Values under `threshold` are
/// zeroed and the rest mapped linearly from `[threshold, 1]` onto `[0, 1]`.
pub fn extract_edges(image: &RasterImage, threshold: f64) -> Result<ScalarField> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("edge threshold {threshold} outside [0,1]")));
    }
    let grads = sobel_gradients(&luminance(image))?;
    let (mag, _) = gradient_magnitude_and_angle(&grads);
    let peak = mag.max();
    if peak <= crate::raster::DEGENERATE_MAGNITUDE {
        return Ok(ScalarField::zeros(mag.width(), mag.height()));
    }
    let normalized = mag.map(|v| v / peak);
    if threshold == 0.0 {
        return Ok(normalized);
    }
    Ok(normalized.map(|v| {
        if v < threshold {
            0.0
        } else if threshold < 1.0 {
            ((v - threshold) / (1.0 - threshold)).min(1.0)
        } else {
            1.0
        }
    }))
}

fn fft2d(data: &mut [Complex<f64>], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Spectral-residual saliency of the luminance channel, max-normalized.
pub fn compute_saliency(image: &RasterImage) -> Result<ScalarField> {
    let (w, h) = (image.width(), image.height());
    if w < MIN_SALIENCY_SIDE || h < MIN_SALIENCY_SIDE {
        return Err(Error::invalid(format!(
            "saliency needs at least {MIN_SALIENCY_SIDE}x{MIN_SALIENCY_SIDE}, got {w}x{h}"
        )));
    }
    let lum = luminance(image);
    if lum.max() - lum.min() <= 1e-12 {
        return Ok(ScalarField::zeros(w, h));
    }
    let mut spectrum: Vec<Complex<f64>> =
        lum.data().iter().map(|v| Complex::new(*v, 0.0)).collect();
    fft2d(&mut spectrum, w, h, false);

    let log_amp = ScalarField::from_fn(w, h, |x, y| (spectrum[y * w + x].norm() + 1e-9).ln());
    let box3 = Kernel::new(3, 3, vec![1.0 / 9.0; 9])?;
    let smoothed = convolve2d(&log_amp, &box3);
    for (i, z) in spectrum.iter_mut().enumerate() {
        let residual = log_amp.data()[i] - smoothed.data()[i];
        let phase = z.arg();
        *z = Complex::from_polar(residual.exp(), phase);
    }
    fft2d(&mut spectrum, w, h, true);

    let scale = 1.0 / (w * h) as f64;
    let energy = ScalarField::from_fn(w, h, |x, y| (spectrum[y * w + x] * scale).norm_sqr());
    let smooth = blur_field(&energy, SALIENCY_SIGMA)?;
    Ok(smooth.max_normalized().map(|v| v.clamp(0.0, 1.0)))
}

/// Smoothed, max-normalized blend of edges and saliency. An all-zero blend
/// yields uniform density 1.
pub fn estimate_density(edges: &ScalarField, saliency: &ScalarField, sigma: f64) -> Result<ScalarField> {
    if !edges.same_dims(saliency) {
        return Err(Error::DimensionMismatch("edges and saliency differ in size".into()));
    }
    let blend = ScalarField::from_fn(edges.width(), edges.height(), |x, y| {
        0.5 * edges.get(x, y) + 0.5 * saliency.get(x, y)
    });
    let smooth = blur_field(&blend, sigma)?;
    if smooth.max() <= 1e-12 {
        return Ok(ScalarField::constant(edges.width(), edges.height(), 1.0));
    }
    Ok(smooth.max_normalized().map(|v| v.clamp(0.0, 1.0)))
}

/// Bucketed nearest-seed lookup. Distances are exact integers, ties go to
/// the lowest seed index.
struct SeedGrid<'a> {
    seeds: &'a [(usize, usize)],
    cell: usize,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> SeedGrid<'a> {
    fn new(seeds: &'a [(usize, usize)], width: usize, height: usize) -> Self {
        let area = (width * height) as f64;
        let cell = ((area / seeds.len() as f64).sqrt().round() as usize).max(1);
        let cols = width.div_ceil(cell);
        let rows = height.div_ceil(cell);
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, &(x, y)) in seeds.iter().enumerate() {
            buckets[(y / cell) * cols + x / cell].push(i);
        }
        Self {
            seeds,
            cell,
            cols,
            rows,
            buckets,
        }
    }

    fn nearest(&self, px: usize, py: usize) -> usize {
        let cx = (px / self.cell) as i64;
        let cy = (py / self.cell) as i64;
        let mut best: Option<(u64, usize)> = None;
        let max_ring = self.cols.max(self.rows) as i64;
        for ring in 0..=max_ring {
            for gy in (cy - ring)..=(cy + ring) {
                if gy < 0 || gy >= self.rows as i64 {
                    continue;
                }
                let on_edge_row = gy == cy - ring || gy == cy + ring;
                let mut gx = cx - ring;
                while gx <= cx + ring {
                    if gx >= 0 && gx < self.cols as i64 {
                        for &i in &self.buckets[gy as usize * self.cols + gx as usize] {
                            let (sx, sy) = self.seeds[i];
                            let dx = sx as i64 - px as i64;
                            let dy = sy as i64 - py as i64;
                            let d = (dx * dx + dy * dy) as u64;
                            if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                                best = Some((d, i));
                            }
                        }
                    }
                    gx += if on_edge_row || ring == 0 { 1 } else { 2 * ring };
                }
            }
            if let Some((bd, _)) = best {
                let bound = (ring as u64) * self.cell as u64 + 1;
                if bd < bound * bound {
                    break;
                }
            }
        }
        best.map(|(_, i)| i).expect("at least one seed")
    }

    fn label_all(&self, width: usize, height: usize) -> Vec<usize> {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(self.nearest(x, y));
            }
        }
        labels
    }
}

fn sample_seeds(density: &ScalarField, count: usize, rng_seed: u64) -> Vec<(usize, usize)> {
    let (w, h) = (density.width(), density.height());
    let peak = density.max();
    let mut rng = rng::seeded(rng_seed);
    let mut occupied = vec![false; w * h];
    let mut seeds = Vec::with_capacity(count);
    let budget = 1000 + 100 * count;
    let mut attempts = 0;
    while seeds.len() < count && attempts < budget {
        attempts += 1;
        let x = rng.random_range(0..w);
        let y = rng.random_range(0..h);
        let u: f64 = rng.random();
        if occupied[y * w + x] {
            continue;
        }
        if peak <= 0.0 || u * peak < density.get(x, y) {
            occupied[y * w + x] = true;
            seeds.push((x, y));
        }
    }
    if seeds.len() < count {
        // Rejection stalled (near-saturated or sparse density): fill the rest
        // from free pixels in order of decreasing density.
        let mut free: Vec<(usize, usize)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| !occupied[y * w + x])
            .collect();
        free.sort_by(|a, b| {
            density
                .get(b.0, b.1)
                .total_cmp(&density.get(a.0, a.1))
                .then((a.1, a.0).cmp(&(b.1, b.0)))
        });
        seeds.extend(free.into_iter().take(count - seeds.len()));
    }
    seeds
}

/// Closest unoccupied pixel to `target`, searching Chebyshev rings and
/// breaking ties by squared distance, then row, then column.
fn nearest_free(target: (usize, usize), occupied: &[bool], w: usize, h: usize) -> (usize, usize) {
    let (tx, ty) = (target.0 as i64, target.1 as i64);
    for ring in 0..=(w.max(h) as i64) {
        let mut best: Option<(i64, i64, i64)> = None;
        for y in (ty - ring)..=(ty + ring) {
            for x in (tx - ring)..=(tx + ring) {
                if (x - tx).abs().max((y - ty).abs()) != ring {
                    continue;
                }
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                if occupied[y as usize * w + x as usize] {
                    continue;
                }
                let d = (x - tx).pow(2) + (y - ty).pow(2);
                if best.is_none_or(|b| (d, y, x) < b) {
                    best = Some((d, y, x));
                }
            }
        }
        if let Some((_, y, x)) = best {
            return (x as usize, y as usize);
        }
    }
    unreachable!("seed count never exceeds pixel count")
}

/// Density-weighted Voronoi partition with `seed_count` relaxed seeds.
///
/// Seeds are drawn by rejection sampling against `density`, then moved to
/// their cells' density-weighted centroids for a fixed number of Lloyd
/// iterations. Seeds always occupy distinct pixels, so every cell contains at
/// least its own seed.
pub fn voronoi_partition(
    width: usize,
    height: usize,
    seed_count: usize,
    density: &ScalarField,
    rng_seed: u64,
) -> Result<VoronoiPartition> {
    if seed_count == 0 {
        return Err(Error::invalid("seed count must be at least 1"));
    }
    if seed_count > width * height {
        return Err(Error::invalid(format!(
            "seed count {seed_count} exceeds pixel count {}",
            width * height
        )));
    }
    if density.width() != width || density.height() != height {
        return Err(Error::DimensionMismatch("density field does not match image".into()));
    }
    let mut seeds = sample_seeds(density, seed_count, rng_seed);

    for _ in 0..LLOYD_ITERATIONS {
        let labels = SeedGrid::new(&seeds, width, height).label_all(width, height);
        let mut acc = vec![[0.0f64; 6]; seed_count];
        for y in 0..height {
            for x in 0..width {
                let d = density.get(x, y).max(0.0);
                let a = &mut acc[labels[y * width + x]];
                a[0] += d;
                a[1] += d * x as f64;
                a[2] += d * y as f64;
                a[3] += 1.0;
                a[4] += x as f64;
                a[5] += y as f64;
            }
        }
        let mut occupied = vec![false; width * height];
        let mut moved = Vec::with_capacity(seed_count);
        for a in &acc {
            let (cx, cy) = if a[0] > 0.0 {
                (a[1] / a[0], a[2] / a[0])
            } else {
                (a[4] / a[3], a[5] / a[3])
            };
            let target = crate::raster::nearest_pixel(cx, cy, width, height);
            let p = nearest_free(target, &occupied, width, height);
            occupied[p.1 * width + p.0] = true;
            moved.push(p);
        }
        seeds = moved;
    }

    let labels = SeedGrid::new(&seeds, width, height).label_all(width, height);
    Ok(VoronoiPartition {
        width,
        height,
        seeds,
        labels,
    })
}

/// Candidates plus the partition their anchors came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<StrokeCandidate>,
    pub partition: VoronoiPartition,
}

/// One weighted candidate per Voronoi cell, sorted by weight descending and
/// then by `(y, x)` ascending.
pub fn generate_candidates(
    bundle: &FeatureBundle,
    weights: &FeatureWeights,
    count: usize,
    rng_seed: u64,
) -> Result<CandidateSet> {
    if count == 0 {
        return Err(Error::invalid("candidate count must be at least 1"));
    }
    let partition =
        voronoi_partition(bundle.width(), bundle.height(), count, &bundle.density, rng_seed)?;
    let mut candidates: Vec<StrokeCandidate> = partition
        .seeds()
        .iter()
        .enumerate()
        .map(|(cell, &(x, y))| StrokeCandidate {
            x,
            y,
            weight: weights.weigh(
                bundle.edges.get(x, y),
                bundle.saliency.get(x, y),
                bundle.density.get(x, y),
            ),
            cell,
        })
        .collect();
    candidates.sort_by(|a, b| b.weight.total_cmp(&a.weight).then((a.y, a.x).cmp(&(b.y, b.x))));
    Ok(CandidateSet {
        candidates,
        partition,
    })
}

/// Edges, saliency and density for an image in one call.
pub fn extract_features(image: &RasterImage, edge_threshold: f64, density_sigma: f64) -> Result<FeatureBundle> {
    let edges = extract_edges(image, edge_threshold)?;
    let saliency = compute_saliency(image)?;
    let density = estimate_density(&edges, &saliency, density_sigma)?;
    FeatureBundle::new(edges, saliency, density)
}
