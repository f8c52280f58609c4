//! Pluggable stroke refinement.
//!
//! A [`Refiner`] proposes an improved version of each heuristic stroke. The
//! bundled [`LocalSearchRefiner`] is a deterministic coordinate descent on
//! the stroke's footprint error; a learned predictor can implement the same
//! trait.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::stroke::{normalize_angle, Stroke};
use crate::features::FeatureBundle;
use crate::raster::RasterImage;
use crate::render::{stroke_footprint, BrushModel};

/// Everything a refiner may look at besides the stroke itself.
#[derive(Debug, Clone, Copy)]
pub struct RefineContext<'a> {
    pub reference: &'a RasterImage,
    pub features: &'a FeatureBundle,
    pub brush: BrushModel,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("refiner failed: {0}")]
pub struct RefineError(pub String);

/// Proposes a refined stroke. Implementations must be deterministic: the
/// same stroke and context always produce the same output.
pub trait Refiner: Send + Sync {
    fn name(&self) -> &'static str;

    fn refine(&self, stroke: &Stroke, ctx: &RefineContext<'_>) -> Result<Stroke, RefineError>;
}

/// Returns every stroke unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn refine(&self, stroke: &Stroke, _ctx: &RefineContext<'_>) -> Result<Stroke, RefineError> {
        Ok(*stroke)
    }
}

/// Coverage-weighted mean squared RGB error between a stroke's color and the
/// reference over the stroke's footprint. Infinite for an empty footprint.
pub fn footprint_error(stroke: &Stroke, reference: &RasterImage, brush: BrushModel) -> f64 {
    let fp = stroke_footprint(stroke, brush, reference.width(), reference.height());
    let mut err = 0.0;
    let mut total = 0.0;
    for &(x, y, cov) in &fp.pixels {
        let r = reference.rgb(x, y);
        let d: f64 = (0..3).map(|k| (stroke.color[k] - r[k]).powi(2)).sum();
        err += cov * d;
        total += cov;
    }
    if total > 0.0 {
        err / total
    } else {
        f64::INFINITY
    }
}

/// Coverage-weighted mean reference color under the footprint.
fn footprint_mean(stroke: &Stroke, reference: &RasterImage, brush: BrushModel) -> Option<[f64; 3]> {
    let fp = stroke_footprint(stroke, brush, reference.width(), reference.height());
    let mut acc = [0.0; 3];
    let mut total = 0.0;
    for &(x, y, cov) in &fp.pixels {
        let r = reference.rgb(x, y);
        for k in 0..3 {
            acc[k] += cov * r[k];
        }
        total += cov;
    }
    (total > 0.0).then(|| acc.map(|v| (v / total).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerKind {
    Identity,
    #[default]
    LocalSearch,
}

impl RefinerKind {
    pub fn build(self) -> Box<dyn Refiner> {
        match self {
            RefinerKind::Identity => Box::new(IdentityRefiner),
            RefinerKind::LocalSearch => Box::new(LocalSearchRefiner::default()),
        }
    }
}

/// Coordinate descent over anchor offsets, rotation and thickness, with the
/// color snapped to the footprint mean. A move is kept only if it lowers
/// [`footprint_error`], so the result is never worse than the input.
#[derive(Debug, Clone, Copy)]
pub struct LocalSearchRefiner {
    pub sweeps: usize,
    pub max_shift: i32,
    pub rotation: f64,
    pub thickness_factors: [f64; 2],
}

impl Default for LocalSearchRefiner {
    fn default() -> Self {
        Self {
            sweeps: 3,
            max_shift: 2,
            rotation: 15.0 * PI / 180.0,
            thickness_factors: [0.5, 2.0],
        }
    }
}

impl LocalSearchRefiner {
    fn candidates(&self, s: &Stroke, width: usize, height: usize) -> Vec<Stroke> {
        let mut out = Vec::new();
        let max_x = (width - 1) as f64;
        let max_y = (height - 1) as f64;
        for d in (-self.max_shift..=self.max_shift).filter(|d| *d != 0) {
            let d = f64::from(d);
            if (0.0..=max_x).contains(&(s.x + d)) {
                out.push(Stroke { x: s.x + d, ..*s });
            }
            if (0.0..=max_y).contains(&(s.y + d)) {
                out.push(Stroke { y: s.y + d, ..*s });
            }
        }
        for r in [-self.rotation, self.rotation] {
            out.push(Stroke {
                theta: normalize_angle(s.theta + r),
                ..*s
            });
        }
        for f in self.thickness_factors {
            out.push(Stroke {
                thickness: s.thickness * f,
                ..*s
            });
        }
        out
    }
}

impl Refiner for LocalSearchRefiner {
    fn name(&self) -> &'static str {
        "local_search"
    }

    fn refine(&self, stroke: &Stroke, ctx: &RefineContext<'_>) -> Result<Stroke, RefineError> {
        let reference = ctx.reference;
        let (w, h) = (reference.width(), reference.height());
        let mut best = *stroke;
        let mut best_err = footprint_error(&best, reference, ctx.brush);
        for _ in 0..self.sweeps {
            let mut improved = false;
            if let Some(mean) = footprint_mean(&best, reference, ctx.brush) {
                let snapped = Stroke {
                    color: [mean[0], mean[1], mean[2], best.color[3]],
                    ..best
                };
                let e = footprint_error(&snapped, reference, ctx.brush);
                if e < best_err {
                    best = snapped;
                    best_err = e;
                    improved = true;
                }
            }
            for cand in self.candidates(&best, w, h) {
                let e = footprint_error(&cand, reference, ctx.brush);
                if e < best_err {
                    best = cand;
                    best_err = e;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        Ok(best)
    }
}

/// A heuristic stroke and its refined counterpart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedPair {
    pub heuristic: Stroke,
    pub refined: Stroke,
    /// Set when the refiner failed or its output had to be corrected.
    pub flagged: bool,
}

/// Runs `refiner` over every stroke, preserving order. Invalid refiner
/// output is clamped into range and flagged; a refiner error falls back to
/// the heuristic stroke, also flagged.
pub fn refine(strokes: &[Stroke], refiner: &dyn Refiner, ctx: &RefineContext<'_>) -> Vec<RefinedPair> {
    let (w, h) = (ctx.reference.width(), ctx.reference.height());
    strokes
        .iter()
        .map(|s| match refiner.refine(s, ctx) {
            Ok(r) => {
                let (refined, flagged) = r.sanitized(w, h);
                RefinedPair {
                    heuristic: *s,
                    refined,
                    flagged,
                }
            }
            Err(_) => RefinedPair {
                heuristic: *s,
                refined: *s,
                flagged: true,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planning::Texture;
    use crate::raster::ScalarField;

    fn bundle(w: usize, h: usize) -> FeatureBundle {
        FeatureBundle::new(
            ScalarField::zeros(w, h),
            ScalarField::zeros(w, h),
            ScalarField::constant(w, h, 1.0),
        )
        .unwrap()
    }

    fn base(x: f64, y: f64, rgb: [f64; 3]) -> Stroke {
        Stroke {
            x,
            y,
            theta: 0.0,
            length: 6.0,
            thickness: 4.0,
            size: 3.0,
            color: [rgb[0], rgb[1], rgb[2], 1.0],
            texture: Texture::Solid,
            weight: 0.5,
            priority: 0.5,
        }
    }

    struct Broken;
    impl Refiner for Broken {
        fn name(&self) -> &'static str {
            "broken"
        }
        fn refine(&self, s: &Stroke, _: &RefineContext<'_>) -> Result<Stroke, RefineError> {
            if s.x > 10.0 {
                Err(RefineError("boom".into()))
            } else {
                Ok(Stroke { x: -5.0, ..*s })
            }
        }
    }

    #[test]
    fn identity_refiner_is_identity() {
        let img = RasterImage::filled(20, 20, &[0.2, 0.3, 0.4]).unwrap();
        let b = bundle(20, 20);
        let ctx = RefineContext { reference: &img, features: &b, brush: BrushModel::Curved };
        let strokes = [base(3.0, 4.0, [0.1; 3]), base(15.0, 9.0, [0.9; 3])];
        for p in refine(&strokes, &IdentityRefiner, &ctx) {
            assert_eq!(p.heuristic, p.refined);
            assert!(!p.flagged);
        }
    }

    #[test]
    fn failures_and_violations_are_flagged() {
        let img = RasterImage::filled(20, 20, &[0.2, 0.3, 0.4]).unwrap();
        let b = bundle(20, 20);
        let ctx = RefineContext { reference: &img, features: &b, brush: BrushModel::Curved };
        let strokes = [base(3.0, 4.0, [0.1; 3]), base(15.0, 9.0, [0.9; 3])];
        let pairs = refine(&strokes, &Broken, &ctx);
        assert!(pairs[0].flagged);
        assert_eq!(pairs[0].refined.x, 0.0);
        assert!(pairs[1].flagged);
        assert_eq!(pairs[1].refined, strokes[1]);
    }

    #[test]
    fn local_search_leaves_constant_image_alone() {
        let img = RasterImage::filled(24, 24, &[0.3, 0.5, 0.7]).unwrap();
        let b = bundle(24, 24);
        let ctx = RefineContext { reference: &img, features: &b, brush: BrushModel::Curved };
        let s = base(12.0, 12.0, [0.3, 0.5, 0.7]);
        let r = LocalSearchRefiner::default().refine(&s, &ctx).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn local_search_fixes_miscolored_stroke() {
        let img = RasterImage::from_fn(32, 32, 3, |x, _, _| if x < 16 { 0.1 } else { 0.9 }).unwrap();
        let b = bundle(32, 32);
        let ctx = RefineContext { reference: &img, features: &b, brush: BrushModel::Curved };
        let s = base(8.0, 16.0, [0.9, 0.9, 0.9]);
        let before = footprint_error(&s, &img, BrushModel::Curved);
        let r = LocalSearchRefiner::default().refine(&s, &ctx).unwrap();
        let after = footprint_error(&r, &img, BrushModel::Curved);
        assert!(after < before);
        assert!(after < 1e-20, "after {after}");
        assert_eq!((r.x, r.y), (s.x, s.y));
    }
}
