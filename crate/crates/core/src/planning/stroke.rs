use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Procedural texture applied inside a stroke's footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    #[default]
    Solid,
    Stipple,
    Hatch,
}

impl Texture {
    pub fn as_str(self) -> &'static str {
        match self {
            Texture::Solid => "solid",
            Texture::Stipple => "stipple",
            Texture::Hatch => "hatch",
        }
    }
}

/// One renderable brush stroke.
///
/// The anchor is the midpoint of the stroke's spine; `theta` points along
/// the spine. Opacity is the alpha component of `color`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stroke {
    pub x: f64,
    pub y: f64,
    /// Spine direction in radians, normalized to (-pi, pi].
    pub theta: f64,
    /// Spine length in pixels.
    pub length: f64,
    /// Full width in pixels for rectangle and triangle brushes.
    pub thickness: f64,
    /// Brush radius in pixels for round brushes.
    pub size: f64,
    pub color: [f64; 4],
    pub texture: Texture,
    pub weight: f64,
    pub priority: f64,
}

impl Stroke {
    pub fn opacity(&self) -> f64 {
        self.color[3]
    }

    /// Checks every field invariant against an image of the given size.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let finite = [
            self.x,
            self.y,
            self.theta,
            self.length,
            self.thickness,
            self.size,
            self.weight,
            self.priority,
        ]
        .iter()
        .chain(&self.color)
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("stroke has non-finite fields"));
        }
        if self.x < 0.0 || self.y < 0.0 || self.x > (width - 1) as f64 || self.y > (height - 1) as f64 {
            return Err(Error::invalid(format!(
                "stroke anchor ({}, {}) outside {width}x{height}",
                self.x, self.y
            )));
        }
        if !(self.thickness > 0.0) || !(self.size > 0.0) || self.length < 0.0 {
            return Err(Error::invalid("stroke extents must be positive"));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("stroke color outside [0,1]"));
        }
        if !(self.theta > -PI && self.theta <= PI) {
            return Err(Error::invalid(format!("stroke angle {} not normalized", self.theta)));
        }
        Ok(())
    }

    /// Forces every field into its valid range. Returns the corrected stroke
    /// and whether anything changed.
    pub fn sanitized(&self, width: usize, height: usize) -> (Stroke, bool) {
        let fix = |v: f64, lo: f64, hi: f64, fallback: f64| {
            if v.is_finite() {
                v.clamp(lo, hi)
            } else {
                fallback
            }
        };
        let mut s = *self;
        s.x = fix(s.x, 0.0, (width - 1) as f64, 0.0);
        s.y = fix(s.y, 0.0, (height - 1) as f64, 0.0);
        s.theta = if s.theta.is_finite() {
            normalize_angle(s.theta)
        } else {
            0.0
        };
        s.length = fix(s.length, 0.0, f64::MAX, 0.0);
        s.thickness = fix(s.thickness, MIN_EXTENT, f64::MAX, 1.0);
        s.size = fix(s.size, MIN_EXTENT, f64::MAX, 1.0);
        for c in &mut s.color {
            *c = fix(*c, 0.0, 1.0, 0.0);
        }
        s.weight = fix(s.weight, f64::MIN, f64::MAX, 0.0);
        s.priority = fix(s.priority, f64::MIN, f64::MAX, 0.0);
        let changed = !bitwise_eq(&s, self);
        (s, changed)
    }
}

/// Smallest thickness or size a corrected stroke may have.
pub const MIN_EXTENT: f64 = 0.25;

/// Field-by-field bit equality (distinguishes -0.0 and NaN payloads).
pub fn bitwise_eq(a: &Stroke, b: &Stroke) -> bool {
    let fa = [a.x, a.y, a.theta, a.length, a.thickness, a.size, a.weight, a.priority];
    let fb = [b.x, b.y, b.theta, b.length, b.thickness, b.size, b.weight, b.priority];
    fa.iter().zip(&fb).all(|(p, q)| p.to_bits() == q.to_bits())
        && a.color.iter().zip(&b.color).all(|(p, q)| p.to_bits() == q.to_bits())
        && a.texture == b.texture
}

/// Maps an angle into (-pi, pi]. Negative zero becomes zero.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    if t == 0.0 {
        0.0
    } else {
        t
    }
}

/// Signed shortest rotation from `a` to `b`, in (-pi, pi].
pub fn angle_delta(a: f64, b: f64) -> f64 {
    normalize_angle(b - a)
}

/// `a + t (b - a)`, exact at the endpoints and clamped to the closed
/// interval between `a` and `b`.
pub fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        return a;
    }
    if t == 1.0 {
        return b;
    }
    if a == b {
        return a;
    }
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}

/// Interpolates along the shorter arc between two angles.
pub fn lerp_angle(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        return a;
    }
    if t == 1.0 {
        return b;
    }
    if a == b {
        return a;
    }
    normalize_angle(a + t * angle_delta(a, b))
}

/// Convex combination `(1 - t) * from + t * to` with per-field rules: scalar
/// fields interpolate linearly, the angle follows the shorter arc, and the
/// texture switches to `to`'s at `t >= 0.5`.
pub fn interpolate(from: &Stroke, to: &Stroke, t: f64) -> Stroke {
    if t == 0.0 {
        return *from;
    }
    if t == 1.0 {
        return *to;
    }
    let mut color = [0.0; 4];
    for (k, c) in color.iter_mut().enumerate() {
        *c = lerp(from.color[k], to.color[k], t);
    }
    Stroke {
        x: lerp(from.x, to.x, t),
        y: lerp(from.y, to.y, t),
        theta: lerp_angle(from.theta, to.theta, t),
        length: lerp(from.length, to.length, t),
        thickness: lerp(from.thickness, to.thickness, t),
        size: lerp(from.size, to.size, t),
        color,
        texture: if t >= 0.5 { to.texture } else { from.texture },
        weight: lerp(from.weight, to.weight, t),
        priority: lerp(from.priority, to.priority, t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert_eq!(normalize_angle(-0.0).to_bits(), 0.0f64.to_bits());
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-3.5 * PI) - 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn short_arc_across_seam() {
        let m = lerp_angle(-3.0, 3.0, 0.5);
        assert!((m.abs() - PI).abs() < 1e-12, "got {m}");
        // Circular-mean oracle: atan2 of the summed unit vectors.
        let mean = ((-3.0f64).sin() + 3.0f64.sin()).atan2((-3.0f64).cos() + 3.0f64.cos());
        assert!(angle_delta(m, mean).abs() < 1e-12);
    }

    #[test]
    fn sanitize_flags_changes() {
        let s = Stroke {
            x: -3.0,
            y: 5.0,
            theta: 4.0,
            length: 2.0,
            thickness: 0.0,
            size: 3.0,
            color: [1.2, 0.5, 0.5, 1.0],
            texture: Texture::Hatch,
            weight: 1.0,
            priority: 0.0,
        };
        assert!(s.validate(10, 10).is_err());
        let (fixed, changed) = s.sanitized(10, 10);
        assert!(changed);
        fixed.validate(10, 10).unwrap();
        let (again, changed) = fixed.sanitized(10, 10);
        assert!(!changed);
        assert!(bitwise_eq(&again, &fixed));
    }

    proptest! {
        #[test]
        fn lerp_stays_in_interval(a in -1e6f64..1e6, b in -1e6f64..1e6, t in 0.0f64..=1.0) {
            let v = lerp(a, b, t);
            prop_assert!(v >= a.min(b) && v <= a.max(b));
        }

        #[test]
        fn lerp_angle_on_short_arc(a in -PI..PI, b in -PI..PI, t in 0.0f64..=1.0) {
            let v = lerp_angle(a, b, t);
            let span = angle_delta(a, b).abs();
            prop_assert!(angle_delta(a, v).abs() <= span + 1e-12);
            prop_assert!(angle_delta(v, b).abs() <= span + 1e-12);
        }
    }
}
