//! Versioned JSON codec for stroke plans.
//!
//! ```json
//! {"version":1,"image":{"w":64,"h":48},"strokes":[
//!   {"x":..,"y":..,"theta":..,"len":..,"thick":..,"size":..,
//!    "rgba":[r,g,b,a],"texture":"solid","weight":..,"priority":..}]}
//! ```
//!
//! Numbers are written with 17 significant digits, which is enough for
//! every `f64` to parse back to the same bits.

use std::fmt::Write as _;

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::planning::{Stroke, StrokePlan, Texture};

pub const PLAN_VERSION: u64 = 1;

fn num(out: &mut String, v: f64) {
    if v.is_finite() {
        let _ = write!(out, "{v:.16e}");
    } else {
        // JSON has no infinities; saturate so the document stays valid.
        let s = if v.is_nan() { 0.0 } else { v.signum() * f64::MAX };
        let _ = write!(out, "{s:.16e}");
    }
}

/// Writes a plan as compact JSON.
pub fn serialize_plan(plan: &StrokePlan) -> String {
    let mut out = String::with_capacity(64 + plan.strokes.len() * 320);
    let _ = write!(
        out,
        "{{\"version\":{PLAN_VERSION},\"image\":{{\"w\":{},\"h\":{}}},\"strokes\":[",
        plan.width, plan.height
    );
    for (i, s) in plan.strokes.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let fields = [
            ("x", s.x),
            ("y", s.y),
            ("theta", s.theta),
            ("len", s.length),
            ("thick", s.thickness),
            ("size", s.size),
        ];
        out.push('{');
        for (name, v) in fields {
            let _ = write!(out, "\"{name}\":");
            num(&mut out, v);
            out.push(',');
        }
        out.push_str("\"rgba\":[");
        for (k, c) in s.color.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            num(&mut out, *c);
        }
        let _ = write!(out, "],\"texture\":\"{}\",\"weight\":", s.texture.as_str());
        num(&mut out, s.weight);
        out.push_str(",\"priority\":");
        num(&mut out, s.priority);
        out.push('}');
    }
    out.push_str("]}");
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageDims {
    w: usize,
    h: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrokeDoc {
    x: f64,
    y: f64,
    theta: f64,
    len: f64,
    thick: f64,
    size: f64,
    rgba: [f64; 4],
    texture: Texture,
    weight: f64,
    priority: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanDoc {
    #[allow(dead_code)]
    version: u64,
    image: ImageDims,
    strokes: Vec<StrokeDoc>,
}

/// Parses a plan written by [`serialize_plan`] (or by hand).
pub fn parse_plan(text: &str) -> Result<StrokePlan> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::MalformedPlan(e.to_string()))?;
    match value.get("version") {
        Some(Value::Number(n)) if n.as_u64() == Some(PLAN_VERSION) => {}
        Some(Value::Number(n)) => {
            return Err(Error::UnsupportedVersion(n.as_u64().unwrap_or(u64::MAX)));
        }
        Some(_) => return Err(Error::MalformedPlan("version must be an integer".into())),
        None => return Err(Error::MalformedPlan("missing version".into())),
    }
    let doc: PlanDoc = serde_json::from_value(value).map_err(|e| Error::MalformedPlan(e.to_string()))?;
    if doc.image.w == 0 || doc.image.h == 0 {
        return Err(Error::MalformedPlan("image dimensions must be positive".into()));
    }
    let strokes = doc
        .strokes
        .into_iter()
        .map(|s| Stroke {
            x: s.x,
            y: s.y,
            theta: s.theta,
            length: s.len,
            thickness: s.thick,
            size: s.size,
            color: s.rgba,
            texture: s.texture,
            weight: s.weight,
            priority: s.priority,
        })
        .collect();
    Ok(StrokePlan {
        width: doc.image.w,
        height: doc.image.h,
        strokes,
    })
}
