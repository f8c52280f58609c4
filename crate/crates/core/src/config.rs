//! The single configuration document shared by the CLI and the HTTP API.
//!
//! Every field has a default, so `{}` is a complete config. Unknown keys,
//! type mismatches and range violations are reported with a JSON pointer to
//! the offending value.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::features::FeatureWeights;
use crate::neural::StylizeConfig;
use crate::painterly::PainterlyConfig;
use crate::planning::{HybridParams, RefinerKind};
use crate::render::RenderOptions;

/// Feature extraction and candidate generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub alpha_e: f64,
    pub beta_s: f64,
    pub gamma_d: f64,
    /// Edge cut-off in [0, 1].
    pub edge_threshold: f64,
    /// Smoothing of the density map, in pixels.
    pub density_sigma: f64,
    /// Number of Voronoi cells, one candidate each. Capped at the pixel count.
    pub candidate_count: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        let w = FeatureWeights::default();
        Self {
            alpha_e: w.alpha_e,
            beta_s: w.beta_s,
            gamma_d: w.gamma_d,
            edge_threshold: 0.1,
            density_sigma: 4.0,
            candidate_count: 1500,
        }
    }
}

impl FeatureParams {
    pub fn weights(&self) -> FeatureWeights {
        FeatureWeights {
            alpha_e: self.alpha_e,
            beta_s: self.beta_s,
            gamma_d: self.gamma_d,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        self.weights().validate().map_err(|(f, m)| (f.to_string(), m))?;
        if !(0.0..=1.0).contains(&self.edge_threshold) {
            return Err(("edge_threshold".into(), format!("must be in [0,1], got {}", self.edge_threshold)));
        }
        if !(self.density_sigma >= 0.0) || !self.density_sigma.is_finite() {
            return Err(("density_sigma".into(), "must be a finite value >= 0".into()));
        }
        if self.candidate_count == 0 {
            return Err(("candidate_count".into(), "must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Seeds every random choice in every pipeline.
    pub seed: u64,
    pub refiner: RefinerKind,
    pub features: FeatureParams,
    pub painterly: PainterlyConfig,
    pub hybrid: HybridParams,
    pub stylize: StylizeConfig,
    pub render: RenderOptions,
}

fn pointer_from_path(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

fn unknown_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

impl PlanConfig {
    /// Checks every section's invariants.
    pub fn validate(&self) -> Result<()> {
        fn at(section: &'static str) -> impl Fn((String, String)) -> Error {
            move |(field, message)| Error::Config {
                pointer: format!("/{section}/{field}"),
                message,
            }
        }
        self.features.validate().map_err(at("features"))?;
        self.painterly.validate().map_err(at("painterly"))?;
        self.hybrid.validate().map_err(at("hybrid"))?;
        self.stylize.validate().map_err(at("stylize"))?;
        self.render.validate().map_err(at("render"))?;
        Ok(())
    }

    /// Parses and validates a config document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: PlanConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut pointer = pointer_from_path(e.path());
            let message = e.inner().to_string();
            if let Some(field) = unknown_field(&message) {
                if !pointer.ends_with(&format!("/{field}")) {
                    pointer = format!("{pointer}/{field}");
                }
            }
            Error::Config { pointer, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        Self::from_json_str(&value.to_string())
    }

    /// Canonical form: every field present, pretty-printed, trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config values are always serializable");
        s.push('\n');
        s
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config values are always serializable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Applies a partial document on top of this config. Objects merge
    /// recursively; any other value, `null` included, replaces the target.
    pub fn with_patch(&self, patch: &Value) -> Result<Self> {
        if !patch.is_object() {
            return Err(Error::Config {
                pointer: String::new(),
                message: "patch must be a JSON object".into(),
            });
        }
        let mut doc = self.to_value();
        merge(&mut doc, patch);
        Self::from_value(doc)
    }

    /// Painterly settings with the shared seed applied.
    pub fn painterly_config(&self) -> PainterlyConfig {
        PainterlyConfig {
            rng_seed: self.seed,
            ..self.painterly.clone()
        }
    }
}

fn merge(target: &mut Value, patch: &Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                match t.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        t.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (t, p) => *t = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn pointer_of(text: &str) -> String {
        match PlanConfig::from_json_str(text).unwrap_err() {
            Error::Config { pointer, .. } => pointer,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn empty_object_is_default() {
        assert_eq!(PlanConfig::from_json_str("{}").unwrap(), PlanConfig::default());
        PlanConfig::default().validate().unwrap();
    }

    #[test]
    fn range_errors_name_the_field() {
        assert_eq!(pointer_of(r#"{"hybrid":{"blend_gamma":1.5}}"#), "/hybrid/blend_gamma");
        assert_eq!(pointer_of(r#"{"features":{"edge_threshold":-1}}"#), "/features/edge_threshold");
        assert_eq!(
            pointer_of(r#"{"painterly":{"layers":[{"radius":4},{"radius":6}]}}"#),
            "/painterly/layers/1/radius"
        );
        assert_eq!(pointer_of(r#"{"render":{"post":{"harmonize":2}}}"#), "/render/post/harmonize");
    }

    #[test]
    fn type_and_key_errors_name_the_field() {
        assert_eq!(pointer_of(r#"{"hybrid":{"stroke_budget":"many"}}"#), "/hybrid/stroke_budget");
        assert_eq!(pointer_of(r#"{"hybrid":{"bogus":1}}"#), "/hybrid/bogus");
        assert_eq!(pointer_of(r#"{"bogus":1}"#), "/bogus");
        assert_eq!(pointer_of(r#"{"refiner":"magic"}"#), "/refiner");
    }

    #[test]
    fn save_load_round_trip() {
        let mut cfg = PlanConfig::default();
        cfg.seed = u64::MAX;
        cfg.hybrid.blend_gamma = 0.1 + 0.2;
        cfg.hybrid.q_discard_threshold = None;
        cfg.render.post.harmonize = Some(0.25);
        let text = cfg.to_json_string();
        let back = PlanConfig::from_json_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json_string(), text);
    }

    #[test]
    fn patch_merges_and_validates() {
        let cfg = PlanConfig::default();
        let p = cfg.with_patch(&json!({"hybrid": {"blend_gamma": 0.0}})).unwrap();
        assert_eq!(p.hybrid.blend_gamma, 0.0);
        assert_eq!(p.hybrid.lambda_priority, cfg.hybrid.lambda_priority);
        let p = cfg.with_patch(&json!({"hybrid": {"q_discard_threshold": null}})).unwrap();
        assert_eq!(p.hybrid.q_discard_threshold, None);
        match cfg.with_patch(&json!({"hybrid": {"blend_gamma": 3}})).unwrap_err() {
            Error::Config { pointer, .. } => assert_eq!(pointer, "/hybrid/blend_gamma"),
            e => panic!("{e}"),
        }
        assert!(cfg.with_patch(&json!([1])).is_err());
    }

    #[test]
    fn painterly_seed_follows_config_seed() {
        let cfg = PlanConfig {
            seed: 42,
            ..PlanConfig::default()
        };
        assert_eq!(cfg.painterly_config().rng_seed, 42);
    }
}
