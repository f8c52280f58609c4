//! End-to-end entry points used by both the CLI and the HTTP service, so the
//! two produce identical artifacts for identical inputs.

use crate::config::PlanConfig;
use crate::error::{Error, Result};
use crate::neural::{default_extractor, stylize, Stylized};
use crate::painterly::render_painterly;
use crate::planning::{plan_prepared, prepare, PlanReport, Prepared, StrokePlan};
use crate::raster::RasterImage;
use crate::render::{render_sequence, RenderOptions};

/// A stroke plan, its rendering and the run's counters.
#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub plan: StrokePlan,
    pub report: PlanReport,
    pub image: RasterImage,
}

/// Rasterizes a plan with the given options.
pub fn render_plan(plan: &StrokePlan, options: &RenderOptions) -> Result<RasterImage> {
    options.validate().map_err(|(field, message)| Error::Config {
        pointer: format!("/render/{field}"),
        message,
    })?;
    render_sequence(&plan.strokes, plan.width, plan.height, options)
}

/// Plans and renders from already extracted features.
pub fn run_plan_prepared(prepared: &Prepared, config: &PlanConfig) -> Result<PlanOutput> {
    config.validate()?;
    let refiner = config.refiner.build();
    let (plan, report) = plan_prepared(prepared, config, refiner.as_ref())?;
    let image = render_plan(&plan, &config.render)?;
    Ok(PlanOutput { plan, report, image })
}

/// Hybrid planning and rendering of one image.
pub fn run_plan(image: &RasterImage, config: &PlanConfig) -> Result<PlanOutput> {
    config.validate()?;
    let prepared = prepare(image, config)?;
    run_plan_prepared(&prepared, config)
}

/// Layered painterly rendering.
pub fn run_classical(image: &RasterImage, config: &PlanConfig) -> Result<RasterImage> {
    config.validate()?;
    render_painterly(image, &config.painterly_config()).map(|(canvas, _)| canvas)
}

/// Style-loss descent with the default extractor seeded from the config.
pub fn run_stylize(content: &RasterImage, style: &RasterImage, config: &PlanConfig) -> Result<Stylized> {
    config.validate()?;
    let extractor = default_extractor(config.seed);
    stylize(&content.to_rgb(), &style.to_rgb(), &extractor, &config.stylize)
}
