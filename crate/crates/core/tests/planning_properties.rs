mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use strokeforge::config::PlanConfig;
use strokeforge::pipeline::run_plan;
use strokeforge::planning::{
    angle_delta, bitwise_eq, blend_correction, enforce_density, merge_strokes, RegionMap, Stroke, Texture,
};
use strokeforge::raster::RasterImage;
use strokeforge::render::{render_order, stroke_footprint, OrderPolicy};

fn texture() -> impl Strategy<Value = Texture> {
    prop_oneof![Just(Texture::Solid), Just(Texture::Stipple), Just(Texture::Hatch)]
}

prop_compose! {
    fn stroke()(
        x in 0.0f64..32.0, y in 0.0f64..32.0, theta in -PI..=PI,
        length in 0.25f64..40.0, thickness in 0.25f64..12.0, size in 0.25f64..10.0,
        color in prop::array::uniform4(0.0f64..=1.0), texture in texture(),
        weight in 0.0f64..2.0, priority in -1.0f64..2.0,
    ) -> Stroke {
        Stroke { x, y, theta, length, thickness, size, color, texture, weight, priority }
    }
}

fn within(v: f64, a: f64, b: f64) -> bool {
    a.min(b) <= v && v <= a.max(b)
}

fn reference() -> RasterImage {
    common::scenes(32, 32).swap_remove(4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn blend_endpoints_are_exact(h in stroke(), r in stroke()) {
        prop_assert!(bitwise_eq(&blend_correction(&h, &r, 0.0).unwrap(), &h));
        prop_assert!(bitwise_eq(&blend_correction(&h, &r, 1.0).unwrap(), &r));
    }

    #[test]
    fn blend_of_equal_strokes_is_identity(s in stroke(), gamma in 0.0f64..=1.0) {
        prop_assert!(bitwise_eq(&blend_correction(&s, &s, gamma).unwrap(), &s));
    }

    #[test]
    fn merged_fields_stay_between_parents(a in stroke(), b0 in stroke(), ang in -PI..PI, dist in 0.0f64..3.0) {
        let b = Stroke { x: a.x + dist * ang.cos(), y: a.y + dist * ang.sin(), ..b0 };
        let m = merge_strokes(&a, &b, &reference(), 3.0).unwrap();
        for (v, p, q) in [
            (m.x, a.x, b.x), (m.y, a.y, b.y), (m.length, a.length, b.length),
            (m.thickness, a.thickness, b.thickness), (m.size, a.size, b.size),
            (m.weight, a.weight, b.weight), (m.priority, a.priority, b.priority),
        ] {
            prop_assert!(within(v, p, q), "{} not in [{}, {}]", v, p, q);
        }
        for k in 0..4 {
            prop_assert!(within(m.color[k], a.color[k], b.color[k]));
        }
        let span = angle_delta(a.theta, b.theta).abs();
        prop_assert!(angle_delta(a.theta, m.theta).abs() + angle_delta(m.theta, b.theta).abs() <= span + 1e-12);
    }

    #[test]
    fn density_never_exceeds_budget(strokes in prop::collection::vec(stroke(), 0..80), budget in 1usize..100, cell in 1usize..20) {
        let kept = enforce_density(&strokes, RegionMap::Grid { cell }, budget);
        prop_assert!(kept.len() <= budget);
        if budget >= strokes.len() {
            prop_assert_eq!(kept, strokes);
        }
    }

    #[test]
    fn priority_order_is_scale_free(strokes in prop::collection::vec(stroke(), 1..60), c in 0.001f64..1000.0) {
        // Priority is linear in (S, E), so a joint scale multiplies it by c.
        let scaled: Vec<Stroke> = strokes.iter().map(|s| Stroke { priority: s.priority * c, ..*s }).collect();
        prop_assert_eq!(
            render_order(&strokes, OrderPolicy::PriorityAscending),
            render_order(&scaled, OrderPolicy::PriorityAscending)
        );
    }
}

#[test]
fn excluding_a_stroke_changes_only_its_footprint() {
    let image = common::scenes(48, 40).swap_remove(0);
    let mut config = PlanConfig::default();
    config.features.candidate_count = 250;
    let full = run_plan(&image, &config).unwrap();
    let victim = full.plan.strokes.len() / 2;
    config.hybrid.exclude = vec![victim];
    let cut = run_plan(&image, &config).unwrap();

    let mut expected = full.plan.strokes.clone();
    let removed = expected.remove(victim);
    assert_eq!(cut.plan.strokes.len(), expected.len());
    assert!(cut.plan.strokes.iter().zip(&expected).all(|(a, b)| bitwise_eq(a, b)));
    assert_eq!(cut.report.excluded, 1);

    let fp = stroke_footprint(&removed, config.render.brush, image.width(), image.height());
    let inside: std::collections::HashSet<(usize, usize)> = fp.pixels.iter().map(|p| (p.0, p.1)).collect();
    let mut changed = 0;
    for y in 0..image.height() {
        for x in 0..image.width() {
            if full.image.pixel(x, y) != cut.image.pixel(x, y) {
                assert!(inside.contains(&(x, y)), "pixel ({x},{y}) changed outside the footprint");
                changed += 1;
            }
        }
    }
    assert!(changed > 0);
}
