use std::f64::consts::PI;

use proptest::prelude::*;
use strokeforge::planning::{Stroke, Texture};
use strokeforge::render::{render_sequence, BrushModel, OrderPolicy, PostProcess, RenderOptions};

const W: usize = 24;
const H: usize = 20;

prop_compose! {
    fn stroke()(
        x in -4.0f64..28.0, y in -4.0f64..24.0, theta in -PI..=PI,
        length in 0.25f64..30.0, thickness in 0.25f64..10.0, size in 0.25f64..8.0,
        color in prop::array::uniform4(0.0f64..=1.0),
        texture in prop_oneof![Just(Texture::Solid), Just(Texture::Stipple), Just(Texture::Hatch)],
        weight in 0.0f64..2.0, priority in -1.0f64..2.0,
    ) -> Stroke {
        Stroke { x, y, theta, length, thickness, size, color, texture, weight, priority }
    }
}

fn brush() -> impl Strategy<Value = BrushModel> {
    prop_oneof![
        Just(BrushModel::Curved),
        Just(BrushModel::Triangle),
        Just(BrushModel::Rectangle),
        Just(BrushModel::RandomRaster),
    ]
}

prop_compose! {
    fn options()(
        background in prop::array::uniform4(0.0f64..=1.0),
        input_order in any::<bool>(),
        brush in brush(),
        edge_enhance in prop::option::of(-3.0f64..5.0),
        denoise in prop::option::of(0.0f64..2.0),
        harmonize in prop::option::of(0.0f64..=1.0),
    ) -> RenderOptions {
        RenderOptions {
            background,
            order_policy: if input_order { OrderPolicy::InputOrder } else { OrderPolicy::PriorityAscending },
            brush,
            post: PostProcess { edge_enhance, denoise, harmonize },
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_stays_in_unit_range(strokes in prop::collection::vec(stroke(), 0..16), opts in options()) {
        let out = render_sequence(&strokes, W, H, &opts).unwrap();
        prop_assert_eq!((out.width(), out.height(), out.channels()), (W, H, 4));
        for &v in out.data() {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }

    #[test]
    fn no_strokes_leaves_the_background(background in prop::array::uniform4(0.0f64..=1.0), b in brush()) {
        let opts = RenderOptions { background, brush: b, ..RenderOptions::default() };
        let out = render_sequence(&[], W, H, &opts).unwrap();
        for px in out.data().chunks(4) {
            prop_assert_eq!(px, &background[..]);
        }
    }

    #[test]
    fn sorted_input_renders_the_same_under_both_policies(mut strokes in prop::collection::vec(stroke(), 1..12)) {
        strokes.sort_by(|a, b| a.priority.total_cmp(&b.priority));
        let by_priority = render_sequence(&strokes, W, H, &RenderOptions::default()).unwrap();
        let opts = RenderOptions { order_policy: OrderPolicy::InputOrder, ..RenderOptions::default() };
        let by_input = render_sequence(&strokes, W, H, &opts).unwrap();
        prop_assert_eq!(by_priority.data(), by_input.data());
    }

    #[test]
    fn rendering_is_deterministic(strokes in prop::collection::vec(stroke(), 0..12), opts in options()) {
        let a = render_sequence(&strokes, W, H, &opts).unwrap();
        let b = render_sequence(&strokes, W, H, &opts).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }
}
