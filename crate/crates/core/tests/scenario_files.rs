use std::path::Path;

use omas_core::scenario::{reference_scenario, vanishing, InitialStateSpec, SignalSpec};
use omas_core::signed_graph::ModeId;
use omas_core::{Scenario, Segment};
use proptest::prelude::*;

fn shipped(name: &str) -> Scenario {
    Scenario::load(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../scenarios")
            .join(name),
    )
    .unwrap()
}

#[test]
fn shipped_reference_matches_builder() {
    assert_eq!(shipped("reference.json"), reference_scenario());
}

#[test]
fn shipped_vanishing_matches_builder() {
    let mut expected = vanishing(reference_scenario());
    expected.name = "reference-vanishing".into();
    assert_eq!(shipped("vanishing.json"), expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_then_parse_is_identity(
        h_bar in 0.0f64..5.0,
        dt in 1e-4f64..0.1,
        seed in any::<u64>(),
        scale in 0.01f64..10.0,
        cuts in prop::collection::vec(0.1f64..3.0, 0..6),
        modes in prop::collection::vec(1u32..5, 6),
    ) {
        let mut s = reference_scenario();
        s.perturbation.h_bar = h_bar;
        s.simulation.dt = dt;
        s.simulation.seed = seed;
        s.simulation.initial_state = InitialStateSpec::Random { scale };
        let mut t = 0.0;
        let mut segments = vec![Segment { start: 0.0, mode: ModeId(modes[0]) }];
        for (i, c) in cuts.iter().enumerate() {
            t += c;
            segments.push(Segment { start: t, mode: ModeId(modes[i + 1]) });
        }
        s.signal = SignalSpec::Explicit { t0: 0.0, tf: t + 1.0, segments };
        let text = s.to_json().unwrap();
        let back = Scenario::from_json(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}
