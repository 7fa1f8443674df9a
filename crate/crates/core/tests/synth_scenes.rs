use proptest::prelude::*;
use roadgrid_core::annotation::encode_grid;
use roadgrid_core::pipeline::{evaluate, EvalPrediction};
use roadgrid_core::synth::{generate, oracle_eval, LaneSpec, MarkingSpec, SceneSpec};
use roadgrid_core::vpp::decode_vp;
use roadgrid_core::{ClassLabel, PipelineConfig};

#[test]
fn clean_two_lane_scene_is_recovered_exactly() {
    let cfg = PipelineConfig::default();
    let e = oracle_eval(&generate(&SceneSpec::default(), 0).unwrap(), &cfg).unwrap();
    assert_eq!(e.lane_f1, 1.0);
    assert_eq!(e.lanes_found, 2);
    assert!(e.vp_error_cells.unwrap() <= 1);
}

#[test]
fn crosswalk_is_found_without_noise() {
    let spec = SceneSpec {
        markings: vec![MarkingSpec {
            label: ClassLabel::Crosswalk,
            x: 0.0,
            z: 10.0,
            width: 3.0,
            length: 3.0,
        }],
        ..SceneSpec::default()
    };
    let e = oracle_eval(&generate(&spec, 0).unwrap(), &PipelineConfig::default()).unwrap();
    assert_eq!(e.marking_recall, 1.0);
    assert_eq!(e.marking_precision, 1.0);
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let cfg = PipelineConfig::default();
    let spec = SceneSpec {
        markings: vec![
            MarkingSpec {
                label: ClassLabel::StopLine,
                x: 0.0,
                z: 6.0,
                width: 3.0,
                length: 0.4,
            },
            MarkingSpec {
                label: ClassLabel::StraightArrow,
                x: 0.0,
                z: 12.0,
                width: 0.6,
                length: 4.0,
            },
        ],
        ..SceneSpec::default()
    };
    let frame = generate(&spec, 0).unwrap();
    let pred = EvalPrediction::from_annotation(&frame.annotation, &cfg.image).unwrap();
    let r = evaluate(&[(pred, frame.annotation.clone())], &cfg).unwrap();
    assert_eq!(r.lanes.overall.f1, 1.0);
    assert_eq!(r.markings.overall.recall, 1.0);
    assert_eq!(r.markings.overall.precision, 1.0);
    assert!(r.vp_recall.recalls.iter().all(|v| *v == 1.0));
}

#[test]
fn rendering_is_deterministic() {
    let spec = SceneSpec {
        noise: 0.2,
        clutter: 0.01,
        ..SceneSpec::default()
    };
    let a = generate(&spec, 42).unwrap();
    let b = generate(&spec, 42).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        encode_grid(&a.annotation, &spec.image).unwrap(),
        encode_grid(&b.annotation, &spec.image).unwrap()
    );
}

#[test]
fn curved_lanes_stay_accurate() {
    let mut spec = SceneSpec::default();
    for lane in &mut spec.lanes {
        lane.curvature = 0.0005;
    }
    let e = oracle_eval(&generate(&spec, 0).unwrap(), &PipelineConfig::default()).unwrap();
    assert!(e.lane_f1 > 0.95, "{e:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_vp_decodes_next_to_the_analytic_intersection(
        pitch in 0.02f64..0.4,
        height in 1.0f64..3.0,
        left in -4.0f64..-1.0,
        right in 1.0f64..4.0,
    ) {
        let mut spec = SceneSpec::default();
        spec.camera.pitch = pitch;
        spec.camera.height = height;
        spec.lanes = vec![
            LaneSpec { label: ClassLabel::SingleWhite, offset: left, curvature: 0.0, dashes: None },
            LaneSpec { label: ClassLabel::DashedWhite, offset: right, curvature: 0.0, dashes: None },
        ];
        let frame = generate(&spec, 0).unwrap();
        let vp = spec.camera.vanishing_point(&spec.image);
        let truth = spec.image.cell_of(vp).unwrap();
        let decoded = decode_vp(&frame.tensor.slice_channels(0, 5).unwrap()).unwrap();
        prop_assert!(decoded.location.chebyshev(truth) <= 1);
    }
}
