//! Property tests for the structural invariants the rest of the system
//! leans on.

use proptest::prelude::*;

use btreflex::bench::compute_sr;
use btreflex::bt::{diff_bt, parse_bt, serialize_bt};
use btreflex::capture::execute_mission;
use btreflex::cmsr::{cmsr, fmt_num};
use btreflex::eval::{evaluate_oracle, goal_spec_for, Outcome};
use btreflex::sim::{load_scene_seeded, normalize_yaw};
use btreflex::strategy::StrategySpace;

#[derive(Debug, Clone)]
enum Step {
    Forward(f64),
    Left(f64),
    Right(f64),
    TurnL(f64),
    TurnR(f64),
    Hover(f64),
    FlyTo(f64, f64, f64),
    Detect(u8),
    DownDetect(u8),
}

fn step_strategy() -> impl Strategy<Value = Step> {
    prop_oneof![
        (0.5..2.0f64).prop_map(Step::Forward),
        (0.5..2.0f64).prop_map(Step::Left),
        (0.5..2.0f64).prop_map(Step::Right),
        (10.0..180.0f64).prop_map(Step::TurnL),
        (10.0..180.0f64).prop_map(Step::TurnR),
        (0.5..2.0f64).prop_map(Step::Hover),
        (-2.0..4.0f64, -2.0..4.0f64, 0.5..2.0f64).prop_map(|(x, y, z)| Step::FlyTo(x, y, z)),
        (0u8..3).prop_map(Step::Detect),
        (0u8..3).prop_map(Step::DownDetect),
    ]
}

fn plan_xml(steps: &[Step]) -> String {
    let target = |t: u8| ["Balloon", "SquareFrame", "LandingMark"][t as usize];
    let mut xml = String::from("<BehaviorTree><Sequence><Takeoff height=\"1\"/>");
    for step in steps {
        match step {
            Step::Forward(d) => xml.push_str(&format!("<MoveForward distance=\"{d}\"/>")),
            Step::Left(d) => xml.push_str(&format!("<MoveLeft distance=\"{d}\"/>")),
            Step::Right(d) => xml.push_str(&format!("<MoveRight distance=\"{d}\"/>")),
            Step::TurnL(a) => xml.push_str(&format!("<TurnLeft angle=\"{a}\"/>")),
            Step::TurnR(a) => xml.push_str(&format!("<TurnRight angle=\"{a}\"/>")),
            Step::Hover(d) => xml.push_str(&format!("<Hover duration=\"{d}\"/>")),
            Step::FlyTo(x, y, z) => {
                xml.push_str(&format!("<FlyToCoordinates x=\"{x}\" y=\"{y}\" z=\"{z}\"/>"))
            }
            Step::Detect(t) => {
                xml.push_str(&format!("<ForwardDetect target=\"{}\"/>", target(*t)))
            }
            Step::DownDetect(t) => {
                xml.push_str(&format!("<DownwardDetect target=\"{}\"/>", target(*t)))
            }
        }
    }
    xml.push_str("<Land/></Sequence></BehaviorTree>");
    xml
}

proptest! {
    #[test]
    fn serialization_round_trips(steps in proptest::collection::vec(step_strategy(), 1..10)) {
        let space = StrategySpace::drone_default();
        let tree = parse_bt(&plan_xml(&steps), &space).unwrap();
        let canonical = serialize_bt(&tree);
        let reparsed = parse_bt(&canonical, &space).unwrap();
        prop_assert!(tree.structural_eq(&reparsed));
        prop_assert_eq!(serialize_bt(&reparsed), canonical);
        prop_assert!(diff_bt(&tree, &reparsed).is_empty());
    }

    #[test]
    fn yaw_normalization_stays_in_range(yaw in -100_000.0..100_000.0f64) {
        let n = normalize_yaw(yaw);
        prop_assert!((0.0..360.0).contains(&n), "{yaw} -> {n}");
        // Same heading modulo full turns.
        let wrapped = (yaw - n) / 360.0;
        prop_assert!((wrapped - wrapped.round()).abs() < 1e-6);
    }

    #[test]
    fn sr_is_a_ratio(per_iter in proptest::collection::vec(0u32..50, 5), extra in 0u32..100) {
        let successes: u32 = per_iter.iter().sum();
        let total = successes + extra;
        prop_assume!(total > 0);
        let sr = compute_sr(&per_iter, total);
        prop_assert!((0.0..=1.0).contains(&sr));
        prop_assert_eq!(sr, successes as f64 / total as f64);
    }

    #[test]
    fn rendered_numbers_survive_reparsing(x in -10_000.0..10_000.0f64) {
        let back: f64 = fmt_num(x).parse().unwrap();
        prop_assert!((back - x).abs() < 5e-7);
    }

    #[test]
    fn oracle_verdicts_are_internally_consistent(
        steps in proptest::collection::vec(step_strategy(), 1..8),
        task in 1u32..=11,
        seed in 0u64..1_000,
    ) {
        let space = StrategySpace::drone_default();
        let scene = load_scene_seeded(task, seed).unwrap();
        let goal = goal_spec_for(task, &scene.instruction, &scene.world).unwrap();
        let tree = parse_bt(&plan_xml(&steps), &space).unwrap();
        let run = execute_mission(&tree, &scene, &space, 500).unwrap();
        let verdict = evaluate_oracle(&run.sequence, &goal).unwrap();
        match verdict.outcome {
            Outcome::Success => {
                prop_assert!(verdict.fault_action_index.is_none());
                prop_assert!(verdict.cause.is_none());
            }
            Outcome::PlanFailure | Outcome::ExecutionFailure => {
                let idx = verdict.fault_action_index.unwrap();
                prop_assert!(idx < run.sequence.len());
                prop_assert!(verdict.cause.is_some());
            }
        }
    }

    #[test]
    fn cmsr_segments_track_the_sequence(
        steps in proptest::collection::vec(step_strategy(), 1..8),
        task in 1u32..=11,
    ) {
        let space = StrategySpace::drone_default();
        let scene = load_scene_seeded(task, 3).unwrap();
        let tree = parse_bt(&plan_xml(&steps), &space).unwrap();
        let run = execute_mission(&tree, &scene, &space, 500).unwrap();
        prop_assume!(run.sequence.len() >= 2);
        let traj = cmsr(&run.sequence, Some(&scene.world)).unwrap();
        prop_assert_eq!(traj.ego.segments.len(), run.sequence.len() - 1);
        prop_assert_eq!(traj.lines.len(), traj.ego.segments.len());
    }
}
