//! Continuous state evaluation: outcome determination with interpretable
//! failure explanation and error localization, from the full annotated
//! trajectory — never the final state alone. A final-state-only baseline is
//! provided for contrast, plus Det/Loc/Exp scoring over injected-failure
//! corpora.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::NodeId;
use crate::capture::AnnotatedStateSequence;
use crate::cmsr::fmt_num;
use crate::sim::{ObjectKind, WorldModel, PATH_RESOLUTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    PlanFailure,
    ExecutionFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationVerdict {
    pub outcome: Outcome,
    pub explanation: String,
    pub fault_action_index: Option<usize>,
    pub fault_node_id: Option<NodeId>,
    /// Cause label used for explanation-correctness scoring.
    pub cause: Option<String>,
    pub confidence: f64,
}

impl EvaluationVerdict {
    pub fn success() -> Self {
        EvaluationVerdict {
            outcome: Outcome::Success,
            explanation: String::new(),
            fault_action_index: None,
            fault_node_id: None,
            cause: None,
            confidence: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub z: Option<f64>,
}

impl Waypoint {
    pub fn xy(x: f64, y: f64) -> Self {
        Waypoint { x, y, z: None }
    }
}

/// Machine-checkable goal predicates, all defined over the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    VisitWaypointsInOrder { waypoints: Vec<Waypoint>, tol: f64 },
    AvoidRegions { cells: Vec<(f64, f64)>, half_extent: f64 },
    DetectObject { target: String },
    PassThrough { x: f64, y: f64, z: f64, tol: f64 },
    ClearOf { x: f64, y: f64, radius: f64 },
    TerminalCondition { landed: bool, x: Option<f64>, y: Option<f64>, tol: f64 },
}

impl Check {
    pub fn cause_label(&self) -> &'static str {
        match self {
            Check::VisitWaypointsInOrder { .. } => "waypoint_order",
            Check::AvoidRegions { .. } => "region_avoidance",
            Check::DetectObject { .. } => "object_detection",
            Check::PassThrough { .. } => "pass_through",
            Check::ClearOf { .. } => "clear_of",
            Check::TerminalCondition { .. } => "terminal_condition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGoalSpec {
    pub task_id: u32,
    pub instruction: String,
    pub checks: Vec<Check>,
}

impl TaskGoalSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("goal spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::BadGoalSpec(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no goal spec defined for task {0}")]
    NoGoalSpec(u32),
    #[error("malformed goal spec: {0}")]
    BadGoalSpec(String),
    #[error("empty trajectory cannot be evaluated")]
    EmptyTrajectory,
    #[error("verdict list length {0} does not match ground truth length {1}")]
    LengthMismatch(usize, usize),
    #[error("metrics undefined over a corpus with zero failures")]
    ZeroFailures,
}

struct Violation {
    index: usize,
    explanation: String,
}

fn near_xy(px: f64, py: f64, wx: f64, wy: f64, tol: f64) -> bool {
    ((px - wx).powi(2) + (py - wy).powi(2)).sqrt() <= tol
}

/// Interpolated samples along the captured trajectory, each tagged with the
/// index of the step that terminates its segment.
fn path_samples(seq: &AnnotatedStateSequence) -> Vec<(usize, f64, f64, f64)> {
    let mut samples = Vec::new();
    for (i, step) in seq.items.iter().enumerate() {
        let p = &step.data.state.pose;
        if i > 0 {
            let q = &seq.items[i - 1].data.state.pose;
            let dist = q.distance_to(p.x, p.y, p.z);
            let n = (dist / PATH_RESOLUTION).ceil() as usize;
            for s in 1..n {
                let f = s as f64 / n as f64;
                samples.push((
                    i,
                    q.x + (p.x - q.x) * f,
                    q.y + (p.y - q.y) * f,
                    q.z + (p.z - q.z) * f,
                ));
            }
        }
        samples.push((i, p.x, p.y, p.z));
    }
    samples
}

fn check_violation(check: &Check, seq: &AnnotatedStateSequence) -> Option<Violation> {
    let last = seq.len() - 1;
    match check {
        Check::VisitWaypointsInOrder { waypoints, tol } => {
            let mut next = 0usize;
            // Arrival is edge-triggered against the previous pose so the
            // launch point itself never registers as a waypoint hit.
            let mut prev = crate::sim::Pose::origin();
            for (i, step) in seq.items.iter().enumerate() {
                let p = &step.data.state.pose;
                let arrived =
                    |wp: &Waypoint| waypoint_hit(wp, p.x, p.y, p.z, *tol) && !waypoint_hit(wp, prev.x, prev.y, prev.z, *tol);
                while next < waypoints.len() && arrived(&waypoints[next]) {
                    next += 1;
                }
                for (j, wp) in waypoints.iter().enumerate().skip(next + 1) {
                    if arrived(wp) {
                        return Some(Violation {
                            index: i,
                            explanation: format!(
                                "reached waypoint {} of {} before waypoint {}, breaking the required visit order",
                                j + 1,
                                waypoints.len(),
                                next + 1
                            ),
                        });
                    }
                }
                prev = p.clone();
            }
            if next < waypoints.len() {
                let wp = &waypoints[next];
                return Some(Violation {
                    index: last,
                    explanation: format!(
                        "mission ended without reaching waypoint {} of {} at ({}, {})",
                        next + 1,
                        waypoints.len(),
                        fmt_num(wp.x),
                        fmt_num(wp.y)
                    ),
                });
            }
            None
        }
        Check::AvoidRegions { cells, half_extent } => {
            for (i, x, y, _z) in path_samples(seq) {
                for (cx, cy) in cells {
                    if (x - cx).abs() <= *half_extent && (y - cy).abs() <= *half_extent {
                        return Some(Violation {
                            index: i,
                            explanation: format!(
                                "trajectory entered no-fly zone cell ({}, {})",
                                fmt_num(*cx),
                                fmt_num(*cy)
                            ),
                        });
                    }
                }
            }
            None
        }
        Check::DetectObject { target } => {
            let seen = seq.items.iter().any(|step| {
                step.data
                    .observation
                    .as_ref()
                    .map(|o| o.detected.iter().any(|d| d.kind.label() == target))
                    .unwrap_or(false)
            });
            if seen {
                return None;
            }
            // Localize at the last detect attempt for the target, else the end.
            let index = seq
                .items
                .iter()
                .enumerate()
                .rev()
                .find(|(_, s)| {
                    s.action.name.ends_with("Detect")
                        && s.action.params.get("target").map(|t| t == target).unwrap_or(false)
                })
                .map(|(i, _)| i)
                .unwrap_or(last);
            Some(Violation {
                index,
                explanation: format!("the target {} was never detected during the mission", target),
            })
        }
        Check::PassThrough { x, y, z, tol } => {
            for (_, sx, sy, sz) in path_samples(seq) {
                let d = ((sx - x).powi(2) + (sy - y).powi(2) + (sz - z).powi(2)).sqrt();
                if d <= *tol {
                    return None;
                }
            }
            Some(Violation {
                index: last,
                explanation: format!(
                    "trajectory never passed through ({}, {}, {}) within {} m",
                    fmt_num(*x),
                    fmt_num(*y),
                    fmt_num(*z),
                    fmt_num(*tol)
                ),
            })
        }
        Check::ClearOf { x, y, radius } => {
            for (i, sx, sy, _sz) in path_samples(seq) {
                if near_xy(sx, sy, *x, *y, *radius) {
                    return Some(Violation {
                        index: i,
                        explanation: format!(
                            "trajectory came within {} m of the keep-out point ({}, {})",
                            fmt_num(*radius),
                            fmt_num(*x),
                            fmt_num(*y)
                        ),
                    });
                }
            }
            None
        }
        Check::TerminalCondition { landed, x, y, tol } => {
            let final_step = &seq.items[last];
            let p = &final_step.data.state.pose;
            if *landed {
                let did_land = final_step.action.name == "Land"
                    && final_step.action.outcome.failure_tag().is_none();
                if !did_land {
                    return Some(Violation {
                        index: last,
                        explanation: "the mission ended without a successful landing".to_string(),
                    });
                }
            }
            if let (Some(x), Some(y)) = (x, y) {
                if !near_xy(p.x, p.y, *x, *y, *tol) {
                    return Some(Violation {
                        index: last,
                        explanation: format!(
                            "final position ({}, {}) is not within {} m of the required point ({}, {})",
                            fmt_num(p.x),
                            fmt_num(p.y),
                            fmt_num(*tol),
                            fmt_num(*x),
                            fmt_num(*y)
                        ),
                    });
                }
            }
            None
        }
    }
}

fn waypoint_hit(wp: &Waypoint, x: f64, y: f64, z: f64, tol: f64) -> bool {
    near_xy(x, y, wp.x, wp.y, tol) && wp.z.map(|wz| (z - wz).abs() <= tol).unwrap_or(true)
}

/// Deterministic evaluation of every check against the full trajectory.
/// Goal-check violations take precedence and yield PlanFailure; trajectories
/// with execution failure tags but no violated check yield ExecutionFailure.
pub fn evaluate_oracle(
    seq: &AnnotatedStateSequence,
    goal: &TaskGoalSpec,
) -> Result<EvaluationVerdict, EvalError> {
    if seq.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let mut best: Option<(usize, &Check, Violation)> = None;
    for (order, check) in goal.checks.iter().enumerate() {
        if let Some(v) = check_violation(check, seq) {
            let better = match &best {
                None => true,
                Some((o, _, b)) => v.index < b.index || (v.index == b.index && order < *o),
            };
            if better {
                best = Some((order, check, v));
            }
        }
    }
    if let Some((_, check, violation)) = best {
        let step = &seq.items[violation.index];
        return Ok(EvaluationVerdict {
            outcome: Outcome::PlanFailure,
            explanation: format!(
                "{} (at step {}: {})",
                violation.explanation,
                violation.index + 1,
                step.action.name
            ),
            fault_action_index: Some(violation.index),
            fault_node_id: Some(step.action.node_id),
            cause: Some(check.cause_label().to_string()),
            confidence: 1.0,
        });
    }
    // A failure tag on the FINAL step means the mission aborted there; tags
    // earlier in the trajectory were handled by the plan's control flow
    // (retry loops, fallbacks) and do not fail a goal-satisfying mission.
    let last_idx = seq.len() - 1;
    let final_step = &seq.items[last_idx];
    if let Some(tag) = final_step.data.failure_tag.clone() {
        return Ok(EvaluationVerdict {
            outcome: Outcome::ExecutionFailure,
            explanation: format!(
                "action {} failed at step {} with tag {}",
                final_step.action.name,
                last_idx + 1,
                tag
            ),
            fault_action_index: Some(last_idx),
            fault_node_id: Some(final_step.action.node_id),
            cause: Some(tag),
            confidence: 1.0,
        });
    }
    Ok(EvaluationVerdict::success())
}

/// Baseline that inspects only the terminal state (pose + landing), blind to
/// path shape, visit order, and in-flight detections. Checks that need the
/// full trajectory are vacuously passed.
pub fn evaluate_final_state_baseline(
    seq: &AnnotatedStateSequence,
    goal: &TaskGoalSpec,
) -> Result<EvaluationVerdict, EvalError> {
    if seq.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let last = seq.len() - 1;
    let final_step = &seq.items[last];
    let p = &final_step.data.state.pose;
    for check in &goal.checks {
        let violated: Option<String> = match check {
            Check::VisitWaypointsInOrder { waypoints, tol } => waypoints.last().and_then(|wp| {
                if waypoint_hit(wp, p.x, p.y, p.z, *tol) {
                    None
                } else {
                    Some(format!(
                        "final position is not at the last waypoint ({}, {})",
                        fmt_num(wp.x),
                        fmt_num(wp.y)
                    ))
                }
            }),
            Check::AvoidRegions { cells, half_extent } => cells
                .iter()
                .find(|(cx, cy)| (p.x - cx).abs() <= *half_extent && (p.y - cy).abs() <= *half_extent)
                .map(|(cx, cy)| {
                    format!("final position is inside no-fly zone cell ({}, {})", fmt_num(*cx), fmt_num(*cy))
                }),
            Check::ClearOf { x, y, radius } => {
                if near_xy(p.x, p.y, *x, *y, *radius) {
                    Some(format!(
                        "final position is within {} m of the keep-out point",
                        fmt_num(*radius)
                    ))
                } else {
                    None
                }
            }
            Check::TerminalCondition { .. } => {
                check_violation(check, seq).map(|v| v.explanation)
            }
            // Not assessable from the final state alone.
            Check::DetectObject { .. } | Check::PassThrough { .. } => None,
        };
        if let Some(explanation) = violated {
            return Ok(EvaluationVerdict {
                outcome: Outcome::PlanFailure,
                explanation,
                fault_action_index: Some(last),
                fault_node_id: Some(final_step.action.node_id),
                cause: Some(check.cause_label().to_string()),
                confidence: 1.0,
            });
        }
    }
    Ok(EvaluationVerdict::success())
}

/// LLM-backed evaluation: prompts the model with the full narrative — never
/// the final state alone — and parses a structured verdict. A malformed
/// response is retried once with the error appended, then surfaced.
pub fn evaluate_llm(
    traj: &crate::cmsr::SemanticTrajectory,
    instruction: &str,
    gateway: &mut crate::llm::Gateway,
) -> Result<EvaluationVerdict, crate::llm::LlmError> {
    use crate::llm::{parse_json_response, ChatRequest};
    let system = "You evaluate drone missions. Given the task instruction and the \
full semantic trajectory narrative, decide the outcome. Reply with a JSON object \
{\"outcome\": \"success\"|\"plan_failure\"|\"execution_failure\", \"explanation\": \
string, \"fault_index\": integer|null} and nothing else. fault_index is the \
1-based narrative segment where the mission first went wrong, null on success.";
    let prompt = format!(
        "Task instruction: {}\n\nSemantic trajectory:\n{}\n",
        instruction,
        traj.narrative()
    );
    let request = ChatRequest::user(system, prompt);
    gateway.send_validated(&request, |text| {
        let v = parse_json_response(text)?;
        let outcome = match v["outcome"].as_str() {
            Some("success") => Outcome::Success,
            Some("plan_failure") => Outcome::PlanFailure,
            Some("execution_failure") => Outcome::ExecutionFailure,
            other => return Err(format!("bad outcome field: {:?}", other)),
        };
        let explanation = v["explanation"].as_str().unwrap_or_default().to_string();
        let fault_index = v["fault_index"].as_u64().map(|i| i.saturating_sub(1) as usize);
        if outcome != Outcome::Success && (explanation.is_empty() || fault_index.is_none()) {
            return Err("failure verdicts need explanation and fault_index".to_string());
        }
        Ok(EvaluationVerdict {
            outcome,
            explanation,
            fault_action_index: if outcome == Outcome::Success { None } else { fault_index },
            fault_node_id: None,
            cause: v["cause"].as_str().map(|s| s.to_string()),
            confidence: v["confidence"].as_f64().unwrap_or(0.8),
        })
    })
}

/// Goal specs for the benchmark tasks; positions of randomized objects are
/// read from the scene world.
pub fn goal_spec_for(task_id: u32, instruction: &str, world: &WorldModel) -> Result<TaskGoalSpec, EvalError> {
    let tol = 0.3;
    let checks = match task_id {
        1 => vec![
            Check::VisitWaypointsInOrder {
                waypoints: vec![Waypoint::xy(2.0, 0.0), Waypoint::xy(2.0, 2.0)],
                tol,
            },
            Check::TerminalCondition { landed: true, x: Some(2.0), y: Some(2.0), tol },
        ],
        2 => vec![
            Check::VisitWaypointsInOrder {
                waypoints: vec![
                    Waypoint::xy(2.0, 0.0),
                    Waypoint::xy(2.0, 2.0),
                    Waypoint::xy(0.0, 2.0),
                    Waypoint::xy(0.0, 0.0),
                ],
                tol,
            },
            Check::TerminalCondition { landed: true, x: Some(0.0), y: Some(0.0), tol },
        ],
        3 => vec![
            Check::AvoidRegions {
                cells: world.no_fly_cells().iter().map(|z| (z.x, z.y)).collect(),
                half_extent: 0.5,
            },
            Check::TerminalCondition { landed: true, x: Some(4.0), y: Some(1.0), tol },
        ],
        4 => vec![Check::DetectObject { target: ObjectKind::Balloon.label().to_string() }],
        5 => vec![Check::DetectObject { target: ObjectKind::SquareFrame.label().to_string() }],
        6 => vec![Check::DetectObject { target: ObjectKind::LandingMark.label().to_string() }],
        7 => {
            let cyl = object_of(world, ObjectKind::Cylinder, task_id)?;
            vec![
                Check::PassThrough { x: cyl.x, y: cyl.y, z: 1.0, tol: 0.5 },
                Check::VisitWaypointsInOrder { waypoints: vec![Waypoint::xy(2.0, 1.0)], tol },
            ]
        }
        8 => {
            let rect = object_of(world, ObjectKind::RectObstacle, task_id)?;
            vec![
                Check::ClearOf { x: rect.x, y: rect.y, radius: rect.extent / 2.0 + 0.3 },
                Check::VisitWaypointsInOrder { waypoints: vec![Waypoint::xy(2.0, 0.0)], tol },
            ]
        }
        9 => {
            let frame = object_of(world, ObjectKind::SquareFrame, task_id)?;
            vec![
                Check::PassThrough { x: frame.x, y: frame.y, z: frame.z, tol: frame.extent / 2.0 },
                Check::VisitWaypointsInOrder { waypoints: vec![Waypoint::xy(2.0, 0.0)], tol },
            ]
        }
        10 => {
            let frame = object_of(world, ObjectKind::SquareFrame, task_id)?;
            vec![
                Check::DetectObject { target: ObjectKind::SquareFrame.label().to_string() },
                Check::PassThrough { x: frame.x, y: frame.y, z: frame.z, tol: frame.extent / 2.0 },
            ]
        }
        11 => {
            let mark = object_of(world, ObjectKind::LandingMark, task_id)?;
            vec![
                Check::AvoidRegions {
                    cells: world.no_fly_cells().iter().map(|z| (z.x, z.y)).collect(),
                    half_extent: 0.5,
                },
                Check::DetectObject { target: ObjectKind::LandingMark.label().to_string() },
                Check::TerminalCondition { landed: true, x: Some(mark.x), y: Some(mark.y), tol },
            ]
        }
        other => return Err(EvalError::NoGoalSpec(other)),
    };
    Ok(TaskGoalSpec { task_id, instruction: instruction.to_string(), checks })
}

fn object_of(world: &WorldModel, kind: ObjectKind, task_id: u32) -> Result<&crate::sim::WorldObject, EvalError> {
    world
        .objects
        .iter()
        .find(|o| o.kind == kind)
        .ok_or(EvalError::NoGoalSpec(task_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub is_failure: bool,
    pub fault_index: Option<usize>,
    pub cause: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationQualityMetrics {
    pub det: f64,
    pub loc: f64,
    pub exp: f64,
    pub total_failures: usize,
    pub detected: usize,
    pub localized: usize,
    pub cause_matched: usize,
}

pub fn score_evaluation(
    verdicts: &[EvaluationVerdict],
    ground_truth: &[GroundTruth],
) -> Result<EvaluationQualityMetrics, EvalError> {
    if verdicts.len() != ground_truth.len() {
        return Err(EvalError::LengthMismatch(verdicts.len(), ground_truth.len()));
    }
    let total_failures = ground_truth.iter().filter(|g| g.is_failure).count();
    if total_failures == 0 {
        return Err(EvalError::ZeroFailures);
    }
    let mut detected = 0;
    let mut localized = 0;
    let mut cause_matched = 0;
    for (v, g) in verdicts.iter().zip(ground_truth) {
        if !g.is_failure {
            continue;
        }
        if v.outcome != Outcome::Success {
            detected += 1;
            if v.fault_action_index == g.fault_index {
                localized += 1;
            }
            if v.cause.is_some() && v.cause == g.cause {
                cause_matched += 1;
            }
        }
    }
    let n = total_failures as f64;
    Ok(EvaluationQualityMetrics {
        det: detected as f64 / n,
        loc: localized as f64 / n,
        exp: cause_matched as f64 / n,
        total_failures,
        detected,
        localized,
        cause_matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::parse_bt;
    use crate::capture::execute_mission;
    use crate::sim::{load_scene, Scene};
    use crate::strategy::StrategySpace;

    fn run(xml: &str, scene: &Scene) -> AnnotatedStateSequence {
        let space = StrategySpace::drone_default();
        let tree = parse_bt(xml, &space).unwrap();
        execute_mission(&tree, scene, &space, 400).unwrap().sequence
    }

    fn goal(scene: &Scene) -> TaskGoalSpec {
        goal_spec_for(scene.task_id, &scene.instruction, &scene.world).unwrap()
    }

    const SQUARE_OK: &str = r#"<BehaviorTree><Sequence>
        <Takeoff height="1"/>
        <FlyToCoordinates x="2" y="0" z="1"/>
        <FlyToCoordinates x="2" y="2" z="1"/>
        <FlyToCoordinates x="0" y="2" z="1"/>
        <FlyToCoordinates x="0" y="0" z="1"/>
        <Land/>
    </Sequence></BehaviorTree>"#;

    // Same corners, wrong order: identical terminal state, broken path.
    const SQUARE_WRONG_ORDER: &str = r#"<BehaviorTree><Sequence>
        <Takeoff height="1"/>
        <FlyToCoordinates x="2" y="0" z="1"/>
        <FlyToCoordinates x="0" y="2" z="1"/>
        <FlyToCoordinates x="2" y="2" z="1"/>
        <FlyToCoordinates x="0" y="2" z="1"/>
        <FlyToCoordinates x="0" y="0" z="1"/>
        <Land/>
    </Sequence></BehaviorTree>"#;

    #[test]
    fn correct_square_succeeds() {
        let scene = load_scene(2).unwrap();
        let v = evaluate_oracle(&run(SQUARE_OK, &scene), &goal(&scene)).unwrap();
        assert_eq!(v.outcome, Outcome::Success);
        assert_eq!(v.confidence, 1.0);
        assert!(v.fault_action_index.is_none());
        assert!(v.fault_node_id.is_none());
    }

    #[test]
    fn process_sensitivity_pair() {
        let scene = load_scene(2).unwrap();
        let g = goal(&scene);
        let ok = run(SQUARE_OK, &scene);
        let wrong = run(SQUARE_WRONG_ORDER, &scene);
        // Identical terminal states.
        let pf = &ok.items.last().unwrap().data.state.pose;
        let pw = &wrong.items.last().unwrap().data.state.pose;
        assert!(pf.distance_to(pw.x, pw.y, pw.z) < 1e-9);

        let v_ok = evaluate_oracle(&ok, &g).unwrap();
        let v_wrong = evaluate_oracle(&wrong, &g).unwrap();
        assert_eq!(v_ok.outcome, Outcome::Success);
        assert_eq!(v_wrong.outcome, Outcome::PlanFailure);
        assert!(v_wrong.explanation.contains("visit order") || v_wrong.explanation.contains("before"));

        let b_ok = evaluate_final_state_baseline(&ok, &g).unwrap();
        let b_wrong = evaluate_final_state_baseline(&wrong, &g).unwrap();
        assert_eq!(b_ok.outcome, b_wrong.outcome);
    }

    #[test]
    fn wrong_order_localizes_first_violation() {
        let scene = load_scene(2).unwrap();
        let v = evaluate_oracle(&run(SQUARE_WRONG_ORDER, &scene), &goal(&scene)).unwrap();
        // Step 3 (index 2) reaches corner (0,2) before corner (2,2).
        assert_eq!(v.fault_action_index, Some(2));
        assert_eq!(v.cause.as_deref(), Some("waypoint_order"));
    }

    #[test]
    fn zone_crossing_is_plan_failure_naming_the_cell() {
        let scene = load_scene(3).unwrap();
        let seq = run(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <FlyToCoordinates x="0" y="3" z="1"/>
                <FlyToCoordinates x="4" y="3" z="1"/>
                <FlyToCoordinates x="4" y="1" z="1"/>
                <Land/>
            </Sequence></BehaviorTree>"#,
            &scene,
        );
        let v = evaluate_oracle(&seq, &goal(&scene)).unwrap();
        assert_eq!(v.outcome, Outcome::PlanFailure);
        assert!(v.explanation.contains("(1, 3)"), "explanation: {}", v.explanation);
        assert_eq!(v.cause.as_deref(), Some("region_avoidance"));
    }

    #[test]
    fn execution_tag_without_check_violation_is_execution_failure() {
        let mut scene = load_scene(2).unwrap();
        scene.fault_script.push(crate::sim::FaultEntry {
            action: "FlyToCoordinates".to_string(),
            occurrence: 2,
            tag: "timeout".to_string(),
        });
        let seq = run(SQUARE_OK, &scene);
        // Use a goal that the truncated trajectory does not violate.
        let g = TaskGoalSpec {
            task_id: 2,
            instruction: scene.instruction.clone(),
            checks: vec![Check::AvoidRegions { cells: vec![(9.0, 9.0)], half_extent: 0.5 }],
        };
        let v = evaluate_oracle(&seq, &g).unwrap();
        assert_eq!(v.outcome, Outcome::ExecutionFailure);
        assert_eq!(v.cause.as_deref(), Some("timeout"));
        assert_eq!(v.fault_action_index, Some(2));
    }

    #[test]
    fn adding_violated_check_flips_success() {
        let scene = load_scene(2).unwrap();
        let seq = run(SQUARE_OK, &scene);
        let mut g = goal(&scene);
        assert_eq!(evaluate_oracle(&seq, &g).unwrap().outcome, Outcome::Success);
        g.checks.push(Check::PassThrough { x: 9.0, y: 9.0, z: 9.0, tol: 0.1 });
        assert_eq!(evaluate_oracle(&seq, &g).unwrap().outcome, Outcome::PlanFailure);
    }

    #[test]
    fn missing_detection_localizes_last_detect_attempt() {
        let scene = load_scene(4).unwrap();
        let seq = run(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <ForwardDetect target="Balloon"/>
                <Land/>
            </Sequence></BehaviorTree>"#,
            &scene,
        );
        let g = goal(&scene);
        let v = evaluate_oracle(&seq, &g).unwrap();
        assert_eq!(v.outcome, Outcome::PlanFailure);
        assert_eq!(v.fault_action_index, Some(1));
        assert_eq!(v.cause.as_deref(), Some("object_detection"));
        // The baseline cannot assess detections from the final state.
        let b = evaluate_final_state_baseline(&seq, &g).unwrap();
        assert_eq!(b.outcome, Outcome::Success);
    }

    #[test]
    fn goal_specs_exist_for_all_tasks() {
        for task_id in 1..=11 {
            let scene = load_scene(task_id).unwrap();
            let g = goal(&scene);
            assert!(!g.checks.is_empty(), "task {task_id} has no checks");
            let json = g.to_json();
            assert_eq!(TaskGoalSpec::from_json(&json).unwrap(), g);
        }
    }

    #[test]
    fn scoring_arithmetic() {
        let mut verdicts = Vec::new();
        let mut truth = Vec::new();
        for i in 0..10 {
            let detected = i < 9;
            let localized = i < 8;
            verdicts.push(EvaluationVerdict {
                outcome: if detected { Outcome::PlanFailure } else { Outcome::Success },
                explanation: "x".to_string(),
                fault_action_index: if detected { Some(if localized { 3 } else { 4 }) } else { None },
                fault_node_id: None,
                cause: if detected && localized { Some("waypoint_order".to_string()) } else { None },
                confidence: 1.0,
            });
            truth.push(GroundTruth {
                is_failure: true,
                fault_index: Some(3),
                cause: Some("waypoint_order".to_string()),
            });
        }
        let m = score_evaluation(&verdicts, &truth).unwrap();
        assert_eq!(m.det, 0.9);
        assert_eq!(m.loc, 0.8);
        assert_eq!(m.exp, 0.8);
    }

    #[test]
    fn scoring_guards() {
        let v = vec![EvaluationVerdict::success()];
        assert!(matches!(
            score_evaluation(&v, &[]),
            Err(EvalError::LengthMismatch(1, 0))
        ));
        let truth = vec![GroundTruth { is_failure: false, fault_index: None, cause: None }];
        assert!(matches!(score_evaluation(&v, &truth), Err(EvalError::ZeroFailures)));
    }
}
