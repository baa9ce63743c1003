//! Action-centric state filtering: execution state is recorded exclusively
//! at action completion boundaries. Motion actions record pose only; the
//! detect actions additionally attach the observation. Failed actions carry
//! a failure tag.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::{
    run_to_completion, ActionExecutor, BehaviorTree, Blackboard, BtError, LeafStatus, NodeId,
    RunOutcome,
};
use crate::sim::{ActionOutcome, DroneSim, Observation, Pose, Scene, SimError};
use crate::strategy::StrategySpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub pose: Pose,
    /// Simulator clock (deciseconds) at the action boundary.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedData {
    pub state: StateVector,
    pub observation: Option<Observation>,
    pub failure_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub name: String,
    pub params: BTreeMap<String, String>,
    pub node_id: NodeId,
    pub outcome: ActionOutcome,
}

/// One element of the annotated state sequence: an action paired with the
/// data captured at its completion boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedStep {
    pub action: ActionRecord,
    pub data: CapturedData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedStateSequence {
    pub items: Vec<AnnotatedStep>,
}

impl AnnotatedStateSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("action boundary {0} was already captured")]
    DoubleCapture(u64),
    #[error("mission produced no completed actions")]
    EmptyMission,
    #[error("malformed trajectory log: {0}")]
    MalformedLog(String),
}

/// Accumulates captured data during a mission.
#[derive(Debug, Default)]
pub struct MissionLog {
    steps: Vec<AnnotatedStep>,
    captured_boundaries: std::collections::HashSet<u64>,
}

impl MissionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record the state at one action completion boundary. `boundary` is the
    /// index of the completed action; capturing the same boundary twice is
    /// an error.
    pub fn capture_on_completion(
        &mut self,
        boundary: u64,
        pose: Pose,
        timestamp: u64,
        detections: Option<Observation>,
        action: ActionRecord,
        space: &StrategySpace,
    ) -> Result<&CapturedData, CaptureError> {
        if !self.captured_boundaries.insert(boundary) {
            return Err(CaptureError::DoubleCapture(boundary));
        }
        let observation =
            if space.is_capture_action(&action.name) { detections } else { None };
        let failure_tag = action.outcome.failure_tag().map(|t| t.to_string());
        let data = CapturedData {
            state: StateVector { pose, timestamp },
            observation,
            failure_tag,
        };
        self.steps.push(AnnotatedStep { action, data });
        Ok(&self.steps.last().unwrap().data)
    }

    pub fn completed_actions(&self) -> usize {
        self.steps.len()
    }

    /// Finalize into the annotated state sequence. Intra-action interpolation
    /// samples were never recorded; only boundary captures remain.
    pub fn build_sequence(self) -> Result<AnnotatedStateSequence, CaptureError> {
        if self.steps.is_empty() {
            return Err(CaptureError::EmptyMission);
        }
        Ok(AnnotatedStateSequence { items: self.steps })
    }
}

/// Leaf executor binding the behavior tree to the simulator with capture at
/// every action boundary.
pub struct MissionExecutor<'a> {
    pub sim: &'a mut DroneSim,
    pub log: MissionLog,
    space: StrategySpace,
    boundary: u64,
}

impl<'a> MissionExecutor<'a> {
    pub fn new(sim: &'a mut DroneSim, space: StrategySpace) -> Self {
        MissionExecutor { sim, log: MissionLog::new(), space, boundary: 0 }
    }
}

impl ActionExecutor for MissionExecutor<'_> {
    fn execute(
        &mut self,
        node_id: NodeId,
        name: &str,
        params: &BTreeMap<String, String>,
        is_condition: bool,
    ) -> Result<LeafStatus, String> {
        if is_condition {
            return match self.sim.check_condition(name, params) {
                Ok(true) => Ok(LeafStatus::Success),
                Ok(false) => Ok(LeafStatus::Failure),
                Err(e) => Err(e.to_string()),
            };
        }
        let step = self.sim.step_action(name, params);
        let boundary = self.boundary;
        self.boundary += 1;
        match step {
            Ok((outcome, state)) => {
                let leaf = match outcome {
                    ActionOutcome::Succeeded => LeafStatus::Success,
                    ActionOutcome::Failed(_) => LeafStatus::Failure,
                };
                self.log
                    .capture_on_completion(
                        boundary,
                        state.pose,
                        state.clock,
                        state.detections.clone(),
                        ActionRecord {
                            name: name.to_string(),
                            params: params.clone(),
                            node_id,
                            outcome,
                        },
                        &self.space,
                    )
                    .map_err(|e| e.to_string())?;
                Ok(leaf)
            }
            Err(SimError::UnknownAction(a)) => Err(format!("unknown action {a}")),
            Err(e) => {
                // Internal fault: the boundary is still logged with its tag
                // so the abort point stays visible in the trajectory.
                let state = self.sim.state.clone();
                let _ = self.log.capture_on_completion(
                    boundary,
                    state.pose,
                    state.clock,
                    None,
                    ActionRecord {
                        name: name.to_string(),
                        params: params.clone(),
                        node_id,
                        outcome: ActionOutcome::Failed("executor_fault".to_string()),
                    },
                    &self.space,
                );
                Err(e.to_string())
            }
        }
    }
}

/// Outcome of executing one plan against one scene.
#[derive(Debug, Clone)]
pub struct MissionRun {
    pub outcome: RunOutcome,
    pub tick_count: u64,
    pub sequence: AnnotatedStateSequence,
    pub executor_fault: Option<String>,
    /// Final simulator clock, deciseconds.
    pub elapsed_ds: u64,
    pub internal_samples: u64,
    pub final_landed: bool,
}

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    Bt(#[from] BtError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
}

/// Execute a plan on a scene to completion (or tick budget), capturing the
/// annotated state sequence.
pub fn execute_mission(
    tree: &BehaviorTree,
    scene: &Scene,
    space: &StrategySpace,
    max_ticks: u64,
) -> Result<MissionRun, MissionError> {
    let mut sim = DroneSim::new(scene.world.clone()).with_fault_script(scene.fault_script.clone());
    let mut executor = MissionExecutor::new(&mut sim, space.clone());
    let mut bb = Blackboard::new();
    let run = run_to_completion(tree, &mut bb, &mut executor, max_ticks);
    let (outcome, tick_count, executor_fault) = match run {
        Ok((outcome, ticks)) => (outcome, ticks, None),
        Err(BtError::ExecutorFault(msg)) => (RunOutcome::Failure, 0, Some(msg)),
        Err(other) => return Err(other.into()),
    };
    let sequence = executor.log.build_sequence()?;
    Ok(MissionRun {
        outcome,
        tick_count,
        sequence,
        executor_fault,
        elapsed_ds: sim.state.clock,
        internal_samples: sim.state.internal_samples,
        final_landed: sim.state.landed,
    })
}

/// Number of records a fixed-rate sampler at `hz` would have produced over
/// the same mission duration. Test oracle for the filtering reduction.
pub fn fixed_rate_record_count(elapsed_ds: u64, hz: f64) -> u64 {
    ((elapsed_ds as f64 / 10.0) * hz).round() as u64
}

// ---------------------------------------------------------------------------
// Trajectory log JSONL
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRecord {
    idx: usize,
    action: String,
    params: BTreeMap<String, String>,
    node_id: u32,
    outcome: String,
    failure_tag: Option<String>,
    pose: PoseRecord,
    observation: Option<Observation>,
    timestamp: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRecord {
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
}

pub fn to_jsonl(seq: &AnnotatedStateSequence) -> String {
    let mut out = String::new();
    for (idx, step) in seq.items.iter().enumerate() {
        let record = TrajectoryRecord {
            idx,
            action: step.action.name.clone(),
            params: step.action.params.clone(),
            node_id: step.action.node_id.0,
            outcome: match &step.action.outcome {
                ActionOutcome::Succeeded => "succeeded".to_string(),
                ActionOutcome::Failed(_) => "failed".to_string(),
            },
            failure_tag: step.data.failure_tag.clone(),
            pose: PoseRecord {
                x: step.data.state.pose.x,
                y: step.data.state.pose.y,
                z: step.data.state.pose.z,
                yaw: step.data.state.pose.yaw,
            },
            observation: step.data.observation.clone(),
            timestamp: step.data.state.timestamp,
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<AnnotatedStateSequence, CaptureError> {
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(line)
            .map_err(|e| CaptureError::MalformedLog(format!("line {}: {}", lineno + 1, e)))?;
        let outcome = match record.outcome.as_str() {
            "succeeded" => ActionOutcome::Succeeded,
            "failed" => ActionOutcome::Failed(
                record.failure_tag.clone().unwrap_or_else(|| "unknown".to_string()),
            ),
            other => {
                return Err(CaptureError::MalformedLog(format!(
                    "line {}: unknown outcome {}",
                    lineno + 1,
                    other
                )))
            }
        };
        items.push(AnnotatedStep {
            action: ActionRecord {
                name: record.action,
                params: record.params,
                node_id: NodeId(record.node_id),
                outcome,
            },
            data: CapturedData {
                state: StateVector {
                    pose: Pose {
                        x: record.pose.x,
                        y: record.pose.y,
                        z: record.pose.z,
                        yaw: record.pose.yaw,
                    },
                    timestamp: record.timestamp,
                },
                observation: record.observation,
                failure_tag: record.failure_tag,
            },
        });
    }
    if items.is_empty() {
        return Err(CaptureError::EmptyMission);
    }
    Ok(AnnotatedStateSequence { items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::parse_bt;
    use crate::sim::load_scene;

    fn space() -> StrategySpace {
        StrategySpace::drone_default()
    }

    /// Reference square-path mission for task 2.
    pub fn task2_reference_plan() -> BehaviorTree {
        parse_bt(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <FlyToCoordinates x="2" y="0" z="1"/>
                <FlyToCoordinates x="2" y="2" z="1"/>
                <FlyToCoordinates x="0" y="2" z="1"/>
                <FlyToCoordinates x="0" y="0" z="1"/>
                <Land/>
            </Sequence></BehaviorTree>"#,
            &space(),
        )
        .unwrap()
    }

    #[test]
    fn one_step_per_completed_action() {
        let scene = load_scene(2).unwrap();
        let run = execute_mission(&task2_reference_plan(), &scene, &space(), 100).unwrap();
        assert_eq!(run.outcome, RunOutcome::Success);
        assert_eq!(run.sequence.len(), 6);
        // Interpolation produced many internal samples, none of them recorded.
        assert!(run.internal_samples > run.sequence.len() as u64);
    }

    #[test]
    fn motion_steps_have_no_observation() {
        let scene = load_scene(2).unwrap();
        let run = execute_mission(&task2_reference_plan(), &scene, &space(), 100).unwrap();
        for step in &run.sequence.items {
            assert!(step.data.observation.is_none(), "{} carried an observation", step.action.name);
        }
    }

    #[test]
    fn capture_step_attaches_observation() {
        let scene = load_scene(4).unwrap();
        let plan = parse_bt(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <TurnLeft angle="120"/>
                <ForwardDetect target="Balloon"/>
                <Land/>
            </Sequence></BehaviorTree>"#,
            &space(),
        )
        .unwrap();
        let run = execute_mission(&plan, &scene, &space(), 100).unwrap();
        assert_eq!(run.outcome, RunOutcome::Success);
        let detect = &run.sequence.items[2];
        assert_eq!(detect.action.name, "ForwardDetect");
        let obs = detect.data.observation.as_ref().unwrap();
        assert_eq!(obs.detected[0].kind, crate::sim::ObjectKind::Balloon);
    }

    #[test]
    fn failure_tag_passes_through() {
        let scene = load_scene(3).unwrap();
        let plan = parse_bt(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <FlyToCoordinates x="4" y="1" z="1"/>
                <Land/>
            </Sequence></BehaviorTree>"#,
            &space(),
        )
        .unwrap();
        let run = execute_mission(&plan, &scene, &space(), 100).unwrap();
        assert_eq!(run.outcome, RunOutcome::Failure);
        // Sequence aborts at the failing fly action: takeoff + fly captured.
        assert_eq!(run.sequence.len(), 2);
        assert_eq!(run.sequence.items[1].data.failure_tag.as_deref(), Some("zone_violation"));
    }

    #[test]
    fn executor_fault_truncates_with_tag() {
        let scene = load_scene(2).unwrap();
        let plan = parse_bt(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <MoveForward distance="1"/>
                <Hover duration="oops"/>
                <Land/>
            </Sequence></BehaviorTree>"#,
            &space(),
        )
        .unwrap();
        let run = execute_mission(&plan, &scene, &space(), 100).unwrap();
        assert!(run.executor_fault.is_some());
        assert_eq!(run.sequence.len(), 3);
        assert_eq!(run.sequence.items[2].data.failure_tag.as_deref(), Some("executor_fault"));
    }

    #[test]
    fn timestamps_strictly_increase() {
        let scene = load_scene(2).unwrap();
        let run = execute_mission(&task2_reference_plan(), &scene, &space(), 100).unwrap();
        let stamps: Vec<u64> = run.sequence.items.iter().map(|s| s.data.state.timestamp).collect();
        assert!(stamps.windows(2).all(|w| w[0] < w[1]), "{stamps:?}");
    }

    #[test]
    fn double_capture_is_rejected() {
        let mut log = MissionLog::new();
        let record = ActionRecord {
            name: "Hover".to_string(),
            params: BTreeMap::new(),
            node_id: NodeId(0),
            outcome: ActionOutcome::Succeeded,
        };
        log.capture_on_completion(0, Pose::origin(), 1, None, record.clone(), &space())
            .unwrap();
        assert!(matches!(
            log.capture_on_completion(0, Pose::origin(), 2, None, record, &space()),
            Err(CaptureError::DoubleCapture(0))
        ));
    }

    #[test]
    fn empty_mission_errors() {
        assert!(matches!(
            MissionLog::new().build_sequence(),
            Err(CaptureError::EmptyMission)
        ));
    }

    #[test]
    fn reduction_vs_fixed_rate_sampling() {
        let scene = load_scene(2).unwrap();
        let run = execute_mission(&task2_reference_plan(), &scene, &space(), 100).unwrap();
        let fixed = fixed_rate_record_count(run.elapsed_ds, 20.0);
        let captured = run.sequence.len() as u64;
        let reduction = 1.0 - captured as f64 / fixed as f64;
        assert!(reduction >= 0.95, "reduction {reduction} below 95% ({captured} vs {fixed})");
    }

    #[test]
    fn waypoints_recoverable_from_sequence() {
        let scene = load_scene(2).unwrap();
        let run = execute_mission(&task2_reference_plan(), &scene, &space(), 100).unwrap();
        let poses: Vec<(f64, f64, f64)> = run
            .sequence
            .items
            .iter()
            .map(|s| (s.data.state.pose.x, s.data.state.pose.y, s.data.state.pose.z))
            .collect();
        assert_eq!(
            poses,
            vec![
                (0.0, 0.0, 1.0),
                (2.0, 0.0, 1.0),
                (2.0, 2.0, 1.0),
                (0.0, 2.0, 1.0),
                (0.0, 0.0, 1.0),
                (0.0, 0.0, 0.0),
            ]
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let scene = load_scene(4).unwrap();
        let plan = parse_bt(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <TurnLeft angle="120"/>
                <ForwardDetect target="Balloon"/>
                <Land/>
            </Sequence></BehaviorTree>"#,
            &space(),
        )
        .unwrap();
        let run = execute_mission(&plan, &scene, &space(), 100).unwrap();
        let text = to_jsonl(&run.sequence);
        let parsed = from_jsonl(&text).unwrap();
        assert_eq!(parsed, run.sequence);
        assert!(matches!(from_jsonl(""), Err(CaptureError::EmptyMission)));
        assert!(matches!(from_jsonl("{nope"), Err(CaptureError::MalformedLog(_))));
    }
}
