//! Continuous motion and spatial reasoning: derive ego-motion semantics per
//! consecutive state pair, maintain a persistent environment state, infer
//! per-object spatial relations, and fuse both into a deterministic
//! LLM-ready narrative.
//!
//! Everything here is a pure function of the annotated state sequence (plus
//! an optional world model); an LLM-backed variant of the reasoning steps is
//! available through the gateway prompt contracts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{AnnotatedStateSequence, AnnotatedStep};
use crate::sim::{angle_delta, CameraAxis, ObjectKind, Pose, WorldModel, DRONE_RADIUS};

/// Render a number with up to six decimals, trailing zeros trimmed, so the
/// narrative stays faithful to the raw pose within 1e-6.
pub fn fmt_num(x: f64) -> String {
    let mut s = format!("{:.6}", x);
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

pub fn fmt_nwu(x: f64, y: f64, z: f64) -> String {
    format!("NWU({}, {}, {})", fmt_num(x), fmt_num(y), fmt_num(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub description: String,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationChange {
    pub description: String,
    /// Signed yaw delta, degrees in (-180, 180].
    pub delta_deg: f64,
}

/// Semantic motion vector for one consecutive state pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSemantics {
    pub behavior_type: String,
    pub displacement: Displacement,
    pub orientation_change: OrientationChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoSegment {
    /// Pair of 1-based step indices (t_i, t_{i+1}).
    pub interval: (usize, usize),
    pub motion: MotionSemantics,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoNarrative {
    pub segments: Vec<EgoSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    Visible,
    Occluded,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub kind: ObjectKind,
    pub last_pose: (f64, f64, f64),
    pub last_seen: u64,
    pub visibility: Visibility,
    pub extent: f64,
}

/// Persistent environment state: objects never vanish once tracked; leaving
/// the field of view only flips visibility to occluded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentState {
    pub tracked: BTreeMap<String, TrackedObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyState {
    Clear,
    NearObstacle,
    InsideZone,
    TraversingFrame,
}

impl SafetyState {
    pub fn phrase(&self) -> &'static str {
        match self {
            SafetyState::Clear => "clear of",
            SafetyState::NearObstacle => "near obstacle",
            SafetyState::InsideZone => "inside no-fly zone",
            SafetyState::TraversingFrame => "traversing square frame",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRelation {
    pub intent: String,
    pub proximity: String,
    pub distance: f64,
    pub safety: SafetyState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticTrajectory {
    pub ego: EgoNarrative,
    pub lines: Vec<String>,
    /// (segment index t, per-object relations at t), in temporal order.
    pub relations: Vec<(usize, Vec<(String, SpatialRelation)>)>,
}

impl SemanticTrajectory {
    pub fn narrative(&self) -> String {
        self.lines.join("\n")
    }

    pub fn to_sidecar_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }
}

#[derive(Debug, Error)]
pub enum CmsrError {
    #[error("annotated sequence needs at least 2 steps, got {0}")]
    SequenceTooShort(usize),
}

// ---------------------------------------------------------------------------
// Ego-motion semantic derivation
// ---------------------------------------------------------------------------

/// Deterministic rule-based translation of one consecutive state pair.
pub fn derive_motion(prev: &AnnotatedStep, curr: &AnnotatedStep) -> MotionSemantics {
    let p = &prev.data.state.pose;
    let c = &curr.data.state.pose;
    let (dx, dy, dz) = (c.x - p.x, c.y - p.y, c.z - p.z);
    let dist = (dx * dx + dy * dy + dz * dz).sqrt();
    let delta_yaw = angle_delta(p.yaw, c.yaw);
    let name = curr.action.name.as_str();

    let displacement_desc = if dist < 1e-9 {
        "held position".to_string()
    } else {
        match name {
            "FlyToCoordinates" => format!("fly to coordinate {}", fmt_nwu(c.x, c.y, c.z)),
            "MoveForward" => format!("move forward {}m to {}", fmt_num(dist), fmt_nwu(c.x, c.y, c.z)),
            "MoveBackward" => format!("move backward {}m to {}", fmt_num(dist), fmt_nwu(c.x, c.y, c.z)),
            "MoveLeft" => format!("move left {}m to {}", fmt_num(dist), fmt_nwu(c.x, c.y, c.z)),
            "MoveRight" => format!("move right {}m to {}", fmt_num(dist), fmt_nwu(c.x, c.y, c.z)),
            "Takeoff" => format!("take off to {}m altitude", fmt_num(c.z)),
            "Land" => format!("land at {}", fmt_nwu(c.x, c.y, c.z)),
            _ => format!("move {}m to {}", fmt_num(dist), fmt_nwu(c.x, c.y, c.z)),
        }
    };

    let orientation_desc = if delta_yaw.abs() < 1e-9 {
        "no rotation".to_string()
    } else if delta_yaw > 0.0 {
        format!("+{}\u{b0}", fmt_num(delta_yaw))
    } else {
        format!("{}\u{b0}", fmt_num(delta_yaw))
    };

    MotionSemantics {
        behavior_type: name.to_string(),
        displacement: Displacement { description: displacement_desc, dx, dy, dz },
        orientation_change: OrientationChange { description: orientation_desc, delta_deg: delta_yaw },
    }
}

fn render_ego_sentence(interval: (usize, usize), motion: &MotionSemantics, step: &AnnotatedStep) -> String {
    let body = match motion.behavior_type.as_str() {
        "TurnLeft" => format!(
            "the drone turn left with {}\u{b0}",
            fmt_num(motion.orientation_change.delta_deg.abs())
        ),
        "TurnRight" => format!(
            "the drone turn right with {}\u{b0}",
            fmt_num(motion.orientation_change.delta_deg.abs())
        ),
        "ForwardDetect" | "DownwardDetect" => {
            let target = step.action.params.get("target").cloned().unwrap_or_default();
            let verdict = if step.action.outcome.failure_tag().is_some() {
                "saw nothing"
            } else {
                "detected it"
            };
            format!("the drone scanned for {} and {}", target, verdict)
        }
        _ => format!("the drone {}", motion.displacement.description),
    };
    let tagged = if let Some(tag) = step.action.outcome.failure_tag() {
        format!("{} [failed: {}]", body, tag)
    } else {
        body
    };
    format!(
        "During [t_{}, t_{}]: {}, {}",
        interval.0, interval.1, motion.behavior_type, tagged
    )
}

// ---------------------------------------------------------------------------
// Environment state
// ---------------------------------------------------------------------------

/// Seed tracked entries from world ground truth; they stay unseen until a
/// detection confirms them but their geometry is available for safety
/// reasoning.
pub fn seed_environment(world: &WorldModel) -> EnvironmentState {
    let mut env = EnvironmentState::default();
    for obj in &world.objects {
        env.tracked.insert(
            obj.id.clone(),
            TrackedObject {
                kind: obj.kind,
                last_pose: (obj.x, obj.y, obj.z),
                last_seen: 0,
                visibility: Visibility::Unseen,
                extent: obj.extent,
            },
        );
    }
    env
}

/// Integrate one step: detections upsert entries via bearing/range
/// triangulation; previously visible entries absent from the current
/// detection flip to occluded but are retained.
pub fn update_environment_state(env: &mut EnvironmentState, step: &AnnotatedStep) {
    let pose = &step.data.state.pose;
    let timestamp = step.data.state.timestamp;
    let detected_ids: Vec<String> = match &step.data.observation {
        Some(obs) => {
            for det in &obs.detected {
                let world_angle = (pose.yaw + det.bearing).to_radians();
                let (horizontal, z) = match obs.camera_axis {
                    // Forward camera: same-altitude assumption.
                    CameraAxis::Forward => (det.range, pose.z),
                    // Downward camera: floor objects, project out altitude.
                    CameraAxis::Downward => {
                        ((det.range * det.range - pose.z * pose.z).max(0.0).sqrt(), 0.0)
                    }
                };
                let x = pose.x + horizontal * world_angle.cos();
                let y = pose.y + horizontal * world_angle.sin();
                let entry = env.tracked.entry(det.object_id.clone()).or_insert(TrackedObject {
                    kind: det.kind,
                    last_pose: (x, y, z),
                    last_seen: timestamp,
                    visibility: Visibility::Visible,
                    extent: 1.0,
                });
                entry.last_pose = (x, y, z);
                entry.last_seen = timestamp;
                entry.visibility = Visibility::Visible;
            }
            obs.detected.iter().map(|d| d.object_id.clone()).collect()
        }
        None => Vec::new(),
    };
    for (id, entry) in env.tracked.iter_mut() {
        if entry.visibility == Visibility::Visible && !detected_ids.contains(id) {
            entry.visibility = Visibility::Occluded;
        }
    }
}

// ---------------------------------------------------------------------------
// Spatial relation inference
// ---------------------------------------------------------------------------

fn kind_phrase(kind: ObjectKind) -> &'static str {
    match kind {
        ObjectKind::Balloon => "balloon",
        ObjectKind::SquareFrame => "square frame",
        ObjectKind::LandingMark => "landing mark",
        ObjectKind::Cylinder => "cylinder",
        ObjectKind::RectObstacle => "rectangular obstacle",
        ObjectKind::NoFlyZone => "no-fly zone",
    }
}

/// Object-centric spatial reasoning against one tracked entry.
pub fn infer_spatial_relation(
    motion: &MotionSemantics,
    pose: &Pose,
    obj: &TrackedObject,
) -> SpatialRelation {
    let (ox, oy, oz) = obj.last_pose;
    let distance = pose.distance_to(ox, oy, oz);

    // Navigational intent: motion trend vs direction to the object.
    let disp_norm =
        (motion.displacement.dx.powi(2) + motion.displacement.dy.powi(2) + motion.displacement.dz.powi(2))
            .sqrt();
    let intent = if disp_norm < 1e-9 {
        format!("holding position relative to {}", kind_phrase(obj.kind))
    } else {
        let to_obj = (ox - pose.x + motion.displacement.dx, oy - pose.y + motion.displacement.dy, oz
            - pose.z
            + motion.displacement.dz);
        // Direction toward the object as seen from the segment start.
        let to_norm = (to_obj.0.powi(2) + to_obj.1.powi(2) + to_obj.2.powi(2)).sqrt();
        let cosine = if to_norm < 1e-9 {
            1.0
        } else {
            (motion.displacement.dx * to_obj.0
                + motion.displacement.dy * to_obj.1
                + motion.displacement.dz * to_obj.2)
                / (disp_norm * to_norm)
        };
        if cosine > 0.5 {
            match obj.kind {
                ObjectKind::LandingMark => "aligning with landing mark".to_string(),
                kind => format!("approaching {}", kind_phrase(kind)),
            }
        } else if cosine < -0.5 {
            format!("departing {}", kind_phrase(obj.kind))
        } else {
            format!("passing {}", kind_phrase(obj.kind))
        }
    };

    let bucket = if distance < 0.3 {
        "at"
    } else if distance < 2.0 {
        "within"
    } else if distance < 5.0 {
        "near"
    } else {
        "far"
    };
    let proximity = format!("{} ({} m)", bucket, fmt_num(distance));

    let horizontal = pose.horizontal_distance_to(ox, oy);
    let safety = match obj.kind {
        ObjectKind::NoFlyZone => {
            if (pose.x - ox).abs() <= obj.extent / 2.0 && (pose.y - oy).abs() <= obj.extent / 2.0 {
                SafetyState::InsideZone
            } else {
                SafetyState::Clear
            }
        }
        ObjectKind::SquareFrame => {
            if distance <= obj.extent / 2.0 {
                SafetyState::TraversingFrame
            } else {
                SafetyState::Clear
            }
        }
        ObjectKind::Cylinder | ObjectKind::RectObstacle => {
            if horizontal <= obj.extent / 2.0 + DRONE_RADIUS && pose.z <= oz + obj.extent + DRONE_RADIUS {
                SafetyState::NearObstacle
            } else {
                SafetyState::Clear
            }
        }
        _ => SafetyState::Clear,
    };

    SpatialRelation { intent, proximity, distance, safety }
}

// ---------------------------------------------------------------------------
// The CMSR loop
// ---------------------------------------------------------------------------

/// Derive the full semantic trajectory from an annotated state sequence.
/// Per step: motion derivation, temporal integration, environment update,
/// per-object relation inference; finally align ego and relations into
/// temporally ordered narrative lines.
pub fn cmsr(
    sequence: &AnnotatedStateSequence,
    world: Option<&WorldModel>,
) -> Result<SemanticTrajectory, CmsrError> {
    if sequence.len() < 2 {
        return Err(CmsrError::SequenceTooShort(sequence.len()));
    }
    let mut env = world.map(seed_environment).unwrap_or_default();
    let mut segments = Vec::new();
    let mut relations = Vec::new();

    for t in 1..sequence.len() {
        let prev = &sequence.items[t - 1];
        let curr = &sequence.items[t];
        let motion = derive_motion(prev, curr);
        let interval = (t, t + 1);
        let sentence = render_ego_sentence(interval, &motion, curr);
        segments.push(EgoSegment { interval, motion: motion.clone(), sentence });

        update_environment_state(&mut env, curr);

        let mut step_relations = Vec::new();
        for (id, obj) in &env.tracked {
            let relation = infer_spatial_relation(&motion, &curr.data.state.pose, obj);
            step_relations.push((id.clone(), relation));
        }
        if !step_relations.is_empty() {
            relations.push((t, step_relations));
        }
    }

    // Spatio-temporal fusion: attach notable relations to their segment line.
    let mut lines = Vec::new();
    for (i, segment) in segments.iter().enumerate() {
        let mut line = segment.sentence.clone();
        if let Some((_, rels)) = relations.iter().find(|(t, _)| *t == i + 1) {
            for (id, rel) in rels {
                if rel.safety != SafetyState::Clear {
                    let obj = &env.tracked[id];
                    line.push_str(&format!(
                        " while {} at {}",
                        rel.safety.phrase(),
                        fmt_nwu(obj.last_pose.0, obj.last_pose.1, obj.last_pose.2)
                    ));
                } else if rel.distance < 2.0 && obj_is_goal_like(env.tracked[id].kind) {
                    line.push_str(&format!(", {} {}", rel.intent, rel.proximity));
                }
            }
        }
        lines.push(line);
    }

    Ok(SemanticTrajectory { ego: EgoNarrative { segments }, lines, relations })
}

fn obj_is_goal_like(kind: ObjectKind) -> bool {
    matches!(kind, ObjectKind::Balloon | ObjectKind::LandingMark | ObjectKind::SquareFrame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::parse_bt;
    use crate::capture::execute_mission;
    use crate::sim::{load_scene, Scene, WorldModel};
    use crate::strategy::StrategySpace;

    fn space() -> StrategySpace {
        StrategySpace::drone_default()
    }

    fn run_plan(xml: &str, scene: &Scene) -> AnnotatedStateSequence {
        let tree = parse_bt(xml, &space()).unwrap();
        execute_mission(&tree, scene, &space(), 200).unwrap().sequence
    }

    fn empty_scene() -> Scene {
        Scene {
            task_id: 0,
            instruction: String::new(),
            world: WorldModel::empty(),
            fault_script: Vec::new(),
        }
    }

    #[test]
    fn fly_to_coordinates_sentence() {
        let seq = run_plan(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1.5"/>
                <FlyToCoordinates x="1" y="2" z="1.5"/>
            </Sequence></BehaviorTree>"#,
            &empty_scene(),
        );
        let motion = derive_motion(&seq.items[0], &seq.items[1]);
        assert_eq!(motion.displacement.description, "fly to coordinate NWU(1, 2, 1.5)");
        assert!((motion.displacement.dx - 1.0).abs() < 1e-6);
        assert!((motion.displacement.dy - 2.0).abs() < 1e-6);
        assert!(motion.displacement.dz.abs() < 1e-6);
    }

    #[test]
    fn turn_left_orientation_change() {
        let seq = run_plan(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <TurnLeft angle="90"/>
            </Sequence></BehaviorTree>"#,
            &empty_scene(),
        );
        let motion = derive_motion(&seq.items[0], &seq.items[1]);
        assert_eq!(motion.orientation_change.description, "+90\u{b0}");
        assert!((motion.orientation_change.delta_deg - 90.0).abs() < 1e-9);
        assert_eq!(motion.displacement.description, "held position");
    }

    #[test]
    fn identical_poses_hold_position() {
        let seq = run_plan(
            r#"<BehaviorTree><Sequence>
                <Hover duration="1"/>
                <Hover duration="1"/>
            </Sequence></BehaviorTree>"#,
            &empty_scene(),
        );
        let motion = derive_motion(&seq.items[0], &seq.items[1]);
        assert_eq!(motion.displacement.description, "held position");
        assert_eq!(motion.displacement.dx, 0.0);
        assert_eq!(motion.orientation_change.delta_deg, 0.0);
    }

    #[test]
    fn first_detection_inserts_then_occludes() {
        let scene = load_scene(4).unwrap();
        let seq = run_plan(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <TurnLeft angle="120"/>
                <ForwardDetect target="Balloon"/>
                <TurnRight angle="120"/>
                <Hover duration="1"/>
            </Sequence></BehaviorTree>"#,
            &scene,
        );
        let mut env = EnvironmentState::default();
        update_environment_state(&mut env, &seq.items[2]);
        let balloon = env.tracked.get("balloon_0").unwrap();
        assert_eq!(balloon.visibility, Visibility::Visible);
        // Triangulated position vs world truth (-2, 3, 1).
        let (x, y, z) = balloon.last_pose;
        let err = ((x + 2.0).powi(2) + (y - 3.0).powi(2) + (z - 1.0).powi(2)).sqrt();
        assert!(err < 0.1, "triangulation error {err}");

        update_environment_state(&mut env, &seq.items[3]);
        let balloon = env.tracked.get("balloon_0").unwrap();
        assert_eq!(balloon.visibility, Visibility::Occluded);
        assert_eq!(env.tracked.len(), 1);
    }

    #[test]
    fn traversing_frame_safety() {
        let motion = MotionSemantics {
            behavior_type: "MoveForward".to_string(),
            displacement: Displacement {
                description: "move forward".to_string(),
                dx: 1.0,
                dy: 0.0,
                dz: 0.0,
            },
            orientation_change: OrientationChange { description: "no rotation".to_string(), delta_deg: 0.0 },
        };
        let pose = Pose { x: -0.93, y: 1.31, z: 1.26, yaw: 0.0 };
        let obj = TrackedObject {
            kind: ObjectKind::SquareFrame,
            last_pose: (-0.86, 1.29, 1.18),
            last_seen: 1,
            visibility: Visibility::Visible,
            extent: 1.0,
        };
        let rel = infer_spatial_relation(&motion, &pose, &obj);
        assert_eq!(rel.safety, SafetyState::TraversingFrame);
    }

    #[test]
    fn departing_far_object() {
        let motion = MotionSemantics {
            behavior_type: "MoveForward".to_string(),
            displacement: Displacement {
                description: "move forward".to_string(),
                dx: 1.0,
                dy: 0.0,
                dz: 0.0,
            },
            orientation_change: OrientationChange { description: "no rotation".to_string(), delta_deg: 0.0 },
        };
        let pose = Pose { x: 0.0, y: 0.0, z: 0.0, yaw: 0.0 };
        let obj = TrackedObject {
            kind: ObjectKind::Balloon,
            last_pose: (-10.0, 0.0, 0.0),
            last_seen: 1,
            visibility: Visibility::Occluded,
            extent: 0.4,
        };
        let rel = infer_spatial_relation(&motion, &pose, &obj);
        assert!(rel.intent.starts_with("departing"));
        assert_eq!(rel.proximity, "far (10 m)");
        assert!((rel.distance - 10.0).abs() < 1e-9);
    }

    #[test]
    fn coincident_object_distance_zero() {
        let motion = MotionSemantics {
            behavior_type: "Hover".to_string(),
            displacement: Displacement { description: "held position".to_string(), dx: 0.0, dy: 0.0, dz: 0.0 },
            orientation_change: OrientationChange { description: "no rotation".to_string(), delta_deg: 0.0 },
        };
        let pose = Pose { x: 1.0, y: 2.0, z: 3.0, yaw: 0.0 };
        let obj = TrackedObject {
            kind: ObjectKind::Balloon,
            last_pose: (1.0, 2.0, 3.0),
            last_seen: 1,
            visibility: Visibility::Visible,
            extent: 0.4,
        };
        let rel = infer_spatial_relation(&motion, &pose, &obj);
        assert_eq!(rel.distance, 0.0);
        assert!(rel.proximity.starts_with("at"));
    }

    #[test]
    fn narrative_lines_use_interval_style() {
        let scene = load_scene(2).unwrap();
        let seq = run_plan(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <FlyToCoordinates x="2" y="0" z="1"/>
                <MoveForward distance="1"/>
            </Sequence></BehaviorTree>"#,
            &scene,
        );
        let traj = cmsr(&seq, Some(&scene.world)).unwrap();
        assert_eq!(traj.ego.segments.len(), seq.len() - 1);
        assert!(traj.lines[0].starts_with("During [t_1, t_2]: FlyToCoordinates"));
        assert!(traj.lines[1].contains("MoveForward, the drone move forward 1m to NWU(3, 0, 1)"));
    }

    #[test]
    fn pure_hover_mission_has_empty_relations() {
        let seq = run_plan(
            r#"<BehaviorTree><Sequence>
                <Hover duration="1"/>
                <Hover duration="1"/>
                <Hover duration="1"/>
            </Sequence></BehaviorTree>"#,
            &empty_scene(),
        );
        let traj = cmsr(&seq, None).unwrap();
        assert_eq!(traj.ego.segments.len(), 2);
        assert!(traj.relations.is_empty());
        assert!(traj.lines.iter().all(|l| l.contains("held position")));
    }

    #[test]
    fn minimal_pair_yields_one_segment() {
        let seq = run_plan(
            r#"<BehaviorTree><Sequence>
                <Takeoff height="1"/>
                <Land/>
            </Sequence></BehaviorTree>"#,
            &empty_scene(),
        );
        let traj = cmsr(&seq, None).unwrap();
        assert_eq!(traj.ego.segments.len(), 1);
    }

    #[test]
    fn sequence_too_short_errors() {
        let seq = run_plan(
            r#"<BehaviorTree><Sequence><Takeoff height="1"/></Sequence></BehaviorTree>"#,
            &empty_scene(),
        );
        assert!(matches!(cmsr(&seq, None), Err(CmsrError::SequenceTooShort(1))));
    }

    #[test]
    fn cmsr_is_deterministic() {
        let scene = load_scene(4).unwrap();
        let xml = r#"<BehaviorTree><Sequence>
            <Takeoff height="1"/>
            <TurnLeft angle="120"/>
            <ForwardDetect target="Balloon"/>
            <Land/>
        </Sequence></BehaviorTree>"#;
        let a = cmsr(&run_plan(xml, &scene), Some(&scene.world)).unwrap();
        let b = cmsr(&run_plan(xml, &scene), Some(&scene.world)).unwrap();
        assert_eq!(a.narrative(), b.narrative());
        assert_eq!(a, b);
    }

    #[test]
    fn fmt_num_trims_cleanly() {
        assert_eq!(fmt_num(1.5), "1.5");
        assert_eq!(fmt_num(2.0), "2");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(1.2345678), "1.234568");
    }
}
