//! Deterministic kinematic drone simulator in the NWU frame.
//!
//! Kinematics are teleport-with-path: motion actions move in a straight line,
//! interpolated at a fixed 0.5 m resolution for zone and obstacle checks.
//! There is no dynamics model; plan-level evaluation needs geometry only.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Drone body radius used for containment checks.
pub const DRONE_RADIUS: f64 = 0.3;
/// Straight-line interpolation step for collision tests, meters.
pub const PATH_RESOLUTION: f64 = 0.5;
/// Forward camera: half-angle of the sensing cone, degrees.
pub const FORWARD_HALF_ANGLE_DEG: f64 = 60.0;
/// Forward camera range, meters.
pub const FORWARD_RANGE: f64 = 4.0;
/// Downward camera sensing disk radius, meters.
pub const DOWNWARD_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Yaw in degrees, normalized to [0, 360). 0 faces +X (north); positive
    /// yaw is counterclockwise viewed from above, toward +Y (west).
    pub yaw: f64,
}

impl Pose {
    pub fn origin() -> Self {
        Pose { x: 0.0, y: 0.0, z: 0.0, yaw: 0.0 }
    }

    pub fn horizontal_distance_to(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }

    pub fn distance_to(&self, x: f64, y: f64, z: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2) + (self.z - z).powi(2)).sqrt()
    }
}

pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut y = yaw % 360.0;
    if y < 0.0 {
        y += 360.0;
    }
    y
}

/// Signed smallest-angle difference, in (-180, 180].
pub fn angle_delta(from: f64, to: f64) -> f64 {
    let mut d = (to - from) % 360.0;
    if d <= -180.0 {
        d += 360.0;
    } else if d > 180.0 {
        d -= 360.0;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Balloon,
    SquareFrame,
    LandingMark,
    Cylinder,
    RectObstacle,
    NoFlyZone,
}

impl ObjectKind {
    pub fn label(&self) -> &'static str {
        match self {
            ObjectKind::Balloon => "Balloon",
            ObjectKind::SquareFrame => "SquareFrame",
            ObjectKind::LandingMark => "LandingMark",
            ObjectKind::Cylinder => "Cylinder",
            ObjectKind::RectObstacle => "RectObstacle",
            ObjectKind::NoFlyZone => "NoFlyZone",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Balloon" => Some(ObjectKind::Balloon),
            "SquareFrame" => Some(ObjectKind::SquareFrame),
            "LandingMark" => Some(ObjectKind::LandingMark),
            "Cylinder" => Some(ObjectKind::Cylinder),
            "RectObstacle" => Some(ObjectKind::RectObstacle),
            "NoFlyZone" => Some(ObjectKind::NoFlyZone),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: String,
    pub kind: ObjectKind,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Footprint: cell side for no-fly zones, diameter for solids, aperture
    /// side for frames.
    pub extent: f64,
    /// Vertical size for solid obstacles.
    #[serde(default)]
    pub height: Option<f64>,
}

impl WorldObject {
    pub fn new(id: &str, kind: ObjectKind, x: f64, y: f64, z: f64, extent: f64) -> Self {
        WorldObject { id: id.to_string(), kind, x, y, z, extent, height: None }
    }

    fn with_height(mut self, h: f64) -> Self {
        self.height = Some(h);
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldModel {
    pub objects: Vec<WorldObject>,
    /// Axis-aligned arena box: (min_x, min_y, max_x, max_y).
    pub bounds: (f64, f64, f64, f64),
}

impl WorldModel {
    pub fn empty() -> Self {
        WorldModel { objects: Vec::new(), bounds: (-10.0, -10.0, 10.0, 10.0) }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut seen = std::collections::HashSet::new();
        for obj in &self.objects {
            if !seen.insert(obj.id.clone()) {
                return Err(SimError::BadScene(format!("duplicate object id {}", obj.id)));
            }
            if obj.extent <= 0.0 {
                return Err(SimError::BadScene(format!("object {} has non-positive extent", obj.id)));
            }
        }
        Ok(())
    }

    pub fn no_fly_cells(&self) -> Vec<&WorldObject> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::NoFlyZone).collect()
    }

    /// True when (x, y) lies inside the zone cell of `zone`.
    pub fn in_cell(zone: &WorldObject, x: f64, y: f64) -> bool {
        (x - zone.x).abs() <= zone.extent / 2.0 && (y - zone.y).abs() <= zone.extent / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CameraAxis {
    Forward,
    Downward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object_id: String,
    pub kind: ObjectKind,
    /// Horizontal bearing relative to the heading, degrees in (-180, 180].
    pub bearing: f64,
    /// Euclidean distance, meters.
    pub range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub detected: Vec<Detection>,
    pub camera_axis: CameraAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub action: String,
    /// 1-based occurrence of the action this entry forces to fail.
    pub occurrence: u32,
    pub tag: String,
}

pub type FaultScript = Vec<FaultEntry>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionOutcome {
    Succeeded,
    Failed(String),
}

impl ActionOutcome {
    pub fn failure_tag(&self) -> Option<&str> {
        match self {
            ActionOutcome::Succeeded => None,
            ActionOutcome::Failed(tag) => Some(tag),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub pose: Pose,
    pub landed: bool,
    /// Deciseconds of simulated mission time; strictly increasing.
    pub clock: u64,
    pub detections: Option<Observation>,
    /// Count of internal path-interpolation samples, modeling the
    /// high-frequency onboard stream.
    pub internal_samples: u64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown action: {0}")]
    UnknownAction(String),
    #[error("unknown task id: {0}")]
    UnknownTask(u32),
    #[error("bad parameter for {action}: {detail}")]
    BadParam { action: String, detail: String },
    #[error("bad scene: {0}")]
    BadScene(String),
}

#[derive(Debug)]
pub struct DroneSim {
    pub world: WorldModel,
    pub state: SimState,
    fault_script: FaultScript,
    action_counts: HashMap<String, u32>,
}

fn param_f64(params: &std::collections::BTreeMap<String, String>, action: &str, key: &str) -> Result<f64, SimError> {
    let raw = params.get(key).ok_or_else(|| SimError::BadParam {
        action: action.to_string(),
        detail: format!("missing parameter {key}"),
    })?;
    raw.parse::<f64>().map_err(|_| SimError::BadParam {
        action: action.to_string(),
        detail: format!("parameter {key}={raw} is not a number"),
    })
}

impl DroneSim {
    pub fn new(world: WorldModel) -> Self {
        DroneSim {
            world,
            state: SimState {
                pose: Pose::origin(),
                landed: true,
                clock: 0,
                detections: None,
                internal_samples: 0,
            },
            fault_script: Vec::new(),
            action_counts: HashMap::new(),
        }
    }

    pub fn with_fault_script(mut self, script: FaultScript) -> Self {
        self.fault_script = script;
        self
    }

    fn advance_clock(&mut self, seconds: f64) {
        let ds = (seconds * 10.0).round().max(1.0) as u64;
        self.state.clock += ds;
    }

    pub fn elapsed_seconds(&self) -> f64 {
        self.state.clock as f64 / 10.0
    }

    /// Move along the segment to (x, y, z), checking no-fly zones and solid
    /// obstacles at fixed resolution. On violation the pose stops at the
    /// offending sample and the outcome is Failed, but the motion up to that
    /// point is kept so the flaw stays observable in the trajectory.
    fn fly_segment(&mut self, x: f64, y: f64, z: f64) -> ActionOutcome {
        let start = self.state.pose;
        let dist = start.distance_to(x, y, z);
        let steps = (dist / PATH_RESOLUTION).ceil().max(1.0) as u64;
        for i in 1..=steps {
            let t = i as f64 / steps as f64;
            let px = start.x + (x - start.x) * t;
            let py = start.y + (y - start.y) * t;
            let pz = start.z + (z - start.z) * t;
            self.state.internal_samples += 1;
            for obj in &self.world.objects {
                match obj.kind {
                    ObjectKind::NoFlyZone => {
                        if WorldModel::in_cell(obj, px, py) {
                            self.state.pose = Pose { x: px, y: py, z: pz, yaw: start.yaw };
                            self.advance_clock(dist * t);
                            return ActionOutcome::Failed("zone_violation".to_string());
                        }
                    }
                    ObjectKind::Cylinder => {
                        let top = obj.z + obj.height.unwrap_or(obj.extent);
                        let horiz = ((px - obj.x).powi(2) + (py - obj.y).powi(2)).sqrt();
                        if horiz <= obj.extent / 2.0 + DRONE_RADIUS && pz <= top + DRONE_RADIUS / 2.0 {
                            self.state.pose = Pose { x: px, y: py, z: pz, yaw: start.yaw };
                            self.advance_clock(dist * t);
                            return ActionOutcome::Failed("collision".to_string());
                        }
                    }
                    ObjectKind::RectObstacle => {
                        let top = obj.z + obj.height.unwrap_or(obj.extent);
                        if (px - obj.x).abs() <= obj.extent / 2.0 + DRONE_RADIUS
                            && (py - obj.y).abs() <= obj.extent / 2.0 + DRONE_RADIUS
                            && pz <= top + DRONE_RADIUS / 2.0
                        {
                            self.state.pose = Pose { x: px, y: py, z: pz, yaw: start.yaw };
                            self.advance_clock(dist * t);
                            return ActionOutcome::Failed("collision".to_string());
                        }
                    }
                    _ => {}
                }
            }
        }
        self.state.pose = Pose { x, y, z, yaw: start.yaw };
        self.advance_clock(dist);
        ActionOutcome::Succeeded
    }

    fn relative_move(&mut self, heading_offset_deg: f64, distance: f64) -> ActionOutcome {
        let angle = (self.state.pose.yaw + heading_offset_deg).to_radians();
        let target_x = self.state.pose.x + distance * angle.cos();
        let target_y = self.state.pose.y + distance * angle.sin();
        let target_z = self.state.pose.z;
        self.fly_segment(target_x, target_y, target_z)
    }

    fn sense(&self, axis: CameraAxis) -> Observation {
        let pose = &self.state.pose;
        let mut detected = Vec::new();
        for obj in &self.world.objects {
            if obj.kind == ObjectKind::NoFlyZone {
                continue;
            }
            let range = pose.distance_to(obj.x, obj.y, obj.z);
            let bearing = angle_delta(pose.yaw, (obj.y - pose.y).atan2(obj.x - pose.x).to_degrees());
            let visible = match axis {
                CameraAxis::Forward => range <= FORWARD_RANGE && bearing.abs() <= FORWARD_HALF_ANGLE_DEG,
                CameraAxis::Downward => {
                    pose.horizontal_distance_to(obj.x, obj.y) <= DOWNWARD_RADIUS && obj.z < pose.z
                }
            };
            if visible {
                detected.push(Detection { object_id: obj.id.clone(), kind: obj.kind, bearing, range });
            }
        }
        Observation { detected, camera_axis: axis }
    }

    fn detect(&mut self, axis: CameraAxis, target: &str, action: &str) -> Result<ActionOutcome, SimError> {
        let kind = ObjectKind::parse(target).ok_or_else(|| SimError::BadParam {
            action: action.to_string(),
            detail: format!("unknown object kind {target}"),
        })?;
        let obs = self.sense(axis);
        self.advance_clock(0.5);
        if obs.detected.iter().any(|d| d.kind == kind) {
            self.state.detections = Some(obs);
            Ok(ActionOutcome::Succeeded)
        } else {
            // A miss still produces a capture frame, just an empty one.
            self.state.detections = Some(Observation { detected: Vec::new(), camera_axis: axis });
            Ok(ActionOutcome::Failed("detect_miss".to_string()))
        }
    }

    /// Execute one action atomically. The fault script is consulted first.
    pub fn step_action(
        &mut self,
        name: &str,
        params: &std::collections::BTreeMap<String, String>,
    ) -> Result<(ActionOutcome, SimState), SimError> {
        let count = self.action_counts.entry(name.to_string()).or_insert(0);
        *count += 1;
        let occurrence = *count;
        if let Some(entry) = self
            .fault_script
            .iter()
            .find(|e| e.action == name && e.occurrence == occurrence)
        {
            let tag = entry.tag.clone();
            self.advance_clock(0.5);
            if name == "ForwardDetect" || name == "DownwardDetect" {
                let axis =
                    if name == "ForwardDetect" { CameraAxis::Forward } else { CameraAxis::Downward };
                self.state.detections =
                    Some(Observation { detected: Vec::new(), camera_axis: axis });
            }
            return Ok((ActionOutcome::Failed(tag), self.state.clone()));
        }

        let outcome = match name {
            "Takeoff" => {
                let h = param_f64(params, name, "height")?;
                self.state.landed = false;
                let out = self.fly_segment(self.state.pose.x, self.state.pose.y, h);
                out
            }
            "Land" => {
                let out = self.fly_segment(self.state.pose.x, self.state.pose.y, 0.0);
                if out == ActionOutcome::Succeeded {
                    self.state.landed = true;
                }
                out
            }
            "FlyToCoordinates" => {
                let x = param_f64(params, name, "x")?;
                let y = param_f64(params, name, "y")?;
                let z = param_f64(params, name, "z")?;
                self.fly_segment(x, y, z)
            }
            "MoveForward" => self.relative_move(0.0, param_f64(params, name, "distance")?),
            "MoveBackward" => self.relative_move(180.0, param_f64(params, name, "distance")?),
            "MoveLeft" => self.relative_move(90.0, param_f64(params, name, "distance")?),
            "MoveRight" => self.relative_move(-90.0, param_f64(params, name, "distance")?),
            "TurnLeft" => {
                let a = param_f64(params, name, "angle")?;
                self.state.pose.yaw = normalize_yaw(self.state.pose.yaw + a);
                self.advance_clock(a.abs() / 90.0);
                ActionOutcome::Succeeded
            }
            "TurnRight" => {
                let a = param_f64(params, name, "angle")?;
                self.state.pose.yaw = normalize_yaw(self.state.pose.yaw - a);
                self.advance_clock(a.abs() / 90.0);
                ActionOutcome::Succeeded
            }
            "ForwardDetect" => {
                let target = params.get("target").cloned().unwrap_or_default();
                self.detect(CameraAxis::Forward, &target, name)?
            }
            "DownwardDetect" => {
                let target = params.get("target").cloned().unwrap_or_default();
                self.detect(CameraAxis::Downward, &target, name)?
            }
            "Hover" => {
                let t = param_f64(params, name, "duration")?;
                self.advance_clock(t);
                ActionOutcome::Succeeded
            }
            other => return Err(SimError::UnknownAction(other.to_string())),
        };
        Ok((outcome, self.state.clone()))
    }

    /// Evaluate one condition against the current state.
    pub fn check_condition(
        &mut self,
        name: &str,
        params: &std::collections::BTreeMap<String, String>,
    ) -> Result<bool, SimError> {
        match name {
            "ObjectDetected" => {
                let target = params.get("target").cloned().unwrap_or_default();
                let kind = ObjectKind::parse(&target).ok_or_else(|| SimError::BadParam {
                    action: name.to_string(),
                    detail: format!("unknown object kind {target}"),
                })?;
                Ok(self
                    .state
                    .detections
                    .as_ref()
                    .map(|o| o.detected.iter().any(|d| d.kind == kind))
                    .unwrap_or(false))
            }
            "AtCoordinates" => {
                let x = param_f64(params, name, "x")?;
                let y = param_f64(params, name, "y")?;
                let z = param_f64(params, name, "z")?;
                let tol = param_f64(params, name, "tol")?;
                Ok(self.state.pose.distance_to(x, y, z) <= tol)
            }
            "BatteryOk" => Ok(true),
            other => Err(SimError::UnknownAction(other.to_string())),
        }
    }
}

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub task_id: u32,
    pub instruction: String,
    pub world: WorldModel,
    #[serde(default)]
    pub fault_script: FaultScript,
}

impl Scene {
    pub fn load_json(text: &str) -> Result<Scene, SimError> {
        let scene: Scene =
            serde_json::from_str(text).map_err(|e| SimError::BadScene(e.to_string()))?;
        scene.world.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

/// Category groupings of the benchmark tasks.
pub fn task_category(task_id: u32) -> Option<&'static str> {
    match task_id {
        1..=3 => Some("Path Planning"),
        4..=6 => Some("Object Searching"),
        7..=9 => Some("Obstacle Navigation"),
        10 | 11 => Some("Composite Task"),
        _ => None,
    }
}

pub fn load_scene(task_id: u32) -> Result<Scene, SimError> {
    load_scene_seeded(task_id, 0)
}

/// Benchmark scenes. Tasks with randomly initialized objects draw positions
/// from a seeded generator so runs are reproducible.
pub fn load_scene_seeded(task_id: u32, seed: u64) -> Result<Scene, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(task_id as u64));
    let mut world = WorldModel::empty();
    let instruction = match task_id {
        1 => "Fly forward first, then fly left to the target point.".to_string(),
        2 => "Fly a 2x2 square path around the center point.".to_string(),
        3 => {
            for (i, (cx, cy)) in [(1.0, 0.0), (1.0, 3.0), (2.0, 0.0), (2.0, 3.0)].iter().enumerate() {
                world.objects.push(WorldObject::new(
                    &format!("nfz_{i}"),
                    ObjectKind::NoFlyZone,
                    *cx,
                    *cy,
                    0.0,
                    1.0,
                ));
            }
            "Avoid No-Fly zones and proceed to the target point".to_string()
        }
        4 => {
            world
                .objects
                .push(WorldObject::new("balloon_0", ObjectKind::Balloon, -2.0, 3.0, 1.0, 0.4));
            "Find a balloon in the room".to_string()
        }
        5 => {
            let angle: f64 = rng.gen_range(0.0..360.0_f64);
            let dist: f64 = rng.gen_range(1.5..3.5_f64);
            let (x, y) = (dist * angle.to_radians().cos(), dist * angle.to_radians().sin());
            world
                .objects
                .push(WorldObject::new("frame_0", ObjectKind::SquareFrame, x, y, 1.2, 1.0));
            "Locate the square frame".to_string()
        }
        6 => {
            let x: f64 = rng.gen_range(-1.5..1.5_f64);
            let y: f64 = rng.gen_range(-1.5..1.5_f64);
            world
                .objects
                .push(WorldObject::new("mark_0", ObjectKind::LandingMark, x, y, 0.0, 0.5));
            "Search for a Landing mark on the floor".to_string()
        }
        7 => {
            // Cylinder height comes from the scene file, not the task text.
            world.objects.push(
                WorldObject::new("cyl_0", ObjectKind::Cylinder, 1.0, 1.0, 0.0, 0.6).with_height(0.8),
            );
            "Fly over the cylinder at 1m height".to_string()
        }
        8 => {
            world.objects.push(
                WorldObject::new("rect_0", ObjectKind::RectObstacle, 1.0, 0.0, 0.0, 0.6).with_height(2.0),
            );
            "Navigate around the rectangular obstacle".to_string()
        }
        9 => {
            world
                .objects
                .push(WorldObject::new("frame_0", ObjectKind::SquareFrame, 1.0, 0.0, 1.2, 1.0));
            "Cross through the square frame".to_string()
        }
        10 => {
            let angle: f64 = rng.gen_range(-45.0..45.0_f64);
            let dist: f64 = rng.gen_range(1.5..3.0_f64);
            let (x, y) = (dist * angle.to_radians().cos(), dist * angle.to_radians().sin());
            world
                .objects
                .push(WorldObject::new("frame_0", ObjectKind::SquareFrame, x, y, 1.2, 1.0));
            "Find and cross through the square frame".to_string()
        }
        11 => {
            for (i, (cx, cy)) in [(1.0, 0.0), (1.0, 3.0), (2.0, 0.0), (2.0, 3.0)].iter().enumerate() {
                world.objects.push(WorldObject::new(
                    &format!("nfz_{i}"),
                    ObjectKind::NoFlyZone,
                    *cx,
                    *cy,
                    0.0,
                    1.0,
                ));
            }
            world
                .objects
                .push(WorldObject::new("mark_0", ObjectKind::LandingMark, 3.0, 1.0, 0.0, 0.5));
            "Avoid No-Fly Zones and land on landing mark".to_string()
        }
        other => return Err(SimError::UnknownTask(other)),
    };
    Ok(Scene { task_id, instruction, world, fault_script: Vec::new() })
}

/// Scene center point for the path-planning tasks; used by goal checks.
pub fn scene_center(task_id: u32) -> Option<(f64, f64)> {
    match task_id {
        1 => Some((2.0, 2.0)),
        2 => Some((1.0, 1.0)),
        3 => Some((4.0, 1.0)),
        _ => None,
    }
}
