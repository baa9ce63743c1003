//! The closed strategy space: the action/condition vocabulary and the
//! permitted control-flow constructs. Every parsed plan and every repair
//! proposal is validated against this space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Schema for one leaf (action or condition): its name and required params.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafSchema {
    pub name: String,
    pub params: Vec<String>,
    pub doc: String,
}

impl LeafSchema {
    fn new(name: &str, params: &[&str], doc: &str) -> Self {
        LeafSchema {
            name: name.to_string(),
            params: params.iter().map(|p| p.to_string()).collect(),
            doc: doc.to_string(),
        }
    }
}

/// Control-flow kinds permitted in plans (the logic space).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogicKind {
    Sequence,
    Fallback,
    Parallel,
    Inverter,
    Repeat,
    RetryUntilSuccessful,
}

impl LogicKind {
    pub fn all() -> &'static [LogicKind] {
        &[
            LogicKind::Sequence,
            LogicKind::Fallback,
            LogicKind::Parallel,
            LogicKind::Inverter,
            LogicKind::Repeat,
            LogicKind::RetryUntilSuccessful,
        ]
    }

    pub fn tag(&self) -> &'static str {
        match self {
            LogicKind::Sequence => "Sequence",
            LogicKind::Fallback => "Fallback",
            LogicKind::Parallel => "Parallel",
            LogicKind::Inverter => "Inverter",
            LogicKind::Repeat => "Repeat",
            LogicKind::RetryUntilSuccessful => "RetryUntilSuccessful",
        }
    }
}

/// Action space plus logic space. The action space mirrors exactly what the
/// simulator registers; the logic space mirrors what the tree executor
/// supports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySpace {
    pub actions: BTreeMap<String, LeafSchema>,
    pub conditions: BTreeMap<String, LeafSchema>,
    pub logic: Vec<LogicKind>,
}

impl StrategySpace {
    /// The drone vocabulary.
    pub fn drone_default() -> Self {
        let actions = [
            LeafSchema::new("Takeoff", &["height"], "Ascend vertically to the given height in meters."),
            LeafSchema::new("Land", &[], "Descend to the ground and disarm."),
            LeafSchema::new(
                "FlyToCoordinates",
                &["x", "y", "z"],
                "Fly in a straight line to the absolute NWU coordinate (x, y, z).",
            ),
            LeafSchema::new("MoveForward", &["distance"], "Move the given distance along the current heading."),
            LeafSchema::new("MoveBackward", &["distance"], "Move the given distance against the current heading."),
            LeafSchema::new("MoveLeft", &["distance"], "Move the given distance to the left of the current heading."),
            LeafSchema::new("MoveRight", &["distance"], "Move the given distance to the right of the current heading."),
            LeafSchema::new("TurnLeft", &["angle"], "Yaw counterclockwise by the given angle in degrees."),
            LeafSchema::new("TurnRight", &["angle"], "Yaw clockwise by the given angle in degrees."),
            LeafSchema::new(
                "ForwardDetect",
                &["target"],
                "Run the forward camera detector for the target object kind; fails when nothing is seen.",
            ),
            LeafSchema::new(
                "DownwardDetect",
                &["target"],
                "Run the downward camera detector for the target object kind; fails when nothing is seen.",
            ),
            LeafSchema::new("Hover", &["duration"], "Hold the current pose for the given duration in seconds."),
        ];
        let conditions = [
            LeafSchema::new(
                "ObjectDetected",
                &["target"],
                "True when the most recent detection result contains the target object kind.",
            ),
            LeafSchema::new(
                "AtCoordinates",
                &["x", "y", "z", "tol"],
                "True when the drone is within tol meters of the NWU coordinate (x, y, z).",
            ),
            LeafSchema::new("BatteryOk", &[], "True while the battery level is nominal."),
        ];
        StrategySpace {
            actions: actions.into_iter().map(|s| (s.name.clone(), s)).collect(),
            conditions: conditions.into_iter().map(|s| (s.name.clone(), s)).collect(),
            logic: LogicKind::all().to_vec(),
        }
    }

    pub fn is_action(&self, name: &str) -> bool {
        self.actions.contains_key(name)
    }

    pub fn is_condition(&self, name: &str) -> bool {
        self.conditions.contains_key(name)
    }

    pub fn leaf_schema(&self, name: &str) -> Option<&LeafSchema> {
        self.actions.get(name).or_else(|| self.conditions.get(name))
    }

    /// Motion actions alter pose only; capture actions attach observations.
    pub fn is_capture_action(&self, name: &str) -> bool {
        matches!(name, "ForwardDetect" | "DownwardDetect")
    }

    /// One-line functional documentation for every node type, fed to the
    /// plan-generation prompt.
    pub fn node_docs(&self) -> String {
        let mut out = String::new();
        out.push_str("Control nodes:\n");
        for kind in &self.logic {
            let doc = match kind {
                LogicKind::Sequence => "runs children in order, fails at the first failing child",
                LogicKind::Fallback => "runs children in order, succeeds at the first succeeding child",
                LogicKind::Parallel => "runs children together, succeeds when success_threshold children succeed",
                LogicKind::Inverter => "inverts the result of its single child",
                LogicKind::Repeat => "repeats its single child num_cycles times",
                LogicKind::RetryUntilSuccessful => "retries its single child up to num_attempts times until it succeeds",
            };
            out.push_str(&format!("- <{}>: {}\n", kind.tag(), doc));
        }
        out.push_str("Action nodes:\n");
        for schema in self.actions.values() {
            out.push_str(&format!("- <{} {}/>: {}\n", schema.name, attr_list(&schema.params), schema.doc));
        }
        out.push_str("Condition nodes:\n");
        for schema in self.conditions.values() {
            out.push_str(&format!("- <{} {}/>: {}\n", schema.name, attr_list(&schema.params), schema.doc));
        }
        out
    }
}

fn attr_list(params: &[String]) -> String {
    params
        .iter()
        .map(|p| format!("{}=\"..\"", p))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocabulary_is_complete() {
        let space = StrategySpace::drone_default();
        assert_eq!(space.actions.len(), 12);
        assert_eq!(space.conditions.len(), 3);
        assert!(space.is_action("Takeoff"));
        assert!(space.is_condition("BatteryOk"));
        assert!(!space.is_action("Teleport"));
    }

    #[test]
    fn capture_actions_are_the_detect_pair() {
        let space = StrategySpace::drone_default();
        let captures: Vec<_> = space
            .actions
            .keys()
            .filter(|n| space.is_capture_action(n))
            .collect();
        assert_eq!(captures, vec!["DownwardDetect", "ForwardDetect"]);
    }

    #[test]
    fn node_docs_mention_every_leaf() {
        let space = StrategySpace::drone_default();
        let docs = space.node_docs();
        for name in space.actions.keys().chain(space.conditions.keys()) {
            assert!(docs.contains(name.as_str()), "missing doc line for {name}");
        }
    }
}
