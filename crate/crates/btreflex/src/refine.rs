//! Hierarchical plan analysis (Action / Logic / Mission layers), generation
//! of strategy-space-constrained reflective experiences, and mechanical
//! application of node-level modifications to a behavior tree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::{parse_bt, BehaviorTree, NodeId, NodeKind};
use crate::capture::AnnotatedStateSequence;
use crate::cmsr::fmt_num;
use crate::eval::{Check, EvaluationVerdict, Outcome, TaskGoalSpec, Waypoint};
use crate::experience::ExperienceBase;
use crate::llm::{parse_json_response, ChatRequest, Gateway, LlmError};
use crate::strategy::StrategySpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Action,
    Logic,
    Mission,
}

/// Flaw classes with deterministic template repairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlawClass {
    MissingDependency,
    InvalidControlFlow,
    WrongTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlawReport {
    pub layer: Layer,
    pub node_id: Option<NodeId>,
    pub description: String,
    /// Link back to the fault locus in the annotated sequence.
    pub evidence: Option<usize>,
    pub class: Option<FlawClass>,
    #[serde(default)]
    pub context: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Flaws {
    pub mission: Vec<FlawReport>,
    pub logic: Vec<FlawReport>,
    pub action: Vec<FlawReport>,
}

impl Flaws {
    pub fn is_empty(&self) -> bool {
        self.mission.is_empty() && self.logic.is_empty() && self.action.is_empty()
    }

    /// Coarse-to-fine application order.
    pub fn ordered(&self) -> Vec<&FlawReport> {
        self.mission.iter().chain(&self.logic).chain(&self.action).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepairVerb {
    InsertNode,
    DeleteNode,
    ReplaceNode,
    ReorderChildren,
    WrapWithDecorator,
    RetargetParams,
}

/// Serializable node fragment used as repair payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTemplate {
    pub tag: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub children: Vec<NodeTemplate>,
}

impl NodeTemplate {
    pub fn leaf(tag: &str, params: &[(&str, &str)]) -> Self {
        NodeTemplate {
            tag: tag.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            children: Vec::new(),
        }
    }

    pub fn control(tag: &str) -> Self {
        NodeTemplate { tag: tag.to_string(), params: BTreeMap::new(), children: Vec::new() }
    }

    pub fn with_children(mut self, children: Vec<NodeTemplate>) -> Self {
        self.children = children;
        self
    }

    fn to_xml(&self, depth: usize, out: &mut String) {
        let indent = "  ".repeat(depth);
        let attrs: String = self
            .params
            .iter()
            .map(|(k, v)| format!(" {}=\"{}\"", k, escape_attr(v)))
            .collect();
        if self.children.is_empty() {
            out.push_str(&format!("{}<{}{}/>\n", indent, self.tag, attrs));
        } else {
            out.push_str(&format!("{}<{}{}>\n", indent, self.tag, attrs));
            for child in &self.children {
                child.to_xml(depth + 1, out);
            }
            out.push_str(&format!("{}</{}>\n", indent, self.tag));
        }
    }

    fn tags(&self) -> Vec<&str> {
        let mut out = vec![self.tag.as_str()];
        for child in &self.children {
            out.extend(child.tags());
        }
        out
    }
}

fn escape_attr(value: &str) -> String {
    value
        .replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOp {
    pub verb: RepairVerb,
    /// Node id in the tree being repaired.
    pub anchor: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<NodeTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
}

/// Structured experience ⟨stratum, operation + rationale⟩ tied to a task unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectiveExperience {
    pub stratum: Layer,
    pub operation: RepairOp,
    pub rationale: String,
    pub task_unit: u32,
    pub instruction: String,
    pub iteration: u32,
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("no flaw found despite failure verdict")]
    NoFlawFound,
    #[error("repair anchor {0} not found in tree")]
    AnchorNotFound(u32),
    #[error("repair produced an invalid tree: {0}")]
    ValidationFailure(String),
    #[error("no valid repair after 3 attempts: {0}")]
    UnconstructibleRepair(String),
    #[error("operation references names outside the strategy space: {0}")]
    OutsideStrategySpace(String),
    #[error(transparent)]
    Gateway(#[from] LlmError),
    #[error("experience persistence failed: {0}")]
    Persistence(String),
}

// ---------------------------------------------------------------------------
// Strategy-space validation
// ---------------------------------------------------------------------------

fn is_control_tag(tag: &str, space: &StrategySpace) -> bool {
    space.logic.iter().any(|k| k.tag() == tag)
}

pub fn validate_op(op: &RepairOp, space: &StrategySpace) -> Result<(), RefineError> {
    if let Some(payload) = &op.payload {
        for tag in payload.tags() {
            if !is_control_tag(tag, space) && space.leaf_schema(tag).is_none() {
                return Err(RefineError::OutsideStrategySpace(tag.to_string()));
            }
        }
    }
    let needs_payload = matches!(
        op.verb,
        RepairVerb::InsertNode | RepairVerb::ReplaceNode | RepairVerb::WrapWithDecorator
    );
    if needs_payload && op.payload.is_none() {
        return Err(RefineError::OutsideStrategySpace(format!(
            "{:?} requires a payload node",
            op.verb
        )));
    }
    if op.verb == RepairVerb::RetargetParams && op.params.is_none() {
        return Err(RefineError::OutsideStrategySpace(
            "RetargetParams requires a params map".to_string(),
        ));
    }
    if op.verb == RepairVerb::ReorderChildren && op.order.is_none() {
        return Err(RefineError::OutsideStrategySpace(
            "ReorderChildren requires an order permutation".to_string(),
        ));
    }
    if op.verb == RepairVerb::WrapWithDecorator {
        let tag = op.payload.as_ref().map(|p| p.tag.as_str()).unwrap_or("");
        if !matches!(tag, "Inverter" | "Repeat" | "RetryUntilSuccessful") {
            return Err(RefineError::OutsideStrategySpace(format!(
                "WrapWithDecorator payload must be a decorator, got {}",
                tag
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tree <-> template
// ---------------------------------------------------------------------------

pub fn tree_to_template(tree: &BehaviorTree, id: NodeId) -> NodeTemplate {
    let node = tree.node(id);
    let mut params = BTreeMap::new();
    match &node.kind {
        NodeKind::Parallel { success_threshold } => {
            params.insert("success_threshold".to_string(), success_threshold.to_string());
        }
        NodeKind::Decorator(crate::bt::DecoratorPolicy::Repeat(n)) => {
            params.insert("num_cycles".to_string(), n.to_string());
        }
        NodeKind::Decorator(crate::bt::DecoratorPolicy::RetryUntilSuccessful(n)) => {
            params.insert("num_attempts".to_string(), n.to_string());
        }
        NodeKind::Action { params: p, .. } | NodeKind::Condition { params: p, .. } => {
            for (k, v) in p {
                params.insert(k.clone(), v.render());
            }
        }
        _ => {}
    }
    NodeTemplate {
        tag: node.kind.tag(),
        params,
        children: node.children.iter().map(|c| tree_to_template(tree, *c)).collect(),
    }
}

pub fn template_to_xml(root: &NodeTemplate) -> String {
    let mut out = String::from("<BehaviorTree>\n");
    root.to_xml(1, &mut out);
    out.push_str("</BehaviorTree>\n");
    out
}

fn parse_path(path: &str) -> Vec<usize> {
    path.split('/').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap_or(0)).collect()
}

fn tpl_at<'a>(root: &'a mut NodeTemplate, path: &[usize]) -> Option<&'a mut NodeTemplate> {
    let mut at = root;
    for &i in path {
        at = at.children.get_mut(i)?;
    }
    Some(at)
}

// ---------------------------------------------------------------------------
// Application
// ---------------------------------------------------------------------------

/// Apply one experience, returning a NEW validated tree; the original is
/// untouched and any invalid result is rejected atomically.
pub fn apply_experience(
    tree: &BehaviorTree,
    e: &ReflectiveExperience,
    space: &StrategySpace,
) -> Result<BehaviorTree, RefineError> {
    validate_op(&e.operation, space)?;
    let op = &e.operation;
    let anchor = NodeId(op.anchor);
    if !tree.node_exists(anchor) {
        return Err(RefineError::AnchorNotFound(op.anchor));
    }
    let path_str = tree.path_of(anchor).ok_or(RefineError::AnchorNotFound(op.anchor))?;
    let path = parse_path(&path_str);
    let mut root = tree_to_template(tree, tree.root);

    match op.verb {
        RepairVerb::InsertNode => {
            let (parent_path, idx) = path
                .split_last()
                .map(|(last, rest)| (rest, *last))
                .ok_or_else(|| {
                    RefineError::ValidationFailure("cannot insert a sibling of the root".to_string())
                })?;
            let parent = tpl_at(&mut root, parent_path)
                .ok_or(RefineError::AnchorNotFound(op.anchor))?;
            parent.children.insert(idx, op.payload.clone().unwrap());
        }
        RepairVerb::DeleteNode => {
            let (parent_path, idx) = path
                .split_last()
                .map(|(last, rest)| (rest, *last))
                .ok_or_else(|| {
                    RefineError::ValidationFailure("cannot delete the root node".to_string())
                })?;
            let parent = tpl_at(&mut root, parent_path)
                .ok_or(RefineError::AnchorNotFound(op.anchor))?;
            parent.children.remove(idx);
        }
        RepairVerb::ReplaceNode => {
            let target = tpl_at(&mut root, &path).ok_or(RefineError::AnchorNotFound(op.anchor))?;
            let payload = op.payload.clone().unwrap();
            if payload.children.is_empty() && !target.children.is_empty() {
                // Composite kind swap: children stay in place.
                target.tag = payload.tag;
                target.params = payload.params;
            } else {
                *target = payload;
            }
        }
        RepairVerb::ReorderChildren => {
            let target = tpl_at(&mut root, &path).ok_or(RefineError::AnchorNotFound(op.anchor))?;
            let order = op.order.clone().unwrap();
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..target.children.len()).collect::<Vec<_>>() {
                return Err(RefineError::ValidationFailure(format!(
                    "order {:?} is not a permutation of {} children",
                    order,
                    target.children.len()
                )));
            }
            let old = std::mem::take(&mut target.children);
            let mut slots: Vec<Option<NodeTemplate>> = old.into_iter().map(Some).collect();
            target.children = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        }
        RepairVerb::WrapWithDecorator => {
            let target = tpl_at(&mut root, &path).ok_or(RefineError::AnchorNotFound(op.anchor))?;
            let inner = target.clone();
            let mut wrapper = op.payload.clone().unwrap();
            wrapper.children = vec![inner];
            *target = wrapper;
        }
        RepairVerb::RetargetParams => {
            let target = tpl_at(&mut root, &path).ok_or(RefineError::AnchorNotFound(op.anchor))?;
            if space.leaf_schema(&target.tag).is_none() {
                return Err(RefineError::ValidationFailure(format!(
                    "RetargetParams anchor {} is not a leaf",
                    target.tag
                )));
            }
            for (k, v) in op.params.clone().unwrap() {
                target.params.insert(k, v);
            }
        }
    }

    let xml = template_to_xml(&root);
    parse_bt(&xml, space).map_err(|e| RefineError::ValidationFailure(e.to_string()))
}

// ---------------------------------------------------------------------------
// Hierarchical analysis
// ---------------------------------------------------------------------------

fn subtree_contains_leaf_named(tree: &BehaviorTree, id: NodeId, name: &str) -> bool {
    let node = tree.node(id);
    if node.kind.leaf_name() == Some(name) {
        return true;
    }
    node.children.iter().any(|c| subtree_contains_leaf_named(tree, *c, name))
}

fn has_retry_ancestor(tree: &BehaviorTree, id: NodeId) -> bool {
    let mut at = id;
    while let Some(parent) = tree.parent_of(at) {
        if matches!(
            tree.node(parent).kind,
            NodeKind::Decorator(crate::bt::DecoratorPolicy::Repeat(_))
                | NodeKind::Decorator(crate::bt::DecoratorPolicy::RetryUntilSuccessful(_))
        ) {
            return true;
        }
        at = parent;
    }
    false
}

/// Sequence ancestor with a later sibling offering the same action: the
/// control-flow should have been a Fallback.
fn sequence_with_alternative(tree: &BehaviorTree, leaf: NodeId, name: &str) -> Option<NodeId> {
    let mut child = leaf;
    while let Some(parent) = tree.parent_of(child) {
        if tree.node(parent).kind == NodeKind::Sequence {
            let siblings = &tree.node(parent).children;
            let idx = siblings.iter().position(|c| *c == child)?;
            if siblings[idx + 1..]
                .iter()
                .any(|sib| subtree_contains_leaf_named(tree, *sib, name))
            {
                return Some(parent);
            }
        }
        child = parent;
    }
    None
}

fn plan_flyto_targets(tree: &BehaviorTree) -> Vec<(NodeId, f64, f64)> {
    tree.leaves_in_order()
        .into_iter()
        .filter_map(|id| {
            let kind = &tree.node(id).kind;
            if kind.leaf_name() != Some("FlyToCoordinates") {
                return None;
            }
            let params = kind.leaf_params()?;
            let get = |k: &str| params.get(k).and_then(|v| v.render().parse::<f64>().ok());
            Some((id, get("x")?, get("y")?))
        })
        .collect()
}

/// Single-step layer analysis: deterministic matchers for the two structural
/// error classes (missing search dependency, Sequence-where-Fallback), plus a
/// mission-layer waypoint mismatch matcher.
pub fn hierarchical_analysis(
    tree: &BehaviorTree,
    verdict: &EvaluationVerdict,
    seq: &AnnotatedStateSequence,
    goal: Option<&TaskGoalSpec>,
) -> Result<Flaws, RefineError> {
    assert!(verdict.outcome != Outcome::Success, "analysis needs a failure verdict");
    let mut flaws = Flaws::default();
    let mut logic_anchors: Vec<NodeId> = Vec::new();
    let mut seen_failed: Vec<NodeId> = Vec::new();

    for (i, step) in seq.items.iter().enumerate() {
        if step.action.outcome.failure_tag().is_none() {
            continue;
        }
        let leaf = step.action.node_id;
        if seen_failed.contains(&leaf) {
            continue;
        }
        seen_failed.push(leaf);
        let name = step.action.name.as_str();

        if let Some(seq_node) = sequence_with_alternative(tree, leaf, name) {
            if !logic_anchors.contains(&seq_node) {
                logic_anchors.push(seq_node);
                flaws.logic.push(FlawReport {
                    layer: Layer::Logic,
                    node_id: Some(seq_node),
                    description: format!(
                        "Using Sequence where Fallback required: {} fails but an alternative providing {} follows in the same Sequence",
                        name, name
                    ),
                    evidence: Some(i),
                    class: Some(FlawClass::InvalidControlFlow),
                    context: BTreeMap::new(),
                });
            }
            continue;
        }

        if name.ends_with("Detect") && !has_retry_ancestor(tree, leaf) {
            let target = step.action.params.get("target").cloned().unwrap_or_default();
            let mut context = BTreeMap::new();
            context.insert("detect".to_string(), name.to_string());
            context.insert("target".to_string(), target.clone());
            flaws.action.push(FlawReport {
                layer: Layer::Action,
                node_id: Some(leaf),
                description: format!(
                    "Lack actions for searching objectives: {} for {} runs once with no search structure",
                    name, target
                ),
                evidence: Some(i),
                class: Some(FlawClass::MissingDependency),
                context,
            });
        }
    }

    // Mission layer: plan waypoints vs goal waypoints.
    if let Some(goal) = goal {
        if matches!(verdict.cause.as_deref(), Some("waypoint_order") | Some("terminal_condition")) {
            let targets = plan_flyto_targets(tree);
            let mut goal_points: Vec<(f64, f64, f64)> = Vec::new();
            for check in &goal.checks {
                match check {
                    Check::VisitWaypointsInOrder { waypoints, tol } => {
                        for Waypoint { x, y, .. } in waypoints {
                            goal_points.push((*x, *y, *tol));
                        }
                    }
                    Check::TerminalCondition { x: Some(x), y: Some(y), tol, .. } => {
                        goal_points.push((*x, *y, *tol));
                    }
                    _ => {}
                }
            }
            for (gx, gy, tol) in &goal_points {
                let covered = targets
                    .iter()
                    .any(|(_, x, y)| ((x - gx).powi(2) + (y - gy).powi(2)).sqrt() <= *tol);
                if covered {
                    continue;
                }
                // Retarget the stray waypoint closest to the missing goal point,
                // skipping nodes that already serve another goal point.
                let stray = targets
                    .iter()
                    .filter(|(_, x, y)| {
                        !goal_points.iter().any(|(ax, ay, atol)| {
                            ((x - ax).powi(2) + (y - ay).powi(2)).sqrt() <= *atol
                        })
                    })
                    .min_by(|a, b| {
                        let da = (a.1 - gx).powi(2) + (a.2 - gy).powi(2);
                        let db = (b.1 - gx).powi(2) + (b.2 - gy).powi(2);
                        da.partial_cmp(&db).unwrap()
                    });
                if let Some((node_id, _, _)) = stray {
                    let mut context = BTreeMap::new();
                    context.insert("x".to_string(), fmt_num(*gx));
                    context.insert("y".to_string(), fmt_num(*gy));
                    flaws.mission.push(FlawReport {
                        layer: Layer::Mission,
                        node_id: Some(*node_id),
                        description: format!(
                            "Plan waypoints do not match the instruction: required point ({}, {}) is never targeted",
                            fmt_num(*gx),
                            fmt_num(*gy)
                        ),
                        evidence: verdict.fault_action_index,
                        class: Some(FlawClass::WrongTarget),
                        context,
                    });
                }
            }
        }
    }

    if flaws.is_empty() {
        return Err(RefineError::NoFlawFound);
    }
    Ok(flaws)
}

// ---------------------------------------------------------------------------
// Experience generation
// ---------------------------------------------------------------------------

fn deterministic_repair(flaw: &FlawReport) -> Option<(RepairOp, String)> {
    let anchor = flaw.node_id?.0;
    match flaw.class? {
        FlawClass::InvalidControlFlow => Some((
            RepairOp {
                verb: RepairVerb::ReplaceNode,
                anchor,
                payload: Some(NodeTemplate::control("Fallback")),
                params: None,
                order: None,
            },
            "Replace Sequence with Fallback: this allows the drone to attempt different \
strategies until one of them succeeds instead of aborting at the first failure."
                .to_string(),
        )),
        FlawClass::MissingDependency => {
            let detect = flaw.context.get("detect").cloned()?;
            let target = flaw.context.get("target").cloned()?;
            let search_step = if detect == "DownwardDetect" {
                NodeTemplate::leaf("MoveForward", &[("distance", "0.5")])
            } else {
                NodeTemplate::leaf("TurnLeft", &[("angle", "45")])
            };
            let payload = NodeTemplate::leaf("RetryUntilSuccessful", &[("num_attempts", "8")])
                .with_children(vec![NodeTemplate::control("Sequence").with_children(vec![
                    search_step,
                    NodeTemplate::leaf(&detect, &[("target", target.as_str())]),
                ])]);
            Some((
                RepairOp {
                    verb: RepairVerb::InsertNode,
                    anchor,
                    payload: Some(payload),
                    params: None,
                    order: None,
                },
                format!(
                    "Insert a search loop before {}: sweep the sensor until the {} enters \
its field of view, so the detection no longer depends on luck of the initial pose.",
                    detect, target
                ),
            ))
        }
        FlawClass::WrongTarget => {
            let x = flaw.context.get("x").cloned()?;
            let y = flaw.context.get("y").cloned()?;
            let mut params = BTreeMap::new();
            params.insert("x".to_string(), x.clone());
            params.insert("y".to_string(), y.clone());
            Some((
                RepairOp {
                    verb: RepairVerb::RetargetParams,
                    anchor,
                    payload: None,
                    params: Some(params),
                    order: None,
                },
                format!(
                    "Retarget the waypoint to ({}, {}) as required by the instruction.",
                    x, y
                ),
            ))
        }
    }
}

const REPAIR_SYSTEM: &str = "You repair drone behavior tree plans. Reply with one \
JSON object {\"verb\": one of InsertNode|DeleteNode|ReplaceNode|ReorderChildren|\
WrapWithDecorator|RetargetParams, \"anchor\": integer node id, \"payload\": optional \
node template {tag, params, children}, \"params\": optional map, \"order\": optional \
list, \"rationale\": string} and nothing else. Use only documented node types.";

/// Produce a reflective experience for a flaw. The two structural classes
/// (and waypoint retargets) repair deterministically; everything else asks
/// the gateway, re-prompting on validation failures up to 3 attempts.
pub fn generate_experience(
    flaw: &FlawReport,
    tree: &BehaviorTree,
    space: &StrategySpace,
    gateway: Option<&mut Gateway>,
    task_unit: u32,
    instruction: &str,
    iteration: u32,
) -> Result<ReflectiveExperience, RefineError> {
    if let Some((operation, rationale)) = deterministic_repair(flaw) {
        validate_op(&operation, space)?;
        return Ok(ReflectiveExperience {
            stratum: flaw.layer,
            operation,
            rationale,
            task_unit,
            instruction: instruction.to_string(),
            iteration,
        });
    }
    let gateway = gateway.ok_or_else(|| {
        RefineError::UnconstructibleRepair(format!(
            "no deterministic template for flaw and no gateway configured: {}",
            flaw.description
        ))
    })?;
    let base_prompt = format!(
        "Node types:\n{}\nCurrent plan (node ids in document order starting at 0):\n{}\nFlaw ({:?} layer): {}\nPropose one repair operation.",
        space.node_docs(),
        crate::bt::serialize_bt(tree),
        flaw.layer,
        flaw.description
    );
    let mut request = ChatRequest::user(REPAIR_SYSTEM, base_prompt);
    let mut last_err = String::new();
    for _ in 0..3 {
        let text = gateway.send(&request)?;
        let parsed: Result<(RepairOp, String), String> = parse_json_response(&text).and_then(|v| {
            let rationale = v["rationale"].as_str().unwrap_or_default().to_string();
            if rationale.is_empty() {
                return Err("rationale must be non-empty".to_string());
            }
            let op: RepairOp =
                serde_json::from_value(v.clone()).map_err(|e| format!("bad operation: {}", e))?;
            Ok((op, rationale))
        });
        let violation = match parsed {
            Ok((op, rationale)) => {
                let check = validate_op(&op, space).err().map(|e| e.to_string()).or_else(|| {
                    if tree.node_exists(NodeId(op.anchor)) {
                        None
                    } else {
                        Some(format!("anchor {} does not exist in the plan", op.anchor))
                    }
                });
                match check {
                    None => {
                        return Ok(ReflectiveExperience {
                            stratum: flaw.layer,
                            operation: op,
                            rationale,
                            task_unit,
                            instruction: instruction.to_string(),
                            iteration,
                        })
                    }
                    Some(v) => v,
                }
            }
            Err(e) => e,
        };
        last_err = violation.clone();
        request.messages.push(crate::llm::ChatMessage { role: "assistant".to_string(), content: text });
        request.messages.push(crate::llm::ChatMessage {
            role: "user".to_string(),
            content: format!("That proposal is invalid: {}. Propose a corrected operation.", violation),
        });
    }
    Err(RefineError::UnconstructibleRepair(last_err))
}

// ---------------------------------------------------------------------------
// One refinement iteration
// ---------------------------------------------------------------------------

/// Analysis → per-flaw experience generation → coarse-to-fine application
/// (Mission, then Logic, then Action). Partial application is allowed:
/// experiences whose application fails are still returned and stored.
pub fn refine_iteration(
    tree: &BehaviorTree,
    verdict: &EvaluationVerdict,
    seq: &AnnotatedStateSequence,
    goal: Option<&TaskGoalSpec>,
    space: &StrategySpace,
    exp_base: Option<&mut ExperienceBase>,
    mut gateway: Option<&mut Gateway>,
    task_unit: u32,
    instruction: &str,
    iteration: u32,
) -> Result<(BehaviorTree, Vec<ReflectiveExperience>), RefineError> {
    let flaws = match hierarchical_analysis(tree, verdict, seq, goal) {
        Ok(f) => f,
        Err(RefineError::NoFlawFound) => return Ok((tree.clone(), Vec::new())),
        Err(e) => return Err(e),
    };
    let mut current = tree.clone();
    let mut experiences = Vec::new();
    for flaw in flaws.ordered() {
        let exp = match generate_experience(
            flaw,
            &current,
            space,
            gateway.as_deref_mut(),
            task_unit,
            instruction,
            iteration,
        ) {
            Ok(e) => e,
            Err(RefineError::Gateway(g)) => return Err(RefineError::Gateway(g)),
            Err(_) => continue,
        };
        if let Ok(next) = apply_experience(&current, &exp, space) {
            current = next;
        }
        experiences.push(exp);
    }
    if let Some(base) = exp_base {
        base.append(&experiences).map_err(|e| RefineError::Persistence(e.to_string()))?;
    }
    Ok((current, experiences))
}
