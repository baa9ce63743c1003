//! XML behavior trees: parsing, validation, canonical serialization,
//! structural diffing, and tick execution with memory semantics.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::strategy::StrategySpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoratorPolicy {
    Inverter,
    Repeat(u32),
    RetryUntilSuccessful(u32),
}

/// A parameter value is either a literal string or a `{key}` blackboard
/// reference resolved at tick time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamValue {
    Literal(String),
    BlackboardRef(String),
}

impl ParamValue {
    pub fn from_attr(raw: &str) -> Self {
        let trimmed = raw.trim();
        if trimmed.len() >= 2 && trimmed.starts_with('{') && trimmed.ends_with('}') {
            ParamValue::BlackboardRef(trimmed[1..trimmed.len() - 1].to_string())
        } else {
            ParamValue::Literal(raw.to_string())
        }
    }

    pub fn render(&self) -> String {
        match self {
            ParamValue::Literal(s) => s.clone(),
            ParamValue::BlackboardRef(k) => format!("{{{}}}", k),
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Sequence,
    Fallback,
    Parallel { success_threshold: usize },
    Decorator(DecoratorPolicy),
    Action { name: String, params: Params },
    Condition { name: String, params: Params },
}

impl NodeKind {
    pub fn is_leaf(&self) -> bool {
        matches!(self, NodeKind::Action { .. } | NodeKind::Condition { .. })
    }

    /// XML tag for this kind.
    pub fn tag(&self) -> String {
        match self {
            NodeKind::Sequence => "Sequence".to_string(),
            NodeKind::Fallback => "Fallback".to_string(),
            NodeKind::Parallel { .. } => "Parallel".to_string(),
            NodeKind::Decorator(DecoratorPolicy::Inverter) => "Inverter".to_string(),
            NodeKind::Decorator(DecoratorPolicy::Repeat(_)) => "Repeat".to_string(),
            NodeKind::Decorator(DecoratorPolicy::RetryUntilSuccessful(_)) => {
                "RetryUntilSuccessful".to_string()
            }
            NodeKind::Action { name, .. } | NodeKind::Condition { name, .. } => name.clone(),
        }
    }

    pub fn leaf_name(&self) -> Option<&str> {
        match self {
            NodeKind::Action { name, .. } | NodeKind::Condition { name, .. } => Some(name),
            _ => None,
        }
    }

    pub fn leaf_params(&self) -> Option<&Params> {
        match self {
            NodeKind::Action { params, .. } | NodeKind::Condition { params, .. } => Some(params),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BehaviorTree {
    pub root: NodeId,
    pub nodes: Vec<Node>,
    pub source_digest: String,
}

#[derive(Debug, Error)]
pub enum BtError {
    #[error("xml syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown action or condition: {0}")]
    UnknownAction(String),
    #[error("blackboard key not set: {0}")]
    BlackboardKey(String),
    #[error("executor fault: {0}")]
    ExecutorFault(String),
    #[error("tick budget must be at least 1")]
    InvalidBudget,
    #[error("tree validation failed: {0}")]
    Validation(String),
}

// ---------------------------------------------------------------------------
// Blackboard
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BbValue {
    Number(f64),
    Text(String),
    Pose { x: f64, y: f64, z: f64, yaw: f64 },
}

impl BbValue {
    fn render(&self) -> String {
        match self {
            BbValue::Number(n) => format!("{}", n),
            BbValue::Text(s) => s.clone(),
            BbValue::Pose { x, y, z, yaw } => format!("{},{},{},{}", x, y, z, yaw),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Blackboard {
    pub entries: HashMap<String, BbValue>,
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: BbValue) {
        self.entries.insert(key.into(), value);
    }

    /// Resolve all parameter values to plain strings, erroring on any
    /// `{key}` reference that is not set.
    pub fn resolve(&self, params: &Params) -> Result<BTreeMap<String, String>, BtError> {
        let mut out = BTreeMap::new();
        for (name, value) in params {
            let rendered = match value {
                ParamValue::Literal(s) => s.clone(),
                ParamValue::BlackboardRef(key) => self
                    .entries
                    .get(key)
                    .ok_or_else(|| BtError::BlackboardKey(key.clone()))?
                    .render(),
            };
            out.insert(name.clone(), rendered);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

impl BehaviorTree {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn node_exists(&self, id: NodeId) -> bool {
        (id.0 as usize) < self.nodes.len()
    }

    /// Child-index path from the root to `id`, e.g. `/0/2`.
    pub fn path_of(&self, id: NodeId) -> Option<String> {
        fn walk(tree: &BehaviorTree, at: NodeId, target: NodeId, path: &mut Vec<usize>) -> bool {
            if at == target {
                return true;
            }
            for (i, child) in tree.node(at).children.iter().enumerate() {
                path.push(i);
                if walk(tree, *child, target, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut path = Vec::new();
        if walk(self, self.root, id, &mut path) {
            if path.is_empty() {
                Some("/".to_string())
            } else {
                Some(path.iter().map(|i| format!("/{}", i)).collect())
            }
        } else {
            None
        }
    }

    pub fn parent_of(&self, id: NodeId) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.children.contains(&id))
            .map(|n| n.id)
    }

    /// Leaf node ids in document order.
    pub fn leaves_in_order(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        fn walk(tree: &BehaviorTree, at: NodeId, out: &mut Vec<NodeId>) {
            let node = tree.node(at);
            if node.kind.is_leaf() {
                out.push(at);
            }
            for child in &node.children {
                walk(tree, *child, out);
            }
        }
        walk(self, self.root, &mut out);
        out
    }

    pub fn validate(&self, space: &StrategySpace) -> Result<(), BtError> {
        if self.nodes.is_empty() {
            return Err(BtError::Validation("empty tree".into()));
        }
        if !self.node_exists(self.root) {
            return Err(BtError::Validation("root id out of range".into()));
        }
        let mut seen = vec![0usize; self.nodes.len()];
        let mut stack = vec![self.root];
        let mut visited = vec![false; self.nodes.len()];
        while let Some(id) = stack.pop() {
            if visited[id.0 as usize] {
                return Err(BtError::Validation(format!("cycle through node {}", id.0)));
            }
            visited[id.0 as usize] = true;
            let node = self.node(id);
            for child in &node.children {
                if !self.node_exists(*child) {
                    return Err(BtError::Validation(format!("dangling child id {}", child.0)));
                }
                seen[child.0 as usize] += 1;
                if seen[child.0 as usize] > 1 {
                    return Err(BtError::Validation(format!("node {} has two parents", child.0)));
                }
                stack.push(*child);
            }
            match &node.kind {
                NodeKind::Action { name, .. } | NodeKind::Condition { name, .. } => {
                    if !node.children.is_empty() {
                        return Err(BtError::Validation(format!("leaf {} has children", name)));
                    }
                    if space.leaf_schema(name).is_none() {
                        return Err(BtError::UnknownAction(name.clone()));
                    }
                }
                NodeKind::Sequence | NodeKind::Fallback => {
                    if node.children.is_empty() {
                        return Err(BtError::Validation(format!(
                            "{} node with zero children",
                            node.kind.tag()
                        )));
                    }
                }
                NodeKind::Parallel { success_threshold } => {
                    if node.children.is_empty() {
                        return Err(BtError::Validation("Parallel node with zero children".into()));
                    }
                    if *success_threshold == 0 || *success_threshold > node.children.len() {
                        return Err(BtError::Validation(format!(
                            "Parallel success_threshold {} out of range 1..={}",
                            success_threshold,
                            node.children.len()
                        )));
                    }
                }
                NodeKind::Decorator(_) => {
                    if node.children.len() != 1 {
                        return Err(BtError::Validation(format!(
                            "{} must have exactly one child",
                            node.kind.tag()
                        )));
                    }
                }
            }
        }
        if seen[self.root.0 as usize] > 0 {
            return Err(BtError::Validation("root has a parent".into()));
        }
        Ok(())
    }

    /// Structural equality ignoring node ids and the source digest.
    pub fn structural_eq(&self, other: &BehaviorTree) -> bool {
        subtree_eq(self, self.root, other, other.root)
    }
}

pub(crate) fn subtree_eq(a: &BehaviorTree, a_id: NodeId, b: &BehaviorTree, b_id: NodeId) -> bool {
    let an = a.node(a_id);
    let bn = b.node(b_id);
    if an.kind != bn.kind || an.children.len() != bn.children.len() {
        return false;
    }
    an.children
        .iter()
        .zip(bn.children.iter())
        .all(|(x, y)| subtree_eq(a, *x, b, *y))
}

fn parse_count_attr(attrs: &BTreeMap<String, String>, key: &str, tag: &str) -> Result<u32, BtError> {
    let raw = attrs
        .get(key)
        .ok_or_else(|| BtError::Schema(format!("<{}> requires attribute {}", tag, key)))?;
    raw.parse::<u32>()
        .map_err(|_| BtError::Schema(format!("<{}> attribute {} must be a positive integer", tag, key)))
        .and_then(|n| {
            if n == 0 {
                Err(BtError::Schema(format!("<{}> attribute {} must be >= 1", tag, key)))
            } else {
                Ok(n)
            }
        })
}

/// Parse a strict-subset XML plan into a validated tree.
pub fn parse_bt(xml_text: &str, space: &StrategySpace) -> Result<BehaviorTree, BtError> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| BtError::Syntax(e.to_string()))?;
    let root_elem = doc.root_element();
    if root_elem.tag_name().name() != "BehaviorTree" {
        return Err(BtError::Schema(format!(
            "expected <BehaviorTree> root, found <{}>",
            root_elem.tag_name().name()
        )));
    }
    let plan_elems: Vec<_> = root_elem.children().filter(|c| c.is_element()).collect();
    if plan_elems.len() != 1 {
        return Err(BtError::Schema(format!(
            "<BehaviorTree> must contain exactly one plan element, found {}",
            plan_elems.len()
        )));
    }

    let mut nodes = Vec::new();
    let root = parse_element(&plan_elems[0], space, &mut nodes)?;
    let mut digest = Sha256::new();
    digest.update(xml_text.as_bytes());
    let tree = BehaviorTree {
        root,
        nodes,
        source_digest: format!("{:x}", digest.finalize()),
    };
    tree.validate(space)?;
    Ok(tree)
}

fn parse_element(
    elem: &roxmltree::Node,
    space: &StrategySpace,
    nodes: &mut Vec<Node>,
) -> Result<NodeId, BtError> {
    let tag = elem.tag_name().name().to_string();
    let mut attrs: BTreeMap<String, String> = BTreeMap::new();
    for attr in elem.attributes() {
        attrs.insert(attr.name().to_string(), attr.value().to_string());
    }
    let child_elems: Vec<_> = elem.children().filter(|c| c.is_element()).collect();

    let kind = match tag.as_str() {
        "Sequence" => NodeKind::Sequence,
        "Fallback" => NodeKind::Fallback,
        "Parallel" => {
            let threshold = match attrs.get("success_threshold") {
                Some(raw) => raw.parse::<usize>().map_err(|_| {
                    BtError::Schema("Parallel success_threshold must be an integer".into())
                })?,
                None => child_elems.len(),
            };
            NodeKind::Parallel {
                success_threshold: threshold,
            }
        }
        "Inverter" => NodeKind::Decorator(DecoratorPolicy::Inverter),
        "Repeat" => NodeKind::Decorator(DecoratorPolicy::Repeat(parse_count_attr(
            &attrs,
            "num_cycles",
            "Repeat",
        )?)),
        "RetryUntilSuccessful" => NodeKind::Decorator(DecoratorPolicy::RetryUntilSuccessful(
            parse_count_attr(&attrs, "num_attempts", "RetryUntilSuccessful")?,
        )),
        name => {
            let params: Params = attrs
                .iter()
                .map(|(k, v)| (k.clone(), ParamValue::from_attr(v)))
                .collect();
            if space.is_action(name) {
                NodeKind::Action {
                    name: name.to_string(),
                    params,
                }
            } else if space.is_condition(name) {
                NodeKind::Condition {
                    name: name.to_string(),
                    params,
                }
            } else {
                return Err(BtError::UnknownAction(name.to_string()));
            }
        }
    };

    if kind.is_leaf() && !child_elems.is_empty() {
        return Err(BtError::Schema(format!("leaf <{}> must not have children", tag)));
    }

    let mut children = Vec::new();
    for child in &child_elems {
        children.push(parse_element(child, space, nodes)?);
    }
    let id = NodeId(nodes.len() as u32);
    nodes.push(Node { id, kind, children });
    Ok(id)
}

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------

/// Canonical XML: 2-space indentation, sorted attributes, explicit defaults.
pub fn serialize_bt(tree: &BehaviorTree) -> String {
    let mut out = String::from("<BehaviorTree>\n");
    write_node(tree, tree.root, 1, &mut out);
    out.push_str("</BehaviorTree>\n");
    out
}

fn write_node(tree: &BehaviorTree, id: NodeId, depth: usize, out: &mut String) {
    let node = tree.node(id);
    let indent = "  ".repeat(depth);
    let tag = node.kind.tag();
    let attrs = match &node.kind {
        NodeKind::Parallel { success_threshold } => {
            format!(" success_threshold=\"{}\"", success_threshold)
        }
        NodeKind::Decorator(DecoratorPolicy::Repeat(n)) => format!(" num_cycles=\"{}\"", n),
        NodeKind::Decorator(DecoratorPolicy::RetryUntilSuccessful(n)) => {
            format!(" num_attempts=\"{}\"", n)
        }
        NodeKind::Action { params, .. } | NodeKind::Condition { params, .. } => params
            .iter()
            .map(|(k, v)| format!(" {}=\"{}\"", k, xml_escape(&v.render())))
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    };
    if node.children.is_empty() {
        out.push_str(&format!("{}<{}{}/>\n", indent, tag, attrs));
    } else {
        out.push_str(&format!("{}<{}{}>\n", indent, tag, attrs));
        for child in &node.children {
            write_node(tree, *child, depth + 1, out);
        }
        out.push_str(&format!("{}</{}>\n", indent, tag));
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

// ---------------------------------------------------------------------------
// Structural diff
// ---------------------------------------------------------------------------

/// One entry of a structural diff, serialized as a JSON patch list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum DiffEntry {
    Insert { path: String, node: String },
    Delete { path: String, node: String },
    Replace { path: String, from: String, to: String },
    Update { path: String, from: String, to: String },
}

/// Structural diff between two trees, minimal for single-node edits.
pub fn diff_bt(a: &BehaviorTree, b: &BehaviorTree) -> Vec<DiffEntry> {
    let mut out = Vec::new();
    diff_nodes(a, a.root, b, b.root, "".to_string(), &mut out);
    out
}

fn summary(tree: &BehaviorTree, id: NodeId) -> String {
    let node = tree.node(id);
    match node.kind.leaf_params() {
        Some(params) if !params.is_empty() => {
            let rendered: Vec<String> = params
                .iter()
                .map(|(k, v)| format!("{}={}", k, v.render()))
                .collect();
            format!("{}({})", node.kind.tag(), rendered.join(","))
        }
        _ => node.kind.tag(),
    }
}

fn diff_nodes(
    a: &BehaviorTree,
    a_id: NodeId,
    b: &BehaviorTree,
    b_id: NodeId,
    path: String,
    out: &mut Vec<DiffEntry>,
) {
    let an = a.node(a_id);
    let bn = b.node(b_id);
    let display_path = if path.is_empty() { "/".to_string() } else { path.clone() };
    if an.kind.tag() != bn.kind.tag() {
        out.push(DiffEntry::Replace {
            path: display_path.clone(),
            from: summary(a, a_id),
            to: summary(b, b_id),
        });
    } else if an.kind != bn.kind {
        out.push(DiffEntry::Update {
            path: display_path.clone(),
            from: summary(a, a_id),
            to: summary(b, b_id),
        });
    }

    // Align children: exact-subtree LCS, then pair leftover runs positionally
    // as modifications.
    let lcs = subtree_lcs(a, &an.children, b, &bn.children);
    let mut ai = 0usize;
    let mut bi = 0usize;
    for &(ma, mb) in lcs.iter().chain(std::iter::once(&(an.children.len(), bn.children.len()))) {
        let a_gap: Vec<usize> = (ai..ma).collect();
        let b_gap: Vec<usize> = (bi..mb).collect();
        let paired = a_gap.len().min(b_gap.len());
        for k in 0..paired {
            diff_nodes(
                a,
                an.children[a_gap[k]],
                b,
                bn.children[b_gap[k]],
                format!("{}/{}", path, b_gap[k]),
                out,
            );
        }
        for &idx in &a_gap[paired..] {
            out.push(DiffEntry::Delete {
                path: format!("{}/{}", path, idx),
                node: summary(a, an.children[idx]),
            });
        }
        for &idx in &b_gap[paired..] {
            out.push(DiffEntry::Insert {
                path: format!("{}/{}", path, idx),
                node: summary(b, bn.children[idx]),
            });
        }
        ai = ma + 1;
        bi = mb + 1;
    }
}

fn subtree_lcs(
    a: &BehaviorTree,
    a_children: &[NodeId],
    b: &BehaviorTree,
    b_children: &[NodeId],
) -> Vec<(usize, usize)> {
    let n = a_children.len();
    let m = b_children.len();
    let mut table = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if subtree_eq(a, a_children[i], b, b_children[j]) {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        if subtree_eq(a, a_children[i], b, b_children[j]) {
            out.push((i, j));
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Tick execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafStatus {
    Success,
    Failure,
    Running,
}

impl From<LeafStatus> for TickStatus {
    fn from(value: LeafStatus) -> Self {
        match value {
            LeafStatus::Success => TickStatus::Success,
            LeafStatus::Failure => TickStatus::Failure,
            LeafStatus::Running => TickStatus::Running,
        }
    }
}

/// Executes leaves. Conditions and actions share the surface; the executor
/// distinguishes them by name. A returned `Err` is an executor fault, which
/// aborts the mission and is distinct from a legitimate `Failure` status.
pub trait ActionExecutor {
    fn execute(
        &mut self,
        node_id: NodeId,
        name: &str,
        params: &BTreeMap<String, String>,
        is_condition: bool,
    ) -> Result<LeafStatus, String>;
}

/// Per-mission mutable tick state: memory cursors, parallel results, and
/// decorator counters. Reset when the owning composite completes.
#[derive(Debug, Default)]
pub struct TickRuntime {
    cursors: HashMap<NodeId, usize>,
    parallel_results: HashMap<NodeId, Vec<Option<bool>>>,
    decorator_counts: HashMap<NodeId, u32>,
}

impl TickRuntime {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One tick from the root.
pub fn tick(
    tree: &BehaviorTree,
    bb: &mut Blackboard,
    executor: &mut dyn ActionExecutor,
    rt: &mut TickRuntime,
) -> Result<TickStatus, BtError> {
    tick_node(tree, tree.root, bb, executor, rt)
}

fn tick_node(
    tree: &BehaviorTree,
    id: NodeId,
    bb: &mut Blackboard,
    executor: &mut dyn ActionExecutor,
    rt: &mut TickRuntime,
) -> Result<TickStatus, BtError> {
    let node = tree.node(id);
    match &node.kind {
        NodeKind::Action { name, params } | NodeKind::Condition { name, params } => {
            let resolved = bb.resolve(params)?;
            let is_condition = matches!(node.kind, NodeKind::Condition { .. });
            let status = executor
                .execute(id, name, &resolved, is_condition)
                .map_err(BtError::ExecutorFault)?;
            Ok(status.into())
        }
        NodeKind::Sequence => {
            let start = *rt.cursors.get(&id).unwrap_or(&0);
            for (i, child) in node.children.iter().enumerate().skip(start) {
                match tick_node(tree, *child, bb, executor, rt)? {
                    TickStatus::Success => continue,
                    TickStatus::Failure => {
                        rt.cursors.remove(&id);
                        return Ok(TickStatus::Failure);
                    }
                    TickStatus::Running => {
                        rt.cursors.insert(id, i);
                        return Ok(TickStatus::Running);
                    }
                }
            }
            rt.cursors.remove(&id);
            Ok(TickStatus::Success)
        }
        NodeKind::Fallback => {
            let start = *rt.cursors.get(&id).unwrap_or(&0);
            for (i, child) in node.children.iter().enumerate().skip(start) {
                match tick_node(tree, *child, bb, executor, rt)? {
                    TickStatus::Failure => continue,
                    TickStatus::Success => {
                        rt.cursors.remove(&id);
                        return Ok(TickStatus::Success);
                    }
                    TickStatus::Running => {
                        rt.cursors.insert(id, i);
                        return Ok(TickStatus::Running);
                    }
                }
            }
            rt.cursors.remove(&id);
            Ok(TickStatus::Failure)
        }
        NodeKind::Parallel { success_threshold } => {
            let n = node.children.len();
            let mut results = rt
                .parallel_results
                .get(&id)
                .cloned()
                .unwrap_or_else(|| vec![None; n]);
            for (i, child) in node.children.iter().enumerate() {
                if results[i].is_some() {
                    continue;
                }
                match tick_node(tree, *child, bb, executor, rt)? {
                    TickStatus::Success => results[i] = Some(true),
                    TickStatus::Failure => results[i] = Some(false),
                    TickStatus::Running => {}
                }
            }
            let successes = results.iter().filter(|r| **r == Some(true)).count();
            let failures = results.iter().filter(|r| **r == Some(false)).count();
            if successes >= *success_threshold {
                rt.parallel_results.remove(&id);
                Ok(TickStatus::Success)
            } else if n - failures < *success_threshold {
                // Success has become impossible.
                rt.parallel_results.remove(&id);
                Ok(TickStatus::Failure)
            } else {
                rt.parallel_results.insert(id, results);
                Ok(TickStatus::Running)
            }
        }
        NodeKind::Decorator(policy) => {
            let child = node.children[0];
            match policy {
                DecoratorPolicy::Inverter => Ok(match tick_node(tree, child, bb, executor, rt)? {
                    TickStatus::Success => TickStatus::Failure,
                    TickStatus::Failure => TickStatus::Success,
                    TickStatus::Running => TickStatus::Running,
                }),
                DecoratorPolicy::Repeat(cycles) => {
                    match tick_node(tree, child, bb, executor, rt)? {
                        TickStatus::Success => {
                            let count = rt.decorator_counts.entry(id).or_insert(0);
                            *count += 1;
                            if *count >= *cycles {
                                rt.decorator_counts.remove(&id);
                                Ok(TickStatus::Success)
                            } else {
                                Ok(TickStatus::Running)
                            }
                        }
                        TickStatus::Failure => {
                            rt.decorator_counts.remove(&id);
                            Ok(TickStatus::Failure)
                        }
                        TickStatus::Running => Ok(TickStatus::Running),
                    }
                }
                DecoratorPolicy::RetryUntilSuccessful(attempts) => {
                    match tick_node(tree, child, bb, executor, rt)? {
                        TickStatus::Success => {
                            rt.decorator_counts.remove(&id);
                            Ok(TickStatus::Success)
                        }
                        TickStatus::Failure => {
                            let count = rt.decorator_counts.entry(id).or_insert(0);
                            *count += 1;
                            if *count >= *attempts {
                                rt.decorator_counts.remove(&id);
                                Ok(TickStatus::Failure)
                            } else {
                                Ok(TickStatus::Running)
                            }
                        }
                        TickStatus::Running => Ok(TickStatus::Running),
                    }
                }
            }
        }
    }
}

/// Final status of a bounded mission run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunOutcome {
    Success,
    Failure,
    /// Tick budget exhausted while still Running.
    TimeoutFailure,
}

/// Tick until the tree settles or the budget runs out.
pub fn run_to_completion(
    tree: &BehaviorTree,
    bb: &mut Blackboard,
    executor: &mut dyn ActionExecutor,
    max_ticks: u64,
) -> Result<(RunOutcome, u64), BtError> {
    if max_ticks == 0 {
        return Err(BtError::InvalidBudget);
    }
    let mut rt = TickRuntime::new();
    for count in 1..=max_ticks {
        match tick(tree, bb, executor, &mut rt)? {
            TickStatus::Success => return Ok((RunOutcome::Success, count)),
            TickStatus::Failure => return Ok((RunOutcome::Failure, count)),
            TickStatus::Running => {}
        }
    }
    Ok((RunOutcome::TimeoutFailure, max_ticks))
}
