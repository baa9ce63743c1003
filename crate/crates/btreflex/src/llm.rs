//! Pluggable language-model boundary: provider-agnostic chat transport, the
//! four prompt contracts (plan generation, outcome evaluation, hierarchical
//! analysis, repair proposal), and a scripted mock provider so the default
//! test suite never touches the network.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bt::{parse_bt, BehaviorTree, BtError};
use crate::strategy::StrategySpace;

pub const ENV_KEY: &str = "BTREFLEX_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn user(system: &str, content: String) -> Self {
        ChatRequest {
            system: system.to_string(),
            messages: vec![ChatMessage { role: "user".to_string(), content }],
            max_tokens: 4096,
            temperature: 0.0,
        }
    }

    /// Flattened text used by mock matchers and error digests.
    pub fn rendered(&self) -> String {
        let mut text = self.system.clone();
        for m in &self.messages {
            text.push('\n');
            text.push_str(&m.content);
        }
        text
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.rendered().as_bytes());
        hex_prefix(&hasher.finalize(), 8)
    }
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{:02x}", b)).collect()
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("rate limited: {0}")]
    RateLimit(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no script entry matched request digest {0}")]
    UnmatchedRequest(String),
    #[error("mock script error: {0}")]
    Script(String),
    #[error("malformed response after retry: {0}")]
    MalformedResponse(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("plan did not parse after retry: {0}")]
    PlanParse(String),
}

pub trait Provider {
    fn name(&self) -> &str;
    fn send(&mut self, request: &ChatRequest) -> Result<String, LlmError>;
}

// ---------------------------------------------------------------------------
// Mock provider
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    /// Entry matches when every listed substring occurs in the rendered request.
    #[serde(default)]
    pub match_substrings: Vec<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<MockEntry>,
    #[serde(default = "default_strict")]
    pub strict: bool,
}

fn default_strict() -> bool {
    true
}

impl MockScript {
    /// Transcript files are YAML (JSON being a YAML subset works too).
    pub fn from_str(text: &str) -> Result<Self, LlmError> {
        serde_yaml::from_str(text).map_err(|e| LlmError::Script(e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {}", path.display(), e)))?;
        Self::from_str(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("script serializes")
    }
}

/// Replays canned responses in order: each request consumes the first not-yet
/// -used entry whose matcher accepts it. Strict scripts error on unmatched
/// requests, naming the request digest.
pub struct MockProvider {
    script: MockScript,
    used: Vec<bool>,
    pub requests_seen: Vec<String>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        let used = vec![false; script.entries.len()];
        MockProvider { script, used, requests_seen: Vec::new() }
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let rendered = request.rendered();
        self.requests_seen.push(rendered.clone());
        for (i, entry) in self.script.entries.iter().enumerate() {
            if self.used[i] {
                continue;
            }
            if entry.match_substrings.iter().all(|s| rendered.contains(s.as_str())) {
                self.used[i] = true;
                return Ok(entry.response.clone());
            }
        }
        if self.script.strict {
            Err(LlmError::UnmatchedRequest(request.digest()))
        } else {
            Ok(String::new())
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP provider (chat-completion wire format)
// ---------------------------------------------------------------------------

pub struct HttpProvider {
    pub endpoint: String,
    pub model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    /// Credential comes from the environment only, never from config files.
    pub fn from_env(endpoint: &str, model: &str) -> Result<Self, LlmError> {
        let api_key = std::env::var(ENV_KEY)
            .map_err(|_| LlmError::Auth(format!("environment variable {} is not set", ENV_KEY)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpProvider { endpoint: endpoint.to_string(), model: model.to_string(), api_key, client })
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn send(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut messages = vec![serde_json::json!({"role": "system", "content": request.system})];
        for m in &request.messages {
            messages.push(serde_json::json!({"role": m.role, "content": m.content}));
        }
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        let digest = request.digest();
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    LlmError::Timeout(format!("request {}: {}", digest, e))
                } else {
                    LlmError::Transport(format!("request {}: {}", digest, e))
                }
            })?;
        match resp.status().as_u16() {
            401 | 403 => return Err(LlmError::Auth(format!("request {}", digest))),
            429 => return Err(LlmError::RateLimit(format!("request {}", digest))),
            s if s >= 400 => {
                return Err(LlmError::Transport(format!("request {}: HTTP {}", digest, s)))
            }
            _ => {}
        }
        let value: serde_json::Value =
            resp.json().map_err(|e| LlmError::Transport(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| LlmError::MalformedResponse(format!("request {}: no content", digest)))
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

pub struct Gateway {
    provider: Box<dyn Provider>,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>) -> Self {
        Gateway { provider }
    }

    pub fn mock(script: MockScript) -> Self {
        Gateway::new(Box::new(MockProvider::new(script)))
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    /// Raw send with 2 transport retries (exponential backoff) on timeout.
    pub fn send(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut delay = std::time::Duration::from_millis(200);
        let mut attempts = 0;
        loop {
            match self.provider.send(request) {
                Err(LlmError::Timeout(msg)) if attempts < 2 => {
                    attempts += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                    let _ = msg;
                }
                other => return other,
            }
        }
    }

    /// Send under a contract: the validator gates the response; one content
    /// retry with the validation error appended.
    pub fn send_validated<T>(
        &mut self,
        request: &ChatRequest,
        validate: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, LlmError> {
        let first = self.send(request)?;
        match validate(&first) {
            Ok(v) => Ok(v),
            Err(why) => {
                let mut retry = request.clone();
                retry.messages.push(ChatMessage { role: "assistant".to_string(), content: first });
                retry.messages.push(ChatMessage {
                    role: "user".to_string(),
                    content: format!(
                        "The previous response was invalid: {}. Reply again following the required format exactly.",
                        why
                    ),
                });
                let second = self.send(&retry)?;
                validate(&second).map_err(LlmError::MalformedResponse)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Prompt contracts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractKind {
    PlanGeneration,
    OutcomeEvaluation,
    HierarchicalAnalysis,
    RepairProposal,
}

impl ContractKind {
    pub fn name(&self) -> &'static str {
        match self {
            ContractKind::PlanGeneration => "plan_generation",
            ContractKind::OutcomeEvaluation => "outcome_evaluation",
            ContractKind::HierarchicalAnalysis => "hierarchical_analysis",
            ContractKind::RepairProposal => "repair_proposal",
        }
    }
}

/// One-shot sample shipped with the planner prompt; includes a blackboard
/// `{key}` reference to illustrate the parameter syntax.
pub fn one_shot_sample() -> &'static str {
    r#"<BehaviorTree>
  <Sequence>
    <Takeoff height="1"/>
    <FlyToCoordinates x="{target_x}" y="2" z="1"/>
    <Land/>
  </Sequence>
</BehaviorTree>"#
}

const PLAN_SYSTEM: &str = "You are a drone mission planner. Output exactly one \
behavior tree as XML with root element <BehaviorTree> containing a single plan \
element. Use only the documented node types. Parameters may reference blackboard \
keys with {key} syntax. Output the XML only, no commentary.";

fn classify_parse_error(err: &BtError) -> String {
    match err {
        BtError::UnknownAction(name) => format!("UnknownActionError: {}", name),
        BtError::Syntax(msg) => format!("SyntaxError: {}", msg),
        BtError::Schema(msg) => format!("SchemaError: {}", msg),
        other => other.to_string(),
    }
}

fn extract_xml(text: &str) -> &str {
    match (text.find("<BehaviorTree"), text.rfind("</BehaviorTree>")) {
        (Some(a), Some(b)) if b > a => &text[a..b + "</BehaviorTree>".len()],
        _ => text,
    }
}

/// One-shot BT generation: syntax spec + node docs + sample + retrieved
/// experiences + instruction. A parse failure triggers one retry quoting the
/// parser error; a second failure surfaces.
pub fn generate_plan(
    instruction: &str,
    space: &StrategySpace,
    retrieved: &[String],
    gateway: &mut Gateway,
) -> Result<BehaviorTree, LlmError> {
    if instruction.trim().is_empty() {
        return Err(LlmError::Precondition("instruction must be non-empty".to_string()));
    }
    let mut prompt = String::new();
    prompt.push_str("Available node types:\n");
    prompt.push_str(&space.node_docs());
    prompt.push_str("\nExample plan:\n");
    prompt.push_str(one_shot_sample());
    if !retrieved.is_empty() {
        prompt.push_str("\n\nRelevant experiences from earlier missions:\n");
        for exp in retrieved {
            prompt.push_str("- ");
            prompt.push_str(exp);
            prompt.push('\n');
        }
    }
    prompt.push_str("\nTask instruction: ");
    prompt.push_str(instruction);
    let request = ChatRequest::user(PLAN_SYSTEM, prompt);

    let first = gateway.send(&request)?;
    match parse_bt(extract_xml(&first), space) {
        Ok(tree) => Ok(tree),
        Err(err) => {
            let quoted = classify_parse_error(&err);
            let mut retry = request.clone();
            retry.messages.push(ChatMessage { role: "assistant".to_string(), content: first });
            retry.messages.push(ChatMessage {
                role: "user".to_string(),
                content: format!(
                    "That plan failed to parse: {}. Output a corrected <BehaviorTree> XML only.",
                    quoted
                ),
            });
            let second = gateway.send(&retry)?;
            parse_bt(extract_xml(&second), space)
                .map_err(|e| LlmError::PlanParse(classify_parse_error(&e)))
        }
    }
}

/// Validate a contract response as a JSON object, stripping code fences.
pub fn parse_json_response(text: &str) -> Result<serde_json::Value, String> {
    let trimmed = text.trim();
    let inner = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed)
        .trim();
    serde_json::from_str(inner).map_err(|e| format!("invalid JSON: {}", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(entries: Vec<(&[&str], &str)>) -> MockScript {
        MockScript {
            entries: entries
                .into_iter()
                .map(|(m, r)| MockEntry {
                    match_substrings: m.iter().map(|s| s.to_string()).collect(),
                    response: r.to_string(),
                })
                .collect(),
            strict: true,
        }
    }

    const PLAN_XML: &str = r#"<BehaviorTree><Sequence>
        <Takeoff height="1"/>
        <MoveForward distance="2"/>
        <Land/>
    </Sequence></BehaviorTree>"#;

    #[test]
    fn mock_matches_in_order() {
        let mut gw = Gateway::mock(script(vec![
            (&["first"], "one"),
            (&["second"], "two"),
        ]));
        let r1 = ChatRequest::user("sys", "first question".to_string());
        let r2 = ChatRequest::user("sys", "second question".to_string());
        assert_eq!(gw.send(&r1).unwrap(), "one");
        assert_eq!(gw.send(&r2).unwrap(), "two");
    }

    #[test]
    fn strict_mock_names_unmatched_digest() {
        let mut gw = Gateway::mock(script(vec![(&["never-present"], "x")]));
        let req = ChatRequest::user("sys", "hello".to_string());
        match gw.send(&req) {
            Err(LlmError::UnmatchedRequest(d)) => assert_eq!(d, req.digest()),
            other => panic!("expected unmatched error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn generate_plan_parses_mock_output() {
        let space = StrategySpace::drone_default();
        let mut gw = Gateway::mock(script(vec![(&["Task instruction"], PLAN_XML)]));
        let tree = generate_plan("fly forward and land", &space, &[], &mut gw).unwrap();
        assert_eq!(tree.leaves_in_order().len(), 3);
    }

    #[test]
    fn parse_failure_retries_quoting_error_class() {
        let space = StrategySpace::drone_default();
        let bad = r#"<BehaviorTree><Sequence><Teleport x="1"/></Sequence></BehaviorTree>"#;
        let mut gw = Gateway::mock(script(vec![
            (&["Task instruction"], bad),
            (&["UnknownActionError"], PLAN_XML),
        ]));
        let tree = generate_plan("go", &space, &[], &mut gw).unwrap();
        assert_eq!(tree.leaves_in_order().len(), 3);
    }

    #[test]
    fn double_parse_failure_surfaces() {
        let space = StrategySpace::drone_default();
        let bad = r#"<BehaviorTree><Sequence><Teleport x="1"/></Sequence></BehaviorTree>"#;
        let mut gw = Gateway::mock(script(vec![
            (&[], bad),
            (&[], bad),
        ]));
        assert!(matches!(
            generate_plan("go", &space, &[], &mut gw),
            Err(LlmError::PlanParse(msg)) if msg.contains("UnknownActionError")
        ));
    }

    #[test]
    fn empty_instruction_is_precondition_error() {
        let space = StrategySpace::drone_default();
        let mut gw = Gateway::mock(script(vec![]));
        assert!(matches!(
            generate_plan("  ", &space, &[], &mut gw),
            Err(LlmError::Precondition(_))
        ));
    }

    #[test]
    fn retrieved_experiences_enter_the_prompt() {
        let space = StrategySpace::drone_default();
        // Strict matcher on the experience text: fails unless it reaches the prompt.
        let mut gw = Gateway::mock(script(vec![(&["search before detecting"], PLAN_XML)]));
        generate_plan("find balloon", &space, &["search before detecting".to_string()], &mut gw)
            .unwrap();
    }

    #[test]
    fn contracts_use_temperature_zero() {
        let req = ChatRequest::user("sys", "x".to_string());
        assert_eq!(req.temperature, 0.0);
    }

    #[test]
    fn send_validated_retries_once_then_errors() {
        let mut gw = Gateway::mock(script(vec![(&[], "not json"), (&["invalid"], "still not json")]));
        let req = ChatRequest::user("sys", "give json".to_string());
        let result = gw.send_validated(&req, |t| parse_json_response(t));
        assert!(matches!(result, Err(LlmError::MalformedResponse(_))));
    }

    #[test]
    fn send_validated_accepts_fenced_json_on_retry() {
        let mut gw = Gateway::mock(script(vec![
            (&[], "garbage"),
            (&["invalid"], "```json\n{\"ok\": true}\n```"),
        ]));
        let req = ChatRequest::user("sys", "give json".to_string());
        let v = gw.send_validated(&req, |t| parse_json_response(t)).unwrap();
        assert_eq!(v["ok"], serde_json::Value::Bool(true));
    }

    #[test]
    fn http_provider_requires_env_credential() {
        // The suite never sets the key; construction must fail fast.
        if std::env::var(ENV_KEY).is_ok() {
            return;
        }
        assert!(matches!(
            HttpProvider::from_env("http://localhost:0/v1/chat/completions", "m"),
            Err(LlmError::Auth(_))
        ));
    }

    #[test]
    fn mock_script_yaml_round_trip() {
        let s = script(vec![(&["a"], "b")]);
        let text = s.to_yaml();
        assert_eq!(MockScript::from_str(&text).unwrap(), s);
    }

    #[test]
    fn one_shot_sample_contains_blackboard_reference_and_parses_shape() {
        assert!(one_shot_sample().contains("{target_x}"));
        // With the key bound, the sample is a fully valid executable plan.
        let space = StrategySpace::drone_default();
        let tree = parse_bt(one_shot_sample(), &space).unwrap();
        assert_eq!(tree.leaves_in_order().len(), 3);
    }
}
