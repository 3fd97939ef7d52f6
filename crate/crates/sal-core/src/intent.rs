//! Intent wire schema and strict parsing.
//!
//! An intent is a proposal, never a command: action type from a closed
//! vocabulary, an obfuscated target token, whitelisted parameters, and a
//! justification whose claims are machine-checkable telemetry predicates.
//! Parsing is closed-world: unknown fields, unknown enum values, and
//! out-of-range thresholds are distinct, classified rejections that feed the
//! default-deny path downstream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::state::{MetricId, Token, ALLOWED_ROLES};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionType {
    GrantRole,
    ModifyRoute,
    RestartNode,
    ScaleGroup,
    TerminateNode,
}

pub const ALL_ACTIONS: [ActionType; 5] = [
    ActionType::GrantRole,
    ActionType::ModifyRoute,
    ActionType::RestartNode,
    ActionType::ScaleGroup,
    ActionType::TerminateNode,
];

impl ActionType {
    pub fn wire_name(self) -> &'static str {
        match self {
            ActionType::GrantRole => "GRANT_ROLE",
            ActionType::ModifyRoute => "MODIFY_ROUTE",
            ActionType::RestartNode => "RESTART_NODE",
            ActionType::ScaleGroup => "SCALE_GROUP",
            ActionType::TerminateNode => "TERMINATE_NODE",
        }
    }

    fn from_wire(name: &str) -> Option<Self> {
        ALL_ACTIONS.into_iter().find(|a| a.wire_name() == name)
    }

    /// Every action in the vocabulary mutates infrastructure state, so every
    /// intent must carry at least one claim. The hook stays in case a
    /// read-only action is ever added.
    pub fn is_mutating(self) -> bool {
        true
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Comparator {
    EQ,
    GE,
    GT,
    LE,
    LT,
}

impl Comparator {
    pub fn holds(self, observed: i64, threshold: i64) -> bool {
        match self {
            Comparator::EQ => observed == threshold,
            Comparator::GE => observed >= threshold,
            Comparator::GT => observed > threshold,
            Comparator::LE => observed <= threshold,
            Comparator::LT => observed < threshold,
        }
    }

    fn from_wire(name: &str) -> Option<Self> {
        match name {
            "EQ" => Some(Comparator::EQ),
            "GE" => Some(Comparator::GE),
            "GT" => Some(Comparator::GT),
            "LE" => Some(Comparator::LE),
            "LT" => Some(Comparator::LT),
            _ => None,
        }
    }
}

/// Machine-checkable justification claim: a telemetry predicate about one
/// token in the evaluation context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Claim {
    pub comparator: Comparator,
    pub metric_id: MetricId,
    pub subject_token: Token,
    pub threshold_milli: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Justification {
    pub claims: Vec<Claim>,
    pub text: String,
}

/// Parameter values are strings or integers only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intent {
    pub action_type: ActionType,
    pub justification: Justification,
    pub parameters: BTreeMap<String, ParamValue>,
    pub target_token: Token,
}

pub const MAX_CLAIMS: usize = 16;
pub const MAX_TEXT_LEN: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("intent document must be a JSON object")]
    NotAnObject,
    #[error("missing field {0}")]
    MissingField(String),
    #[error("unexpected extra field {0}")]
    ExtraField(String),
    #[error("field {0} has the wrong type")]
    WrongFieldType(String),
    #[error("unknown action_type {0}")]
    UnknownAction(String),
    #[error("unknown metric_id {0}")]
    UnknownMetric(String),
    #[error("unknown comparator {0}")]
    UnknownComparator(String),
    #[error("malformed token {0}")]
    InvalidToken(String),
    #[error("threshold {value} out of range for {metric}")]
    ThresholdOutOfRange { metric: String, value: i64 },
    #[error("invalid parameter {0}")]
    InvalidParameter(String),
    #[error("justification text exceeds {MAX_TEXT_LEN} characters")]
    TextTooLong,
    #[error("justification carries more than {MAX_CLAIMS} claims")]
    TooManyClaims,
}

fn expect_object<'v>(
    value: &'v Value,
    field: &str,
) -> Result<&'v serde_json::Map<String, Value>, ParseError> {
    value
        .as_object()
        .ok_or_else(|| ParseError::WrongFieldType(field.to_string()))
}

fn expect_str<'v>(value: &'v Value, field: &str) -> Result<&'v str, ParseError> {
    value
        .as_str()
        .ok_or_else(|| ParseError::WrongFieldType(field.to_string()))
}

fn expect_i64(value: &Value, field: &str) -> Result<i64, ParseError> {
    value
        .as_i64()
        .ok_or_else(|| ParseError::WrongFieldType(field.to_string()))
}

fn check_exact_keys(
    map: &serde_json::Map<String, Value>,
    expected: &[&str],
    scope: &str,
) -> Result<(), ParseError> {
    for key in map.keys() {
        if !expected.contains(&key.as_str()) {
            return Err(ParseError::ExtraField(format!("{scope}{key}")));
        }
    }
    for key in expected {
        if !map.contains_key(*key) {
            return Err(ParseError::MissingField(format!("{scope}{key}")));
        }
    }
    Ok(())
}

fn parse_token(raw: &str) -> Result<Token, ParseError> {
    if Token::is_well_formed(raw) {
        Ok(Token(raw.to_string()))
    } else {
        Err(ParseError::InvalidToken(raw.to_string()))
    }
}

fn parse_claim(value: &Value, idx: usize) -> Result<Claim, ParseError> {
    let scope = format!("justification.claims[{idx}].");
    let map = expect_object(value, &format!("justification.claims[{idx}]"))?;
    check_exact_keys(
        map,
        &["comparator", "metric_id", "subject_token", "threshold_milli"],
        &scope,
    )?;

    let metric_raw = expect_str(&map["metric_id"], &format!("{scope}metric_id"))?;
    let metric_id = serde_json::from_value::<MetricId>(Value::String(metric_raw.to_string()))
        .map_err(|_| ParseError::UnknownMetric(metric_raw.to_string()))?;
    let comparator_raw = expect_str(&map["comparator"], &format!("{scope}comparator"))?;
    let comparator = Comparator::from_wire(comparator_raw)
        .ok_or_else(|| ParseError::UnknownComparator(comparator_raw.to_string()))?;
    let subject_token =
        parse_token(expect_str(&map["subject_token"], &format!("{scope}subject_token"))?)?;
    let threshold_milli = expect_i64(&map["threshold_milli"], &format!("{scope}threshold_milli"))?;
    if threshold_milli < 0 || threshold_milli > metric_id.max_milli() {
        return Err(ParseError::ThresholdOutOfRange {
            metric: metric_raw.to_string(),
            value: threshold_milli,
        });
    }
    Ok(Claim {
        comparator,
        metric_id,
        subject_token,
        threshold_milli,
    })
}

fn validate_parameters(
    action: ActionType,
    parameters: &BTreeMap<String, ParamValue>,
) -> Result<(), ParseError> {
    let allowed: &[&str] = match action {
        ActionType::TerminateNode => &[],
        ActionType::RestartNode => &["mode"],
        ActionType::ScaleGroup => &["replicas"],
        ActionType::ModifyRoute => &["peer_token", "route_op"],
        ActionType::GrantRole => &["role"],
    };
    let required: &[&str] = match action {
        ActionType::TerminateNode | ActionType::RestartNode => &[],
        ActionType::ScaleGroup => &["replicas"],
        ActionType::ModifyRoute => &["peer_token", "route_op"],
        ActionType::GrantRole => &["role"],
    };
    for key in parameters.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(ParseError::InvalidParameter(format!(
                "{key} not permitted for {}",
                action.wire_name()
            )));
        }
    }
    for key in required {
        if !parameters.contains_key(*key) {
            return Err(ParseError::InvalidParameter(format!(
                "{key} required for {}",
                action.wire_name()
            )));
        }
    }
    for (key, value) in parameters {
        match (key.as_str(), value) {
            ("mode", ParamValue::Str(s)) if s == "soft" || s == "hard" => {}
            ("replicas", ParamValue::Int(v)) if (0..=1000).contains(v) => {}
            ("peer_token", ParamValue::Str(s)) if Token::is_well_formed(s) => {}
            ("route_op", ParamValue::Str(s)) if s == "add" || s == "remove" => {}
            ("role", ParamValue::Str(s)) if ALLOWED_ROLES.contains(&s.as_str()) => {}
            _ => {
                return Err(ParseError::InvalidParameter(format!(
                    "{key} has an invalid value"
                )))
            }
        }
    }
    Ok(())
}

/// Validate a constructed intent against the same closed-world rules the
/// parser enforces.
pub fn validate_intent(intent: &Intent) -> Result<(), ParseError> {
    if !Token::is_well_formed(intent.target_token.as_str()) {
        return Err(ParseError::InvalidToken(intent.target_token.0.clone()));
    }
    validate_parameters(intent.action_type, &intent.parameters)?;
    if intent.justification.text.len() > MAX_TEXT_LEN {
        return Err(ParseError::TextTooLong);
    }
    if intent.justification.claims.len() > MAX_CLAIMS {
        return Err(ParseError::TooManyClaims);
    }
    for claim in &intent.justification.claims {
        if !Token::is_well_formed(claim.subject_token.as_str()) {
            return Err(ParseError::InvalidToken(claim.subject_token.0.clone()));
        }
        if claim.threshold_milli < 0 || claim.threshold_milli > claim.metric_id.max_milli() {
            return Err(ParseError::ThresholdOutOfRange {
                metric: format!("{:?}", claim.metric_id),
                value: claim.threshold_milli,
            });
        }
    }
    Ok(())
}

/// Parse raw agent output into a validated [`Intent`].
///
/// Total over arbitrary bytes: every input yields either a valid intent or a
/// classified [`ParseError`]. Key order and whitespace are not significant on
/// input; [`canonical_intent_bytes`] defines the canonical form.
pub fn parse_intent(raw: &[u8]) -> Result<Intent, ParseError> {
    let value: Value =
        serde_json::from_slice(raw).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let map = value.as_object().ok_or(ParseError::NotAnObject)?;
    check_exact_keys(
        map,
        &["action_type", "justification", "parameters", "target_token"],
        "",
    )?;

    let action_raw = expect_str(&map["action_type"], "action_type")?;
    let action_type = ActionType::from_wire(action_raw)
        .ok_or_else(|| ParseError::UnknownAction(action_raw.to_string()))?;
    let target_token = parse_token(expect_str(&map["target_token"], "target_token")?)?;

    let params_map = expect_object(&map["parameters"], "parameters")?;
    let mut parameters = BTreeMap::new();
    for (key, value) in params_map {
        let parsed = match value {
            Value::String(s) => ParamValue::Str(s.clone()),
            Value::Number(n) => ParamValue::Int(
                n.as_i64()
                    .ok_or_else(|| ParseError::WrongFieldType(format!("parameters.{key}")))?,
            ),
            _ => return Err(ParseError::WrongFieldType(format!("parameters.{key}"))),
        };
        parameters.insert(key.clone(), parsed);
    }

    let just_map = expect_object(&map["justification"], "justification")?;
    check_exact_keys(just_map, &["claims", "text"], "justification.")?;
    let text = expect_str(&just_map["text"], "justification.text")?.to_string();
    let claims_raw = just_map["claims"]
        .as_array()
        .ok_or_else(|| ParseError::WrongFieldType("justification.claims".to_string()))?;
    if claims_raw.len() > MAX_CLAIMS {
        return Err(ParseError::TooManyClaims);
    }
    let claims = claims_raw
        .iter()
        .enumerate()
        .map(|(i, c)| parse_claim(c, i))
        .collect::<Result<Vec<Claim>, ParseError>>()?;

    let intent = Intent {
        action_type,
        justification: Justification { claims, text },
        parameters,
        target_token,
    };
    validate_intent(&intent)?;
    Ok(intent)
}

/// Canonical JSON bytes for an intent: sorted keys, no whitespace, UTF-8.
/// `parse_intent(canonical_intent_bytes(i))` reproduces `i` exactly.
pub fn canonical_intent_bytes(intent: &Intent) -> Vec<u8> {
    canonical::to_canonical_bytes_unchecked(intent)
}

pub const WORKLOAD_FORMAT: &str = "sal-intents";
pub const WORKLOAD_VERSION: u64 = 1;

/// Encode intents as a workload file: one header line, one canonical intent
/// per line.
pub fn workload_to_jsonl(intents: &[Intent]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(
        format!(r#"{{"format":"{WORKLOAD_FORMAT}","version":{WORKLOAD_VERSION}}}"#).as_bytes(),
    );
    out.push(b'\n');
    for intent in intents {
        out.extend_from_slice(&canonical_intent_bytes(intent));
        out.push(b'\n');
    }
    out
}

pub fn workload_from_jsonl(bytes: &[u8]) -> Result<Vec<Intent>, ParseError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ParseError::MalformedJson("empty workload file".to_string()))?;
    let header_value: Value = serde_json::from_str(header)
        .map_err(|e| ParseError::MalformedJson(format!("workload header: {e}")))?;
    if header_value["format"] != WORKLOAD_FORMAT || header_value["version"] != WORKLOAD_VERSION {
        return Err(ParseError::MalformedJson(
            "unrecognized workload header".to_string(),
        ));
    }
    lines.map(|line| parse_intent(line.as_bytes())).collect()
}
