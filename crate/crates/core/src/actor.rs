//! The diagnosing policy: an editable rule list on top of the fixed actor
//! instructions, retrieved memory, and one JSON action per turn.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{Action, ActionType, TurnAction, UNDETERMINED};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::gateway::templates::{render_template, template_body, TemplateId};
use crate::gateway::{AgentRole, ChatMessage, Gateway};
use crate::memory::MemoryEntry;
use crate::text::collapse_ws;

pub const MAX_RULE_CHARS: usize = 300;
const EMPTY_BLOCK: &str = "(none)";

const REFORMAT_REQUEST: &str = "Your reply could not be parsed. Return exactly one JSON object \
with the keys \"action_type\" (AskQuestion, OrderTest or SubmitDiagnosis) and \"action_text\", and nothing else.";

const FORCED_REQUEST: &str = "The turn limit has been reached. Reply with only your current best \
diagnosis as plain text, with no JSON and no explanation.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRule {
    pub id: String,
    pub body: String,
    pub cited_count: u32,
    pub created_episode: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub base_instruction: String,
    rules: Vec<PromptRule>,
    pub budget: usize,
    next_seq: u64,
}

fn rule_seq(id: &str) -> Option<u64> {
    id.strip_prefix("r_")?.parse().ok()
}

impl RuleSet {
    pub fn new(budget: usize) -> Self {
        Self {
            base_instruction: template_body(TemplateId::Actor).to_string(),
            rules: Vec::new(),
            budget,
            next_seq: 0,
        }
    }

    pub fn with_rules(budget: usize, rules: Vec<PromptRule>) -> Self {
        let next_seq = rules.iter().filter_map(|r| rule_seq(&r.id)).max().unwrap_or(0);
        Self {
            rules,
            next_seq,
            ..Self::new(budget)
        }
    }

    pub fn rules(&self) -> &[PromptRule] {
        &self.rules
    }

    pub fn rules_mut(&mut self) -> &mut Vec<PromptRule> {
        &mut self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Append a rule (newest last) and return its id.
    pub fn push(&mut self, body: &str, created_episode: u32) -> String {
        self.next_seq += 1;
        let id = format!("r_{:04}", self.next_seq);
        self.rules.push(PromptRule {
            id: id.clone(),
            body: body.trim().to_string(),
            cited_count: 0,
            created_episode,
        });
        id
    }

    /// Rule list as bound into the actor prompt.
    pub fn render(&self) -> String {
        if self.rules.is_empty() {
            return EMPTY_BLOCK.into();
        }
        self.rules
            .iter()
            .map(|r| format!("- {}", r.body))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Plain list of bodies, bound into the evolver prompt.
    pub fn render_for_evolver(&self) -> String {
        if self.rules.is_empty() {
            return EMPTY_BLOCK.into();
        }
        self.rules
            .iter()
            .map(|r| format!("\"{}\" (cited {})", r.body, r.cited_count))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rules).expect("rules serialize");
        s.push('\n');
        s
    }

    pub fn load(path: &Path, budget: usize) -> Result<Self> {
        let rules: Vec<PromptRule> = serde_json::from_str(&read_to_string(path)?)?;
        Ok(Self::with_rules(budget, rules))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_json())
    }
}

/// Retrieved memory as 4-line blocks, at most `k`.
pub fn render_memory(entries: &[MemoryEntry], k: usize) -> String {
    if entries.is_empty() || k == 0 {
        return EMPTY_BLOCK.into();
    }
    entries
        .iter()
        .take(k)
        .map(|e| {
            format!(
                "- context: {}\n  action: {}\n  outcome: {}\n  grade: {}",
                collapse_ws(&e.context_before_action),
                collapse_ws(&e.action),
                collapse_ws(&e.outcome),
                e.grade
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_actor_prompt(rules: &RuleSet, retrieved: &[MemoryEntry], k: usize, history: &str) -> Result<Vec<ChatMessage>> {
    let rule_list = rules.render();
    let memory = render_memory(retrieved, k);
    render_template(
        TemplateId::Actor,
        &[("rule_list", &rule_list), ("retrieved_memory", &memory), ("history", history)],
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAction {
    pub action: Action,
    /// Set when text surrounded the JSON object.
    pub lenient: bool,
}

fn reject(code: &'static str, detail: impl Into<String>) -> Error {
    Error::ActionParse {
        code,
        detail: detail.into(),
    }
}

/// Read the first JSON object in `raw` and require exactly the keys
/// `action_type` and `action_text`.
pub fn parse_action(raw: &str) -> Result<ParsedAction> {
    let start = raw.find('{').ok_or_else(|| reject("not_json", "no JSON object in reply"))?;
    let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(reject("not_json", e.to_string())),
        None => return Err(reject("not_json", "no JSON object in reply")),
    };
    let end = start + stream.byte_offset();
    let lenient = !raw[..start].trim().is_empty() || !raw[end..].trim().is_empty();
    let obj = value.as_object().ok_or_else(|| reject("not_object", "reply is not a JSON object"))?;
    if obj.len() != 2 || !obj.contains_key("action_type") || !obj.contains_key("action_text") {
        let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        return Err(reject("wrong_keys", format!("expected action_type and action_text, got {keys:?}")));
    }
    let type_str = obj["action_type"]
        .as_str()
        .ok_or_else(|| reject("wrong_type", "action_type is not a string"))?;
    let text = obj["action_text"]
        .as_str()
        .ok_or_else(|| reject("wrong_type", "action_text is not a string"))?;
    let action_type =
        ActionType::parse(type_str).ok_or_else(|| reject("unknown_action", format!("unknown action_type {type_str:?}")))?;
    let action = Action::new(action_type, text).map_err(|_| reject("empty_text", "action_text is empty"))?;
    Ok(ParsedAction { action, lenient })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub action: TurnAction,
    pub raw_replies: Vec<String>,
    pub lenient: bool,
}

/// One actor call, plus one reformat request if the reply does not parse.
/// A second failure yields the invalid-action sentinel.
pub fn decide_action(
    rules: &RuleSet,
    retrieved: &[MemoryEntry],
    k: usize,
    history: &str,
    gateway: &Gateway,
) -> Result<Decision> {
    let mut messages = render_actor_prompt(rules, retrieved, k, history)?;
    let first = gateway.complete(AgentRole::Actor, messages.clone())?;
    if let Ok(p) = parse_action(&first) {
        return Ok(Decision {
            action: TurnAction::Valid(p.action),
            raw_replies: vec![first],
            lenient: p.lenient,
        });
    }
    messages.push(ChatMessage::assistant(first.clone()));
    messages.push(ChatMessage::user(REFORMAT_REQUEST));
    let second = gateway.complete(AgentRole::Actor, messages)?;
    Ok(match parse_action(&second) {
        Ok(p) => Decision {
            action: TurnAction::Valid(p.action),
            raw_replies: vec![first, second],
            lenient: p.lenient,
        },
        Err(_) => Decision {
            action: TurnAction::Invalid { raw: second.clone() },
            raw_replies: vec![first, second],
            lenient: false,
        },
    })
}

/// Ask for a bare diagnosis once the turn budget is spent.
pub fn forced_draft(
    rules: &RuleSet,
    retrieved: &[MemoryEntry],
    k: usize,
    history: &str,
    gateway: &Gateway,
) -> Result<String> {
    let mut messages = render_actor_prompt(rules, retrieved, k, history)?;
    if let Some(last) = messages.last_mut() {
        *last = ChatMessage::user(FORCED_REQUEST);
    }
    let reply = gateway.complete(AgentRole::Actor, messages)?;
    Ok(extract_draft(&reply))
}

fn extract_draft(reply: &str) -> String {
    // A well-formed non-submit action carries no diagnosis to submit.
    if let Ok(p) = parse_action(reply) {
        if p.action.action_type != ActionType::SubmitDiagnosis {
            return UNDETERMINED.into();
        }
        return p.action.action_text;
    }
    let text = collapse_ws(reply);
    if text.is_empty() {
        UNDETERMINED.into()
    } else {
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::scripted::{SequenceBackend, SequenceScript};
    use crate::grader::GradeLabel;
    use std::sync::Arc;

    fn actor_gateway(replies: &[&str]) -> Gateway {
        let script = SequenceScript {
            name: "t".into(),
            replies: [(AgentRole::Actor, replies.iter().map(|s| s.to_string()).collect())].into(),
        };
        Gateway::uniform(Arc::new(SequenceBackend::new(script)))
    }

    #[test]
    fn parse_accepts_and_rejects() {
        let p = parse_action(r#"{"action_type":"OrderTest","action_text":"ECG 12-lead"}"#).unwrap();
        assert_eq!(p.action, Action::new(ActionType::OrderTest, "ECG 12-lead").unwrap());
        assert!(!p.lenient);

        let p = parse_action(r#"{"action_type":"SubmitDiagnosis","action_text":"x"} trailing prose"#).unwrap();
        assert_eq!(p.action.action_text, "x");
        assert!(p.lenient);

        let code = |raw: &str| match parse_action(raw) {
            Err(Error::ActionParse { code, .. }) => code,
            other => panic!("expected rejection, got {other:?}"),
        };
        assert_eq!(code("{}"), "wrong_keys");
        assert_eq!(code("plain words"), "not_json");
        assert_eq!(code(r#"{"action_type":"Prescribe","action_text":"x"}"#), "unknown_action");
        assert_eq!(code(r#"{"action_type":"AskQuestion","action_text":"  "}"#), "empty_text");
        assert_eq!(code(r#"{"action_type":"AskQuestion","action_text":"a","why":"b"}"#), "wrong_keys");
    }

    #[test]
    fn parse_trims_text() {
        let p = parse_action(r#"{"action_type":"AskQuestion","action_text":"  Any fever? "}"#).unwrap();
        assert_eq!(p.action.action_text, "Any fever?");
    }

    #[test]
    fn decide_with_reformat() {
        let g = actor_gateway(&["I think we should order CT", r#"{"action_type":"OrderTest","action_text":"CT head"}"#]);
        let d = decide_action(&RuleSet::new(30), &[], 5, "abstract", &g).unwrap();
        assert_eq!(d.action.text(), "CT head");
        assert_eq!(d.raw_replies.len(), 2);

        let g = actor_gateway(&["no", "still no"]);
        let d = decide_action(&RuleSet::new(30), &[], 5, "abstract", &g).unwrap();
        assert_eq!(d.action, TurnAction::Invalid { raw: "still no".into() });
    }

    #[test]
    fn prompt_contains_rules_once_and_capped_memory() {
        let mut rules = RuleSet::new(30);
        rules.push("Ask about onset first.", 1);
        rules.push("Prefer ECG before imaging for chest pain.", 1);
        let entry = MemoryEntry {
            id: "m_000001".into(),
            context_before_action: "chest pain".into(),
            action: "OrderTest: ECG 12-lead".into(),
            outcome: "ST elevation".into(),
            grade: GradeLabel::HighYield,
            rationale: "r".into(),
            created_episode: 1,
            created_turn: 1,
            times_retrieved: 0,
            last_retrieved_episode: 0,
        };
        let msgs = render_actor_prompt(&rules, &vec![entry; 4], 3, "Dialogue line").unwrap();
        let sys = &msgs[0].content;
        for r in rules.rules() {
            assert_eq!(sys.matches(&r.body).count(), 1);
        }
        assert_eq!(sys.matches("- context: chest pain").count(), 3);
        assert!(sys.contains("Dialogue so far:\nDialogue line"));
        assert_eq!(render_memory(&[], 5), "(none)");
    }

    #[test]
    fn forced_draft_variants() {
        let rules = RuleSet::new(30);
        let g = actor_gateway(&["pulmonary embolism", "", r#"{"action_type":"SubmitDiagnosis","action_text":"Sarcoidosis"}"#, r#"{"action_type":"AskQuestion","action_text":"Any fever?"}"#]);
        assert_eq!(forced_draft(&rules, &[], 5, "h", &g).unwrap(), "pulmonary embolism");
        assert_eq!(forced_draft(&rules, &[], 5, "h", &g).unwrap(), UNDETERMINED);
        assert_eq!(forced_draft(&rules, &[], 5, "h", &g).unwrap(), "Sarcoidosis");
        assert_eq!(forced_draft(&rules, &[], 5, "h", &g).unwrap(), UNDETERMINED);
        let log = g.take_log();
        assert_eq!(log[0].messages.last().unwrap().content, FORCED_REQUEST);
    }

    #[test]
    fn rule_ids_continue_after_reload() {
        let mut rules = RuleSet::new(3);
        rules.push("a", 1);
        rules.push("b", 2);
        let mut reloaded = RuleSet::with_rules(3, rules.rules().to_vec());
        assert_eq!(reloaded.push("c", 3), "r_0003");
        assert_eq!(reloaded.render(), "- a\n- b\n- c");
    }
}
