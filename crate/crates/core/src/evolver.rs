//! Between-episode updates: parse the evolver's proposal, then apply rule
//! edits (anonymization gate, rule budget) and memory edits (deletes, adds,
//! eviction).

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::actor::{PromptRule, RuleSet, MAX_RULE_CHARS};
use crate::corpus::CaseRecord;
use crate::env::TurnRecord;
use crate::error::{Error, Result};
use crate::gateway::templates::{render_template, TemplateId};
use crate::gateway::{AgentRole, ChatMessage, Gateway};
use crate::grader::{cost_breakdown, render_transcript, GradeLabel, SessionGrade};
use crate::memory::{EvictionConfig, MemoryEntry, MemoryStore};

/// Longest substring a rule may share with the case information.
pub const MAX_SHARED_SPAN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Add,
    Delete,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEdit {
    pub kind: EditKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_body: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<String>,
}

impl PromptEdit {
    pub fn add(body: impl Into<String>) -> Self {
        Self {
            kind: EditKind::Add,
            new_body: Some(body.into()),
            targets: Vec::new(),
        }
    }

    pub fn delete(target: impl Into<String>) -> Self {
        Self {
            kind: EditKind::Delete,
            new_body: None,
            targets: vec![target.into()],
        }
    }

    pub fn merge(targets: Vec<String>, body: impl Into<String>) -> Self {
        Self {
            kind: EditKind::Merge,
            new_body: Some(body.into()),
            targets,
        }
    }
}

/// A memory entry as proposed by the evolver, before ids and bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryProposal {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub context_before_action: String,
    pub action: String,
    pub outcome: String,
    pub grade: GradeLabel,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolverOutput {
    pub prompt_edits: Vec<PromptEdit>,
    pub justification: String,
    pub memory_adds: Vec<MemoryProposal>,
    pub memory_deletes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    PromptEdits,
    Add,
    Delete,
    Merge,
    Justification,
    MemoryAdds,
    MemoryDeletes,
}

static HEADER_LIKE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z][A-Za-z ()/_-]{0,48}:\s*$").unwrap());
static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"]*)"|“([^”]*)”"#).unwrap());

fn header(line: &str) -> Option<(Section, &str)> {
    let trimmed = line.trim();
    let (head, rest) = trimmed.split_once(':')?;
    let h = head.trim().to_ascii_lowercase();
    let section = match h.as_str() {
        "prompt edits" => Section::PromptEdits,
        "add" => Section::Add,
        "delete" => Section::Delete,
        "merge" => Section::Merge,
        "justification" => Section::Justification,
        _ if h.starts_with("memory add") => Section::MemoryAdds,
        _ if h.starts_with("memory delete") => Section::MemoryDeletes,
        _ => return None,
    };
    Some((section, rest))
}

fn quoted(line: &str) -> Vec<String> {
    QUOTED
        .captures_iter(line)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .map(|m| m.as_str().trim().to_string())
        .collect()
}

fn is_placeholder(line: &str) -> bool {
    let t = line.trim().trim_start_matches('-').trim();
    t.is_empty() || t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("(none)") || t == "[]"
}

fn list_item(line: &str) -> Option<String> {
    if is_placeholder(line) {
        return None;
    }
    let q = quoted(line);
    let body = match q.into_iter().next() {
        Some(b) => b,
        None => line.trim().trim_start_matches('-').trim().to_string(),
    };
    (!body.is_empty()).then_some(body)
}

fn parse_merge(line: &str) -> Result<PromptEdit> {
    let (left, right) = line
        .split_once("->")
        .ok_or_else(|| Error::EvolverParse(format!("merge line without '->': {line:?}")))?;
    let targets = quoted(left);
    let body = quoted(right).into_iter().next();
    match body {
        Some(body) if targets.len() >= 2 && !body.is_empty() => Ok(PromptEdit::merge(targets, body)),
        _ => Err(Error::EvolverParse(format!(
            "merge needs two or more quoted rules and one quoted result: {line:?}"
        ))),
    }
}

fn parse_json_list<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<Vec<T>> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("(none)") {
        return Ok(Vec::new());
    }
    serde_json::from_str(t).map_err(|e| Error::EvolverParse(format!("{what}: {e}")))
}

pub fn parse_evolver_output(raw: &str) -> Result<EvolverOutput> {
    let mut section = Section::Preamble;
    let mut edits = Vec::new();
    let mut justification: Option<Vec<String>> = None;
    let mut adds_text = String::new();
    let mut deletes_text = String::new();

    let started = raw.lines().any(|l| matches!(header(l), Some((Section::PromptEdits, _))));
    if !started {
        section = Section::PromptEdits;
    }
    for line in raw.lines() {
        if let Some((next, rest)) = header(line) {
            if section == Section::Preamble && next != Section::PromptEdits {
                continue;
            }
            section = next;
            let rest = rest.trim();
            match section {
                Section::Justification => justification = Some(vec![rest.to_string()]),
                Section::MemoryAdds => adds_text = rest.to_string(),
                Section::MemoryDeletes => deletes_text = rest.to_string(),
                _ => {
                    if !rest.is_empty() {
                        return Err(Error::EvolverParse(format!("unexpected text after header: {line:?}")));
                    }
                }
            }
            continue;
        }
        match section {
            Section::Preamble => {}
            Section::PromptEdits => {
                if !is_placeholder(line) {
                    return Err(Error::EvolverParse(format!("text outside Add/Delete/Merge: {line:?}")));
                }
            }
            Section::Add | Section::Delete | Section::Merge if HEADER_LIKE.is_match(line.trim()) => {
                return Err(Error::EvolverParse(format!("unknown section {:?}", line.trim())));
            }
            Section::Add => {
                if let Some(body) = list_item(line) {
                    edits.push(PromptEdit::add(body));
                }
            }
            Section::Delete => {
                if let Some(target) = list_item(line) {
                    edits.push(PromptEdit::delete(target));
                }
            }
            Section::Merge => {
                if !is_placeholder(line) {
                    edits.push(parse_merge(line)?);
                }
            }
            Section::Justification => {
                if let Some(j) = justification.as_mut() {
                    j.push(line.trim().to_string());
                }
            }
            Section::MemoryAdds => {
                adds_text.push('\n');
                adds_text.push_str(line);
            }
            Section::MemoryDeletes => {
                deletes_text.push('\n');
                deletes_text.push_str(line);
            }
        }
    }

    let justification = justification
        .map(|j| j.join(" ").split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|j| !j.is_empty())
        .ok_or_else(|| Error::EvolverParse("missing Justification section".into()))?;
    let memory_adds = parse_json_list(&adds_text, "memory adds")?;
    let memory_deletes = parse_json_list(&deletes_text, "memory deletes")?;
    Ok(EvolverOutput {
        prompt_edits: edits,
        justification,
        memory_adds,
        memory_deletes,
    })
}

const FORMAT_REMINDER: &str = "Your reply could not be parsed. Use exactly the requested output format: \
Prompt edits (Add, Delete, Merge with quoted rules), Justification, Memory adds (JSON list), \
Memory deletes (JSON list).";

pub struct EvolveInputs<'a> {
    pub rules: &'a RuleSet,
    pub memory_stats: &'a str,
    pub transcript: &'a [TurnRecord],
    pub grades: &'a SessionGrade,
    pub score: u32,
}

pub fn propose_updates(inputs: &EvolveInputs<'_>, gateway: &Gateway) -> Result<EvolverOutput> {
    let rules = inputs.rules.render_for_evolver();
    let transcript = render_transcript(inputs.transcript);
    let graded = inputs.grades.render();
    let score = inputs.score.to_string();
    let costs = cost_breakdown(inputs.transcript);
    let mut messages = render_template(
        TemplateId::Evolver,
        &[
            ("rules", &rules),
            ("memory_stats", inputs.memory_stats),
            ("transcript", &transcript),
            ("graded_transcript", &graded),
            ("S", &score),
            ("cost_breakdown", &costs),
        ],
    )?;
    let first = gateway.complete(AgentRole::Evolver, messages.clone())?;
    match parse_evolver_output(&first) {
        Ok(out) => Ok(out),
        Err(Error::EvolverParse(reason)) => {
            messages.push(ChatMessage::assistant(first));
            messages.push(ChatMessage::user(format!("{FORMAT_REMINDER} Problem: {reason}.")));
            let second = gateway.complete(AgentRole::Evolver, messages)?;
            parse_evolver_output(&second)
        }
        Err(e) => Err(e),
    }
}

/// Why a rule body may not enter the prompt, if it may not.
pub fn gate_rule_body(body: &str, case: &CaseRecord, corpus_ids: &[u64]) -> Option<String> {
    let body = body.trim();
    if body.is_empty() {
        return Some("empty rule body".into());
    }
    let chars = body.chars().count();
    if chars > MAX_RULE_CHARS {
        return Some(format!("rule body has {chars} characters (limit {MAX_RULE_CHARS})"));
    }
    for token in body.split(|c: char| !c.is_ascii_alphanumeric()) {
        if !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = token.parse::<u64>() {
                if n == case.id || corpus_ids.contains(&n) {
                    return Some(format!("rule body contains case id {n}"));
                }
            }
        }
    }
    if let Some(span) = shared_span(body, &case.case_information, MAX_SHARED_SPAN + 1) {
        return Some(format!("rule body copies case text {span:?}"));
    }
    None
}

/// First `len`-character window of `needle` found in `haystack`, ignoring case.
fn shared_span(needle: &str, haystack: &str, len: usize) -> Option<String> {
    let needle: Vec<char> = needle.to_lowercase().chars().collect();
    let haystack = haystack.to_lowercase();
    if needle.len() < len {
        return None;
    }
    (0..=needle.len() - len)
        .map(|i| needle[i..i + len].iter().collect::<String>())
        .find(|w| haystack.contains(w.as_str()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedEdit {
    pub edit: PromptEdit,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEditReport {
    pub applied: Vec<PromptEdit>,
    pub rejected: Vec<RejectedEdit>,
    pub removed_for_budget: Vec<PromptRule>,
}

fn find_rule(rules: &RuleSet, target: &str) -> Option<usize> {
    let t = target.trim();
    rules
        .rules()
        .iter()
        .position(|r| r.id == t)
        .or_else(|| rules.rules().iter().position(|r| r.body.eq_ignore_ascii_case(t)))
}

/// Apply edits in order, then trim to the rule budget by dropping the least
/// cited rules (oldest first among equals).
pub fn apply_prompt_edits(
    rules: &mut RuleSet,
    edits: &[PromptEdit],
    case: &CaseRecord,
    corpus_ids: &[u64],
    episode: u32,
) -> PromptEditReport {
    let mut report = PromptEditReport::default();
    for edit in edits {
        match apply_one(rules, edit, case, corpus_ids, episode) {
            Ok(()) => report.applied.push(edit.clone()),
            Err(reason) => report.rejected.push(RejectedEdit {
                edit: edit.clone(),
                reason,
            }),
        }
    }
    while rules.len() > rules.budget {
        let victim = rules
            .rules()
            .iter()
            .enumerate()
            .min_by_key(|(i, r)| (r.cited_count, r.created_episode, *i))
            .map(|(i, _)| i)
            .expect("non-empty over budget");
        report.removed_for_budget.push(rules.rules_mut().remove(victim));
    }
    report
}

fn apply_one(
    rules: &mut RuleSet,
    edit: &PromptEdit,
    case: &CaseRecord,
    corpus_ids: &[u64],
    episode: u32,
) -> std::result::Result<(), String> {
    match edit.kind {
        EditKind::Add => {
            let body = edit.new_body.as_deref().ok_or("add without a body")?;
            if let Some(reason) = gate_rule_body(body, case, corpus_ids) {
                return Err(reason);
            }
            if find_rule(rules, body).is_some() {
                return Err("rule already present".into());
            }
            rules.push(body, episode);
        }
        EditKind::Delete => {
            if edit.targets.is_empty() {
                return Err("delete without a target".into());
            }
            let mut idx = Vec::new();
            for t in &edit.targets {
                idx.push(find_rule(rules, t).ok_or_else(|| format!("no rule matches {t:?}"))?);
            }
            idx.sort_unstable();
            idx.dedup();
            for i in idx.into_iter().rev() {
                rules.rules_mut().remove(i);
            }
        }
        EditKind::Merge => {
            let body = edit.new_body.as_deref().ok_or("merge without a body")?;
            if edit.targets.len() < 2 {
                return Err("merge needs at least two rules".into());
            }
            let mut idx = Vec::new();
            for t in &edit.targets {
                idx.push(find_rule(rules, t).ok_or_else(|| format!("no rule matches {t:?}"))?);
            }
            idx.sort_unstable();
            idx.dedup();
            if idx.len() < 2 {
                return Err("merge targets name the same rule".into());
            }
            if let Some(reason) = gate_rule_body(body, case, corpus_ids) {
                return Err(reason);
            }
            let cited: u32 = idx.iter().map(|&i| rules.rules()[i].cited_count).sum();
            for i in idx.into_iter().rev() {
                rules.rules_mut().remove(i);
            }
            rules.push(body, episode);
            rules.rules_mut().last_mut().expect("just pushed").cited_count = cited;
        }
    }
    Ok(())
}

/// Count, per rule, the turn rationales that quote its body.
pub fn cite_rules(rules: &mut RuleSet, grades: &SessionGrade) {
    let rationales: Vec<String> = grades.per_turn.iter().map(|g| g.rationale.to_lowercase()).collect();
    for rule in rules.rules_mut() {
        let body = rule.body.to_lowercase();
        if body.is_empty() {
            continue;
        }
        rule.cited_count += rationales.iter().filter(|r| r.contains(&body)).count() as u32;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedMemory {
    pub proposal: MemoryProposal,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEditReport {
    pub deleted: Vec<String>,
    pub unmatched_deletes: Vec<String>,
    pub added: Vec<String>,
    pub rejected: Vec<RejectedMemory>,
    pub evicted: Vec<String>,
}

/// Turn whose "Type: text" or bare text matches the proposed action.
fn infer_turn(action: &str, transcript: &[TurnRecord]) -> u32 {
    let a = action.trim();
    transcript
        .iter()
        .find(|r| {
            let full = format!("{}: {}", r.action.action_type_str(), r.action.text());
            full.eq_ignore_ascii_case(a) || r.action.text().eq_ignore_ascii_case(a)
        })
        .map_or(0, |r| r.turn_id)
}

/// Deletes first, then adds, then eviction down to the memory budget.
pub fn apply_memory_edits(
    store: &mut MemoryStore,
    adds: &[MemoryProposal],
    deletes: &[String],
    transcript: &[TurnRecord],
    episode: u32,
    eviction: &EvictionConfig,
) -> MemoryEditReport {
    let (deleted, unmatched_deletes) = store.delete_entries(deletes);
    let mut report = MemoryEditReport {
        deleted,
        unmatched_deletes,
        ..Default::default()
    };
    for p in adds {
        let entry = MemoryEntry {
            id: p.id.clone().unwrap_or_default(),
            context_before_action: p.context_before_action.trim().to_string(),
            action: p.action.trim().to_string(),
            outcome: p.outcome.trim().to_string(),
            grade: p.grade,
            rationale: p.rationale.trim().to_string(),
            created_episode: episode,
            created_turn: infer_turn(&p.action, transcript),
            times_retrieved: 0,
            last_retrieved_episode: 0,
        };
        match store.upsert_entries(vec![entry]) {
            Ok(ids) => report.added.extend(ids),
            Err(e) => report.rejected.push(RejectedMemory {
                proposal: p.clone(),
                reason: e.to_string(),
            }),
        }
    }
    report.evicted = store.evict_to_budget(episode, eviction);
    report
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub episode: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
    pub prompt: PromptEditReport,
    pub memory: MemoryEditReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::scripted::SequenceScript;
    use std::path::Path;

    fn case() -> CaseRecord {
        CaseRecord {
            id: 731,
            case_information: "A 36-year-old female presented with an 18-year history of intermittent dizziness.".into(),
            physical_examination: "Normal.".into(),
            diagnostic_tests: String::new(),
            final_diagnosis: "Teratoma".into(),
            abstract_override: None,
        }
    }

    fn fixture_text() -> String {
        let script =
            SequenceScript::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/case731.sequence.json")).unwrap();
        script.replies[&AgentRole::Evolver][0].clone()
    }

    #[test]
    fn parses_fixture() {
        let out = parse_evolver_output(&fixture_text()).unwrap();
        assert_eq!(out.prompt_edits.len(), 2);
        assert!(out.prompt_edits.iter().all(|e| e.kind == EditKind::Add));
        assert_eq!(out.memory_adds.len(), 1);
        assert_eq!(out.memory_adds[0].grade, GradeLabel::HighYield);
        assert_eq!(out.memory_adds[0].action, "OrderTest: CT head (posterior fossa focus)");
        assert!(out.memory_deletes.is_empty());
    }

    #[test]
    fn parses_template_shape() {
        let raw = "Prompt edits:\nAdd:\n\"Ask about onset.\"\n\nDelete:\n\nMerge:\n\"old rule B\" + \"old rule C\" -> \"new merged rule\"\n\n\
                   Justification:\nOne paragraph.\n\nMemory adds (JSON list):\n[]\n\nMemory deletes (JSON list of ids or short descriptors):\n[\"m_000001\"]\n";
        let out = parse_evolver_output(raw).unwrap();
        assert_eq!(
            out.prompt_edits,
            vec![
                PromptEdit::add("Ask about onset."),
                PromptEdit::merge(vec!["old rule B".into(), "old rule C".into()], "new merged rule"),
            ]
        );
        assert_eq!(out.justification, "One paragraph.");
        assert_eq!(out.memory_deletes, ["m_000001"]);
    }

    #[test]
    fn parse_errors() {
        assert!(parse_evolver_output("Prompt edits:\nAdd:\n\"x\"\n").unwrap_err().to_string().contains("Justification"));
        let bad_json = "Prompt edits:\nJustification: j\nMemory adds (JSON list):\n[{\"action\":\"a\"}]";
        assert!(parse_evolver_output(bad_json).unwrap_err().to_string().contains("context_before_action"));
        let unknown = "Prompt edits:\nAdd:\nRewrite:\n\"x\"\nJustification: j";
        assert!(parse_evolver_output(unknown).unwrap_err().to_string().contains("unknown section"));
        let bad_label = "Justification: j\nMemory adds (JSON list):\n[{\"context_before_action\":\"c\",\"action\":\"a\",\"outcome\":\"o\",\"grade\":\"GREAT\",\"rationale\":\"r\"}]";
        assert!(parse_evolver_output(bad_label).is_err());
    }

    #[test]
    fn gate_rejects_ids_and_copied_text() {
        let c = case();
        assert!(gate_rule_body("Case 731 needs MRI.", &c, &[]).unwrap().contains("731"));
        assert!(gate_rule_body("Use ECG 12-lead early.", &c, &[12]).is_some());
        assert!(gate_rule_body("Consider history of intermittent dizziness.", &c, &[]).is_some());
        assert!(gate_rule_body("Order imaging for chronic vertigo.", &c, &[]).is_none());
        assert!(gate_rule_body(&"a".repeat(301), &c, &[]).is_some());
        // exactly 12 shared characters is allowed
        assert!(gate_rule_body("x 18-year his y", &c, &[]).is_none());
        assert!(gate_rule_body("x 18-year hist y", &c, &[]).is_some());
    }

    #[test]
    fn budget_removes_least_cited_oldest() {
        let mut rules = RuleSet::new(3);
        rules.push("old uncited", 1);
        rules.push("old cited", 1);
        rules.rules_mut()[1].cited_count = 2;
        let report = apply_prompt_edits(
            &mut rules,
            &[PromptEdit::add("new one"), PromptEdit::add("new two")],
            &case(),
            &[],
            5,
        );
        assert_eq!(report.removed_for_budget.len(), 1);
        assert_eq!(report.removed_for_budget[0].body, "old uncited");
        let bodies: Vec<&str> = rules.rules().iter().map(|r| r.body.as_str()).collect();
        assert_eq!(bodies, ["old cited", "new one", "new two"]);
    }

    #[test]
    fn merge_and_delete() {
        let mut rules = RuleSet::new(10);
        rules.push("rule b", 1);
        rules.push("rule c", 1);
        rules.push("rule d", 1);
        let report = apply_prompt_edits(
            &mut rules,
            &[
                PromptEdit::merge(vec!["Rule B".into(), "r_0002".into()], "rule bc"),
                PromptEdit::delete("rule d"),
                PromptEdit::delete("missing"),
                PromptEdit::add("Patient 731 specific"),
            ],
            &case(),
            &[],
            2,
        );
        assert_eq!(report.applied.len(), 2);
        assert_eq!(report.rejected.len(), 2);
        let bodies: Vec<&str> = rules.rules().iter().map(|r| r.body.as_str()).collect();
        assert_eq!(bodies, ["rule bc"]);
    }

    #[test]
    fn citation_counts() {
        use crate::grader::TurnGrade;
        let mut rules = RuleSet::new(5);
        rules.push("Prefer ECG first", 1);
        rules.push("Unused rule", 1);
        let grade = |r: &str| TurnGrade {
            turn_id: 1,
            label: GradeLabel::HighYield,
            rationale: r.into(),
        };
        let grades = SessionGrade {
            per_turn: vec![grade("Followed 'prefer ECG first'."), grade("Again: Prefer ECG first.")],
            summary: "Prefer ECG first".into(),
        };
        cite_rules(&mut rules, &grades);
        assert_eq!(rules.rules()[0].cited_count, 2);
        assert_eq!(rules.rules()[1].cited_count, 0);
    }

    #[test]
    fn memory_edit_order() {
        use crate::env::{Action, ActionType, TurnAction};
        let mut store = MemoryStore::new();
        let proposal = |action: &str, grade| MemoryProposal {
            id: None,
            context_before_action: "ctx".into(),
            action: action.into(),
            outcome: "out".into(),
            grade,
            rationale: "why".into(),
        };
        let transcript = vec![TurnRecord {
            turn_id: 4,
            action: TurnAction::Valid(Action::new(ActionType::OrderTest, "CT head").unwrap()),
            observation_text: "mass".into(),
            cost: 1200.0,
            forced: None,
        }];
        let cfg = EvictionConfig { budget: 1, alpha: 1.0, beta: 0.05 };
        let r = apply_memory_edits(&mut store, &[proposal("OrderTest: CT head", GradeLabel::HighYield)], &[], &transcript, 1, &cfg);
        assert_eq!(r.added, ["m_000001"]);
        assert_eq!(store.entries()[0].created_turn, 4);

        let r = apply_memory_edits(
            &mut store,
            &[proposal("AskQuestion: x", GradeLabel::LowYield), proposal("AskQuestion: y", GradeLabel::CriticalError)],
            &["m_000001".into()],
            &transcript,
            2,
            &cfg,
        );
        assert_eq!(r.deleted, ["m_000001"]);
        assert_eq!(r.rejected.len(), 1);
        assert_eq!(r.added, ["m_000002"]);
        assert!(r.evicted.is_empty());
        assert_eq!(store.len(), 1);
    }
}
