//! Post-episode process grading: one label and rationale per turn plus a
//! session summary.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cost::format_units;
use crate::env::TurnRecord;
use crate::error::{Error, Result};
use crate::gateway::templates::{render_template, TemplateId};
use crate::gateway::{AgentRole, ChatMessage, Gateway};
use crate::text::normalize_ws_lower;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GradeLabel {
    HighYield,
    LowYield,
    Inefficient,
    CriticalError,
}

impl GradeLabel {
    pub const ALL: [GradeLabel; 4] = [
        GradeLabel::HighYield,
        GradeLabel::LowYield,
        GradeLabel::Inefficient,
        GradeLabel::CriticalError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GradeLabel::HighYield => "HIGH_YIELD",
            GradeLabel::LowYield => "LOW_YIELD",
            GradeLabel::Inefficient => "INEFFICIENT",
            GradeLabel::CriticalError => "CRITICAL_ERROR",
        }
    }

    /// Labels strong enough to be written to memory.
    pub fn is_strong(self) -> bool {
        matches!(self, GradeLabel::HighYield | GradeLabel::CriticalError)
    }
}

impl fmt::Display for GradeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradeLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::GraderParse(format!("unknown label {:?}", s.trim())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnGrade {
    pub turn_id: u32,
    pub label: GradeLabel,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionGrade {
    pub per_turn: Vec<TurnGrade>,
    pub summary: String,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: String,
}

impl SessionGrade {
    pub fn label(&self, turn_id: u32) -> Option<GradeLabel> {
        self.per_turn.iter().find(|g| g.turn_id == turn_id).map(|g| g.label)
    }

    /// One `{turn_id, label, rationale}` line per turn, then `{summary}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for g in &self.per_turn {
            out.push_str(&serde_json::to_string(g).expect("grade serializes"));
            out.push('\n');
        }
        let summary = SummaryLine { summary: self.summary.clone() };
        out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut per_turn = Vec::new();
        let mut summary = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let value: serde_json::Value = serde_json::from_str(line)?;
            if value.get("summary").is_some() {
                summary = Some(serde_json::from_value::<SummaryLine>(value)?.summary);
            } else {
                per_turn.push(serde_json::from_value(value)?);
            }
        }
        let summary = summary.ok_or_else(|| Error::GraderParse("grades file has no summary record".into()))?;
        Ok(Self { per_turn, summary })
    }

    /// Text form bound into the evolver prompt.
    pub fn render(&self) -> String {
        let mut lines: Vec<String> = self
            .per_turn
            .iter()
            .map(|g| format!("Turn {} label: {}\nRationale: {}", g.turn_id, g.label, g.rationale))
            .collect();
        lines.push(format!("Session summary:\n{}", self.summary));
        lines.join("\n")
    }
}

/// Transcript text shown to the grader and evolver.
pub fn render_transcript(transcript: &[TurnRecord]) -> String {
    transcript
        .iter()
        .map(|r| {
            format!(
                "Turn {}:\nAction: {}: {}\nObservation: {}",
                r.turn_id,
                r.action.action_type_str(),
                r.action.text(),
                r.observation_text
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Per-turn costs followed by the total.
pub fn cost_breakdown(transcript: &[TurnRecord]) -> String {
    let mut lines: Vec<String> = transcript
        .iter()
        .map(|r| format!("Turn {} ({}): {}", r.turn_id, r.action.action_type_str(), format_units(r.cost)))
        .collect();
    let total: f64 = transcript.iter().map(|r| r.cost).sum();
    lines.push(format!("Total: {}", format_units(total)));
    lines.join("\n")
}

static TURN_HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^[ \t]*turn[ \t]+(\d+)\b").unwrap());
static SUMMARY_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[ \t]*session[ \t]+summary[ \t]*:").unwrap());
static LABEL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)label[ \t]*:[ \t]*([A-Za-z_]+)").unwrap());
static RATIONALE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)rationale[ \t]*:").unwrap());
static TURN_MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bturn[ \t]+(\d+)").unwrap());

/// Accepts both `Turn N label: X` lines and `Turn N:` blocks with a
/// `Label:` line, each followed by `Rationale:`.
pub fn parse_grader_output(raw: &str, expected_turns: u32) -> Result<SessionGrade> {
    let summary_at = SUMMARY_HEADER.find(raw);
    let body = &raw[..summary_at.map_or(raw.len(), |m| m.start())];
    let headers: Vec<(u32, usize)> = TURN_HEADER
        .captures_iter(body)
        .filter_map(|c| Some((c[1].parse().ok()?, c.get(0)?.start())))
        .collect();

    let mut problems = Vec::new();
    let mut found: BTreeMap<u32, TurnGrade> = BTreeMap::new();
    for (i, &(turn_id, start)) in headers.iter().enumerate() {
        let end = headers.get(i + 1).map_or(body.len(), |h| h.1);
        let segment = &body[start..end];
        let label = match LABEL.captures(segment) {
            Some(c) => match c[1].parse::<GradeLabel>() {
                Ok(l) => l,
                Err(_) => {
                    problems.push(format!("turn {turn_id}: unknown label {}", &c[1]));
                    continue;
                }
            },
            None => {
                problems.push(format!("turn {turn_id}: no label"));
                continue;
            }
        };
        let rationale = RATIONALE
            .find(segment)
            .map(|m| segment[m.end()..].trim().to_string())
            .unwrap_or_default();
        if turn_id == 0 || turn_id > expected_turns {
            problems.push(format!("turn {turn_id} is outside 1..={expected_turns}"));
        } else if found.insert(turn_id, TurnGrade { turn_id, label, rationale }).is_some() {
            problems.push(format!("turn {turn_id} graded twice"));
        }
    }
    let missing: Vec<String> = (1..=expected_turns)
        .filter(|t| !found.contains_key(t))
        .map(|t| t.to_string())
        .collect();
    if !missing.is_empty() {
        problems.push(format!("missing turn(s) {}", missing.join(", ")));
    }
    let summary = summary_at.map(|m| raw[m.end()..].trim().to_string()).unwrap_or_default();
    if summary.is_empty() {
        problems.push("missing session summary".into());
    }
    if !problems.is_empty() {
        return Err(Error::GraderParse(problems.join("; ")));
    }
    Ok(SessionGrade {
        per_turn: found.into_values().collect(),
        summary,
    })
}

const COVERAGE_REMINDER: &str = "Your reply could not be used. Grade every turn of the transcript \
exactly once using the requested format (Turn N, Label, Rationale), then give the Session summary.";

pub fn grade_session(transcript: &[TurnRecord], submission: &str, score: u32, gateway: &Gateway) -> Result<SessionGrade> {
    let transcript_text = render_transcript(transcript);
    let costs = cost_breakdown(transcript);
    let score_text = score.to_string();
    let mut messages = render_template(
        TemplateId::Grader,
        &[
            ("transcript", &transcript_text),
            ("submission", submission),
            ("S", &score_text),
            ("cost_breakdown", &costs),
        ],
    )?;
    let expected = transcript.len() as u32;
    let first = gateway.complete(AgentRole::Grader, messages.clone())?;
    match parse_grader_output(&first, expected) {
        Ok(g) => Ok(g),
        Err(Error::GraderParse(reason)) => {
            messages.push(ChatMessage::assistant(first));
            messages.push(ChatMessage::user(format!("{COVERAGE_REMINDER} Problems: {reason}.")));
            let second = gateway.complete(AgentRole::Grader, messages)?;
            parse_grader_output(&second, expected)
        }
        Err(e) => Err(e),
    }
}

/// Turns whose rationale refers to a later turn, either by number or by
/// quoting a later observation. Returned as (turn, referenced later turn).
pub fn hindsight_flags(grade: &SessionGrade, transcript: &[TurnRecord]) -> Vec<(u32, u32)> {
    let mut flags = Vec::new();
    for g in &grade.per_turn {
        let rationale = normalize_ws_lower(&g.rationale);
        let mut refs: Vec<u32> = TURN_MENTION
            .captures_iter(&g.rationale)
            .filter_map(|c| c[1].parse().ok())
            .filter(|&t| t > g.turn_id)
            .collect();
        for later in transcript.iter().filter(|r| r.turn_id > g.turn_id) {
            let obs = normalize_ws_lower(&later.observation_text);
            if obs.chars().count() >= 20 {
                let probe: String = obs.chars().take(40).collect();
                if rationale.contains(&probe) {
                    refs.push(later.turn_id);
                }
            }
        }
        refs.sort_unstable();
        refs.dedup();
        flags.extend(refs.into_iter().map(|r| (g.turn_id, r)));
    }
    flags
}
