//! Rubric grading of the submitted diagnosis against the hidden ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::gateway::{render_template, AgentRole, ChatMessage, Gateway, TemplateId};
use crate::text::normalize_ws_lower;

pub const DEFAULT_RUBRIC: &str = include_str!("../fixtures/rubric.txt");

const REFORMAT_REQUEST: &str = "Your reply could not be parsed. Reply again using exactly this format:\nS: <integer from 0 to 100>\nJustification: <2~5 sentences>";

const EMPTY_SUBMISSION: &str = "No diagnosis was submitted, so there is nothing to match against the ground truth.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResult {
    pub score: u32,
    pub justification: String,
}

/// Lowercase abbreviation to expansion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbbrevMap(BTreeMap<String, String>);

impl AbbrevMap {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let map: BTreeMap<String, String> = entries
            .into_iter()
            .map(|(k, v)| (k.trim().to_lowercase(), normalize_ws_lower(&v)))
            .collect();
        for (key, expansion) in &map {
            if let Some(hit) = expansion.split(' ').map(strip_punct).find(|w| map.contains_key(*w)) {
                return Err(Error::Config(format!(
                    "abbreviation `{key}` expands to text containing abbreviation `{hit}`"
                )));
            }
        }
        Ok(Self(map))
    }

    /// Two columns: abbreviation, then expansion (rest of the line). `#`
    /// starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Config(format!("abbreviation line without expansion: `{line}`")))?;
            entries.push((key.to_string(), rest.trim().to_string()));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

fn strip_punct(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Lowercase, single-space, and expand each abbreviation once.
pub fn normalize_diagnosis(text: &str, map: &AbbrevMap) -> String {
    normalize_ws_lower(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(|word| {
            let core = strip_punct(word);
            match map.get(core) {
                Some(expansion) if !core.is_empty() => word.replacen(core, expansion, 1),
                _ => word.to_string(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_judge_output(raw: &str) -> Result<JudgeResult> {
    let mut lines = raw.lines().map(str::trim).skip_while(|l| l.is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::JudgeParse("empty output".into()))?;
    let value = first
        .strip_prefix("S:")
        .or_else(|| first.strip_prefix("S :"))
        .ok_or_else(|| Error::JudgeParse(format!("first line is not `S: <int>`: `{first}`")))?
        .trim();
    let score: i64 = value
        .parse()
        .map_err(|_| Error::JudgeParse(format!("score `{value}` is not an integer")))?;
    if !(0..=100).contains(&score) {
        return Err(Error::JudgeParse(format!("score {score} outside [0, 100]")));
    }
    let justification = raw
        .split_once("Justification:")
        .map(|(_, rest)| rest.trim().to_string())
        .unwrap_or_default();
    Ok(JudgeResult {
        score: score as u32,
        justification,
    })
}

/// Grade `submission` against `ground_truth`. An empty submission scores 0
/// without a model call; an unparseable reply gets one reformat request.
pub fn grade_diagnosis(
    ground_truth: &str,
    submission: &str,
    gateway: &Gateway,
    rubric: &str,
    abbreviations: &AbbrevMap,
) -> Result<JudgeResult> {
    let submission = normalize_diagnosis(submission, abbreviations);
    if submission.is_empty() {
        return Ok(JudgeResult {
            score: 0,
            justification: EMPTY_SUBMISSION.into(),
        });
    }
    let truth = normalize_diagnosis(ground_truth, abbreviations);
    let mut messages = render_template(
        TemplateId::Judge,
        &[("rubric_text", rubric), ("ground_truth", &truth), ("submission", &submission)],
    )?;
    let first = gateway.complete(AgentRole::Judge, messages.clone())?;
    match parse_judge_output(&first) {
        Ok(result) => Ok(result),
        Err(_) => {
            messages.push(ChatMessage::assistant(first));
            messages.push(ChatMessage::user(REFORMAT_REQUEST));
            let second = gateway.complete(AgentRole::Judge, messages)?;
            parse_judge_output(&second)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatBackend, CompletionRequest};
    use std::sync::{Arc, Mutex};

    fn abbrevs() -> AbbrevMap {
        AbbrevMap::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/abbreviations.tsv")).unwrap()
    }

    #[test]
    fn normalization() {
        let map = abbrevs();
        assert_eq!(normalize_diagnosis("CMH", &map), "cutaneous meningeal heterotopia");
        assert_eq!(normalize_diagnosis("  Mature  Cystic Teratoma ", &map), "mature cystic teratoma");
        assert_eq!(normalize_diagnosis("", &map), "");
        assert_eq!(
            normalize_diagnosis("Microvenular hemangioma (MVH)", &map),
            "microvenular hemangioma (microvenular hemangioma)"
        );
    }

    #[test]
    fn cyclic_map_rejected() {
        assert!(AbbrevMap::parse("ab alpha bc\nbc beta\n").is_err());
    }

    #[test]
    fn parses_score_and_justification() {
        assert_eq!(
            parse_judge_output("S: 85\nJustification: close family.").unwrap(),
            JudgeResult { score: 85, justification: "close family.".into() }
        );
        assert!(matches!(parse_judge_output("S: 140\nJustification: x"), Err(Error::JudgeParse(_))));
        assert!(matches!(parse_judge_output("score eighty"), Err(Error::JudgeParse(_))));
        assert!(parse_judge_output("S: -1").is_err());
        assert!(parse_judge_output("S: 9.5").is_err());
    }

    /// Replies from a fixed queue and records how many calls were made.
    struct Queue(Mutex<Vec<String>>);

    impl ChatBackend for Queue {
        fn complete(&self, _r: &CompletionRequest) -> Result<String> {
            let mut q = self.0.lock().unwrap();
            if q.is_empty() {
                return Err(Error::Transport("no more replies".into()));
            }
            Ok(q.remove(0))
        }
    }

    fn gateway(replies: &[&str]) -> Gateway {
        Gateway::uniform(Arc::new(Queue(Mutex::new(replies.iter().map(|s| s.to_string()).collect()))))
    }

    #[test]
    fn empty_submission_skips_model() {
        let g = gateway(&[]);
        let r = grade_diagnosis("x", "   ", &g, DEFAULT_RUBRIC, &abbrevs()).unwrap();
        assert_eq!(r.score, 0);
        assert_eq!(g.log_len(), 0);
    }

    #[test]
    fn one_retry_then_error() {
        let g = gateway(&["nonsense", "S: 72\nJustification: ok."]);
        assert_eq!(grade_diagnosis("a", "b", &g, DEFAULT_RUBRIC, &abbrevs()).unwrap().score, 72);
        assert_eq!(g.log_len(), 2);

        let g = gateway(&["nonsense", "still nonsense", "S: 1"]);
        assert!(matches!(grade_diagnosis("a", "b", &g, DEFAULT_RUBRIC, &abbrevs()), Err(Error::JudgeParse(_))));
        assert_eq!(g.log_len(), 2);
    }

    #[test]
    fn prompt_carries_normalized_strings() {
        let g = gateway(&["S: 100\nJustification: same."]);
        grade_diagnosis("Cutaneous meningeal heterotopia (CMH)", "CMH", &g, DEFAULT_RUBRIC, &abbrevs()).unwrap();
        let log = g.take_log();
        let body = &log[0].messages[0].content;
        assert!(body.contains("SUBMITTED DIAGNOSIS:\ncutaneous meningeal heterotopia"));
        assert!(body.contains("Score 90~100:"));
    }
}
