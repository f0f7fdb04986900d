//! Hidden case files: loading, validation and the initial abstract shown to
//! the actor.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{read_to_string, Error, Result};

/// One hidden case. The environment's latent state for an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: u64,
    pub case_information: String,
    pub physical_examination: String,
    /// Free text; image descriptions are kept as opaque text.
    pub diagnostic_tests: String,
    pub final_diagnosis: String,
    #[serde(rename = "abstract", default, skip_serializing_if = "Option::is_none")]
    pub abstract_override: Option<String>,
}

impl CaseRecord {
    /// The full case file as bound into the Patient and Examination prompts.
    pub fn render_case_file(&self) -> String {
        format!(
            "CASE INFORMATION:\n{}\n\nPHYSICAL EXAMINATION:\n{}\n\nDIAGNOSTIC TESTS:\n{}\n\nFINAL DIAGNOSIS:\n{}",
            self.case_information, self.physical_examination, self.diagnostic_tests, self.final_diagnosis
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub source_path: String,
    pub case_count: usize,
    pub case_order: Vec<u64>,
}

impl CorpusManifest {
    /// Hex SHA-256 over the comma-joined case order.
    pub fn order_digest(&self) -> String {
        let joined = self
            .case_order
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        hex::encode(Sha256::digest(joined.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractConfig {
    pub sentences: usize,
}

impl Default for AbstractConfig {
    fn default() -> Self {
        Self { sentences: 3 }
    }
}

/// Load a corpus from a JSON array or one-object-per-line file. Case order is
/// file order.
pub fn load_corpus(path: &Path) -> Result<(Vec<CaseRecord>, CorpusManifest)> {
    let text = read_to_string(path)?;
    let cases = parse_corpus(&text)?;
    let manifest = CorpusManifest {
        source_path: path.display().to_string(),
        case_count: cases.len(),
        case_order: cases.iter().map(|c| c.id).collect(),
    };
    Ok((cases, manifest))
}

pub fn parse_corpus(text: &str) -> Result<Vec<CaseRecord>> {
    let trimmed = text.trim_start();
    let raw: Vec<Value> = if trimmed.is_empty() {
        Vec::new()
    } else if trimmed.starts_with('[') {
        serde_json::from_str(trimmed)?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?
    };

    let mut seen = HashSet::new();
    let mut cases = Vec::with_capacity(raw.len());
    for (idx, value) in raw.into_iter().enumerate() {
        let case = validate_record(value, idx)?;
        if !seen.insert(case.id) {
            return Err(Error::DuplicateCase(case.id));
        }
        cases.push(case);
    }
    Ok(cases)
}

fn validate_record(value: Value, idx: usize) -> Result<CaseRecord> {
    let Value::Object(obj) = value else {
        return Err(Error::CaseValidation {
            id: format!("#{idx}"),
            field: "<record>".into(),
            reason: "record is not a JSON object".into(),
        });
    };
    let id = match obj.get("id") {
        Some(Value::Number(n)) => match n.as_u64() {
            Some(id) if id > 0 => id,
            _ => return Err(field_err(&format!("#{idx}"), "id", "must be a positive integer")),
        },
        Some(_) => return Err(field_err(&format!("#{idx}"), "id", "must be a positive integer")),
        None => return Err(field_err(&format!("#{idx}"), "id", "missing")),
    };
    let id_label = id.to_string();
    let case_information = text_field(&obj, &id_label, "case_information", false)?;
    let physical_examination = text_field(&obj, &id_label, "physical_examination", false)?;
    let diagnostic_tests = text_field(&obj, &id_label, "diagnostic_tests", true)?;
    let final_diagnosis = text_field(&obj, &id_label, "final_diagnosis", false)?;
    let abstract_override = match obj.get("abstract") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(field_err(&id_label, "abstract", "must be a string")),
    };
    Ok(CaseRecord {
        id,
        case_information,
        physical_examination,
        diagnostic_tests,
        final_diagnosis,
        abstract_override,
    })
}

fn text_field(obj: &Map<String, Value>, id: &str, field: &str, may_be_empty: bool) -> Result<String> {
    match obj.get(field) {
        Some(Value::String(s)) if may_be_empty || !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(field_err(id, field, "must be non-empty")),
        Some(_) => Err(field_err(id, field, "must be a string")),
        None => Err(field_err(id, field, "missing")),
    }
}

fn field_err(id: &str, field: &str, reason: &str) -> Error {
    Error::CaseValidation {
        id: id.to_string(),
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

/// The problem statement the actor starts from: the override when present,
/// otherwise the leading sentences of `case_information`.
pub fn initial_abstract(case: &CaseRecord, config: &AbstractConfig) -> String {
    if let Some(text) = &case.abstract_override {
        return text.clone();
    }
    leading_sentences(&case.case_information, config.sentences)
}

/// First `n` sentences, where a sentence ends at `.` or `?` followed by
/// whitespace (or at end of text).
pub fn leading_sentences(text: &str, n: usize) -> String {
    if n == 0 {
        return String::new();
    }
    let mut count = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '.' || c == '?' {
            let boundary = match chars.peek() {
                Some((_, next)) => next.is_whitespace(),
                None => true,
            };
            if boundary {
                count += 1;
                if count == n {
                    return text[..i + c.len_utf8()].trim().to_string();
                }
            }
        }
    }
    text.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    #[test]
    fn loads_sample_cases() {
        let (cases, manifest) = load_corpus(&fixture("sample_cases.jsonl")).unwrap();
        assert_eq!(cases.len(), 5);
        assert_eq!(cases[0].id, 1);
        assert_eq!(cases[0].final_diagnosis, "Cutaneous meningeal heterotopia (CMH)");
        assert_eq!(manifest.case_order, vec![1, 2, 3, 4, 5]);
        assert_eq!(manifest.case_count, 5);
    }

    #[test]
    fn array_and_lines_are_equivalent() {
        let lines = std::fs::read_to_string(fixture("sample_cases.jsonl")).unwrap();
        let from_lines = parse_corpus(&lines).unwrap();
        let array = serde_json::to_string(&from_lines).unwrap();
        assert_eq!(parse_corpus(&array).unwrap(), from_lines);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let (cases, manifest) = load_corpus(&path).unwrap();
        assert!(cases.is_empty());
        assert_eq!(manifest.case_count, 0);
    }

    #[test]
    fn missing_final_diagnosis_names_id_and_field() {
        let err = parse_corpus(
            r#"{"id": 9, "case_information": "a.", "physical_examination": "b", "diagnostic_tests": ""}"#,
        )
        .unwrap_err();
        match err {
            Error::CaseValidation { id, field, .. } => {
                assert_eq!(id, "9");
                assert_eq!(field, "final_diagnosis");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rec = r#"{"id": 2, "case_information": "a.", "physical_examination": "b", "diagnostic_tests": "", "final_diagnosis": "x"}"#;
        let err = parse_corpus(&format!("{rec}\n{rec}\n")).unwrap_err();
        assert!(matches!(err, Error::DuplicateCase(2)));
    }

    #[test]
    fn abstract_override_is_verbatim() {
        let (cases, _) = load_corpus(&fixture("case731.jsonl")).unwrap();
        let expected = "A 36-year-old female presented with an 18-year history of intermittent dizziness and blurred vision, with nausea and vomiting. Symptoms improve after vomiting. In May 2020, posterior occipital tingling started and worsened with emotional agitation. By September 2021, dizziness and vomiting became more frequent.";
        assert_eq!(initial_abstract(&cases[0], &AbstractConfig::default()), expected);
    }

    #[test]
    fn fewer_sentences_than_requested() {
        assert_eq!(leading_sentences("Only one sentence here.", 3), "Only one sentence here.");
        assert_eq!(leading_sentences("", 3), "");
    }

    #[test]
    fn case_one_first_two_sentences() {
        let (cases, _) = load_corpus(&fixture("sample_cases.jsonl")).unwrap();
        let got = initial_abstract(&cases[0], &AbstractConfig { sentences: 2 });
        // Counted by hand from the sample record.
        assert_eq!(
            got,
            "A woman in her early 70s presented with a solitary, asymptomatic lump on her scalp. \
             The lesion was present since birth but showed some growth following minor local trauma \
             a couple of months prior to evaluation."
        );
    }

    #[test]
    fn decimal_points_are_not_boundaries() {
        assert_eq!(leading_sentences("Count rose from 0.3 to 1.2 units. Next.", 1), "Count rose from 0.3 to 1.2 units.");
    }

    #[test]
    fn abstracts_never_leak_diagnosis() {
        for name in ["sample_cases.jsonl", "case731.jsonl"] {
            let (cases, _) = load_corpus(&fixture(name)).unwrap();
            for case in &cases {
                let abs = crate::text::normalize_ws_lower(&initial_abstract(case, &AbstractConfig::default()));
                let dx = crate::text::normalize_ws_lower(&case.final_diagnosis);
                assert!(!abs.contains(&dx), "case {} abstract leaks diagnosis", case.id);
            }
        }
    }

    #[test]
    fn loading_is_idempotent() {
        let a = load_corpus(&fixture("sample_cases.jsonl")).unwrap();
        let b = load_corpus(&fixture("sample_cases.jsonl")).unwrap();
        assert_eq!(a, b);
    }
}
