//! Versioned cost table with alias matching, and per-action / per-episode
//! cost accounting in normalized cost units.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{ActionType, TurnAction, TurnRecord};
use crate::error::{read_to_string, Error, Result};
use crate::text::normalize_ws_lower;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Lab,
    Imaging,
    Exam,
    Other,
}

impl std::str::FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "lab" => Ok(Self::Lab),
            "imaging" => Ok(Self::Imaging),
            "exam" => Ok(Self::Exam),
            "other" => Ok(Self::Other),
            other => Err(Error::CostTable(format!("unknown entry type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub kind: CostKind,
    pub cost: f64,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub question_cost: f64,
    pub submit_cost: f64,
    pub invalid_cost: f64,
    pub unknown_test_cost: f64,
    /// Empty means "take the version line from the table file".
    #[serde(default)]
    pub table_version: String,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            question_cost: 10.0,
            submit_cost: 0.0,
            invalid_cost: 5.0,
            unknown_test_cost: 50.0,
            table_version: String::new(),
        }
    }
}

impl CostConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("question_cost", self.question_cost),
            ("submit_cost", self.submit_cost),
            ("invalid_cost", self.invalid_cost),
            ("unknown_test_cost", self.unknown_test_cost),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CostTable {
    version: String,
    entries: Vec<CostEntry>,
    index: HashMap<String, usize>,
}

/// Outcome of a cost-table lookup.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved {
    Known(String),
    Unknown,
}

impl CostTable {
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn entries(&self) -> &[CostEntry] {
        &self.entries
    }

    pub fn from_entries(version: impl Into<String>, entries: Vec<CostEntry>) -> Result<Self> {
        let mut table = CostTable {
            version: version.into(),
            entries: Vec::with_capacity(entries.len()),
            index: HashMap::new(),
        };
        for entry in entries {
            table.push(entry)?;
        }
        Ok(table)
    }

    fn push(&mut self, mut entry: CostEntry) -> Result<()> {
        if !(entry.cost >= 0.0 && entry.cost.is_finite()) {
            return Err(Error::CostTable(format!(
                "entry `{}` has negative or non-finite cost {}",
                entry.name, entry.cost
            )));
        }
        entry.name = normalize_ws_lower(&entry.name);
        if entry.name.is_empty() {
            return Err(Error::CostTable("entry with empty name".into()));
        }
        let mut aliases: Vec<String> = Vec::new();
        for alias in entry.aliases.iter().map(|a| normalize_ws_lower(a)) {
            if !alias.is_empty() && alias != entry.name && !aliases.contains(&alias) {
                aliases.push(alias);
            }
        }
        entry.aliases = aliases;

        let slot = self.entries.len();
        for key in std::iter::once(&entry.name).chain(entry.aliases.iter()) {
            if let Some(&other) = self.index.get(key) {
                return Err(Error::CostTable(format!(
                    "`{key}` is claimed by both `{}` and `{}`",
                    self.entries[other].name, entry.name
                )));
            }
        }
        for key in std::iter::once(&entry.name).chain(entry.aliases.iter()) {
            self.index.insert(key.clone(), slot);
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Exact lookup after lowercasing, trimming and whitespace collapsing.
    pub fn lookup(&self, raw: &str) -> Option<&CostEntry> {
        self.index.get(&normalize_ws_lower(raw)).map(|&i| &self.entries[i])
    }
}

/// Parse the `name,type,cost,aliases` table. Lines starting with `#` are
/// comments; `# version: <text>` sets the table version.
pub fn parse_cost_table(text: &str) -> Result<CostTable> {
    let mut version = String::new();
    let mut body = String::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("version:") {
                version = v.trim().to_string();
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::CostTable(e.to_string()))?
        .iter()
        .map(str::to_lowercase)
        .collect::<Vec<_>>();
    if headers != ["name", "type", "cost", "aliases"] {
        return Err(Error::CostTable(format!(
            "expected header `name,type,cost,aliases`, got `{}`",
            headers.join(",")
        )));
    }

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::CostTable(e.to_string()))?;
        if record.len() < 3 {
            return Err(Error::CostTable(format!("short row: {record:?}")));
        }
        let name = record[0].to_string();
        let kind = record[1].parse()?;
        let cost: f64 = record[2]
            .parse()
            .map_err(|_| Error::CostTable(format!("entry `{name}`: bad cost `{}`", &record[2])))?;
        let aliases = record
            .get(3)
            .map(|a| a.split('|').map(str::to_string).collect())
            .unwrap_or_default();
        entries.push(CostEntry {
            name,
            kind,
            cost,
            aliases,
        });
    }
    CostTable::from_entries(version, entries)
}

pub fn load_cost_table(path: &Path) -> Result<CostTable> {
    parse_cost_table(&read_to_string(path)?)
}

/// A cost table together with the configured non-test costs.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub table: CostTable,
    pub config: CostConfig,
}

impl CostModel {
    pub fn new(table: CostTable, mut config: CostConfig) -> Result<Self> {
        config.validate()?;
        if config.table_version.is_empty() {
            config.table_version = table.version().to_string();
        }
        Ok(Self { table, config })
    }

    pub fn resolve_test(&self, raw: &str) -> (Resolved, f64) {
        match self.table.lookup(raw) {
            Some(entry) => (Resolved::Known(entry.name.clone()), entry.cost),
            None => (Resolved::Unknown, self.config.unknown_test_cost),
        }
    }

    pub fn action_cost(&self, action: &TurnAction) -> f64 {
        match action {
            TurnAction::Valid(a) => match a.action_type {
                ActionType::AskQuestion => self.config.question_cost,
                ActionType::OrderTest => self.resolve_test(&a.action_text).1,
                ActionType::SubmitDiagnosis => self.config.submit_cost,
            },
            TurnAction::Invalid { .. } => self.config.invalid_cost,
        }
    }
}

/// Sum of per-turn costs, in turn order.
pub fn total_cost(transcript: &[TurnRecord]) -> f64 {
    transcript.iter().map(|r| r.cost).sum()
}

/// Serialize integral costs without a trailing `.0` so logs read `"cost": 1200`.
pub(crate) mod units {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.fract() == 0.0 && v.abs() < 9.0e15 {
            s.serialize_i64(*v as i64)
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }
}

pub(crate) fn format_units(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
