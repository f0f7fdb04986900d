//! Everything needed to reproduce a run: model identifiers and decoding
//! settings per role, budgets, case order, cost table version, retrieval
//! and eviction settings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentRole, Gateway, RoleSettings};
use crate::belief::GraderThresholds;
use crate::cost::CostConfig;
use crate::error::{Error, Result};

pub const ACTION_PARSING_RULES: &str = "One JSON object with exactly the keys action_type \
(AskQuestion | OrderTest | SubmitDiagnosis) and action_text (trimmed, non-empty). The first \
well-formed object in a reply is accepted and surrounding text is flagged as lenient. A reply \
that does not parse gets one reformat request that does not count as a turn; a second failure \
is logged as an InvalidAction turn with observation INVALID_ACTION_FORMAT.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderInfo {
    pub id: String,
    pub dimension: usize,
    pub index: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionInfo {
    pub hardware: String,
    pub calls: String,
}

impl ExecutionInfo {
    pub fn current() -> Self {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self {
            hardware: format!("{}-{} ({threads} hardware threads)", std::env::consts::ARCH, std::env::consts::OS),
            calls: "sequential, unbatched".into(),
        }
    }
}

/// Run-level settings recorded next to the per-role model entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestContext {
    pub mode: String,
    pub t_max: u32,
    pub abstract_sentences: usize,
    pub strict_grounding: bool,
    pub corpus_path: String,
    pub case_order: Vec<u64>,
    pub case_order_digest: String,
    pub cost_table_path: String,
    pub cost_table_version: String,
    pub costs: CostConfig,
    pub rule_budget: usize,
    pub memory_budget: usize,
    pub retrieval_k: usize,
    pub embedder: EmbedderInfo,
    pub eviction_alpha: f64,
    pub eviction_beta: f64,
    pub thresholds: GraderThresholds,
    pub seeds: BTreeMap<String, u64>,
    pub action_parsing: String,
    pub se_note: String,
    pub execution: ExecutionInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub models: BTreeMap<AgentRole, String>,
    pub decoding: BTreeMap<AgentRole, RoleSettings>,
    #[serde(flatten)]
    pub context: ManifestContext,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        for role in AgentRole::ALL {
            if !self.models.contains_key(&role) || !self.decoding.contains_key(&role) {
                return Err(Error::Manifest(format!("no model entry for role {role}")));
            }
        }
        let c = &self.context;
        if c.cost_table_version.trim().is_empty() {
            return Err(Error::Manifest("cost table version is missing".into()));
        }
        if c.t_max == 0 || c.rule_budget == 0 || c.memory_budget == 0 || c.retrieval_k == 0 {
            return Err(Error::Manifest("t_max, budgets and retrieval k must be at least 1".into()));
        }
        if c.embedder.id.is_empty() || c.embedder.dimension == 0 {
            return Err(Error::Manifest("embedder id and dimension are required".into()));
        }
        if c.case_order_digest.is_empty() || c.action_parsing.is_empty() {
            return Err(Error::Manifest("case order digest and action parsing rules are required".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Attach per-role model labels and decoding settings from the gateway and
/// check that every required field is filled.
pub fn record_manifest(gateway: &Gateway, context: ManifestContext) -> Result<RunManifest> {
    let manifest = RunManifest {
        models: AgentRole::ALL.iter().map(|r| (*r, gateway.model_label(*r))).collect(),
        decoding: AgentRole::ALL.iter().map(|r| (*r, gateway.settings(*r).clone())).collect(),
        context,
    };
    manifest.validate()?;
    Ok(manifest)
}
