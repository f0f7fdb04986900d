//! The diagnose / grade / evolve stream over a fixed case order, with
//! per-episode persistence, resume, and byte-level replay.
//!
//! Output layout under the run directory:
//!
//! ```text
//! manifest.json  checkpoint.json  metrics.json  skipped.jsonl
//! episodes/<i>.transcript.jsonl  <i>.grades.jsonl  <i>.evolve.json
//! episodes/<i>.result.json  <i>.calls.jsonl
//! rules/<i>.json  memory/<i>.json        (0 = initial state)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::actor::{decide_action, forced_draft, RuleSet};
use crate::belief::GraderThresholds;
use crate::corpus::{load_corpus, AbstractConfig, CaseRecord};
use crate::cost::{load_cost_table, total_cost, CostConfig, CostModel};
use crate::env::{read_transcript, transcript_to_jsonl, EnvConfig, Environment, TurnRecord};
use crate::error::{read_to_string, write_string, Error, Result};
use crate::evolver::{apply_memory_edits, apply_prompt_edits, cite_rules, propose_updates, EvolveInputs, EvolveReport};
use crate::gateway::{
    record_manifest, AgentRole, CallRecord, ChatBackend, EmbedderInfo, ExecutionInfo, Gateway, ManifestContext,
    RoleSettings, RunManifest, ScriptTable, ScriptedBackend, SequenceBackend, SequenceScript, ACTION_PARSING_RULES,
};
use crate::grader::{grade_session, hindsight_flags, SessionGrade};
use crate::judge::{grade_diagnosis, AbbrevMap, DEFAULT_RUBRIC};
use crate::memory::{retrieval_query, Embedder, EvictionConfig, HashEmbedder, MemoryStore};
use crate::metrics::{compute_metrics, EpisodeResult, RunMetrics, SE_NOTE};
use crate::simulated::SimulatedBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Evolving,
    StaticPrompt,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Evolving => "evolving",
            Mode::StaticPrompt => "static_prompt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    /// `builtin` or `remote`.
    pub kind: String,
    pub dimension: usize,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: "builtin".into(),
            dimension: 256,
            endpoint: None,
            model: None,
        }
    }
}

/// Backend spec per role: `simulated`, `http`, `scripted:<table.json>` or
/// `sequence:<replies.json>`. `default` covers roles without an override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub default: String,
    #[serde(flatten)]
    pub roles: BTreeMap<AgentRole, String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            default: "simulated".into(),
            roles: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub cost_table: PathBuf,
    pub abbreviations: Option<PathBuf>,
    pub rubric: Option<PathBuf>,
    pub initial_rules: Option<PathBuf>,
    pub initial_memory: Option<PathBuf>,
    pub mode: Mode,
    pub t_max: u32,
    pub k: usize,
    pub rule_budget: usize,
    pub memory_budget: usize,
    pub eviction_alpha: f64,
    pub eviction_beta: f64,
    pub abstract_sentences: usize,
    pub strict_grounding: bool,
    pub thresholds: GraderThresholds,
    pub costs: CostConfig,
    pub embedder: EmbedderConfig,
    pub backend: BackendConfig,
    pub roles: BTreeMap<AgentRole, RoleSettings>,
    pub seeds: BTreeMap<String, u64>,
    pub http_retries: u32,
    pub http_timeout_seconds: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eviction = EvictionConfig::default();
        Self {
            corpus: PathBuf::new(),
            cost_table: PathBuf::new(),
            abbreviations: None,
            rubric: None,
            initial_rules: None,
            initial_memory: None,
            mode: Mode::Evolving,
            t_max: 15,
            k: 5,
            rule_budget: 30,
            memory_budget: eviction.budget,
            eviction_alpha: eviction.alpha,
            eviction_beta: eviction.beta,
            abstract_sentences: AbstractConfig::default().sentences,
            strict_grounding: false,
            thresholds: GraderThresholds::default(),
            costs: CostConfig::default(),
            embedder: EmbedderConfig::default(),
            backend: BackendConfig::default(),
            roles: BTreeMap::new(),
            seeds: BTreeMap::new(),
            http_retries: 3,
            http_timeout_seconds: 60,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_spec(base: &Path, spec: &mut String) {
    for prefix in ["scripted:", "sequence:"] {
        if let Some(rest) = spec.strip_prefix(prefix) {
            let mut p = PathBuf::from(rest);
            resolve(base, &mut p);
            *spec = format!("{prefix}{}", p.display());
        }
    }
}

impl RunConfig {
    /// Parse TOML; relative paths are taken from the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.corpus);
        resolve(base, &mut self.cost_table);
        for p in [&mut self.abbreviations, &mut self.rubric, &mut self.initial_rules, &mut self.initial_memory]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        resolve_spec(base, &mut self.backend.default);
        for spec in self.backend.roles.values_mut() {
            resolve_spec(base, spec);
        }
    }

    pub fn eviction(&self) -> EvictionConfig {
        EvictionConfig {
            budget: self.memory_budget,
            alpha: self.eviction_alpha,
            beta: self.eviction_beta,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            t_max: self.t_max,
            abstract_config: AbstractConfig {
                sentences: self.abstract_sentences,
            },
            strict_grounding: self.strict_grounding,
        }
    }

    pub fn role_settings(&self, role: AgentRole) -> RoleSettings {
        self.roles.get(&role).cloned().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.as_os_str().is_empty() || self.cost_table.as_os_str().is_empty() {
            return Err(Error::Config("corpus and cost_table are required".into()));
        }
        if self.t_max == 0 || self.k == 0 || self.rule_budget == 0 {
            return Err(Error::Config("t_max, k and rule_budget must be at least 1".into()));
        }
        self.eviction().validate()?;
        self.thresholds.validate()?;
        self.costs.validate()?;
        for role in [AgentRole::Judge, AgentRole::Grader] {
            if self.role_settings(role).temperature != 0.0 {
                return Err(Error::Config(format!("{role} must decode at temperature 0")));
            }
        }
        if !matches!(self.embedder.kind.as_str(), "builtin" | "remote") || self.embedder.dimension == 0 {
            return Err(Error::Config("embedder.kind must be builtin or remote with dimension >= 1".into()));
        }
        Ok(())
    }

    fn backend_spec(&self, role: AgentRole) -> &str {
        self.backend.roles.get(&role).unwrap_or(&self.backend.default)
    }
}

fn make_backend(spec: &str, config: &RunConfig) -> Result<Arc<dyn ChatBackend>> {
    if spec == "simulated" {
        return Ok(Arc::new(SimulatedBackend::new(config.seeds.get("simulated").copied().unwrap_or(0))));
    }
    if let Some(path) = spec.strip_prefix("scripted:") {
        return Ok(Arc::new(ScriptedBackend::new(ScriptTable::load(Path::new(path))?)));
    }
    if let Some(path) = spec.strip_prefix("sequence:") {
        return Ok(Arc::new(SequenceBackend::new(SequenceScript::load(Path::new(path))?)));
    }
    if spec == "http" {
        #[cfg(feature = "http")]
        {
            let mut http = crate::gateway::HttpConfig::from_env()?;
            http.retries = config.http_retries;
            http.timeout = std::time::Duration::from_secs(config.http_timeout_seconds);
            return Ok(Arc::new(crate::gateway::HttpBackend::new(http)?));
        }
        #[cfg(not(feature = "http"))]
        return Err(Error::Config("built without the http feature".into()));
    }
    Err(Error::Config(format!("unknown backend {spec:?}")))
}

/// One backend instance per distinct spec, shared by the roles naming it.
pub fn build_gateway(config: &RunConfig) -> Result<Gateway> {
    let mut cache: BTreeMap<String, Arc<dyn ChatBackend>> = BTreeMap::new();
    let mut gateway: Option<Gateway> = None;
    for role in AgentRole::ALL {
        let spec = config.backend_spec(role).to_string();
        let backend = match cache.get(&spec) {
            Some(b) => b.clone(),
            None => {
                let b = make_backend(&spec, config)?;
                cache.insert(spec, b.clone());
                b
            }
        };
        let g = match gateway.take() {
            Some(g) => g.with_backend(role, backend),
            None => Gateway::uniform(backend),
        };
        gateway = Some(g.with_settings(role, config.role_settings(role)));
    }
    Ok(gateway.expect("six roles"))
}

pub fn build_embedder(config: &EmbedderConfig) -> Result<Box<dyn Embedder>> {
    match config.kind.as_str() {
        "builtin" => Ok(Box::new(HashEmbedder {
            dimension: config.dimension,
        })),
        #[cfg(feature = "http")]
        "remote" => {
            let endpoint = config
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("remote embedder needs an endpoint".into()))?;
            let model = config.model.clone().unwrap_or_else(|| "default".into());
            let token = std::env::var(crate::gateway::TOKEN_VAR).ok();
            Ok(Box::new(crate::memory::RemoteEmbedder::new(endpoint, model, token, config.dimension)?))
        }
        other => Err(Error::Config(format!("embedder {other:?} is not available"))),
    }
}

/// Everything an episode needs that stays fixed for the whole run.
struct Fixed<'a> {
    config: &'a RunConfig,
    costs: CostModel,
    env_config: EnvConfig,
    rubric: String,
    abbreviations: AbbrevMap,
    corpus_ids: Vec<u64>,
    embedder: Box<dyn Embedder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    #[serde(flatten)]
    pub result: EpisodeResult,
    pub submission: String,
    pub judge_justification: String,
    pub lenient_turns: Vec<u32>,
    pub hindsight_flags: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    last_completed: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SkippedEpisode {
    episode: u32,
    case_id: u64,
    reason: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub results: Vec<EpisodeResult>,
    pub rules: RuleSet,
    pub memory: MemoryStore,
    pub manifest: RunManifest,
    pub metrics: Option<RunMetrics>,
}

fn episode_path(out: &Path, i: u32, suffix: &str) -> PathBuf {
    out.join("episodes").join(format!("{i}.{suffix}"))
}

fn snapshot_path(out: &Path, kind: &str, i: u32) -> PathBuf {
    out.join(kind).join(format!("{i}.json"))
}

fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn calls_jsonl(calls: &[CallRecord]) -> String {
    calls
        .iter()
        .map(|c| serde_json::to_string(c).expect("call serializes") + "\n")
        .collect()
}

pub fn read_calls(path: &Path) -> Result<Vec<CallRecord>> {
    read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn manifest_context(
    config: &RunConfig,
    case_order: Vec<u64>,
    digest: String,
    costs: &CostModel,
    embedder: &dyn Embedder,
) -> ManifestContext {
    ManifestContext {
        mode: config.mode.as_str().into(),
        t_max: config.t_max,
        abstract_sentences: config.abstract_sentences,
        strict_grounding: config.strict_grounding,
        corpus_path: config.corpus.display().to_string(),
        case_order,
        case_order_digest: digest,
        cost_table_path: config.cost_table.display().to_string(),
        cost_table_version: costs.config.table_version.clone(),
        costs: costs.config.clone(),
        rule_budget: config.rule_budget,
        memory_budget: config.memory_budget,
        retrieval_k: config.k,
        embedder: EmbedderInfo {
            id: embedder.id(),
            dimension: embedder.dimension(),
            index: "brute_force".into(),
        },
        eviction_alpha: config.eviction_alpha,
        eviction_beta: config.eviction_beta,
        thresholds: config.thresholds,
        seeds: config.seeds.clone(),
        action_parsing: ACTION_PARSING_RULES.into(),
        se_note: SE_NOTE.into(),
        execution: ExecutionInfo::current(),
    }
}

/// Run (or resume) the learning stream into `out`.
pub fn run_stream(config: &RunConfig, out: &Path) -> Result<RunOutcome> {
    config.validate()?;
    let (cases, corpus_manifest) = load_corpus(&config.corpus)?;
    let table = load_cost_table(&config.cost_table)?;
    let costs = CostModel::new(table, config.costs.clone())?;
    let rubric = match &config.rubric {
        Some(p) => read_to_string(p)?,
        None => DEFAULT_RUBRIC.to_string(),
    };
    let abbreviations = match &config.abbreviations {
        Some(p) => AbbrevMap::load(p)?,
        None => AbbrevMap::default(),
    };
    let embedder = build_embedder(&config.embedder)?;
    let gateway = build_gateway(config)?;
    let context = manifest_context(
        config,
        corpus_manifest.case_order.clone(),
        corpus_manifest.order_digest(),
        &costs,
        embedder.as_ref(),
    );
    let manifest = record_manifest(&gateway, context)?;

    let fixed = Fixed {
        config,
        env_config: config.env_config(),
        costs,
        rubric,
        abbreviations,
        corpus_ids: corpus_manifest.case_order.clone(),
        embedder,
    };

    let (start, mut rules, mut memory, mut results) = prepare_output(config, out, &manifest)?;
    let by_id: BTreeMap<u64, &CaseRecord> = cases.iter().map(|c| (c.id, c)).collect();

    for (idx, case_id) in corpus_manifest.case_order.iter().enumerate() {
        let episode = idx as u32 + 1;
        if episode <= start {
            continue;
        }
        let case = by_id[case_id];
        run_episode(&fixed, &gateway, case, episode, &mut rules, &mut memory, out, &mut results)?;
        rules.save(&snapshot_path(out, "rules", episode))?;
        memory.save(&snapshot_path(out, "memory", episode))?;
        if !results.is_empty() {
            write_string(&out.join("metrics.json"), &to_json_pretty(&compute_metrics(&results)?))?;
        }
        write_string(
            &out.join("checkpoint.json"),
            &to_json_pretty(&Checkpoint { last_completed: episode }),
        )?;
    }
    let metrics = if results.is_empty() { None } else { Some(compute_metrics(&results)?) };
    Ok(RunOutcome {
        results,
        rules,
        memory,
        manifest,
        metrics,
    })
}

/// Fresh run: write the manifest and initial snapshots. Existing run with
/// a checkpoint and the same manifest: reload state and continue.
fn prepare_output(
    config: &RunConfig,
    out: &Path,
    manifest: &RunManifest,
) -> Result<(u32, RuleSet, MemoryStore, Vec<EpisodeResult>)> {
    let manifest_path = out.join("manifest.json");
    let checkpoint_path = out.join("checkpoint.json");
    if manifest_path.exists() {
        let mut previous: RunManifest = serde_json::from_str(&read_to_string(&manifest_path)?)?;
        previous.context.execution = manifest.context.execution.clone();
        if &previous != manifest {
            return Err(Error::Config(format!(
                "{} holds a different run; choose another output directory",
                out.display()
            )));
        }
        let last = if checkpoint_path.exists() {
            serde_json::from_str::<Checkpoint>(&read_to_string(&checkpoint_path)?)?.last_completed
        } else {
            0
        };
        let rules = RuleSet::load(&snapshot_path(out, "rules", last), config.rule_budget)?;
        let memory = MemoryStore::load(&snapshot_path(out, "memory", last))?;
        let results = load_results(out)?;
        return Ok((last, rules, memory, results));
    }
    let rules = match &config.initial_rules {
        Some(p) => RuleSet::load(p, config.rule_budget)?,
        None => RuleSet::new(config.rule_budget),
    };
    let memory = match &config.initial_memory {
        Some(p) => MemoryStore::load(p)?,
        None => MemoryStore::new(),
    };
    write_string(&manifest_path, &manifest.to_json())?;
    rules.save(&snapshot_path(out, "rules", 0))?;
    memory.save(&snapshot_path(out, "memory", 0))?;
    Ok((0, rules, memory, Vec::new()))
}

/// Episode results in episode order, read from `episodes/<i>.result.json`.
pub fn load_results(run_dir: &Path) -> Result<Vec<EpisodeResult>> {
    let dir = run_dir.join("episodes");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(i) = name.strip_suffix(".result.json").and_then(|s| s.parse::<u32>().ok()) {
            let summary: EpisodeSummary = serde_json::from_str(&read_to_string(&path)?)?;
            found.push((i, summary.result));
        }
    }
    found.sort_by_key(|(i, _)| *i);
    Ok(found.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnosed {
    pub transcript: Vec<TurnRecord>,
    pub submission: String,
    pub forced: bool,
    /// Turns whose action was accepted only after lenient parsing.
    pub lenient_turns: Vec<u32>,
}

/// The interactive loop, with a forced submission once the turn budget is
/// spent. Retrieval updates `memory` counters.
#[allow(clippy::too_many_arguments)]
pub fn diagnose(
    case: &CaseRecord,
    costs: &CostModel,
    env_config: &EnvConfig,
    gateway: &Gateway,
    rules: &RuleSet,
    memory: &mut MemoryStore,
    k: usize,
    episode: u32,
    embedder: &dyn Embedder,
) -> Result<Diagnosed> {
    let env = Environment {
        case,
        costs,
        gateway,
        config: env_config,
    };
    let mut state = env.start_episode()?;
    let mut lenient_turns = Vec::new();
    while !state.done {
        let query = retrieval_query(state.last_observation(), &state.history);
        let retrieved = memory.retrieve(&query, k, episode, embedder)?;
        if state.budget_exhausted() {
            let draft = forced_draft(rules, &retrieved, k, &state.history, gateway)
                .map_err(|e| e.at_turn(state.turn_index + 1))?;
            env.force_submit(&mut state, &draft)?;
            break;
        }
        let decision = decide_action(rules, &retrieved, k, &state.history, gateway)
            .map_err(|e| e.at_turn(state.turn_index + 1))?;
        if decision.lenient {
            lenient_turns.push(state.turn_index + 1);
        }
        env.step(&mut state, decision.action)?;
    }
    let submission = state.submission().unwrap_or_default().to_string();
    Ok(Diagnosed {
        transcript: state.transcript,
        submission,
        forced: state.forced,
        lenient_turns,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_episode(
    fixed: &Fixed<'_>,
    gateway: &Gateway,
    case: &CaseRecord,
    episode: u32,
    rules: &mut RuleSet,
    memory: &mut MemoryStore,
    out: &Path,
    results: &mut Vec<EpisodeResult>,
) -> Result<()> {
    let config = fixed.config;
    let evolving = config.mode == Mode::Evolving;
    // Static runs must leave the store untouched, counters included.
    let mut scratch;
    let store: &mut MemoryStore = if evolving {
        memory
    } else {
        scratch = memory.clone();
        &mut scratch
    };

    let t0 = Instant::now();
    let diagnosed = diagnose(
        case,
        &fixed.costs,
        &fixed.env_config,
        gateway,
        rules,
        store,
        config.k,
        episode,
        fixed.embedder.as_ref(),
    )?;
    let diagnose_seconds = t0.elapsed().as_secs_f64();
    write_string(&episode_path(out, episode, "transcript.jsonl"), &transcript_to_jsonl(&diagnosed.transcript))?;

    let judged = grade_diagnosis(
        &case.final_diagnosis,
        &diagnosed.submission,
        gateway,
        &fixed.rubric,
        &fixed.abbreviations,
    );
    let judge = match judged {
        Ok(j) => j,
        Err(Error::JudgeParse(reason)) => {
            let line = serde_json::to_string(&SkippedEpisode {
                episode,
                case_id: case.id,
                reason: format!("judge output unusable: {reason}"),
            })?;
            append_line(&out.join("skipped.jsonl"), &line)?;
            write_string(&episode_path(out, episode, "calls.jsonl"), &calls_jsonl(&gateway.take_log()))?;
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    let cost = total_cost(&diagnosed.transcript);

    let mut graded = false;
    let mut flags = Vec::new();
    let t1 = Instant::now();
    if evolving {
        let mut report = EvolveReport {
            episode,
            ..Default::default()
        };
        match grade_session(&diagnosed.transcript, &diagnosed.submission, judge.score, gateway) {
            Ok(grades) => {
                graded = true;
                flags = hindsight_flags(&grades, &diagnosed.transcript);
                write_string(&episode_path(out, episode, "grades.jsonl"), &grades.to_jsonl())?;
                evolve(fixed, gateway, case, episode, rules, memory, &diagnosed.transcript, &grades, judge.score, &mut report)?;
            }
            Err(Error::GraderParse(reason)) => {
                report.skipped = Some(format!("grader output unusable: {reason}"));
            }
            Err(e) => return Err(e),
        }
        write_string(&episode_path(out, episode, "evolve.json"), &to_json_pretty(&report))?;
    }
    let update_seconds = if evolving { t1.elapsed().as_secs_f64() } else { 0.0 };

    let result = EpisodeResult {
        episode,
        case_id: case.id,
        score: judge.score,
        turns: diagnosed.transcript.len() as u32,
        cost,
        diagnose_seconds,
        update_seconds,
        forced: diagnosed.forced,
        graded,
    };
    let summary = EpisodeSummary {
        result: result.clone(),
        submission: diagnosed.submission,
        judge_justification: judge.justification,
        lenient_turns: diagnosed.lenient_turns,
        hindsight_flags: flags,
    };
    write_string(&episode_path(out, episode, "calls.jsonl"), &calls_jsonl(&gateway.take_log()))?;
    write_string(&episode_path(out, episode, "result.json"), &to_json_pretty(&summary))?;
    results.push(result);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evolve(
    fixed: &Fixed<'_>,
    gateway: &Gateway,
    case: &CaseRecord,
    episode: u32,
    rules: &mut RuleSet,
    memory: &mut MemoryStore,
    transcript: &[TurnRecord],
    grades: &SessionGrade,
    score: u32,
    report: &mut EvolveReport,
) -> Result<()> {
    cite_rules(rules, grades);
    let stats = memory.stats_text(fixed.config.memory_budget);
    let inputs = EvolveInputs {
        rules,
        memory_stats: &stats,
        transcript,
        grades,
        score,
    };
    let proposal = match propose_updates(&inputs, gateway) {
        Ok(p) => p,
        Err(Error::EvolverParse(reason)) => {
            report.skipped = Some(format!("evolver output unusable: {reason}"));
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    report.justification = Some(proposal.justification.clone());
    report.prompt = apply_prompt_edits(rules, &proposal.prompt_edits, case, &fixed.corpus_ids, episode);
    report.memory = apply_memory_edits(
        memory,
        &proposal.memory_adds,
        &proposal.memory_deletes,
        transcript,
        episode,
        &fixed.config.eviction(),
    );
    Ok(())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut text = if path.exists() { read_to_string(path)? } else { String::new() };
    text.push_str(line);
    text.push('\n');
    write_string(path, &text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub turn: u32,
    pub expected: Option<String>,
    pub actual: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episode: u32,
    pub case_id: u64,
    pub turns: usize,
    pub passed: bool,
    pub divergence: Option<Divergence>,
}

/// Re-run the diagnose phase of one logged episode against its recorded
/// calls and compare the transcript byte for byte. `check` is an optional
/// config whose run-defining settings must agree with the manifest.
pub fn replay_episode(transcript_path: &Path, check: Option<&RunConfig>) -> Result<ReplayReport> {
    let name = transcript_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Usage(format!("not a transcript path: {}", transcript_path.display())))?;
    let episode: u32 = name
        .strip_suffix(".transcript.jsonl")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Usage(format!("expected <i>.transcript.jsonl, got {name}")))?;
    let run_dir = transcript_path
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| Error::Usage("transcript is not inside <run>/episodes/".into()))?;
    let manifest: RunManifest = serde_json::from_str(&read_to_string(&run_dir.join("manifest.json"))?)?;
    manifest.validate()?;
    let ctx = &manifest.context;
    if let Some(config) = check {
        let mut mismatches = Vec::new();
        if config.t_max != ctx.t_max {
            mismatches.push(format!("t_max {} != {}", config.t_max, ctx.t_max));
        }
        if config.k != ctx.retrieval_k {
            mismatches.push(format!("k {} != {}", config.k, ctx.retrieval_k));
        }
        if config.mode.as_str() != ctx.mode {
            mismatches.push(format!("mode {} != {}", config.mode.as_str(), ctx.mode));
        }
        if config.abstract_sentences != ctx.abstract_sentences {
            mismatches.push("abstract_sentences differs".into());
        }
        if !mismatches.is_empty() {
            return Err(Error::ReplayRefused(mismatches.join("; ")));
        }
    }
    if !ctx.embedder.id.starts_with("builtin-token-hash-") {
        return Err(Error::ReplayRefused(format!("embedder {} cannot be rebuilt offline", ctx.embedder.id)));
    }

    let expected_text = read_to_string(transcript_path)?;
    let (cases, corpus_manifest) = load_corpus(Path::new(&ctx.corpus_path))?;
    if corpus_manifest.order_digest() != ctx.case_order_digest {
        return Err(Error::ReplayRefused("corpus order differs from the manifest".into()));
    }
    let case_id = *ctx
        .case_order
        .get(episode as usize - 1)
        .ok_or_else(|| Error::Usage(format!("episode {episode} is outside the case order")))?;
    let case = cases.iter().find(|c| c.id == case_id).expect("digest matched");
    let table = load_cost_table(Path::new(&ctx.cost_table_path))?;
    if table.version() != ctx.cost_table_version && ctx.costs.table_version == table.version() {
        return Err(Error::ReplayRefused("cost table version differs".into()));
    }
    let costs = CostModel::new(table, ctx.costs.clone())?;
    if costs.config.table_version != ctx.cost_table_version {
        return Err(Error::ReplayRefused(format!(
            "cost table version {} != {}",
            costs.config.table_version, ctx.cost_table_version
        )));
    }
    let env_config = EnvConfig {
        t_max: ctx.t_max,
        abstract_config: AbstractConfig {
            sentences: ctx.abstract_sentences,
        },
        strict_grounding: ctx.strict_grounding,
    };

    let calls = read_calls(&episode_path(run_dir, episode, "calls.jsonl"))?;
    let script = ScriptTable::from_calls(format!("episode-{episode}"), &calls)?;
    let mut gateway = Gateway::uniform(Arc::new(ScriptedBackend::new(script)));
    for role in AgentRole::ALL {
        gateway = gateway.with_settings(role, manifest.decoding[&role].clone());
    }
    let rules = RuleSet::load(&snapshot_path(run_dir, "rules", episode - 1), ctx.rule_budget)?;
    let mut memory = MemoryStore::load(&snapshot_path(run_dir, "memory", episode - 1))?;
    let embedder = HashEmbedder {
        dimension: ctx.embedder.dimension,
    };

    let expected: Vec<&str> = expected_text.lines().collect();
    let outcome = diagnose(case, &costs, &env_config, &gateway, &rules, &mut memory, ctx.retrieval_k, episode, &embedder);
    let (actual_text, error) = match outcome {
        Ok(d) => (transcript_to_jsonl(&d.transcript), None),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    let actual: Vec<&str> = actual_text.lines().collect();
    let divergence = if let Some(err) = error {
        Some(Divergence {
            turn: failed_turn(&err).unwrap_or(1),
            expected: None,
            actual: None,
            error: Some(err),
        })
    } else if actual_text != expected_text {
        let i = match_prefix(&expected, &actual);
        Some(Divergence {
            turn: i as u32 + 1,
            expected: expected.get(i).map(|s| s.to_string()),
            actual: actual.get(i).map(|s| s.to_string()),
            error: None,
        })
    } else {
        None
    };
    Ok(ReplayReport {
        episode,
        case_id,
        turns: expected.len(),
        passed: divergence.is_none(),
        divergence,
    })
}

fn match_prefix(a: &[&str], b: &[&str]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

fn failed_turn(message: &str) -> Option<u32> {
    let rest = message.split("at turn ").nth(1)?;
    rest.split(|c: char| !c.is_ascii_digit()).next()?.parse().ok()
}

/// Run `config` (normally with `sequence:` backends) into `out` and turn
/// every logged call into a script table for byte-exact replay.
pub fn record_script(config: &RunConfig, out: &Path, name: &str) -> Result<ScriptTable> {
    let outcome = run_stream(config, out)?;
    let mut calls = Vec::new();
    for i in 1..=outcome.manifest.context.case_order.len() as u32 {
        let path = episode_path(out, i, "calls.jsonl");
        if path.exists() {
            calls.extend(read_calls(&path)?);
        }
    }
    ScriptTable::from_calls(name, &calls)
}

/// Read a run's transcript for episode `i`.
pub fn episode_transcript(run_dir: &Path, i: u32) -> Result<Vec<TurnRecord>> {
    read_transcript(&episode_path(run_dir, i, "transcript.jsonl"))
}
