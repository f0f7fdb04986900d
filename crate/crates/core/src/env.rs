//! The episode state machine: action gate, Patient and Examination
//! gatekeepers, transcript logging and termination.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{initial_abstract, AbstractConfig, CaseRecord};
use crate::cost::{units, CostModel};
use crate::error::{read_to_string, Error, Result};
use crate::gateway::{render_template, AgentRole, Gateway, TemplateId};
use crate::text::{collapse_ws, normalize_ws_lower};

pub const NOT_AVAILABLE: &str = "NOT AVAILABLE";
pub const EPISODE_END: &str = "EPISODE_END";
pub const INVALID_ACTION_FORMAT: &str = "INVALID_ACTION_FORMAT";
pub const UNDETERMINED: &str = "UNDETERMINED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionType {
    AskQuestion,
    OrderTest,
    SubmitDiagnosis,
}

impl ActionType {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::AskQuestion => "AskQuestion",
            ActionType::OrderTest => "OrderTest",
            ActionType::SubmitDiagnosis => "SubmitDiagnosis",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "AskQuestion" => Some(ActionType::AskQuestion),
            "OrderTest" => Some(ActionType::OrderTest),
            "SubmitDiagnosis" => Some(ActionType::SubmitDiagnosis),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub action_type: ActionType,
    pub action_text: String,
}

impl Action {
    /// Trims `text`; empty text is rejected.
    pub fn new(action_type: ActionType, text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Usage("action_text must be non-empty".into()));
        }
        Ok(Self {
            action_type,
            action_text: text.to_string(),
        })
    }
}

/// What the environment receives each turn: a parsed action, or the sentinel
/// for an actor reply that could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TurnAction {
    Valid(Action),
    Invalid { raw: String },
}

pub const INVALID_ACTION_TYPE: &str = "InvalidAction";

impl TurnAction {
    pub fn action_type_str(&self) -> &str {
        match self {
            TurnAction::Valid(a) => a.action_type.as_str(),
            TurnAction::Invalid { .. } => INVALID_ACTION_TYPE,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            TurnAction::Valid(a) => &a.action_text,
            TurnAction::Invalid { raw } => raw,
        }
    }

    pub fn is_submit(&self) -> bool {
        matches!(self, TurnAction::Valid(a) if a.action_type == ActionType::SubmitDiagnosis)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TurnWire", try_from = "TurnWire")]
pub struct TurnRecord {
    pub turn_id: u32,
    pub action: TurnAction,
    pub observation_text: String,
    pub cost: f64,
    /// Present only on the final (submission) record.
    pub forced: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct TurnWire {
    turn_id: u32,
    action_type: String,
    action_text: String,
    observation_text: String,
    #[serde(with = "units")]
    cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    forced: Option<bool>,
}

impl From<TurnRecord> for TurnWire {
    fn from(r: TurnRecord) -> Self {
        TurnWire {
            turn_id: r.turn_id,
            action_type: r.action.action_type_str().to_string(),
            action_text: r.action.text().to_string(),
            observation_text: r.observation_text,
            cost: r.cost,
            forced: r.forced,
        }
    }
}

impl TryFrom<TurnWire> for TurnRecord {
    type Error = String;

    fn try_from(w: TurnWire) -> std::result::Result<Self, String> {
        let action = if w.action_type == INVALID_ACTION_TYPE {
            TurnAction::Invalid { raw: w.action_text }
        } else {
            let ty = ActionType::parse(&w.action_type).ok_or_else(|| format!("unknown action_type `{}`", w.action_type))?;
            TurnAction::Valid(Action {
                action_type: ty,
                action_text: w.action_text,
            })
        };
        Ok(TurnRecord {
            turn_id: w.turn_id,
            action,
            observation_text: w.observation_text,
            cost: w.cost,
            forced: w.forced,
        })
    }
}

/// One record per line, in turn order.
pub fn transcript_to_jsonl(transcript: &[TurnRecord]) -> String {
    let mut out = String::new();
    for r in transcript {
        out.push_str(&serde_json::to_string(r).expect("turn record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_transcript(text: &str) -> Result<Vec<TurnRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn read_transcript(path: &Path) -> Result<Vec<TurnRecord>> {
    parse_transcript(&read_to_string(path)?)
}

/// `Q:/A:`, `TEST:/RESULT:` line-prefixed serialization of one turn.
pub fn serialize_turn(action: &TurnAction, observation: &str) -> String {
    match action {
        TurnAction::Valid(a) => match a.action_type {
            ActionType::AskQuestion => format!("Q: {}\nA: {}", a.action_text, observation),
            ActionType::OrderTest => format!("TEST: {}\nRESULT: {}", a.action_text, observation),
            ActionType::SubmitDiagnosis => format!("SUBMIT: {}\nRESULT: {}", a.action_text, observation),
        },
        TurnAction::Invalid { raw } => format!("INVALID: {}\nRESULT: {}", collapse_ws(raw), observation),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub t_max: u32,
    pub abstract_config: AbstractConfig,
    /// Require every examination result to appear verbatim in the case file.
    pub strict_grounding: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            t_max: 15,
            abstract_config: AbstractConfig::default(),
            strict_grounding: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub case_id: u64,
    pub t_max: u32,
    /// h_t: the initial abstract followed by serialized turns.
    pub history: String,
    pub transcript: Vec<TurnRecord>,
    pub turn_index: u32,
    pub running_cost: f64,
    pub done: bool,
    pub patient_cache: HashMap<String, String>,
    pub forced: bool,
}

impl EpisodeState {
    pub fn budget_exhausted(&self) -> bool {
        !self.done && self.turn_index >= self.t_max
    }

    /// Latest observation, or the abstract before the first turn.
    pub fn last_observation(&self) -> &str {
        match self.transcript.last() {
            Some(r) => &r.observation_text,
            None => &self.history,
        }
    }

    pub fn submission(&self) -> Option<&str> {
        self.transcript
            .last()
            .filter(|r| r.action.is_submit())
            .map(|r| r.action.text())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: String,
    pub cost: f64,
    pub done: bool,
}

/// Binds one hidden case to the cost model and the gatekeeper backends.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub case: &'a CaseRecord,
    pub costs: &'a CostModel,
    pub gateway: &'a Gateway,
    pub config: &'a EnvConfig,
}

impl<'a> Environment<'a> {
    pub fn start_episode(&self) -> Result<EpisodeState> {
        if self.config.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        Ok(EpisodeState {
            case_id: self.case.id,
            t_max: self.config.t_max,
            history: initial_abstract(self.case, &self.config.abstract_config),
            transcript: Vec::new(),
            turn_index: 0,
            running_cost: 0.0,
            done: false,
            patient_cache: HashMap::new(),
            forced: false,
        })
    }

    pub fn step(&self, state: &mut EpisodeState, action: TurnAction) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::Usage("step called after the episode ended".into()));
        }
        if state.turn_index >= state.t_max {
            return Err(Error::Usage("turn budget exhausted; call force_submit".into()));
        }
        let turn_id = state.turn_index + 1;
        let observation = match &action {
            TurnAction::Valid(a) => match a.action_type {
                ActionType::AskQuestion => {
                    patient_answer(self.case, &state.history, &a.action_text, &mut state.patient_cache, self.gateway)
                        .map_err(|e| e.at_turn(turn_id))?
                }
                ActionType::OrderTest => {
                    let result = examination_result(self.case, &a.action_text, self.gateway)
                        .map_err(|e| e.at_turn(turn_id))?;
                    if self.config.strict_grounding && !is_grounded(self.case, &result) {
                        return Err(Error::Grounding(result).at_turn(turn_id));
                    }
                    result
                }
                ActionType::SubmitDiagnosis => EPISODE_END.to_string(),
            },
            TurnAction::Invalid { .. } => INVALID_ACTION_FORMAT.to_string(),
        };
        let cost = self.costs.action_cost(&action);
        let done = action.is_submit();
        self.append(state, action, observation.clone(), cost, done.then_some(false));
        state.turn_index = turn_id;
        state.done = done;
        Ok(StepOutcome { observation, cost, done })
    }

    /// Submit the actor's current best guess once the turn budget is spent.
    pub fn force_submit(&self, state: &mut EpisodeState, actor_draft: &str) -> Result<TurnRecord> {
        if state.done {
            return Err(Error::Usage("force_submit called after the episode ended".into()));
        }
        if state.turn_index != state.t_max {
            return Err(Error::Usage(format!(
                "force_submit before the turn budget is spent ({} of {})",
                state.turn_index, state.t_max
            )));
        }
        let draft = actor_draft.trim();
        let text = if draft.is_empty() { UNDETERMINED } else { draft };
        let action = TurnAction::Valid(Action::new(ActionType::SubmitDiagnosis, text)?);
        let cost = self.costs.action_cost(&action);
        self.append(state, action, EPISODE_END.to_string(), cost, Some(true));
        state.done = true;
        state.forced = true;
        Ok(state.transcript.last().cloned().expect("just appended"))
    }

    fn append(&self, state: &mut EpisodeState, action: TurnAction, observation: String, cost: f64, forced: Option<bool>) {
        state.history.push('\n');
        state.history.push_str(&serialize_turn(&action, &observation));
        state.running_cost += cost;
        let turn_id = state.transcript.len() as u32 + 1;
        state.transcript.push(TurnRecord {
            turn_id,
            action,
            observation_text: observation,
            cost,
            forced,
        });
    }
}

/// Answer a clinician question in the patient's voice. Identical questions
/// (after lowercasing and whitespace collapsing) return the cached answer.
pub fn patient_answer(
    case: &CaseRecord,
    history: &str,
    question: &str,
    cache: &mut HashMap<String, String>,
    gateway: &Gateway,
) -> Result<String> {
    let key = normalize_ws_lower(question);
    if key.is_empty() {
        return Err(Error::Usage("question must be non-empty".into()));
    }
    if let Some(answer) = cache.get(&key) {
        return Ok(answer.clone());
    }
    let case_file = case.render_case_file();
    let messages = render_template(
        TemplateId::Patient,
        &[("case_file", &case_file), ("history", history), ("question", question.trim())],
    )?;
    let answer = gateway.complete(AgentRole::Patient, messages)?.trim().to_string();
    cache.insert(key, answer.clone());
    Ok(answer)
}

/// Look up a recorded result; anything the examination agent reports as
/// missing becomes exactly `NOT AVAILABLE`.
pub fn examination_result(case: &CaseRecord, test_name: &str, gateway: &Gateway) -> Result<String> {
    let test_name = test_name.trim();
    if test_name.is_empty() {
        return Err(Error::Usage("test name must be non-empty".into()));
    }
    let case_file = case.render_case_file();
    let messages = render_template(TemplateId::Examination, &[("case_file", &case_file), ("test_name", test_name)])?;
    let reply = gateway.complete(AgentRole::Examination, messages)?;
    Ok(canonical_exam_reply(&reply))
}

fn canonical_exam_reply(reply: &str) -> String {
    let trimmed = reply.trim();
    let bare = trimmed.trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace());
    if bare.is_empty() || bare.eq_ignore_ascii_case(NOT_AVAILABLE) {
        NOT_AVAILABLE.to_string()
    } else {
        trimmed.to_string()
    }
}

/// True when `result` is `NOT AVAILABLE` or occurs verbatim (modulo
/// whitespace) in the case sections other than the diagnosis.
pub fn is_grounded(case: &CaseRecord, result: &str) -> bool {
    if result == NOT_AVAILABLE {
        return true;
    }
    let needle = collapse_ws(result);
    [&case.diagnostic_tests, &case.physical_examination, &case.case_information]
        .iter()
        .any(|section| collapse_ws(section).contains(&needle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{parse_cost_table, CostConfig};
    use crate::gateway::{ChatBackend, CompletionRequest};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Canned {
        patient: String,
        exam: String,
        calls: AtomicUsize,
    }

    impl ChatBackend for Canned {
        fn complete(&self, r: &CompletionRequest) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(match r.tag {
                AgentRole::Patient => self.patient.clone(),
                AgentRole::Examination => self.exam.clone(),
                _ => String::new(),
            })
        }
    }

    fn case() -> CaseRecord {
        CaseRecord {
            id: 7,
            case_information: "A man in his 40s has a cough. He smokes.".into(),
            physical_examination: "Wheeze on auscultation.".into(),
            diagnostic_tests: "- CBC: WBC 12.1".into(),
            final_diagnosis: "Acute bronchitis".into(),
            abstract_override: None,
        }
    }

    fn costs() -> CostModel {
        let table = parse_cost_table("name,type,cost,aliases\ncbc,lab,15,\"complete blood count\"\n").unwrap();
        CostModel::new(table, CostConfig::default()).unwrap()
    }

    fn canned(patient: &str, exam: &str) -> Arc<Canned> {
        Arc::new(Canned {
            patient: patient.into(),
            exam: exam.into(),
            calls: AtomicUsize::new(0),
        })
    }

    fn ask(q: &str) -> TurnAction {
        TurnAction::Valid(Action::new(ActionType::AskQuestion, q).unwrap())
    }

    fn order(t: &str) -> TurnAction {
        TurnAction::Valid(Action::new(ActionType::OrderTest, t).unwrap())
    }

    fn submit(t: &str) -> TurnAction {
        TurnAction::Valid(Action::new(ActionType::SubmitDiagnosis, t).unwrap())
    }

    #[test]
    fn episode_runs_to_submission() {
        let backend = canned("Yes, for two weeks.", "CBC: WBC 12.1");
        let gateway = Gateway::uniform(backend.clone());
        let (case, costs, cfg) = (case(), costs(), EnvConfig::default());
        let env = Environment { case: &case, costs: &costs, gateway: &gateway, config: &cfg };
        let mut st = env.start_episode().unwrap();
        assert_eq!(st.history, "A man in his 40s has a cough. He smokes.");
        assert_eq!((st.turn_index, st.running_cost, st.done), (0, 0.0, false));

        env.step(&mut st, ask("Do you cough?")).unwrap();
        let out = env.step(&mut st, order("complete blood count")).unwrap();
        assert_eq!(out.cost, 15.0);
        let out = env.step(&mut st, submit("Bronchitis")).unwrap();
        assert_eq!(out, StepOutcome { observation: EPISODE_END.into(), cost: 0.0, done: true });
        assert_eq!(st.running_cost, 25.0);
        assert_eq!(st.transcript.iter().map(|r| r.turn_id).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(st.transcript[2].forced, Some(false));
        assert!(st.transcript[..2].iter().all(|r| r.forced.is_none()));
        assert!(st.history.ends_with("TEST: complete blood count\nRESULT: CBC: WBC 12.1\nSUBMIT: Bronchitis\nRESULT: EPISODE_END"));
        assert!(matches!(env.step(&mut st, ask("more?")), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_turn_budget_rejected() {
        let gateway = Gateway::uniform(canned("", ""));
        let (case, costs) = (case(), costs());
        let cfg = EnvConfig { t_max: 0, ..EnvConfig::default() };
        let env = Environment { case: &case, costs: &costs, gateway: &gateway, config: &cfg };
        assert!(env.start_episode().is_err());
    }

    #[test]
    fn repeated_question_is_cached() {
        let backend = canned("About a week.", "");
        let gateway = Gateway::uniform(backend.clone());
        let mut cache = HashMap::new();
        let a = patient_answer(&case(), "h", "How long  have you coughed?", &mut cache, &gateway).unwrap();
        let b = patient_answer(&case(), "h2", "how long have you coughed?", &mut cache, &gateway).unwrap();
        assert_eq!(a, b);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unavailable_is_canonical() {
        for reply in ["NOT AVAILABLE", " not available. ", "\"NOT AVAILABLE\"", ""] {
            let gateway = Gateway::uniform(canned("", reply));
            assert_eq!(examination_result(&case(), "MRI", &gateway).unwrap(), NOT_AVAILABLE);
        }
        let gateway = Gateway::uniform(canned("", ""));
        assert!(matches!(examination_result(&case(), "  ", &gateway), Err(Error::Usage(_))));
    }

    #[test]
    fn strict_grounding_rejects_invented_results() {
        let gateway = Gateway::uniform(canned("", "CBC: WBC 30.0"));
        let (case, costs) = (case(), costs());
        let cfg = EnvConfig { strict_grounding: true, ..EnvConfig::default() };
        let env = Environment { case: &case, costs: &costs, gateway: &gateway, config: &cfg };
        let mut st = env.start_episode().unwrap();
        let err = env.step(&mut st, order("cbc")).unwrap_err();
        assert!(matches!(err, Error::Environment { turn: 1, .. }));
    }

    #[test]
    fn invalid_action_costs_and_logs() {
        let gateway = Gateway::uniform(canned("", ""));
        let (case, costs, cfg) = (case(), costs(), EnvConfig::default());
        let env = Environment { case: &case, costs: &costs, gateway: &gateway, config: &cfg };
        let mut st = env.start_episode().unwrap();
        let out = env.step(&mut st, TurnAction::Invalid { raw: "hmm".into() }).unwrap();
        assert_eq!(out.observation, INVALID_ACTION_FORMAT);
        assert_eq!(out.cost, 5.0);
        assert_eq!(st.transcript[0].action.action_type_str(), "InvalidAction");
    }

    #[test]
    fn forced_submission_at_budget() {
        let gateway = Gateway::uniform(canned("no", ""));
        let (case, costs) = (case(), costs());
        let cfg = EnvConfig { t_max: 2, ..EnvConfig::default() };
        let env = Environment { case: &case, costs: &costs, gateway: &gateway, config: &cfg };
        let mut st = env.start_episode().unwrap();
        env.step(&mut st, ask("a?")).unwrap();
        assert!(matches!(env.force_submit(&mut st, "x"), Err(Error::Usage(_))));
        env.step(&mut st, ask("b?")).unwrap();
        assert!(st.budget_exhausted());
        assert!(matches!(env.step(&mut st, ask("c?")), Err(Error::Usage(_))));
        let rec = env.force_submit(&mut st, "viral pharyngitis").unwrap();
        assert_eq!(rec.action, submit("viral pharyngitis"));
        assert_eq!(rec.forced, Some(true));
        assert_eq!(rec.turn_id, 3);
        assert!(st.done && st.forced);
        assert!(matches!(env.force_submit(&mut st, "y"), Err(Error::Usage(_))));
    }

    #[test]
    fn empty_draft_becomes_sentinel() {
        let gateway = Gateway::uniform(canned("no", ""));
        let (case, costs) = (case(), costs());
        let cfg = EnvConfig { t_max: 1, ..EnvConfig::default() };
        let env = Environment { case: &case, costs: &costs, gateway: &gateway, config: &cfg };
        let mut st = env.start_episode().unwrap();
        env.step(&mut st, ask("a?")).unwrap();
        let rec = env.force_submit(&mut st, "   ").unwrap();
        assert_eq!(rec.action.text(), UNDETERMINED);
    }

    #[test]
    fn transcript_wire_format() {
        let rec = TurnRecord {
            turn_id: 7,
            action: order("CT head without contrast"),
            observation_text: NOT_AVAILABLE.into(),
            cost: 1200.0,
            forced: None,
        };
        assert_eq!(
            serde_json::to_string(&rec).unwrap(),
            r#"{"turn_id":7,"action_type":"OrderTest","action_text":"CT head without contrast","observation_text":"NOT AVAILABLE","cost":1200}"#
        );
        let line = transcript_to_jsonl(std::slice::from_ref(&rec));
        assert_eq!(parse_transcript(&line).unwrap(), vec![rec]);
    }
}
