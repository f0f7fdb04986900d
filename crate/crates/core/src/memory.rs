//! Budgeted experience memory: situation-action-outcome entries with
//! similarity retrieval, reuse counters and keep-score eviction.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, Error, Result};
use crate::grader::GradeLabel;
use crate::text::{tail_chars, tokens};

/// Field names follow the persisted memory item schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: String,
    pub context_before_action: String,
    pub action: String,
    pub outcome: String,
    pub grade: GradeLabel,
    pub rationale: String,
    pub created_episode: u32,
    pub created_turn: u32,
    pub times_retrieved: u32,
    pub last_retrieved_episode: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvictionConfig {
    pub budget: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EvictionConfig {
    fn default() -> Self {
        Self {
            budget: 500,
            alpha: 1.0,
            beta: 0.05,
        }
    }
}

impl EvictionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("memory budget must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 || self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::Config("eviction alpha must be > 0 and beta >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub components: Vec<f64>,
    /// Set when the input had no tokens and the vector is all zeros.
    pub degenerate: bool,
}

impl EmbeddingVector {
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.components.iter().zip(&other.components).map(|(a, b)| a * b).sum();
        let na = self.components.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = other.components.iter().map(|b| b * b).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

/// Token-hash bag of words, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dimension: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dimension: 256 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("builtin-token-hash-{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = vec![0.0; self.dimension];
        let mut any = false;
        for tok in tokens(text) {
            v[(fnv1a(tok.as_bytes()) % self.dimension as u64) as usize] += 1.0;
            any = true;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(EmbeddingVector {
            components: v,
            degenerate: !any,
        })
    }
}

/// OpenAI-style `/embeddings` endpoint.
#[cfg(feature = "http")]
#[derive(Debug)]
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub model: String,
    pub token: Option<String>,
    pub dimension: usize,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "http")]
impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, token: Option<String>, dimension: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            token,
            dimension,
            client,
        })
    }
}

#[cfg(feature = "http")]
impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        #[derive(Deserialize)]
        struct Item {
            embedding: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct Reply {
            data: Vec<Item>,
        }
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Transport(format!("embedding HTTP {}", resp.status())));
        }
        let reply: Reply = resp.json().map_err(|e| Error::Transport(e.to_string()))?;
        let components = reply
            .data
            .into_iter()
            .next()
            .ok_or_else(|| Error::Transport("embedding reply has no data".into()))?
            .embedding;
        if components.len() != self.dimension {
            return Err(Error::Transport(format!(
                "embedding dimension {} != configured {}",
                components.len(),
                self.dimension
            )));
        }
        let degenerate = components.iter().all(|c| *c == 0.0);
        Ok(EmbeddingVector { components, degenerate })
    }
}

pub fn embed_text(text: &str, embedder: &dyn Embedder) -> Result<EmbeddingVector> {
    embedder.embed(text)
}

/// α·ln(1 + times_retrieved) − β·age, age in episodes since creation.
pub fn keep_score(entry: &MemoryEntry, now_episode: u32, config: &EvictionConfig) -> f64 {
    let age = f64::from(now_episode) - f64::from(entry.created_episode);
    config.alpha * f64::from(entry.times_retrieved).ln_1p() - config.beta * age
}

/// Query text: the latest observation plus the tail of the dialogue so far.
pub fn retrieval_query(last_observation: &str, history: &str) -> String {
    format!("{}\n{}", last_observation, tail_chars(history, 200))
}

#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    entries: Vec<MemoryEntry>,
    next_seq: u64,
    embeddings: HashMap<String, EmbeddingVector>,
}

impl PartialEq for MemoryStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

fn id_seq(id: &str) -> Option<u64> {
    id.strip_prefix("m_")?.parse().ok()
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<MemoryEntry>) -> Self {
        let next_seq = entries.iter().filter_map(|e| id_seq(&e.id)).max().unwrap_or(0);
        Self {
            entries,
            next_seq,
            embeddings: HashMap::new(),
        }
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MemoryEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.entries).expect("entries serialize");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_entries(serde_json::from_str(&read_to_string(path)?)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_json())
    }

    /// Top-`k` entries by cosine similarity of their context to `query`
    /// (ties: smaller id first). Returned entries have their retrieval
    /// counters updated.
    pub fn retrieve(&mut self, query: &str, k: usize, now_episode: u32, embedder: &dyn Embedder) -> Result<Vec<MemoryEntry>> {
        if self.entries.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let q = embedder.embed(query)?;
        let mut scored = Vec::with_capacity(self.entries.len());
        for (idx, entry) in self.entries.iter().enumerate() {
            if !self.embeddings.contains_key(&entry.id) {
                let v = embedder.embed(&entry.context_before_action)?;
                self.embeddings.insert(entry.id.clone(), v);
            }
            scored.push((q.cosine(&self.embeddings[&entry.id]), idx));
        }
        scored.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| self.entries[a.1].id.cmp(&self.entries[b.1].id))
        });
        let mut out = Vec::with_capacity(k.min(scored.len()));
        for &(_, idx) in scored.iter().take(k) {
            let entry = &mut self.entries[idx];
            entry.times_retrieved += 1;
            entry.last_retrieved_episode = now_episode;
            out.push(entry.clone());
        }
        Ok(out)
    }

    /// Append validated entries, assigning `m_%06d` ids where the id is empty.
    /// Only HIGH_YIELD and CRITICAL_ERROR entries are accepted. Nothing is
    /// appended if any entry fails.
    pub fn upsert_entries(&mut self, adds: Vec<MemoryEntry>) -> Result<Vec<String>> {
        let mut seen: Vec<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        for entry in &adds {
            validate_entry(entry)?;
            if !entry.id.is_empty() {
                if seen.contains(&entry.id.as_str()) {
                    return Err(Error::Memory(format!("duplicate memory id {}", entry.id)));
                }
                seen.push(&entry.id);
            }
        }
        let mut ids = Vec::with_capacity(adds.len());
        for mut entry in adds {
            if entry.id.is_empty() {
                loop {
                    self.next_seq += 1;
                    let candidate = format!("m_{:06}", self.next_seq);
                    if self.get(&candidate).is_none() {
                        entry.id = candidate;
                        break;
                    }
                }
            } else if let Some(seq) = id_seq(&entry.id) {
                self.next_seq = self.next_seq.max(seq);
            }
            ids.push(entry.id.clone());
            self.entries.push(entry);
        }
        Ok(ids)
    }

    /// Remove entries named by id, or whose action or context equals the
    /// descriptor (case-insensitive). Returns (removed ids, unmatched targets).
    pub fn delete_entries(&mut self, targets: &[String]) -> (Vec<String>, Vec<String>) {
        let mut removed = Vec::new();
        let mut unmatched = Vec::new();
        for target in targets {
            let t = target.trim();
            let pos = self.entries.iter().position(|e| e.id == t).or_else(|| {
                self.entries.iter().position(|e| {
                    e.action.eq_ignore_ascii_case(t) || e.context_before_action.eq_ignore_ascii_case(t)
                })
            });
            match pos {
                Some(i) => {
                    let e = self.entries.remove(i);
                    self.embeddings.remove(&e.id);
                    removed.push(e.id);
                }
                None => unmatched.push(target.clone()),
            }
        }
        (removed, unmatched)
    }

    /// Drop the lowest keep-score entries until the store fits the budget.
    /// Ties go to the older `created_episode`, then the smaller id.
    pub fn evict_to_budget(&mut self, now_episode: u32, config: &EvictionConfig) -> Vec<String> {
        if self.entries.len() <= config.budget {
            return Vec::new();
        }
        let excess = self.entries.len() - config.budget;
        let mut order: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (keep_score(e, now_episode, config), i))
            .collect();
        order.sort_by(|a, b| {
            let (ea, eb) = (&self.entries[a.1], &self.entries[b.1]);
            a.0.total_cmp(&b.0)
                .then(ea.created_episode.cmp(&eb.created_episode))
                .then_with(|| ea.id.cmp(&eb.id))
        });
        let mut doomed: Vec<usize> = order[..excess].iter().map(|&(_, i)| i).collect();
        let evicted: Vec<String> = doomed.iter().map(|&i| self.entries[i].id.clone()).collect();
        doomed.sort_unstable();
        for i in doomed.into_iter().rev() {
            let e = self.entries.remove(i);
            self.embeddings.remove(&e.id);
        }
        evicted
    }

    /// Summary bound into the evolver prompt.
    pub fn stats_text(&self, budget: usize) -> String {
        let mut top: Vec<&MemoryEntry> = self.entries.iter().filter(|e| e.times_retrieved > 0).collect();
        top.sort_by(|a, b| b.times_retrieved.cmp(&a.times_retrieved).then_with(|| a.id.cmp(&b.id)));
        let mut s = format!("size: {}\nbudget: {}", self.entries.len(), budget);
        if !top.is_empty() {
            let listed: Vec<String> = top
                .iter()
                .take(10)
                .map(|e| format!("{} ({}, retrieved {}x): {}", e.id, e.grade, e.times_retrieved, e.action))
                .collect();
            s.push_str("\nmost retrieved:\n");
            s.push_str(&listed.join("\n"));
        }
        s
    }
}

fn validate_entry(e: &MemoryEntry) -> Result<()> {
    for (name, value) in [
        ("context_before_action", &e.context_before_action),
        ("action", &e.action),
        ("outcome", &e.outcome),
    ] {
        if value.trim().is_empty() {
            return Err(Error::Memory(format!("memory entry is missing `{name}`")));
        }
    }
    if !e.grade.is_strong() {
        return Err(Error::Memory(format!(
            "only HIGH_YIELD or CRITICAL_ERROR entries are stored, got {}",
            e.grade
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn entry(context: &str, grade: GradeLabel, created_episode: u32) -> MemoryEntry {
        MemoryEntry {
            id: String::new(),
            context_before_action: context.into(),
            action: format!("OrderTest: {context}"),
            outcome: "result".into(),
            grade,
            rationale: "because".into(),
            created_episode,
            created_turn: 1,
            times_retrieved: 0,
            last_retrieved_episode: 0,
        }
    }

    #[test]
    fn embedding_is_deterministic_and_self_similar() {
        let e = HashEmbedder::default();
        let a = embed_text("chest pain with diaphoresis", &e).unwrap();
        let b = embed_text("chest pain with diaphoresis", &e).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.components.len(), 256);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
        let z = embed_text("", &e).unwrap();
        assert!(z.degenerate && z.components.iter().all(|c| *c == 0.0));
        assert_eq!(z.cosine(&a), 0.0);
    }

    #[test]
    fn retrieval_order_and_counters() {
        let e = HashEmbedder::default();
        let mut store = MemoryStore::new();
        assert!(store.retrieve("anything", 3, 1, &e).unwrap().is_empty());

        let contexts = [
            "fever and cough in a child",
            "chest pain radiating to the left arm",
            "headache with neck stiffness",
            "painless jaundice and weight loss",
            "acute abdominal pain after meals",
            "scalp nodule present since birth",
            "recurrent dizziness and vomiting",
            "bruising and nosebleeds",
            "leg papules with family history",
            "nasal mass and proptosis",
        ];
        store
            .upsert_entries(contexts.iter().map(|c| entry(c, GradeLabel::HighYield, 1)).collect())
            .unwrap();
        let got = store.retrieve("headache with neck stiffness", 3, 4, &e).unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].context_before_action, "headache with neck stiffness");
        let touched: Vec<&str> = got.iter().map(|g| g.id.as_str()).collect();
        for entry in store.entries() {
            if touched.contains(&entry.id.as_str()) {
                assert_eq!((entry.times_retrieved, entry.last_retrieved_episode), (1, 4));
            } else {
                assert_eq!(entry.times_retrieved, 0);
            }
        }
    }

    #[test]
    fn retrieval_ties_break_by_id() {
        let e = HashEmbedder::default();
        let mut store = MemoryStore::new();
        store
            .upsert_entries(vec![entry("same text", GradeLabel::HighYield, 1), entry("same text", GradeLabel::HighYield, 1)])
            .unwrap();
        let got = store.retrieve("unrelated zebra", 1, 2, &e).unwrap();
        assert_eq!(got[0].id, "m_000001");
    }

    #[test]
    fn keep_score_values() {
        let cfg = EvictionConfig { budget: 10, alpha: 1.0, beta: 0.1 };
        let mut e = entry("x", GradeLabel::HighYield, 2);
        assert_eq!(keep_score(&e, 2, &cfg), 0.0);
        e.times_retrieved = 5;
        // ln 6 - 0.3, evaluated at 50 digits: 1.49175946922805500081247735838...
        assert!((keep_score(&e, 5, &cfg) - 1.491_759_469_228_055).abs() < 1e-12);
        let mut f = e.clone();
        f.times_retrieved = 10;
        e.times_retrieved = 0;
        assert!(keep_score(&f, 5, &cfg) > keep_score(&e, 5, &cfg));
    }

    #[test]
    fn upsert_assigns_sequential_ids() {
        let mut store = MemoryStore::new();
        let ids = store
            .upsert_entries(vec![entry("a", GradeLabel::HighYield, 1), entry("b", GradeLabel::CriticalError, 1)])
            .unwrap();
        assert_eq!(ids, ["m_000001", "m_000002"]);
        assert!(matches!(store.upsert_entries(vec![entry("c", GradeLabel::LowYield, 1)]), Err(Error::Memory(_))));
        let mut missing = entry("d", GradeLabel::HighYield, 1);
        missing.outcome.clear();
        assert!(store.upsert_entries(vec![missing]).is_err());
        let mut dup = entry("e", GradeLabel::HighYield, 1);
        dup.id = "m_000001".into();
        assert!(store.upsert_entries(vec![dup]).is_err());
        assert_eq!(store.len(), 2);
        let reloaded = MemoryStore::from_entries(store.entries().to_vec());
        let mut reloaded = reloaded;
        assert_eq!(reloaded.upsert_entries(vec![entry("f", GradeLabel::HighYield, 2)]).unwrap(), ["m_000003"]);
    }

    #[test]
    fn eviction_boundary_and_ties() {
        let cfg = EvictionConfig { budget: 2, alpha: 1.0, beta: 0.05 };
        let mut store = MemoryStore::new();
        store
            .upsert_entries(vec![entry("a", GradeLabel::HighYield, 3), entry("b", GradeLabel::HighYield, 3)])
            .unwrap();
        assert!(store.evict_to_budget(5, &cfg).is_empty());

        let mut c = entry("c", GradeLabel::HighYield, 1);
        c.times_retrieved = 1;
        let mut d = entry("d", GradeLabel::HighYield, 1);
        d.times_retrieved = 1;
        store.upsert_entries(vec![c, d]).unwrap();
        let evicted = store.evict_to_budget(5, &cfg);
        assert_eq!(evicted.len(), 2);
        assert_eq!(store.len(), 2);
        // a, b score -0.1; c, d score ln 2 - 0.2.
        assert_eq!(evicted, ["m_000001", "m_000002"]);
    }

    #[test]
    fn equal_scores_evict_older_first() {
        let cfg = EvictionConfig { budget: 1, alpha: 1.0, beta: 0.0 };
        let mut store = MemoryStore::new();
        store
            .upsert_entries(vec![entry("new", GradeLabel::HighYield, 4), entry("old", GradeLabel::HighYield, 2)])
            .unwrap();
        assert_eq!(store.evict_to_budget(6, &cfg), ["m_000002"]);
    }

    #[test]
    fn delete_by_id_or_descriptor() {
        let mut store = MemoryStore::new();
        store
            .upsert_entries(vec![entry("a", GradeLabel::HighYield, 1), entry("b", GradeLabel::HighYield, 1)])
            .unwrap();
        let (removed, unmatched) =
            store.delete_entries(&["m_000001".into(), "ordertest: B".into(), "nothing".into()]);
        assert_eq!(removed, ["m_000001", "m_000002"]);
        assert_eq!(unmatched, ["nothing"]);
    }

    proptest::proptest! {
        #[test]
        fn keep_score_monotone(n in 0u32..1000, extra in 1u32..1000, created in 0u32..100, age in 0u32..100, older in 1u32..100, alpha in 0.01f64..5.0, beta in 0.0f64..1.0) {
            let cfg = EvictionConfig { budget: 1, alpha, beta };
            let mut e = entry("x", GradeLabel::HighYield, created);
            e.times_retrieved = n;
            let now = created + age;
            let base = keep_score(&e, now, &cfg);
            let mut more = e.clone();
            more.times_retrieved = n + extra;
            proptest::prop_assert!(keep_score(&more, now, &cfg) >= base);
            proptest::prop_assert!(keep_score(&e, now + older, &cfg) <= base);
        }

        #[test]
        fn cosine_symmetric_and_bounded(a in "[a-z ]{0,40}", b in "[a-z ]{0,40}") {
            let e = HashEmbedder::default();
            let (va, vb) = (e.embed(&a).unwrap(), e.embed(&b).unwrap());
            let (ab, ba) = (va.cosine(&vb), vb.cosine(&va));
            proptest::prop_assert!((ab - ba).abs() < 1e-12);
            proptest::prop_assert!((-1.0..=1.0).contains(&ab));
            if !va.degenerate {
                proptest::prop_assert!((va.cosine(&va) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn retrieval_touches_only_counters(k in 1usize..5, q in "[a-z ]{1,30}") {
            let e = HashEmbedder::default();
            let mut store = MemoryStore::new();
            store.upsert_entries(["alpha beta", "gamma", "delta epsilon", "zeta"].iter().map(|c| entry(c, GradeLabel::HighYield, 1)).collect()).unwrap();
            let before = store.entries().to_vec();
            store.retrieve(&q, k, 3, &e).unwrap();
            for (b, a) in before.iter().zip(store.entries()) {
                let mut a2 = a.clone();
                a2.times_retrieved = b.times_retrieved;
                a2.last_retrieved_episode = b.last_retrieved_episode;
                proptest::prop_assert_eq!(&a2, b);
                proptest::prop_assert!(a.times_retrieved >= b.times_retrieved);
            }
        }
    }
}
