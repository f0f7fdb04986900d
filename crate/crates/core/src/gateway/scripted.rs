use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AgentRole, CallRecord, ChatBackend, CompletionRequest};
use crate::error::{read_to_string, write_string, Error, Result};

/// Canned responses keyed by role tag plus digest of the rendered messages.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptTable {
    pub name: String,
    pub entries: BTreeMap<String, String>,
}

impl ScriptTable {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_string(path, &text)
    }

    /// Build a table from a recorded call log. A key recorded twice must have
    /// the same response.
    pub fn from_calls(name: impl Into<String>, calls: &[CallRecord]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for call in calls {
            let Some(response) = &call.response else { continue };
            if let Some(prev) = entries.insert(call.key.clone(), response.clone()) {
                if &prev != response {
                    return Err(Error::Contract(format!(
                        "key {} recorded with two different responses",
                        call.key
                    )));
                }
            }
        }
        Ok(Self { name: name.into(), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    table: ScriptTable,
}

impl ScriptedBackend {
    pub fn new(table: ScriptTable) -> Self {
        Self { table }
    }

    pub fn table_mut(&mut self) -> &mut ScriptTable {
        &mut self.table
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let key = request.script_key();
        self.table
            .entries
            .get(&key)
            .cloned()
            .ok_or(Error::ScriptMiss { key })
    }

    fn model_label(&self, _configured: &str) -> String {
        format!("scripted:{}", self.table.name)
    }
}

/// Per-role ordered replies; the human-editable source of a script table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceScript {
    pub name: String,
    pub replies: BTreeMap<AgentRole, Vec<String>>,
}

impl SequenceScript {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }
}

/// Answers each role from its queue in order, regardless of prompt content.
#[derive(Debug)]
pub struct SequenceBackend {
    name: String,
    queues: Mutex<BTreeMap<AgentRole, VecDeque<String>>>,
}

impl SequenceBackend {
    pub fn new(script: SequenceScript) -> Self {
        Self {
            name: script.name,
            queues: Mutex::new(
                script
                    .replies
                    .into_iter()
                    .map(|(role, replies)| (role, replies.into()))
                    .collect(),
            ),
        }
    }

    /// Replies not yet consumed, per role.
    pub fn remaining(&self) -> BTreeMap<AgentRole, usize> {
        self.queues
            .lock()
            .expect("queue poisoned")
            .iter()
            .map(|(r, q)| (*r, q.len()))
            .collect()
    }
}

impl ChatBackend for SequenceBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        self.queues
            .lock()
            .expect("queue poisoned")
            .get_mut(&request.tag)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| Error::ScriptMiss { key: request.script_key() })
    }

    fn model_label(&self, _configured: &str) -> String {
        format!("scripted:{}", self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, Gateway};
    use std::sync::Arc;

    fn seq() -> SequenceScript {
        SequenceScript {
            name: "t".into(),
            replies: BTreeMap::from([(AgentRole::Actor, vec!["one".to_string(), "two".to_string()])]),
        }
    }

    #[test]
    fn record_then_replay() {
        let g = Gateway::uniform(Arc::new(SequenceBackend::new(seq())));
        assert_eq!(g.complete(AgentRole::Actor, vec![ChatMessage::system("a")]).unwrap(), "one");
        assert_eq!(g.complete(AgentRole::Actor, vec![ChatMessage::system("b")]).unwrap(), "two");
        let table = ScriptTable::from_calls("t", &g.take_log()).unwrap();
        assert_eq!(table.len(), 2);

        let replay = Gateway::uniform(Arc::new(ScriptedBackend::new(table)));
        assert_eq!(replay.complete(AgentRole::Actor, vec![ChatMessage::system("b")]).unwrap(), "two");
        assert_eq!(replay.complete(AgentRole::Actor, vec![ChatMessage::system("b")]).unwrap(), "two");
        assert_eq!(replay.model_label(AgentRole::Actor), "scripted:t");
    }

    #[test]
    fn miss_names_digest() {
        let g = Gateway::uniform(Arc::new(ScriptedBackend::new(ScriptTable::default())));
        let err = g.complete(AgentRole::Judge, vec![ChatMessage::system("zzz")]).unwrap_err();
        match err {
            Error::ScriptMiss { key } => {
                assert!(key.starts_with("judge:"));
                assert_eq!(key.len(), "judge:".len() + 64);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conflicting_recordings_rejected() {
        let call = |r: &str| CallRecord {
            tag: AgentRole::Actor,
            key: "actor:x".into(),
            messages: vec![],
            response: Some(r.into()),
        };
        assert!(ScriptTable::from_calls("t", &[call("a"), call("b")]).is_err());
        assert!(ScriptTable::from_calls("t", &[call("a"), call("a")]).is_ok());
    }
}
