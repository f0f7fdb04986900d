//! The six agent prompts and `{placeholder}` rendering.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ChatMessage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Patient,
    Examination,
    Judge,
    Actor,
    Grader,
    Evolver,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Patient => "patient",
            TemplateId::Examination => "examination",
            TemplateId::Judge => "judge",
            TemplateId::Actor => "actor",
            TemplateId::Grader => "grader",
            TemplateId::Evolver => "evolver",
        }
    }

    fn user_turn(self) -> &'static str {
        match self {
            TemplateId::Patient => "Answer the clinician question.",
            TemplateId::Examination => "Return the requested result.",
            TemplateId::Judge => "Grade the submitted diagnosis.",
            TemplateId::Actor => "Choose the next action.",
            TemplateId::Grader => "Grade each turn of the transcript.",
            TemplateId::Evolver => "Propose prompt and memory updates.",
        }
    }
}

pub type Bindings<'a> = [(&'a str, &'a str)];

pub fn template_body(id: TemplateId) -> &'static str {
    match id {
        TemplateId::Patient => include_str!("prompts/patient.txt"),
        TemplateId::Examination => include_str!("prompts/examination.txt"),
        TemplateId::Judge => include_str!("prompts/judge.txt"),
        TemplateId::Actor => include_str!("prompts/actor.txt"),
        TemplateId::Grader => include_str!("prompts/grader.txt"),
        TemplateId::Evolver => include_str!("prompts/evolver.txt"),
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"))
}

pub fn placeholders(body: &str) -> BTreeSet<String> {
    placeholder_re()
        .captures_iter(body)
        .map(|c| c[1].to_string())
        .collect()
}

pub fn render_template(id: TemplateId, bindings: &Bindings<'_>) -> Result<Vec<ChatMessage>> {
    render_body(id, template_body(id), bindings)
}

/// Render `body` as the system message for `id`. Every placeholder must be
/// bound and every binding must be used. Substitution is single-pass, so
/// bound values are never re-expanded.
pub fn render_body(id: TemplateId, body: &str, bindings: &Bindings<'_>) -> Result<Vec<ChatMessage>> {
    let wanted = placeholders(body);
    for name in &wanted {
        if !bindings.iter().any(|(k, _)| k == name) {
            return Err(Error::Template {
                template: id.as_str().into(),
                reason: format!("placeholder {{{name}}} is not bound"),
            });
        }
    }
    for (k, _) in bindings {
        if !wanted.contains(*k) {
            return Err(Error::Template {
                template: id.as_str().into(),
                reason: format!("binding `{k}` has no placeholder"),
            });
        }
    }
    let rendered = placeholder_re().replace_all(body, |caps: &regex::Captures<'_>| {
        let name = &caps[1];
        bindings
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v.to_string())
            .expect("checked above")
    });
    Ok(vec![
        ChatMessage::system(rendered.into_owned()),
        ChatMessage::user(id.user_turn()),
    ])
}
