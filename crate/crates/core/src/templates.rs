//! Versioned prompt templates.
//!
//! A template file starts with an `#id: name/version` header line followed by
//! the body. Placeholders are `{name}` tokens replaced literally; any other
//! braces in the body are left untouched.

use std::fs;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {0} is missing its `#id:` header")]
    MissingHeader(String),
    #[error("reading template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn parse(name: &str, text: &str) -> Result<Self, TemplateError> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let id = first
            .strip_prefix("#id:")
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| TemplateError::MissingHeader(name.to_string()))?;
        Ok(Self { id, body: rest.to_string() })
    }

    /// Substitutes each `{key}` with its value in a single left-to-right pass,
    /// so substituted text is never rescanned for placeholders.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        'scan: while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            for (key, value) in vars {
                let token_len = key.len() + 2;
                if tail.as_bytes().get(token_len - 1) == Some(&b'}') && tail.get(1..token_len - 1) == Some(*key) {
                    out.push_str(value);
                    rest = &tail[token_len..];
                    continue 'scan;
                }
            }
            out.push('{');
            rest = &tail[1..];
        }
        out.push_str(rest);
        out
    }
}

/// Templates for both pipeline prompts, each in a multiple-choice and an
/// open-ended variant.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub decouple_mc: PromptTemplate,
    pub decouple_open: PromptTemplate,
    pub answer_mc: PromptTemplate,
    pub answer_open: PromptTemplate,
}

const BUILTIN: [(&str, &str); 4] = [
    ("decouple_mc.txt", include_str!("../prompts/decouple_mc.txt")),
    ("decouple_open.txt", include_str!("../prompts/decouple_open.txt")),
    ("answer_mc.txt", include_str!("../prompts/answer_mc.txt")),
    ("answer_open.txt", include_str!("../prompts/answer_open.txt")),
];

impl TemplateSet {
    pub fn builtin() -> Self {
        let t = |i: usize| PromptTemplate::parse(BUILTIN[i].0, BUILTIN[i].1).expect("bundled template");
        Self { decouple_mc: t(0), decouple_open: t(1), answer_mc: t(2), answer_open: t(3) }
    }

    /// Built-in templates, with any file of the same name in `dir` taking
    /// precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        let slots: [&mut PromptTemplate; 4] =
            [&mut set.decouple_mc, &mut set.decouple_open, &mut set.answer_mc, &mut set.answer_open];
        for ((name, _), slot) in BUILTIN.iter().zip(slots) {
            let path = dir.join(name);
            if path.is_file() {
                let text = fs::read_to_string(&path)
                    .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
                *slot = PromptTemplate::parse(name, &text)?;
            }
        }
        Ok(set)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
