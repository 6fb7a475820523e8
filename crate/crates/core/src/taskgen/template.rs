//! Prompt templates with `{placeholder}` substitution.
//!
//! Templates follow Python `str.format` conventions: `{name}` is replaced,
//! `{{` and `}}` produce literal braces. Substituted values are inserted
//! verbatim and never re-scanned.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template references unknown placeholder `{0}`")]
    UnknownPlaceholder(String),
    #[error("unbalanced brace at byte {0}")]
    Unbalanced(usize),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Substitutes `vars` into `template`.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 64);
    let bytes = template.as_bytes();
    let mut i = 0;
    let mut lit = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push_str(&template[lit..i]);
                out.push('{');
                i += 2;
                lit = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push_str(&template[lit..i]);
                out.push('}');
                i += 2;
                lit = i;
            }
            b'{' => {
                let close = template[i..]
                    .find('}')
                    .map(|c| i + c)
                    .ok_or(TemplateError::Unbalanced(i))?;
                let name = &template[i + 1..close];
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::UnknownPlaceholder(name.to_owned()))?;
                out.push_str(&template[lit..i]);
                out.push_str(value);
                i = close + 1;
                lit = i;
            }
            b'}' => return Err(TemplateError::Unbalanced(i)),
            _ => i += 1,
        }
    }
    out.push_str(&template[lit..]);
    Ok(out)
}

/// Reasoner chat template family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum TemplateFamily {
    #[default]
    Qwen3,
    OctoThinker,
}

impl std::str::FromStr for TemplateFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Qwen3" | "qwen3" => Ok(Self::Qwen3),
            "OctoThinker" | "octothinker" => Ok(Self::OctoThinker),
            other => Err(format!("unknown template family `{other}`")),
        }
    }
}

/// The full set of prompt templates used by both roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub format_selection: String,
    pub mcq: String,
    pub free_form: String,
    pub reasoner_qwen3: String,
    pub reasoner_octothinker: String,
}

const FILES: [&str; 5] = [
    "format_selection.txt",
    "mcq.txt",
    "free_form.txt",
    "reasoner_qwen3.txt",
    "reasoner_octothinker.txt",
];

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            format_selection: include_str!("../../templates/format_selection.txt").to_owned(),
            mcq: include_str!("../../templates/mcq.txt").to_owned(),
            free_form: include_str!("../../templates/free_form.txt").to_owned(),
            reasoner_qwen3: include_str!("../../templates/reasoner_qwen3.txt").to_owned(),
            reasoner_octothinker: include_str!("../../templates/reasoner_octothinker.txt")
                .to_owned(),
        }
    }

    /// Loads a template set from a directory containing the five template
    /// files; missing files fall back to the built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for name in FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            *set.slot(name) = text;
        }
        Ok(set)
    }

    /// `"builtin"` or a directory path.
    pub fn select(key: &str) -> Result<Self, TemplateError> {
        if key.is_empty() || key == "builtin" {
            Ok(Self::builtin())
        } else {
            Self::from_dir(Path::new(key))
        }
    }

    fn slot(&mut self, file: &str) -> &mut String {
        match file {
            "format_selection.txt" => &mut self.format_selection,
            "mcq.txt" => &mut self.mcq,
            "free_form.txt" => &mut self.free_form,
            "reasoner_qwen3.txt" => &mut self.reasoner_qwen3,
            _ => &mut self.reasoner_octothinker,
        }
    }

    pub fn reasoner(&self, family: TemplateFamily) -> &str {
        match family {
            TemplateFamily::Qwen3 => &self.reasoner_qwen3,
            TemplateFamily::OctoThinker => &self.reasoner_octothinker,
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
