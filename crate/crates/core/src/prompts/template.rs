//! Prompt template files.
//!
//! A template file is UTF-8 text split into sections by `### <name>` header
//! lines. Lines starting with `#` before the first section are comments (the
//! first one conventionally carries the template version). Sections:
//!
//! * `prompt`  - the whole prompt; placeholders `{definitions}`,
//!   `{examples}`, `{target}`, `{foundation}`, `{candidates}`.
//! * `example` - one exemplar block; `{text}` plus `{label}`, `{pairs}` or
//!   `{slots}` depending on the strategy.
//! * `pair`    - one entity line group inside an example; `{entity}` and
//!   `{label}`. Only role strategies use it.
//!
//! Trailing newlines of a section are dropped. Substitution is single-pass,
//! so braces inside substituted tweet text are never re-expanded.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::PromptError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub header: String,
    sections: BTreeMap<String, String>,
}

impl Template {
    pub fn parse(name: &str, raw: &str) -> Result<Self, PromptError> {
        let mut header = Vec::new();
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in raw.lines() {
            if let Some(section) = line.strip_prefix("### ") {
                let section = section.trim().to_string();
                if sections.contains_key(&section) {
                    return Err(PromptError::Template {
                        name: name.to_string(),
                        message: format!("section `{section}` appears twice"),
                    });
                }
                sections.insert(section.clone(), Vec::new());
                current = Some(section);
                continue;
            }
            match &current {
                Some(section) => sections.get_mut(section).expect("inserted").push(line),
                None if line.starts_with('#') || line.trim().is_empty() => header.push(line),
                None => {
                    return Err(PromptError::Template {
                        name: name.to_string(),
                        message: "text before the first `### section` header".to_string(),
                    })
                }
            }
        }
        let sections = sections
            .into_iter()
            .map(|(k, lines)| (k, lines.join("\n").trim_end_matches('\n').to_string()))
            .collect();
        Ok(Self {
            name: name.to_string(),
            header: header.join("\n"),
            sections,
        })
    }

    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections.get(name).map(String::as_str)
    }

    pub(crate) fn require(&self, section: &str, placeholders: &[&str]) -> Result<&str, PromptError> {
        let text = self.section(section).ok_or_else(|| PromptError::Template {
            name: self.name.clone(),
            message: format!("missing `### {section}` section"),
        })?;
        for p in placeholders {
            if !text.contains(&format!("{{{p}}}")) {
                return Err(PromptError::Template {
                    name: self.name.clone(),
                    message: format!("section `{section}` lacks placeholder {{{p}}}"),
                });
            }
        }
        Ok(text)
    }

    fn canonical_text(&self) -> String {
        let mut out = format!("{}\n{}\n", self.name, self.header);
        for (k, v) in &self.sections {
            out.push_str(&format!("### {k}\n{v}\n"));
        }
        out
    }
}

/// Substitute `{name}` placeholders in one pass. Unknown placeholders are
/// left as written. With `stop_at`, output ends just before that placeholder
/// (trailing spaces and tabs removed) so a generation slot is left open.
pub fn fill(template: &str, values: &[(&str, &str)], stop_at: Option<&str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(name) if stop_at == Some(name) => {
                let trimmed = out.trim_end_matches([' ', '\t']).len();
                out.truncate(trimmed);
                return out;
            }
            Some(name) => {
                if let Some((_, v)) = values.iter().find(|(k, _)| *k == name) {
                    out.push_str(v);
                } else {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TemplateKind {
    MfOnePass,
    MfOneVsAll,
    MfTieBreak,
    RoleOnePass,
    RoleSentiment,
    RolePositive,
    JointSlotFill,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 7] = [
        TemplateKind::MfOnePass,
        TemplateKind::MfOneVsAll,
        TemplateKind::MfTieBreak,
        TemplateKind::RoleOnePass,
        TemplateKind::RoleSentiment,
        TemplateKind::RolePositive,
        TemplateKind::JointSlotFill,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::MfOnePass => "mf_one_pass.txt",
            TemplateKind::MfOneVsAll => "mf_one_vs_all.txt",
            TemplateKind::MfTieBreak => "mf_tiebreak.txt",
            TemplateKind::RoleOnePass => "role_one_pass.txt",
            TemplateKind::RoleSentiment => "role_sentiment.txt",
            TemplateKind::RolePositive => "role_positive.txt",
            TemplateKind::JointSlotFill => "joint_slotfill.txt",
        }
    }

    fn bundled_text(self) -> &'static str {
        match self {
            TemplateKind::MfOnePass => include_str!("../../templates/mf_one_pass.txt"),
            TemplateKind::MfOneVsAll => include_str!("../../templates/mf_one_vs_all.txt"),
            TemplateKind::MfTieBreak => include_str!("../../templates/mf_tiebreak.txt"),
            TemplateKind::RoleOnePass => include_str!("../../templates/role_one_pass.txt"),
            TemplateKind::RoleSentiment => include_str!("../../templates/role_sentiment.txt"),
            TemplateKind::RolePositive => include_str!("../../templates/role_positive.txt"),
            TemplateKind::JointSlotFill => include_str!("../../templates/joint_slotfill.txt"),
        }
    }

    fn validate(self, t: &Template) -> Result<(), PromptError> {
        t.require("prompt", &["examples", "target"])?;
        match self {
            TemplateKind::MfOnePass | TemplateKind::MfOneVsAll | TemplateKind::MfTieBreak => {
                t.require("example", &["text", "label"])?;
            }
            TemplateKind::RoleOnePass | TemplateKind::RoleSentiment | TemplateKind::RolePositive => {
                t.require("example", &["text", "pairs"])?;
                t.require("pair", &["entity", "label"])?;
            }
            TemplateKind::JointSlotFill => {
                t.require("example", &["text", "slots"])?;
            }
        }
        Ok(())
    }
}

/// One template per prompt family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateKind, Template>,
}

impl TemplateSet {
    pub fn bundled() -> Self {
        let mut templates = BTreeMap::new();
        for kind in TemplateKind::ALL {
            let t = Template::parse(kind.file_name(), kind.bundled_text())
                .expect("bundled template parses");
            kind.validate(&t).expect("bundled template is complete");
            templates.insert(kind, t);
        }
        Self { templates }
    }

    /// Load templates from a directory; files that are absent fall back to
    /// the bundled version.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::bundled();
        for kind in TemplateKind::ALL {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let raw = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.replace(kind, &raw)?;
        }
        Ok(set)
    }

    pub fn replace(&mut self, kind: TemplateKind, raw: &str) -> Result<(), PromptError> {
        let t = Template::parse(kind.file_name(), raw)?;
        kind.validate(&t)?;
        self.templates.insert(kind, t);
        Ok(())
    }

    pub fn get(&self, kind: TemplateKind) -> &Template {
        &self.templates[&kind]
    }

    /// SHA-256 over every template, for run manifests.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in self.templates.values() {
            hasher.update(t.canonical_text().as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::bundled()
    }
}
