//! Rendering of the seven prompt families.
//!
//! Every prompt is: instruction text with label definitions, then the shot
//! exemplars, then the target written as one more exemplar whose answer is
//! left open for the model. Shots are interleaved round-robin across classes
//! in taxonomy order.

mod template;

pub use template::{fill, Template, TemplateKind, TemplateSet};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedItem, ShotSet};
use crate::domain::{DefinitionCatalog, Foundation, Label, OneVsAll, Polarity, Role};
use crate::error::PromptError;

/// Fits a 2048-token context with the default 64 new tokens.
pub const DEFAULT_TOKEN_BUDGET: usize = 1984;

/// Marker rendered for a role slot that no entity fills.
pub const EMPTY_SLOT: &str = "N/A";

/// Separator between several entities filling one slot.
pub const SLOT_SEPARATOR: &str = "; ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "foundations")]
pub enum Strategy {
    MfOnePass,
    MfOneVsAll(Foundation),
    MfTieBreak(Foundation, Foundation),
    RoleOnePass(Foundation),
    RoleSentiment,
    RolePositiveOnly(Foundation),
    JointSlotFill(Foundation),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::MfOnePass => write!(f, "MF-OnePass"),
            Strategy::MfOneVsAll(x) => write!(f, "MF-OneVsAll({x})"),
            Strategy::MfTieBreak(a, b) => write!(f, "MF-TieBreak({a},{b})"),
            Strategy::RoleOnePass(x) => write!(f, "Role-OnePass({x})"),
            Strategy::RoleSentiment => write!(f, "Role-Sentiment"),
            Strategy::RolePositiveOnly(x) => write!(f, "Role-PositiveOnly({x})"),
            Strategy::JointSlotFill(x) => write!(f, "Joint-SlotFill({x})"),
        }
    }
}

/// The text to be labelled. Only id and text reach the prompt, never gold
/// annotations.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

impl<'a> From<&'a AnnotatedItem> for Target<'a> {
    fn from(item: &'a AnnotatedItem) -> Self {
        Self {
            id: &item.id,
            text: &item.text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub strategy: Strategy,
    pub text: String,
    pub shot_ids: Vec<String>,
    pub target_id: String,
    pub entity: Option<String>,
    /// Label strings the prompt offers, in taxonomy order.
    pub candidates: Vec<String>,
    pub token_estimate: usize,
}

/// Whitespace-and-punctuation token count: each maximal alphanumeric run is
/// one token and each other non-space character is one token.
pub fn estimate_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

fn canonical_list<L: Label>(labels: &[L]) -> Vec<String> {
    labels.iter().map(|l| l.canonical().to_string()).collect()
}

/// Renders prompts from a definition catalog and a template set, rejecting
/// any prompt whose token estimate exceeds the budget.
#[derive(Debug, Clone)]
pub struct Renderer {
    catalog: DefinitionCatalog,
    templates: TemplateSet,
    budget: usize,
}

struct Pair {
    entity: String,
    label: &'static str,
}

impl Renderer {
    pub fn new(catalog: DefinitionCatalog, templates: TemplateSet, budget: usize) -> Self {
        Self {
            catalog,
            templates,
            budget,
        }
    }

    pub fn catalog(&self) -> &DefinitionCatalog {
        &self.catalog
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    fn foundation_definitions(&self, fs: &[Foundation]) -> String {
        fs.iter()
            .map(|f| format!("{}: {}", f.canonical(), self.catalog.foundation(*f)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn role_definitions(&self, roles: &[Role]) -> String {
        roles
            .iter()
            .map(|r| format!("{}: {}", r.canonical(), self.catalog.role(*r)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        kind: TemplateKind,
        strategy: Strategy,
        target: Target<'_>,
        entity: Option<&str>,
        definitions: &str,
        foundation: Option<Foundation>,
        candidates: Vec<String>,
        examples: Vec<(String, String)>,
        target_block: String,
    ) -> Result<PromptInstance, PromptError> {
        let template = self.templates.get(kind);
        let prompt = template.section("prompt").expect("validated");
        let mut shot_ids = Vec::with_capacity(examples.len());
        let mut rendered = String::new();
        for (id, block) in examples {
            shot_ids.push(id);
            rendered.push_str(&block);
            rendered.push_str("\n\n");
        }
        let candidate_list = candidates.join(", ");
        let foundation_name = foundation.map(|f| f.canonical()).unwrap_or("");
        let text = fill(
            prompt,
            &[
                ("definitions", definitions),
                ("examples", &rendered),
                ("target", &target_block),
                ("foundation", foundation_name),
                ("candidates", &candidate_list),
            ],
            None,
        );
        let token_estimate = estimate_tokens(&text);
        if token_estimate > self.budget {
            return Err(PromptError::BudgetExceeded {
                estimate: token_estimate,
                budget: self.budget,
            });
        }
        Ok(PromptInstance {
            strategy,
            text,
            shot_ids,
            target_id: target.id.to_string(),
            entity: entity.map(str::to_string),
            candidates,
            token_estimate,
        })
    }

    fn labelled_block(&self, kind: TemplateKind, text: &str, label: &str) -> String {
        let example = self.templates.get(kind).section("example").expect("validated");
        fill(example, &[("text", text), ("label", label)], None)
    }

    fn labelled_target(&self, kind: TemplateKind, text: &str) -> String {
        let example = self.templates.get(kind).section("example").expect("validated");
        fill(example, &[("text", text)], Some("label"))
    }

    fn pair_block(&self, kind: TemplateKind, text: &str, pairs: &[Pair]) -> String {
        let t = self.templates.get(kind);
        let pair = t.section("pair").expect("validated");
        let lines = pairs
            .iter()
            .map(|p| fill(pair, &[("entity", &p.entity), ("label", p.label)], None))
            .collect::<Vec<_>>()
            .join("\n");
        fill(
            t.section("example").expect("validated"),
            &[("text", text), ("pairs", &lines)],
            None,
        )
    }

    fn pair_target(&self, kind: TemplateKind, text: &str, entity: &str) -> String {
        let t = self.templates.get(kind);
        let open = fill(
            t.section("pair").expect("validated"),
            &[("entity", entity)],
            Some("label"),
        );
        let head = fill(
            t.section("example").expect("validated"),
            &[("text", text)],
            Some("pairs"),
        );
        format!("{head}{open}")
    }

    fn check_target(target: Target<'_>) -> Result<(), PromptError> {
        if target.text.trim().is_empty() {
            Err(PromptError::EmptyTarget)
        } else {
            Ok(())
        }
    }

    fn check_entity(entity: &str) -> Result<(), PromptError> {
        if entity.trim().is_empty() {
            Err(PromptError::EmptyEntity)
        } else {
            Ok(())
        }
    }

    pub fn render_mf_one_pass(
        &self,
        shots: &ShotSet,
        target: Target<'_>,
    ) -> Result<PromptInstance, PromptError> {
        Self::check_target(target)?;
        let kind = TemplateKind::MfOnePass;
        let examples = shots
            .round_robin()
            .into_iter()
            .map(|s| (s.id.clone(), self.labelled_block(kind, &s.text, s.foundation.canonical())))
            .collect();
        self.assemble(
            kind,
            Strategy::MfOnePass,
            target,
            None,
            &self.foundation_definitions(&Foundation::ALL),
            None,
            canonical_list(&Foundation::ALL),
            examples,
            self.labelled_target(kind, target.text),
        )
    }

    pub fn render_mf_one_vs_all(
        &self,
        shots: &ShotSet,
        target: Target<'_>,
        foundation: Foundation,
    ) -> Result<PromptInstance, PromptError> {
        Self::check_target(target)?;
        let kind = TemplateKind::MfOneVsAll;
        let examples = shots
            .round_robin()
            .into_iter()
            .map(|s| {
                let answer = if s.foundation == foundation {
                    OneVsAll::Present(foundation)
                } else {
                    OneVsAll::Other
                };
                (s.id.clone(), self.labelled_block(kind, &s.text, answer.canonical()))
            })
            .collect();
        self.assemble(
            kind,
            Strategy::MfOneVsAll(foundation),
            target,
            None,
            &self.foundation_definitions(&[foundation]),
            Some(foundation),
            canonical_list(&[OneVsAll::Present(foundation), OneVsAll::Other]),
            examples,
            self.labelled_target(kind, target.text),
        )
    }

    /// Candidate order is canonical, so `(a, b)` and `(b, a)` render the
    /// same prompt.
    pub fn render_mf_tiebreak(
        &self,
        shots: &ShotSet,
        target: Target<'_>,
        first: Foundation,
        second: Foundation,
    ) -> Result<PromptInstance, PromptError> {
        if first == second {
            return Err(PromptError::SameFoundation(first.to_string()));
        }
        Self::check_target(target)?;
        let pair = [first.min(second), first.max(second)];
        let kind = TemplateKind::MfTieBreak;
        let examples = shots
            .round_robin()
            .into_iter()
            .filter(|s| pair.contains(&s.foundation))
            .map(|s| (s.id.clone(), self.labelled_block(kind, &s.text, s.foundation.canonical())))
            .collect();
        self.assemble(
            kind,
            Strategy::MfTieBreak(pair[0], pair[1]),
            target,
            None,
            &self.foundation_definitions(&pair),
            None,
            canonical_list(&pair),
            examples,
            self.labelled_target(kind, target.text),
        )
    }

    pub fn render_role_one_pass(
        &self,
        shots: &ShotSet,
        target: Target<'_>,
        entity: &str,
        foundation: Foundation,
    ) -> Result<PromptInstance, PromptError> {
        Self::check_target(target)?;
        Self::check_entity(entity)?;
        let kind = TemplateKind::RoleOnePass;
        let examples = shots
            .class(foundation)
            .iter()
            .filter(|s| !s.entities.is_empty())
            .map(|s| {
                let pairs: Vec<Pair> = s
                    .entities
                    .iter()
                    .map(|e| Pair {
                        entity: e.span.clone(),
                        label: e.role.canonical(),
                    })
                    .collect();
                (s.id.clone(), self.pair_block(kind, &s.text, &pairs))
            })
            .collect();
        self.assemble(
            kind,
            Strategy::RoleOnePass(foundation),
            target,
            Some(entity),
            &self.role_definitions(foundation.roles()),
            Some(foundation),
            canonical_list(foundation.roles()),
            examples,
            self.pair_target(kind, target.text, entity),
        )
    }

    /// Step one of two-step role identification; independent of foundation.
    pub fn render_role_sentiment(
        &self,
        shots: &ShotSet,
        target: Target<'_>,
        entity: &str,
    ) -> Result<PromptInstance, PromptError> {
        Self::check_target(target)?;
        Self::check_entity(entity)?;
        let kind = TemplateKind::RoleSentiment;
        let examples = shots
            .round_robin()
            .into_iter()
            .filter(|s| !s.entities.is_empty())
            .map(|s| {
                let pairs: Vec<Pair> = s
                    .entities
                    .iter()
                    .map(|e| Pair {
                        entity: e.span.clone(),
                        label: e.role.polarity().canonical(),
                    })
                    .collect();
                (s.id.clone(), self.pair_block(kind, &s.text, &pairs))
            })
            .collect();
        self.assemble(
            kind,
            Strategy::RoleSentiment,
            target,
            Some(entity),
            "",
            None,
            canonical_list(&Polarity::ALL),
            examples,
            self.pair_target(kind, target.text, entity),
        )
    }

    /// Step two: choose among the positive roles of `foundation`. Shot
    /// entities with the negative role are left out.
    pub fn render_role_positive(
        &self,
        shots: &ShotSet,
        target: Target<'_>,
        entity: &str,
        foundation: Foundation,
    ) -> Result<PromptInstance, PromptError> {
        Self::check_target(target)?;
        Self::check_entity(entity)?;
        let kind = TemplateKind::RolePositive;
        let positive = foundation.positive_roles();
        let examples = shots
            .class(foundation)
            .iter()
            .filter_map(|s| {
                let pairs: Vec<Pair> = s
                    .entities
                    .iter()
                    .filter(|e| e.role.polarity() == Polarity::Positive)
                    .map(|e| Pair {
                        entity: e.span.clone(),
                        label: e.role.canonical(),
                    })
                    .collect();
                (!pairs.is_empty()).then(|| (s.id.clone(), self.pair_block(kind, &s.text, &pairs)))
            })
            .collect();
        self.assemble(
            kind,
            Strategy::RolePositiveOnly(foundation),
            target,
            Some(entity),
            &self.role_definitions(&positive),
            Some(foundation),
            canonical_list(&positive),
            examples,
            self.pair_target(kind, target.text, entity),
        )
    }

    pub fn render_joint_slotfill(
        &self,
        shots: &ShotSet,
        target: Target<'_>,
        foundation: Foundation,
    ) -> Result<PromptInstance, PromptError> {
        Self::check_target(target)?;
        let kind = TemplateKind::JointSlotFill;
        let example = self.templates.get(kind).section("example").expect("validated");
        let examples = shots
            .class(foundation)
            .iter()
            .map(|s| {
                let slots = render_slots(foundation, s);
                (s.id.clone(), fill(example, &[("text", &s.text), ("slots", &slots)], None))
            })
            .collect();
        let target_block = fill(example, &[("text", target.text)], Some("slots"));
        self.assemble(
            kind,
            Strategy::JointSlotFill(foundation),
            target,
            None,
            &self.role_definitions(foundation.roles()),
            Some(foundation),
            canonical_list(foundation.roles()),
            examples,
            target_block,
        )
    }
}

impl Default for Renderer {
    fn default() -> Self {
        Self::new(
            DefinitionCatalog::bundled(),
            TemplateSet::bundled(),
            DEFAULT_TOKEN_BUDGET,
        )
    }
}

/// One `Role: entity; entity` line per role of the foundation, `N/A` when
/// the item has no entity in that role.
pub fn render_slots(foundation: Foundation, item: &AnnotatedItem) -> String {
    foundation
        .roles()
        .iter()
        .map(|role| {
            let spans: Vec<&str> = item
                .entities
                .iter()
                .filter(|e| e.role == *role)
                .map(|e| e.span.as_str())
                .collect();
            let value = if spans.is_empty() {
                EMPTY_SLOT.to_string()
            } else {
                spans.join(SLOT_SEPARATOR)
            };
            format!("{}: {value}", role.canonical())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests;
