//! Label parsing and majority voting over repeated generations.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::client::Completion;
use crate::domain::{fold_label, Label};
use crate::error::PipelineError;

/// Map a generation onto one candidate label, or abstain.
///
/// The label-like span is the first non-empty line with surrounding quotes,
/// brackets and sentence punctuation removed. A candidate matches when one
/// of its surface forms equals the span or is a prefix of it ending at a
/// word boundary. The longest matching form wins; if the longest matches
/// belong to different labels the result is an abstention.
pub fn parse_label<L: Label>(text: &str, candidates: &[L]) -> Option<L> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let span = fold_label(line.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*' | '(' | ')' | '[' | ']' | '.' | ',' | ':' | ';' | '!' | '-')
    }));
    if span.is_empty() {
        return None;
    }
    let mut best: Option<(usize, L)> = None;
    let mut ambiguous = false;
    for &label in candidates {
        for form in label.surface_forms() {
            let form = fold_label(form);
            let hit = span == form
                || (span.starts_with(&form)
                    && !span[form.len()..]
                        .chars()
                        .next()
                        .is_some_and(char::is_alphanumeric));
            if !hit {
                continue;
            }
            match best {
                Some((len, l)) if form.len() == len && l != label => ambiguous = true,
                Some((len, _)) if form.len() <= len => {}
                _ => {
                    best = Some((form.len(), label));
                    ambiguous = false;
                }
            }
        }
    }
    if ambiguous {
        None
    } else {
        best.map(|(_, l)| l)
    }
}

/// One parsed generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Vote<L> {
    pub seed: u64,
    pub sample_index: u32,
    pub label: Option<L>,
}

/// Parsed labels of one prompt's generations in `(seed, sample_index)`
/// order, abstentions kept in place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteSet<L> {
    votes: Vec<Vote<L>>,
}

impl<L: Label> VoteSet<L> {
    pub fn new(mut votes: Vec<Vote<L>>) -> Self {
        votes.sort_by_key(|v| (v.seed, v.sample_index));
        Self { votes }
    }

    /// Votes in the given order, with synthetic `(0, i)` positions.
    pub fn from_labels(labels: impl IntoIterator<Item = Option<L>>) -> Self {
        Self::new(
            labels
                .into_iter()
                .enumerate()
                .map(|(i, label)| Vote {
                    seed: 0,
                    sample_index: i as u32,
                    label,
                })
                .collect(),
        )
    }

    pub fn from_completions(completions: &[Completion], candidates: &[L]) -> Self {
        Self::new(
            completions
                .iter()
                .map(|c| Vote {
                    seed: c.seed,
                    sample_index: c.sample_index,
                    label: parse_label(&c.text, candidates),
                })
                .collect(),
        )
    }

    pub fn votes(&self) -> &[Vote<L>] {
        &self.votes
    }

    pub fn total(&self) -> usize {
        self.votes.len()
    }

    pub fn abstentions(&self) -> usize {
        self.votes.iter().filter(|v| v.label.is_none()).count()
    }

    pub fn parsed(&self) -> impl Iterator<Item = L> + '_ {
        self.votes.iter().filter_map(|v| v.label)
    }

    pub fn count(&self, label: L) -> usize {
        self.parsed().filter(|l| *l == label).count()
    }

    pub fn counts(&self) -> BTreeMap<L, usize> {
        let mut out = BTreeMap::new();
        for l in self.parsed() {
            *out.entry(l).or_insert(0) += 1;
        }
        out
    }

    /// Counts keyed by canonical label string, for traces.
    pub fn count_strings(&self) -> BTreeMap<String, usize> {
        self.counts()
            .into_iter()
            .map(|(l, n)| (l.canonical().to_string(), n))
            .collect()
    }
}

/// The most frequent parsed label; among tied labels the one produced
/// first in `(seed, sample_index)` order. Abstentions do not count.
pub fn majority_vote<L: Label>(votes: &VoteSet<L>) -> Result<L, PipelineError> {
    let counts = votes.counts();
    let Some(&max) = counts.values().max() else {
        return Err(PipelineError::AllAbstained {
            stage: "majority vote".to_string(),
            total: votes.total(),
        });
    };
    Ok(votes
        .parsed()
        .find(|l| counts[l] == max)
        .expect("a label reaches the maximum"))
}
