//! Matching generated entity strings against gold annotations.
//!
//! Checks run in a fixed order: a prediction whose normalized form does not
//! occur in the normalized tweet is a hallucination; otherwise a verbatim
//! (whitespace-trimmed) match to a gold span is exact; otherwise the best
//! gold by normalized Levenshtein similarity is taken if it reaches the
//! threshold; anything left is `N/A`.

use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.6;

// Slack on the threshold comparison so that e.g. 1 - 2/5 counts as 0.6.
const SCORE_EPSILON: f64 = 1e-9;

const ARTICLES: [&str; 3] = ["the", "a", "an"];

/// Lowercase, trim surrounding punctuation, collapse whitespace and drop
/// leading articles, repeated until nothing changes.
pub fn normalize(s: &str) -> String {
    let mut current = s.to_string();
    loop {
        let next = normalize_once(&current);
        if next == current {
            return next;
        }
        current = next;
    }
}

fn normalize_once(s: &str) -> String {
    let lowered = s.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    let mut words: Vec<&str> = trimmed.split_whitespace().collect();
    while words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimilarityError {
    EmptyInput,
}

impl std::fmt::Display for SimilarityError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("similarity is undefined for empty strings")
    }
}

impl std::error::Error for SimilarityError {}

/// `1 - levenshtein(a, b) / max(|a|, |b|)` over Unicode scalar values.
pub fn similarity(a: &str, b: &str) -> Result<f64, SimilarityError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimilarityError::EmptyInput);
    }
    Ok(strsim::normalized_levenshtein(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Fuzzy { score: f64 },
    NotApplicable,
    Hallucination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    #[serde(flatten)]
    pub kind: MatchKind,
    pub matched_gold: Option<String>,
}

impl MatchOutcome {
    pub fn is_match(&self) -> bool {
        matches!(self.kind, MatchKind::Exact | MatchKind::Fuzzy { .. })
    }

    pub fn is_hallucination(&self) -> bool {
        self.kind == MatchKind::Hallucination
    }

    fn unmatched(kind: MatchKind) -> Self {
        Self {
            kind,
            matched_gold: None,
        }
    }
}

pub fn match_entity<S: AsRef<str>>(
    pred: &str,
    golds: &[S],
    tweet_text: &str,
    threshold: f64,
) -> MatchOutcome {
    let norm_pred = normalize(pred);
    if !normalize(tweet_text).contains(&norm_pred) {
        return MatchOutcome::unmatched(MatchKind::Hallucination);
    }
    if let Some(gold) = golds.iter().find(|g| g.as_ref().trim() == pred.trim()) {
        return MatchOutcome {
            kind: MatchKind::Exact,
            matched_gold: Some(gold.as_ref().to_string()),
        };
    }
    if norm_pred.is_empty() {
        return MatchOutcome::unmatched(MatchKind::NotApplicable);
    }

    // Best score; ties go to the longest normalized gold, then the
    // lexicographically smallest, so gold order never matters.
    let mut best: Option<(f64, String, &str)> = None;
    for gold in golds {
        let norm_gold = normalize(gold.as_ref());
        let Ok(score) = similarity(&norm_pred, &norm_gold) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((best_score, best_norm, best_raw)) => {
                if (score - best_score).abs() > SCORE_EPSILON {
                    score > *best_score
                } else {
                    let (len, best_len) = (norm_gold.chars().count(), best_norm.chars().count());
                    len > best_len
                        || (len == best_len
                            && (norm_gold.as_str(), gold.as_ref()) < (best_norm.as_str(), *best_raw))
                }
            }
        };
        if better {
            best = Some((score, norm_gold, gold.as_ref()));
        }
    }
    match best {
        Some((score, _, raw)) if score + SCORE_EPSILON >= threshold => MatchOutcome {
            kind: MatchKind::Fuzzy { score },
            matched_gold: Some(raw.to_string()),
        },
        _ => MatchOutcome::unmatched(MatchKind::NotApplicable),
    }
}
