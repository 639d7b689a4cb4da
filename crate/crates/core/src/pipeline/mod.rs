//! From completions to labels: voting, one-vs-all consolidation, two-step
//! role composition, slot-fill decoding and the per-task runners.

mod run;
mod slots;
mod vote;

pub use run::{
    run_task, score_predictions, FoundationSource, ItemFailure, JointRecord, MfRecord,
    PredictionRecords, Predictions, Report, RoleRecord, RunOutput, RunSettings, Task,
    TraceRecord,
};
pub use slots::{consolidate_slots, parse_slots, SlotFillResult};
pub use vote::{majority_vote, parse_label, Vote, VoteSet};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::client::{Completion, GenerationConfig, Generator};
use crate::corpus::{AnnotatedItem, ShotSet};
use crate::domain::{Foundation, Label, OneVsAll, Polarity, Role};
use crate::entmatch::{match_entity, MatchOutcome};
use crate::error::PipelineError;
use crate::prompts::{PromptInstance, Renderer, Strategy, Target};
use crate::rng::SplitMix64;

/// Fraction of one-vs-all generations naming each foundation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceVector(pub BTreeMap<Foundation, f64>);

impl ConfidenceVector {
    pub fn get(&self, f: Foundation) -> f64 {
        self.0.get(&f).copied().unwrap_or(0.0)
    }

    /// Foundations sharing the highest confidence, in taxonomy order.
    pub fn leaders(&self) -> Vec<Foundation> {
        let max = self.0.values().copied().fold(f64::NEG_INFINITY, f64::max);
        Foundation::ALL
            .into_iter()
            .filter(|f| self.0.get(f) == Some(&max))
            .collect()
    }
}

/// Audit record of one prompt and its parsed generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTrace {
    pub strategy: Strategy,
    pub prompt_hash: String,
    pub token_estimate: usize,
    pub shot_ids: Vec<String>,
    /// Parsed label per generation in `(seed, sample_index)` order; `null`
    /// marks an abstention.
    pub parsed: Vec<Option<String>>,
    pub counts: BTreeMap<String, usize>,
    pub abstentions: usize,
}

/// Raw generation text, kept apart from traces because it is large.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_hash: String,
    pub seed: u64,
    pub sample_index: u32,
    pub text: String,
}

/// Everything one item's prompts produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub prompts: Vec<PromptTrace>,
    pub generations: Vec<GenerationRecord>,
}

impl Transcript {
    fn record<L: Label>(&mut self, prompt: &PromptInstance, completions: &[Completion], votes: &VoteSet<L>) {
        self.record_parsed(
            prompt,
            completions,
            votes.votes().iter().map(|v| v.label.map(|l| l.canonical().to_string())).collect(),
            votes.count_strings(),
        );
    }

    fn record_parsed(
        &mut self,
        prompt: &PromptInstance,
        completions: &[Completion],
        parsed: Vec<Option<String>>,
        counts: BTreeMap<String, usize>,
    ) {
        let hash = completions
            .first()
            .map(|c| c.prompt_hash.clone())
            .unwrap_or_else(|| crate::client::prompt_hash(&prompt.text));
        self.prompts.push(PromptTrace {
            strategy: prompt.strategy,
            prompt_hash: hash,
            token_estimate: prompt.token_estimate,
            shot_ids: prompt.shot_ids.clone(),
            abstentions: parsed.iter().filter(|p| p.is_none()).count(),
            parsed,
            counts,
        });
        self.generations.extend(completions.iter().map(|c| GenerationRecord {
            prompt_hash: c.prompt_hash.clone(),
            seed: c.seed,
            sample_index: c.sample_index,
            text: c.text.clone(),
        }));
    }
}

#[derive(Debug, Clone)]
pub struct MfOutcome {
    pub label: Foundation,
    pub votes: VoteSet<Foundation>,
}

/// How a one-vs-all decision was reached.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    UniqueArgmax,
    TieBreak {
        pair: (Foundation, Foundation),
        votes: VoteSet<Foundation>,
    },
    SeededChoice {
        tied: Vec<Foundation>,
    },
}

#[derive(Debug, Clone)]
pub struct OneVsAllOutcome {
    pub label: Foundation,
    pub confidence: ConfidenceVector,
    pub resolution: Resolution,
}

#[derive(Debug, Clone)]
pub struct RoleOutcome {
    pub label: Role,
    pub votes: VoteSet<Role>,
}

#[derive(Debug, Clone)]
pub struct TwoStepOutcome {
    pub label: Role,
    pub sentiment: VoteSet<Polarity>,
    pub positive: Option<VoteSet<Role>>,
}

/// Match result of one predicted `(role, entity)` fill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillOutcome {
    pub role: Role,
    pub entity: String,
    pub outcome: MatchOutcome,
    /// Whether the matched gold entity carries this role; `None` when the
    /// fill matched no gold entity.
    pub role_correct: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct JointOutcome {
    pub slots: SlotFillResult,
    pub fills: Vec<FillOutcome>,
}

/// Match every fill against all gold spans of the item.
pub fn evaluate_fills(slots: &SlotFillResult, item: &AnnotatedItem, threshold: f64) -> Vec<FillOutcome> {
    let golds: Vec<&str> = item.entities.iter().map(|e| e.span.as_str()).collect();
    slots
        .pairs()
        .map(|(role, entity)| {
            let outcome = match_entity(entity, &golds, &item.text, threshold);
            let role_correct = outcome
                .matched_gold
                .as_deref()
                .map(|g| item.roles_for(g).any(|r| r == role));
            FillOutcome {
                role,
                entity: entity.to_string(),
                outcome,
                role_correct,
            }
        })
        .collect()
}

fn at_stage(e: PipelineError, stage: &str) -> PipelineError {
    match e {
        PipelineError::AllAbstained { total, .. } => PipelineError::AllAbstained {
            stage: stage.to_string(),
            total,
        },
        other => other,
    }
}

/// Per-item classification operations over one renderer and generator.
pub struct Classifier<'a> {
    pub renderer: &'a Renderer,
    pub generator: &'a Generator,
    pub config: &'a GenerationConfig,
    pub tie_seed: u64,
    pub threshold: f64,
}

impl Classifier<'_> {
    fn run<L: Label>(
        &self,
        prompt: &PromptInstance,
        candidates: &[L],
        transcript: &mut Transcript,
    ) -> Result<VoteSet<L>, PipelineError> {
        let completions = self.generator.generate_all(&prompt.text, self.config)?;
        let votes = VoteSet::from_completions(&completions, candidates);
        transcript.record(prompt, &completions, &votes);
        Ok(votes)
    }

    pub fn classify_mf_one_pass(
        &self,
        target: Target<'_>,
        shots: &ShotSet,
        transcript: &mut Transcript,
    ) -> Result<MfOutcome, PipelineError> {
        let prompt = self.renderer.render_mf_one_pass(shots, target)?;
        let votes = self.run(&prompt, &Foundation::ALL, transcript)?;
        let label = majority_vote(&votes).map_err(|e| at_stage(e, "mf one-pass"))?;
        Ok(MfOutcome { label, votes })
    }

    /// Five one-vs-all prompts, then argmax of confidence. Abstentions count
    /// in each confidence denominator.
    pub fn classify_mf_one_vs_all(
        &self,
        target: Target<'_>,
        shots: &ShotSet,
        transcript: &mut Transcript,
    ) -> Result<OneVsAllOutcome, PipelineError> {
        let mut confidence = BTreeMap::new();
        for f in Foundation::ALL {
            let prompt = self.renderer.render_mf_one_vs_all(shots, target, f)?;
            let votes = self.run(&prompt, &[OneVsAll::Present(f), OneVsAll::Other], transcript)?;
            let share = if votes.total() == 0 {
                0.0
            } else {
                votes.count(OneVsAll::Present(f)) as f64 / votes.total() as f64
            };
            confidence.insert(f, share);
        }
        let confidence = ConfidenceVector(confidence);
        let leaders = confidence.leaders();
        let (label, resolution) = match leaders.as_slice() {
            [only] => (*only, Resolution::UniqueArgmax),
            [a, b] => {
                let prompt = self.renderer.render_mf_tiebreak(shots, target, *a, *b)?;
                let votes = self.run(&prompt, &[*a, *b], transcript)?;
                let label = majority_vote(&votes).map_err(|e| at_stage(e, "tie-break"))?;
                (label, Resolution::TieBreak { pair: (*a, *b), votes })
            }
            tied => {
                let mut rng = SplitMix64::keyed(self.tie_seed, target.id);
                let pick = tied[rng.below(tied.len() as u64) as usize];
                (pick, Resolution::SeededChoice { tied: tied.to_vec() })
            }
        };
        Ok(OneVsAllOutcome {
            label,
            confidence,
            resolution,
        })
    }

    fn require_shots(shots: &ShotSet) -> Result<(), PipelineError> {
        if shots.k == 0 || shots.is_empty() {
            Err(PipelineError::ZeroShotRole)
        } else {
            Ok(())
        }
    }

    pub fn classify_role_one_pass(
        &self,
        target: Target<'_>,
        entity: &str,
        foundation: Foundation,
        shots: &ShotSet,
        transcript: &mut Transcript,
    ) -> Result<RoleOutcome, PipelineError> {
        Self::require_shots(shots)?;
        let prompt = self
            .renderer
            .render_role_one_pass(shots, target, entity, foundation)?;
        let votes = self.run(&prompt, foundation.roles(), transcript)?;
        let label = majority_vote(&votes).map_err(|e| at_stage(e, "role one-pass"))?;
        Ok(RoleOutcome { label, votes })
    }

    /// Sentiment first; a negative vote maps straight to the foundation's
    /// negative role without a second prompt.
    pub fn classify_role_two_step(
        &self,
        target: Target<'_>,
        entity: &str,
        foundation: Foundation,
        shots: &ShotSet,
        transcript: &mut Transcript,
    ) -> Result<TwoStepOutcome, PipelineError> {
        Self::require_shots(shots)?;
        let prompt = self.renderer.render_role_sentiment(shots, target, entity)?;
        let sentiment = self.run(&prompt, &Polarity::ALL, transcript)?;
        match majority_vote(&sentiment).map_err(|e| at_stage(e, "sentiment step"))? {
            Polarity::Negative => Ok(TwoStepOutcome {
                label: foundation.negative_role(),
                sentiment,
                positive: None,
            }),
            Polarity::Positive => {
                let prompt = self
                    .renderer
                    .render_role_positive(shots, target, entity, foundation)?;
                let positive = self.run(&prompt, &foundation.positive_roles(), transcript)?;
                let label = majority_vote(&positive).map_err(|e| at_stage(e, "positive-role step"))?;
                Ok(TwoStepOutcome {
                    label,
                    sentiment,
                    positive: Some(positive),
                })
            }
        }
    }

    /// Slot filling for a known foundation. Only the target text reaches the
    /// prompt; `item` supplies gold spans for matching.
    pub fn run_joint_slotfill(
        &self,
        item: &AnnotatedItem,
        foundation: Foundation,
        shots: &ShotSet,
        transcript: &mut Transcript,
    ) -> Result<JointOutcome, PipelineError> {
        Self::require_shots(shots)?;
        let prompt = self
            .renderer
            .render_joint_slotfill(shots, item.into(), foundation)?;
        let completions = self.generator.generate_all(&prompt.text, self.config)?;
        let parsed: Vec<Option<String>> = completions
            .iter()
            .map(|c| {
                parse_slots(&c.text, foundation).map(|s| {
                    s.pairs()
                        .map(|(r, e)| format!("{r}: {e}"))
                        .collect::<Vec<_>>()
                        .join("; ")
                })
            })
            .collect();
        let slots = consolidate_slots(&completions, foundation);
        let counts = slots
            .iter()
            .flat_map(|s| s.fills.iter())
            .map(|(r, es)| (r.to_string(), es.len()))
            .collect();
        transcript.record_parsed(&prompt, &completions, parsed, counts);
        let slots = slots.ok_or(PipelineError::NoSlotStructure(completions.len()))?;
        let fills = evaluate_fills(&slots, item, self.threshold);
        Ok(JointOutcome { slots, fills })
    }
}
