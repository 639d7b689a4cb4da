//! Slot-fill decoding for joint entity and role identification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::client::Completion;
use crate::domain::{Foundation, Role};
use crate::prompts::EMPTY_SLOT;

/// Entity strings per role slot. An empty list is an explicitly empty slot;
/// a role with no key was not produced at all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFillResult {
    pub fills: BTreeMap<Role, Vec<String>>,
    pub unparsed_remainder: String,
}

impl SlotFillResult {
    /// `(role, entity)` pairs in role order.
    pub fn pairs(&self) -> impl Iterator<Item = (Role, &str)> + '_ {
        self.fills
            .iter()
            .flat_map(|(r, es)| es.iter().map(move |e| (*r, e.as_str())))
    }
}

fn split_values(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case(EMPTY_SLOT) {
        return Vec::new();
    }
    raw.split(';')
        .map(str::trim)
        .filter(|v| !v.is_empty() && !v.eq_ignore_ascii_case(EMPTY_SLOT))
        .map(str::to_string)
        .collect()
}

/// Parse `Role: entity; entity` lines for the roles of `foundation`.
///
/// Reading stops at a line starting a new `Tweet:` example. Lines that are
/// not slot lines of this foundation, and repeats of a slot already seen,
/// go to the remainder. `None` when no slot line is found.
pub fn parse_slots(text: &str, foundation: Foundation) -> Option<SlotFillResult> {
    let mut result = SlotFillResult::default();
    let mut rest = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("Tweet:") {
            break;
        }
        if trimmed.is_empty() {
            continue;
        }
        let slot = trimmed.split_once(':').and_then(|(name, value)| {
            let role: Role = name.trim().parse().ok()?;
            (role.foundation() == foundation && !result.fills.contains_key(&role))
                .then_some((role, value))
        });
        match slot {
            Some((role, value)) => {
                result.fills.insert(role, split_values(value));
            }
            None => rest.push(trimmed),
        }
    }
    result.unparsed_remainder = rest.join("\n");
    (!result.fills.is_empty()).then_some(result)
}

/// Slot-wise majority over generations.
///
/// Each generation with a slot structure votes, per role it fills, for its
/// value (the entity list, compared case-sensitively after trimming). The
/// most common value wins per role; ties go to the earliest generation.
/// The remainder is taken from the earliest parsed generation. `None` when
/// no generation has a slot structure.
pub fn consolidate_slots(
    completions: &[Completion],
    foundation: Foundation,
) -> Option<SlotFillResult> {
    let mut ordered: Vec<&Completion> = completions.iter().collect();
    ordered.sort_by_key(|c| (c.seed, c.sample_index));
    let parsed: Vec<SlotFillResult> = ordered
        .iter()
        .filter_map(|c| parse_slots(&c.text, foundation))
        .collect();
    let first = parsed.first()?;
    let mut out = SlotFillResult {
        fills: BTreeMap::new(),
        unparsed_remainder: first.unparsed_remainder.clone(),
    };
    for role in foundation.roles() {
        let values: Vec<&Vec<String>> = parsed.iter().filter_map(|p| p.fills.get(role)).collect();
        let Some(max) = values
            .iter()
            .map(|v| values.iter().filter(|w| *w == v).count())
            .max()
        else {
            continue;
        };
        let winner = values
            .iter()
            .find(|v| values.iter().filter(|w| *w == *v).count() == max)
            .expect("maximum is attained");
        out.fills.insert(*role, (*winner).clone());
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::CompletionSource;
    use std::time::Duration;

    fn completion(i: u32, text: &str) -> Completion {
        Completion {
            prompt_hash: "h".into(),
            seed: (i / 2) as u64,
            sample_index: i % 2,
            text: text.into(),
            latency: Duration::ZERO,
            source: CompletionSource::Scripted,
        }
    }

    #[test]
    fn parses_canonical_format() {
        let r = parse_slots(
            "Entity providing care: doctors\nTarget of care/harm: patients\nEntity causing harm: N/A",
            Foundation::CareHarm,
        )
        .unwrap();
        assert_eq!(r.fills.len(), 3);
        assert_eq!(r.fills[&Role::EntityProvidingCare], ["doctors"]);
        assert_eq!(r.fills[&Role::TargetOfCareHarm], ["patients"]);
        assert!(r.fills[&Role::EntityCausingHarm].is_empty());
        assert_eq!(r.pairs().count(), 2);
    }

    #[test]
    fn stops_at_next_example_and_keeps_remainder() {
        let r = parse_slots(
            " Entity doing degradation: smog; soot \nnoise\nEntity causing harm: x\nTweet: next\nEntity preserving purity: y",
            Foundation::PurityDegradation,
        )
        .unwrap();
        assert_eq!(r.fills[&Role::EntityCausingDegradation], ["smog", "soot"]);
        assert!(!r.fills.contains_key(&Role::EntityPreservingPurity));
        assert_eq!(r.unparsed_remainder, "noise\nEntity causing harm: x");
        assert!(parse_slots("no structure here", Foundation::CareHarm).is_none());
        assert!(parse_slots("Role: x", Foundation::CareHarm).is_none());
    }

    #[test]
    fn slot_wise_majority() {
        let gens = vec![
            completion(0, "Target of care/harm: kids\nEntity causing harm: N/A"),
            completion(1, "Target of care/harm: children\nEntity causing harm: smog"),
            completion(2, "Target of care/harm: children\nEntity causing harm: smog"),
            completion(3, "garbage"),
            completion(4, "Target of care/harm: kids"),
        ];
        let r = consolidate_slots(&gens, Foundation::CareHarm).unwrap();
        // kids 2, children 2 -> earliest (kids); smog 2 vs N/A 1
        assert_eq!(r.fills[&Role::TargetOfCareHarm], ["kids"]);
        assert_eq!(r.fills[&Role::EntityCausingHarm], ["smog"]);
        assert!(!r.fills.contains_key(&Role::EntityProvidingCare));
        assert!(consolidate_slots(&[completion(0, "nothing")], Foundation::CareHarm).is_none());
    }
}
