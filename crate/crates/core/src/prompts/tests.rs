use super::*;
use crate::corpus::{sample_split, select_shots, Corpus, EntityAnnotation};
use crate::domain::Role;

const FIXTURE: &str = include_str!("../../tests/fixtures/corpus25.jsonl");

fn corpus() -> Corpus {
    Corpus::parse(FIXTURE, "corpus25.jsonl").unwrap()
}

fn shots(k: usize) -> (ShotSet, Corpus) {
    let (train, test) = sample_split(&corpus(), 2, 3, 11).unwrap();
    (select_shots(&train, k, 5).unwrap(), test)
}

fn all_label_strings() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Foundation::ALL.iter().map(|f| f.canonical()).collect();
    out.extend(Role::ALL.iter().map(|r| r.canonical()));
    out
}

/// Label strings that occur as the answer of some line (after ": ").
fn answered_labels(text: &str) -> Vec<&'static str> {
    let labels = all_label_strings();
    text.lines()
        .filter_map(|l| l.rsplit_once(": ").map(|(_, v)| v))
        .filter_map(|v| labels.iter().copied().find(|l| *l == v))
        .collect()
}

#[test]
fn token_estimate_counts_words_and_punctuation() {
    assert_eq!(estimate_tokens(""), 0);
    assert_eq!(estimate_tokens("Care/Harm: yes."), 6);
    assert_eq!(estimate_tokens("  a  b\nc "), 3);
}

#[test]
fn one_pass_zero_shot_has_definitions_and_target_only() {
    let r = Renderer::default();
    let (_, test) = shots(0);
    let target = &test.items()[0];
    let empty = ShotSet::empty(0);
    let p = r.render_mf_one_pass(&empty, target.into()).unwrap();
    assert!(p.shot_ids.is_empty());
    assert_eq!(p.text.matches("Tweet: ").count(), 1);
    for f in Foundation::ALL {
        assert!(p.text.contains(r.catalog().foundation(f)));
    }
    assert!(p.text.ends_with(&format!("Tweet: {}\nMoral Foundation:", target.text)));
}

#[test]
fn one_pass_contains_each_shot_once_and_target_last() {
    let r = Renderer::default();
    let (shots, test) = shots(2);
    let target = &test.items()[4];
    let p = r.render_mf_one_pass(&shots, target.into()).unwrap();
    assert_eq!(p.shot_ids.len(), 10);
    for item in shots.round_robin() {
        assert_eq!(p.text.matches(&item.text).count(), 1, "{}", item.id);
        assert!(p.text.contains(&format!("Tweet: {}\nMoral Foundation: {}", item.text, item.foundation)));
    }
    let last_shot = p.text.rfind(&shots.round_robin().last().unwrap().text).unwrap();
    assert!(p.text.rfind(&target.text).unwrap() > last_shot);
    assert_eq!(p.shot_ids, shots.ids());
    assert_eq!(p, r.render_mf_one_pass(&shots, target.into()).unwrap());
}

#[test]
fn one_pass_shot_order_is_round_robin() {
    let r = Renderer::default();
    let (shots, test) = shots(2);
    let p = r.render_mf_one_pass(&shots, (&test.items()[0]).into()).unwrap();
    let answered = answered_labels(&p.text);
    let expected: Vec<&str> = (0..2)
        .flat_map(|_| Foundation::ALL.iter().map(|f| f.canonical()))
        .collect();
    assert_eq!(answered, expected);
}

#[test]
fn one_vs_all_renderings_differ_only_in_foundation_blocks() {
    let r = Renderer::default();
    let (shots, test) = shots(1);
    let target = (&test.items()[0]).into();
    let care = r.render_mf_one_vs_all(&shots, target, Foundation::CareHarm).unwrap();
    let answers: Vec<&str> = care.text.lines().filter_map(|l| l.strip_prefix("Answer: ")).collect();
    assert!(answers.contains(&"Care/Harm") && answers.contains(&"Other"));
    assert_eq!(care.candidates, ["Care/Harm", "Other"]);
    let mask = |text: &str, f: Foundation| {
        text.replace(r.catalog().foundation(f), "DEF")
            .replace(f.canonical(), "F")
            .replace("Answer: F", "Answer: X")
            .replace("Answer: Other", "Answer: X")
    };
    let base = mask(&care.text, Foundation::CareHarm);
    for f in Foundation::ALL {
        let p = r.render_mf_one_vs_all(&shots, target, f).unwrap();
        assert_eq!(mask(&p.text, f), base, "{f}");
    }
}

#[test]
fn tiebreak_candidates_are_the_pair() {
    let r = Renderer::default();
    let (shots, test) = shots(2);
    let target = (&test.items()[0]).into();
    let a = r
        .render_mf_tiebreak(&shots, target, Foundation::CareHarm, Foundation::PurityDegradation)
        .unwrap();
    let b = r
        .render_mf_tiebreak(&shots, target, Foundation::PurityDegradation, Foundation::CareHarm)
        .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.candidates, ["Care/Harm", "Purity/Degradation"]);
    let mut offered = answered_labels(&a.text);
    offered.sort();
    offered.dedup();
    assert_eq!(offered, ["Care/Harm", "Purity/Degradation"]);
    assert!(a.text.contains(r.catalog().foundation(Foundation::CareHarm)));
    assert!(a.text.contains(r.catalog().foundation(Foundation::PurityDegradation)));
    assert!(!a.text.contains(r.catalog().foundation(Foundation::LoyaltyBetrayal)));
    assert!(matches!(
        r.render_mf_tiebreak(&shots, target, Foundation::CareHarm, Foundation::CareHarm),
        Err(PromptError::SameFoundation(_))
    ));
}

#[test]
fn role_one_pass_offers_only_the_foundations_roles() {
    let r = Renderer::default();
    let (shots, test) = shots(2);
    let item = &test.items()[0];
    for f in Foundation::ALL {
        let p = r
            .render_role_one_pass(&shots, item.into(), &item.entities[0].span, f)
            .unwrap();
        assert_eq!(p.candidates.len(), f.roles().len());
        for label in all_label_strings() {
            let legal = f.roles().iter().any(|r| r.canonical() == label) || label == f.canonical();
            assert_eq!(p.text.contains(label), legal, "{f}: {label}");
        }
        let expected: Vec<String> = shots.class(f).iter().map(|s| s.id.clone()).collect();
        assert_eq!(p.shot_ids, expected);
    }
    let p = r
        .render_role_one_pass(&shots, item.into(), "x", Foundation::AuthoritySubversion)
        .unwrap();
    assert_eq!(p.candidates.len(), 4);
    assert!(p.text.ends_with("Entity: x\nMoral role:"));
}

#[test]
fn sentiment_and_positive_steps() {
    let r = Renderer::default();
    let (shots, test) = shots(2);
    let item = &test.items()[0];
    let s = r.render_role_sentiment(&shots, item.into(), "them").unwrap();
    assert_eq!(s.candidates, ["positive", "negative"]);
    for label in all_label_strings() {
        assert!(!s.text.contains(label), "{label}");
    }
    assert!(s.text.contains("Sentiment: negative") && s.text.contains("Sentiment: positive"));

    let sizes: Vec<usize> = Foundation::ALL
        .iter()
        .map(|f| {
            let p = r.render_role_positive(&shots, item.into(), "them", *f).unwrap();
            let negative = f.negative_role().canonical();
            assert!(!p.candidates.iter().any(|c| c == negative));
            assert!(!answered_labels(&p.text).contains(&negative));
            p.candidates.len()
        })
        .collect();
    assert_eq!(sizes, [2, 2, 2, 3, 2]);
    let care = r
        .render_role_positive(&shots, item.into(), "them", Foundation::CareHarm)
        .unwrap();
    assert_eq!(care.candidates, ["Target of care/harm", "Entity providing care"]);
}

#[test]
fn joint_slots_and_empty_marker() {
    let r = Renderer::default();
    let item = AnnotatedItem {
        id: "x".into(),
        text: "Volunteers cleaned Hart Park".into(),
        foundation: Foundation::PurityDegradation,
        entities: vec![EntityAnnotation {
            span: "Volunteers".into(),
            role: Role::EntityPreservingPurity,
        }],
    };
    assert_eq!(
        render_slots(Foundation::PurityDegradation, &item),
        "Target of purity/degradation: N/A\nEntity preserving purity: Volunteers\nEntity causing degradation: N/A"
    );
    let mut shots = ShotSet::empty(0);
    shots.k = 1;
    shots.classes.insert(Foundation::PurityDegradation, vec![item.clone()]);
    let target = Target { id: "t", text: "Some tweet" };
    let p = r.render_joint_slotfill(&shots, target, Foundation::PurityDegradation).unwrap();
    assert_eq!(p.candidates.len(), 3);
    assert!(p.text.ends_with("Tweet: Some tweet\nMoral roles:\n"));
    assert_eq!(p, r.render_joint_slotfill(&shots, target, Foundation::PurityDegradation).unwrap());
}

#[test]
fn budget_and_empty_inputs_are_rejected() {
    let small = Renderer::new(DefinitionCatalog::bundled(), TemplateSet::bundled(), 50);
    let (shots, test) = shots(1);
    let item = &test.items()[0];
    assert!(matches!(
        small.render_mf_one_pass(&shots, item.into()),
        Err(PromptError::BudgetExceeded { budget: 50, .. })
    ));
    let r = Renderer::default();
    let blank = Target { id: "b", text: "  " };
    assert!(matches!(r.render_mf_one_pass(&shots, blank), Err(PromptError::EmptyTarget)));
    assert!(matches!(
        r.render_role_sentiment(&shots, item.into(), " "),
        Err(PromptError::EmptyEntity)
    ));
}

#[test]
fn token_estimate_grows_with_shots() {
    let r = Renderer::default();
    let (train, test) = sample_split(&corpus(), 2, 3, 11).unwrap();
    let item = &test.items()[0];
    let mut last = 0;
    for k in 0..=2 {
        let s = select_shots(&train, k, 5).unwrap();
        let e = r.render_mf_one_pass(&s, item.into()).unwrap().token_estimate;
        assert!(e >= last);
        last = e;
    }
}

#[test]
fn braces_in_tweets_are_not_expanded() {
    let r = Renderer::default();
    let target = Target { id: "b", text: "literal {examples} and {target}" };
    let p = r.render_mf_one_pass(&ShotSet::empty(0), target).unwrap();
    assert!(p.text.contains("literal {examples} and {target}"));
}
