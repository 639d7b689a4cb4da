//! Shared fixtures: the 25-item corpus, scripted oracles and the
//! synthetic 100-item confusion fixture.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use moralframes::client::{CompletionRequest, ScriptedClient};
use moralframes::config::{Paths, RunConfig};
use moralframes::corpus::{AnnotatedItem, Corpus, EntityAnnotation};
use moralframes::domain::{Foundation, Polarity, Role};
use moralframes::pipeline::{MfRecord, PredictionRecords, Predictions, Task};
use sha2::{Digest, Sha256};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// One shot per class over a 2/3 split of the fixture corpus.
pub fn small_config(task: Task, out: &Path) -> RunConfig {
    RunConfig {
        task,
        shots: 1,
        train_per_class: 2,
        test_per_class: 3,
        paths: Paths {
            corpus: Some(fixture("corpus25.jsonl")),
            out: Some(out.to_path_buf()),
            ..Paths::default()
        },
        ..RunConfig::default()
    }
}

pub fn corpus25() -> Corpus {
    Corpus::load(&fixture("corpus25.jsonl")).expect("fixture corpus loads")
}

/// The block after the last `Tweet:` line of a prompt.
fn target_block(prompt: &str) -> &str {
    let at = prompt.rfind("Tweet: ").expect("prompt has a target tweet");
    &prompt[at + "Tweet: ".len()..]
}

fn target_item<'a>(corpus: &'a Corpus, prompt: &str) -> &'a AnnotatedItem {
    let text = target_block(prompt).lines().next().unwrap_or_default();
    corpus
        .items()
        .iter()
        .find(|i| i.text == text)
        .unwrap_or_else(|| panic!("no fixture item with text {text:?}"))
}

fn target_entity(prompt: &str) -> &str {
    target_block(prompt)
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("Entity: "))
        .expect("role prompt names an entity")
}

fn polarity(role: Role) -> Polarity {
    // Negative roles by name, independently of the library's table.
    const NEGATIVE: [&str; 5] = [
        "Entity causing harm",
        "Entity doing cheating",
        "Entity doing betrayal",
        "Failing authority",
        "Entity causing degradation",
    ];
    if NEGATIVE.contains(&role.to_string().as_str()) {
        Polarity::Negative
    } else {
        Polarity::Positive
    }
}

/// Gold slot lines written out by hand from the annotations.
fn gold_slots(item: &AnnotatedItem) -> String {
    item.foundation
        .roles()
        .iter()
        .map(|r| {
            let spans: Vec<&str> = item
                .entities
                .iter()
                .filter(|e| e.role == *r)
                .map(|e| e.span.as_str())
                .collect();
            let value = if spans.is_empty() { "N/A".to_string() } else { spans.join("; ") };
            format!("{r}: {value}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The probed foundation of a one-vs-all prompt.
pub fn probed_foundation(prompt: &str) -> Option<Foundation> {
    Foundation::ALL
        .into_iter()
        .find(|f| prompt.contains(&format!("the moral foundation {f}. Answer")))
}

pub fn is_tiebreak(prompt: &str) -> bool {
    prompt.contains("one of two moral foundations")
}

/// The gold answer to any prompt the pipeline renders for a fixture item.
pub fn gold_answer(corpus: &Corpus, request: &CompletionRequest) -> String {
    let prompt = request.prompt.trim_end();
    let item = target_item(corpus, prompt);
    if prompt.ends_with("Moral Foundation:") {
        item.foundation.to_string()
    } else if prompt.ends_with("Answer:") {
        match probed_foundation(prompt) {
            Some(f) if f == item.foundation => f.to_string(),
            Some(_) => "Other".into(),
            None => panic!("one-vs-all prompt without a probed foundation"),
        }
    } else if prompt.ends_with("Moral role:") {
        let entity = target_entity(prompt);
        item.roles_for(entity).next().expect("gold role").to_string()
    } else if prompt.ends_with("Sentiment:") {
        let role = item.roles_for(target_entity(prompt)).next().expect("gold role");
        match polarity(role) {
            Polarity::Positive => "Positive".into(),
            Polarity::Negative => "Negative".into(),
        }
    } else if prompt.ends_with("Moral roles:") {
        gold_slots(item)
    } else {
        panic!("unrecognised prompt ending: {:?}", &prompt[prompt.len().saturating_sub(40)..])
    }
}

/// Answers every prompt with the gold label of its target.
pub fn oracle(corpus: Corpus) -> ScriptedClient {
    ScriptedClient::new().with_responder(move |req, _| Some(gold_answer(&corpus, req)))
}

fn noise(request: &CompletionRequest, sample_index: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(request.prompt.as_bytes());
    h.update(request.seed.to_le_bytes());
    h.update(sample_index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Gold most of the time, otherwise a wrong candidate or unparseable text,
/// chosen by a hash of the request so reruns see the same answers.
pub fn noisy_oracle(corpus: Corpus) -> ScriptedClient {
    ScriptedClient::new().with_responder(move |req, i| {
        let r = noise(req, i);
        let gold = gold_answer(&corpus, req);
        Some(match r % 10 {
            0..=5 => gold,
            6 => "I am not sure".into(),
            _ => {
                let f = Foundation::ALL[(r / 10 % 5) as usize];
                let prompt = req.prompt.trim_end();
                if prompt.ends_with("Sentiment:") {
                    if r.is_multiple_of(2) { "Positive" } else { "Negative" }.into()
                } else if prompt.ends_with("Moral role:") {
                    let roles = Role::ALL;
                    roles[(r / 50 % 16) as usize].to_string()
                } else if prompt.ends_with("Answer:") {
                    "Other".into()
                } else if prompt.ends_with("Moral roles:") {
                    gold.lines().rev().collect::<Vec<_>>().join("\n")
                } else {
                    f.to_string()
                }
            }
        })
    })
}

/// Rows are gold classes, columns predicted, in taxonomy order. Each row
/// has 20 items; precision and recall per class are 14/44, 70%; 2/3, 10%;
/// 11/35, 55%; 7/8, 35%; 10/10, 50%.
pub const CONFUSION: [[usize; 5]; 5] = [
    [14, 0, 6, 0, 0],
    [10, 2, 8, 0, 0],
    [8, 1, 11, 0, 0],
    [12, 0, 1, 7, 0],
    [0, 0, 9, 1, 10],
];

pub fn confusion_pairs() -> Vec<(Foundation, Option<Foundation>)> {
    let mut out = Vec::new();
    for (g, row) in CONFUSION.iter().enumerate() {
        for (p, n) in row.iter().enumerate() {
            out.extend(std::iter::repeat_n((Foundation::ALL[g], Some(Foundation::ALL[p])), *n));
        }
    }
    out
}

/// Brute-force per-class F1 (percent, 2 decimals) straight from the matrix.
pub fn confusion_f1() -> Vec<f64> {
    (0..5)
        .map(|c| {
            let tp = CONFUSION[c][c] as f64;
            let predicted: usize = CONFUSION.iter().map(|row| row[c]).sum();
            let actual: usize = CONFUSION[c].iter().sum();
            let p = 100.0 * tp / predicted as f64;
            let r = 100.0 * tp / actual as f64;
            ((2.0 * p * r / (p + r)) * 100.0).round() / 100.0
        })
        .collect()
}

/// A 100-item gold corpus and foundation predictions realising `CONFUSION`.
pub fn confusion_fixture() -> (Corpus, Predictions) {
    let mut items = Vec::new();
    let mut records = Vec::new();
    for (i, (gold, pred)) in confusion_pairs().into_iter().enumerate() {
        let id = format!("c{i:03}");
        items.push(AnnotatedItem {
            id: id.clone(),
            text: format!("synthetic tweet {i} about the council"),
            foundation: gold,
            entities: vec![EntityAnnotation {
                span: "the council".into(),
                role: gold.roles()[0],
            }],
        });
        records.push(MfRecord { id, gold, pred });
    }
    let corpus = Corpus::from_items(items, "confusion").expect("valid corpus");
    let predictions = Predictions {
        task: Task::MfOnePass,
        shots: 5,
        split_seed: 0,
        shot_seed: 0,
        tie_seed: 0,
        threshold: 0.6,
        foundations: "gold".into(),
        records: PredictionRecords::Foundation(records),
    };
    (corpus, predictions)
}
