//! Annotated corpora, reproducible train/test splits and few-shot selection.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{Foundation, Label, Role};
use crate::entmatch::normalize;
use crate::error::CorpusError;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub span: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedItem {
    pub id: String,
    pub text: String,
    pub foundation: Foundation,
    pub entities: Vec<EntityAnnotation>,
}

impl AnnotatedItem {
    /// Gold roles recorded for a span (a span may carry more than one).
    pub fn roles_for(&self, span: &str) -> impl Iterator<Item = Role> + '_ {
        let span = span.to_string();
        self.entities
            .iter()
            .filter(move |e| e.span == span)
            .map(|e| e.role)
    }
}

#[derive(Debug, Deserialize)]
struct RawEntity {
    span: String,
    role: String,
}

#[derive(Debug, Deserialize)]
struct RawItem {
    id: String,
    text: String,
    foundation: String,
    entities: Vec<RawEntity>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    items: Vec<AnnotatedItem>,
    provenance: Provenance,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn validate_item(line: usize, item: &AnnotatedItem) -> Result<(), CorpusError> {
    if item.text.trim().is_empty() {
        return Err(CorpusError::Malformed {
            line,
            message: format!("item `{}` has empty text", item.id),
        });
    }
    let text = normalize(&item.text);
    for e in &item.entities {
        if e.span.trim().is_empty() {
            return Err(CorpusError::EmptySpan { line });
        }
        if e.role.foundation() != item.foundation {
            return Err(CorpusError::RoleMismatch {
                line,
                role: e.role.to_string(),
                foundation: item.foundation.to_string(),
            });
        }
        if !text.contains(&normalize(&e.span)) {
            return Err(CorpusError::Malformed {
                line,
                message: format!("span `{}` does not occur in the text of `{}`", e.span, item.id),
            });
        }
    }
    Ok(())
}

impl Corpus {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw = String::from_utf8(bytes).map_err(|e| CorpusError::Malformed {
            line: 0,
            message: format!("not UTF-8: {e}"),
        })?;
        Self::parse(&raw, &path.display().to_string())
    }

    /// Parse line-delimited JSON records. Blank lines are skipped; line
    /// numbers in errors are 1-based physical lines.
    pub fn parse(raw: &str, source: &str) -> Result<Self, CorpusError> {
        let mut items = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in raw.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RawItem =
                serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let foundation: Foundation = rec
                .foundation
                .parse()
                .map_err(|source| CorpusError::UnknownLabel { line: line_no, source })?;
            let entities = rec
                .entities
                .into_iter()
                .map(|e| {
                    let role: Role = e
                        .role
                        .parse()
                        .map_err(|source| CorpusError::UnknownLabel { line: line_no, source })?;
                    Ok(EntityAnnotation { span: e.span, role })
                })
                .collect::<Result<Vec<_>, CorpusError>>()?;
            let item = AnnotatedItem {
                id: rec.id,
                text: rec.text,
                foundation,
                entities,
            };
            validate_item(line_no, &item)?;
            if !seen.insert(item.id.clone()) {
                return Err(CorpusError::DuplicateId { id: item.id });
            }
            items.push(item);
        }
        Ok(Self {
            items,
            provenance: Provenance {
                source: source.to_string(),
                sha256: sha256_hex(raw.as_bytes()),
            },
        })
    }

    /// Build a corpus from already-typed items; the hash covers the
    /// serialized form.
    pub fn from_items(items: Vec<AnnotatedItem>, source: &str) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (idx, item) in items.iter().enumerate() {
            validate_item(idx + 1, item)?;
            if !seen.insert(item.id.clone()) {
                return Err(CorpusError::DuplicateId {
                    id: item.id.clone(),
                });
            }
        }
        let sha256 = sha256_hex(Self::serialize_items(&items).as_bytes());
        Ok(Self {
            items,
            provenance: Provenance {
                source: source.to_string(),
                sha256,
            },
        })
    }

    fn serialize_items(items: &[AnnotatedItem]) -> String {
        let mut out = String::new();
        for item in items {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        Self::serialize_items(&self.items)
    }

    pub fn items(&self) -> &[AnnotatedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn get(&self, id: &str) -> Option<&AnnotatedItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn entity_pair_count(&self) -> usize {
        self.items.iter().map(|i| i.entities.len()).sum()
    }

    /// Items grouped by gold foundation, corpus order within each class.
    pub fn by_class(&self) -> BTreeMap<Foundation, Vec<&AnnotatedItem>> {
        let mut groups: BTreeMap<Foundation, Vec<&AnnotatedItem>> = BTreeMap::new();
        for item in &self.items {
            groups.entry(item.foundation).or_default().push(item);
        }
        groups
    }
}

/// Few-shot exemplars grouped by foundation, `k` per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSet {
    pub k: usize,
    pub seed: u64,
    pub classes: BTreeMap<Foundation, Vec<AnnotatedItem>>,
}

impl ShotSet {
    pub fn empty(seed: u64) -> Self {
        Self {
            k: 0,
            seed,
            classes: BTreeMap::new(),
        }
    }

    pub fn class(&self, f: Foundation) -> &[AnnotatedItem] {
        self.classes.get(&f).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All shots interleaved: the i-th shot of every class in label order,
    /// then the (i+1)-th, and so on.
    pub fn round_robin(&self) -> Vec<&AnnotatedItem> {
        let depth = self.classes.values().map(Vec::len).max().unwrap_or(0);
        let mut out = Vec::with_capacity(self.len());
        for i in 0..depth {
            for f in Foundation::ALL {
                if let Some(item) = self.classes.get(&f).and_then(|v| v.get(i)) {
                    out.push(item);
                }
            }
        }
        out
    }

    pub fn ids(&self) -> Vec<String> {
        self.round_robin().iter().map(|i| i.id.clone()).collect()
    }

    pub fn entity_pair_count(&self) -> usize {
        self.classes
            .values()
            .flatten()
            .map(|i| i.entities.len())
            .sum()
    }
}

/// Draw a class-balanced split. Classes are visited in taxonomy order with a
/// single SplitMix64 stream seeded by `seed`; each class's items (corpus
/// order) are shuffled, the first `train_per_class` go to train and the
/// next `test_per_class` to test. Classes absent from the corpus are skipped.
pub fn sample_split(
    corpus: &Corpus,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(ShotSet, Corpus), CorpusError> {
    let groups = corpus.by_class();
    for (f, members) in &groups {
        if members.len() < train_per_class + test_per_class {
            return Err(CorpusError::InsufficientItems {
                class: f.to_string(),
                available: members.len(),
                requested: train_per_class + test_per_class,
            });
        }
    }
    let mut rng = SplitMix64::new(seed);
    let mut classes = BTreeMap::new();
    let mut test_ids = HashSet::new();
    for (f, mut members) in groups {
        rng.shuffle(&mut members);
        classes.insert(
            f,
            members[..train_per_class]
                .iter()
                .map(|i| (*i).clone())
                .collect(),
        );
        test_ids.extend(
            members[train_per_class..train_per_class + test_per_class]
                .iter()
                .map(|i| i.id.clone()),
        );
    }
    let test_items = corpus
        .items
        .iter()
        .filter(|i| test_ids.contains(&i.id))
        .cloned()
        .collect();
    let test = Corpus::from_items(
        test_items,
        &format!("{}#test(seed={seed})", corpus.provenance.source),
    )?;
    Ok((
        ShotSet {
            k: train_per_class,
            seed,
            classes,
        },
        test,
    ))
}

/// Pick `k` shots per class. Each class is shuffled by a stream keyed on
/// `(seed, class name)` and the prefix of length `k` is kept, so the k-shot
/// set is always contained in the (k+1)-shot set.
pub fn select_shots(train: &ShotSet, k: usize, seed: u64) -> Result<ShotSet, CorpusError> {
    let mut classes = BTreeMap::new();
    for (f, members) in &train.classes {
        if k > members.len() {
            return Err(CorpusError::InsufficientItems {
                class: f.to_string(),
                available: members.len(),
                requested: k,
            });
        }
        let mut order: Vec<&AnnotatedItem> = members.iter().collect();
        SplitMix64::keyed(seed, f.canonical()).shuffle(&mut order);
        classes.insert(*f, order[..k].iter().map(|i| (*i).clone()).collect());
    }
    Ok(ShotSet { k, seed, classes })
}

/// Id lists for a split, written for audit and reloaded by `classify`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub corpus_sha256: String,
    pub seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn new(
        corpus: &Corpus,
        train: &ShotSet,
        test: &Corpus,
        test_per_class: usize,
    ) -> Self {
        Self {
            corpus_sha256: corpus.provenance.sha256.clone(),
            seed: train.seed,
            train_per_class: train.k,
            test_per_class,
            train: train.ids(),
            test: test.items.iter().map(|i| i.id.clone()).collect(),
        }
    }

    /// Rebuild the split from a manifest over the corpus it was drawn from.
    pub fn resolve(&self, corpus: &Corpus) -> Result<(ShotSet, Corpus), CorpusError> {
        let lookup = |id: &String| {
            corpus
                .get(id)
                .cloned()
                .ok_or_else(|| CorpusError::UnknownId { id: id.clone() })
        };
        let mut classes: BTreeMap<Foundation, Vec<AnnotatedItem>> = BTreeMap::new();
        // Manifest train ids are round-robin ordered, so per-class order
        // survives the round trip.
        for id in &self.train {
            let item = lookup(id)?;
            classes.entry(item.foundation).or_default().push(item);
        }
        let wanted: HashSet<&String> = self.test.iter().collect();
        for id in &self.test {
            lookup(id)?;
        }
        let test_items = corpus
            .items
            .iter()
            .filter(|i| wanted.contains(&i.id))
            .cloned()
            .collect();
        let test = Corpus::from_items(
            test_items,
            &format!("{}#test(seed={})", corpus.provenance.source, self.seed),
        )?;
        Ok((
            ShotSet {
                k: self.train_per_class,
                seed: self.seed,
                classes,
            },
            test,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, foundation: &str, text: &str, entities: &[(&str, &str)]) -> String {
        let ents: Vec<serde_json::Value> = entities
            .iter()
            .map(|(s, r)| serde_json::json!({"span": s, "role": r}))
            .collect();
        serde_json::json!({"id": id, "text": text, "foundation": foundation, "entities": ents})
            .to_string()
    }

    #[test]
    fn loads_well_formed_records() {
        let raw = [
            line("a", "Care/Harm", "Nurses protect patients.", &[("Nurses", "Entity providing care")]),
            line("b", "Fairness/Cheating", "Equal pay now.", &[]),
            line("c", "Purity/Degradation", "Keep our rivers clean.", &[("rivers", "Target of purity/degradation")]),
        ]
        .join("\n");
        let corpus = Corpus::parse(&raw, "mem").unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.entity_pair_count(), 2);
        assert_eq!(corpus.provenance().sha256.len(), 64);
    }

    #[test]
    fn rejects_role_from_other_foundation() {
        let raw = line("a", "Fairness/Cheating", "They harm us.", &[("They", "Entity causing harm")]);
        let err = Corpus::parse(&raw, "mem").unwrap_err();
        assert!(matches!(err, CorpusError::RoleMismatch { line: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids_by_name() {
        let raw = [
            line("dup", "Care/Harm", "x y", &[]),
            line("dup", "Care/Harm", "z w", &[]),
        ]
        .join("\n");
        let err = Corpus::parse(&raw, "mem").unwrap_err();
        assert!(err.to_string().contains("dup"));
        assert!(matches!(err, CorpusError::DuplicateId { .. }));
    }

    #[test]
    fn reports_line_numbers_for_bad_records() {
        let raw = format!("{}\n\n{{\"id\": 3", line("a", "Care/Harm", "ok", &[]));
        match Corpus::parse(&raw, "mem").unwrap_err() {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let raw = line("a", "Liberty/Oppression", "ok", &[]);
        assert!(matches!(
            Corpus::parse(&raw, "mem").unwrap_err(),
            CorpusError::UnknownLabel { line: 1, .. }
        ));
        let raw = line("a", "Care/Harm", "ok", &[(" ", "Entity causing harm")]);
        assert!(matches!(
            Corpus::parse(&raw, "mem").unwrap_err(),
            CorpusError::EmptySpan { line: 1 }
        ));
    }

    fn synthetic(per_class: usize) -> Corpus {
        let mut items = Vec::new();
        for f in Foundation::ALL {
            for i in 0..per_class {
                let role = f.roles()[i % f.roles().len()];
                let entities = (0..(i % 3))
                    .map(|j| EntityAnnotation {
                        span: format!("group{j}"),
                        role,
                    })
                    .collect();
                items.push(AnnotatedItem {
                    id: format!("{}-{i}", f.index()),
                    text: format!("tweet {i} about {} with group0 and group1", f.canonical()),
                    foundation: f,
                    entities,
                });
            }
        }
        Corpus::from_items(items, "synthetic").unwrap()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let corpus = synthetic(30);
        let (train, test) = sample_split(&corpus, 10, 20, 7).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 100);
        for f in Foundation::ALL {
            assert_eq!(train.class(f).len(), 10);
            assert_eq!(test.items().iter().filter(|i| i.foundation == f).count(), 20);
        }
        let train_ids: HashSet<String> = train.ids().into_iter().collect();
        assert!(test.items().iter().all(|i| !train_ids.contains(&i.id)));

        // entity-pair counts by brute-force summation
        let mut expected_train = 0;
        for f in Foundation::ALL {
            for item in train.class(f) {
                expected_train += item.entities.len();
            }
        }
        assert_eq!(train.entity_pair_count(), expected_train);
        let expected_test: usize = test.items().iter().map(|i| i.entities.len()).sum();
        assert_eq!(test.entity_pair_count(), expected_test);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let corpus = synthetic(30);
        let (a_train, a_test) = sample_split(&corpus, 10, 20, 99).unwrap();
        let (b_train, b_test) = sample_split(&corpus, 10, 20, 99).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test.to_jsonl(), b_test.to_jsonl());
        let (c_train, _) = sample_split(&corpus, 10, 20, 100).unwrap();
        assert_ne!(a_train.ids(), c_train.ids());
    }

    #[test]
    fn split_names_short_class() {
        let corpus = synthetic(5);
        let err = sample_split(&corpus, 3, 3, 1).unwrap_err();
        assert!(err.to_string().contains("Care/Harm"), "{err}");
    }

    #[test]
    fn shots_are_nested_across_k() {
        let corpus = synthetic(12);
        let (train, _) = sample_split(&corpus, 10, 2, 3).unwrap();
        for seed in [0u64, 1, 17] {
            for k in 0..10 {
                let small = select_shots(&train, k, seed).unwrap();
                let big = select_shots(&train, k + 1, seed).unwrap();
                for f in Foundation::ALL {
                    assert_eq!(small.class(f).len(), k);
                    assert_eq!(big.class(f).len(), k + 1);
                    assert_eq!(small.class(f), &big.class(f)[..k]);
                }
            }
        }
        assert!(select_shots(&train, 0, 0).unwrap().is_empty());
        assert_eq!(select_shots(&train, 5, 0).unwrap().len(), 25);
        assert!(select_shots(&train, 11, 0).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let corpus = synthetic(8);
        let (train, test) = sample_split(&corpus, 3, 4, 5).unwrap();
        let manifest = SplitManifest::new(&corpus, &train, &test, 4);
        let (train2, test2) = manifest.resolve(&corpus).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test.items(), test2.items());
    }
}
