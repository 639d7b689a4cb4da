//! Task runners over a test corpus, prediction files and scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{evaluate_fills, Classifier, GenerationRecord, PromptTrace, Resolution, SlotFillResult, Transcript};
use crate::corpus::{AnnotatedItem, Corpus, ShotSet};
use crate::domain::{Foundation, Role};
use crate::entmatch::normalize;
use crate::error::{ConfigError, Error, PipelineError};
use crate::metrics::{classification_report, joint_report, EvalReport, JointReport, ReportMeta};
use crate::prompts::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "mf-one-pass")]
    MfOnePass,
    #[serde(rename = "mf-ovr")]
    MfOneVsAll,
    #[serde(rename = "role-one-pass")]
    RoleOnePass,
    #[serde(rename = "role-two-step")]
    RoleTwoStep,
    #[serde(rename = "joint")]
    Joint,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::MfOnePass,
        Task::MfOneVsAll,
        Task::RoleOnePass,
        Task::RoleTwoStep,
        Task::Joint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::MfOnePass => "mf-one-pass",
            Task::MfOneVsAll => "mf-ovr",
            Task::RoleOnePass => "role-one-pass",
            Task::RoleTwoStep => "role-two-step",
            Task::Joint => "joint",
        }
    }

    /// Shot counts each task supports: 0-5 for foundations, 1-5 for roles,
    /// 1, 3, 5, 7 or 10 for joint slot filling.
    pub fn validate_shots(self, k: usize) -> Result<(), Error> {
        let role_bearing = matches!(self, Task::RoleOnePass | Task::RoleTwoStep | Task::Joint);
        if role_bearing && k == 0 {
            return Err(PipelineError::ZeroShotRole.into());
        }
        let ok = match self {
            Task::MfOnePass | Task::MfOneVsAll => k <= 5,
            Task::RoleOnePass | Task::RoleTwoStep => (1..=5).contains(&k),
            Task::Joint => [1, 3, 5, 7, 10].contains(&k),
        };
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!("{} does not support {k} shots per class", self.name())).into())
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Task::ALL.iter().map(|t| t.name()).collect();
                format!("unknown task `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Which foundation role-bearing tasks are prompted with.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum FoundationSource {
    #[default]
    Gold,
    /// Item id to predicted foundation, e.g. from a foundation run.
    Predicted(BTreeMap<String, Foundation>),
}

impl FoundationSource {
    fn name(&self) -> &'static str {
        match self {
            FoundationSource::Gold => "gold",
            FoundationSource::Predicted(_) => "predicted",
        }
    }

    fn resolve(&self, item: &AnnotatedItem) -> Result<Foundation, PipelineError> {
        match self {
            FoundationSource::Gold => Ok(item.foundation),
            FoundationSource::Predicted(map) => map
                .get(&item.id)
                .copied()
                .ok_or_else(|| PipelineError::MissingFoundation(item.id.clone())),
        }
    }

    /// Predicted foundations from a foundation-task prediction file.
    pub fn from_predictions(p: &Predictions) -> Result<Self, Error> {
        match &p.records {
            PredictionRecords::Foundation(rs) => Ok(FoundationSource::Predicted(
                rs.iter()
                    .filter_map(|r| r.pred.map(|f| (r.id.clone(), f)))
                    .collect(),
            )),
            _ => Err(Error::Predictions(
                "predicted foundations must come from an mf-one-pass or mf-ovr run".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MfRecord {
    pub id: String,
    pub gold: Foundation,
    pub pred: Option<Foundation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleRecord {
    pub id: String,
    pub entity: String,
    /// Foundation the prompts were specialised to.
    pub foundation: Foundation,
    pub gold: Role,
    pub pred: Option<Role>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointRecord {
    pub id: String,
    pub foundation: Foundation,
    /// Consolidated slot fills; empty when no generation had slot structure.
    pub fills: BTreeMap<Role, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "snake_case")]
pub enum PredictionRecords {
    Foundation(Vec<MfRecord>),
    Role(Vec<RoleRecord>),
    Joint(Vec<JointRecord>),
}

impl PredictionRecords {
    pub fn len(&self) -> usize {
        match self {
            PredictionRecords::Foundation(v) => v.len(),
            PredictionRecords::Role(v) => v.len(),
            PredictionRecords::Joint(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything needed to rescore a run offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub task: Task,
    pub shots: usize,
    pub split_seed: u64,
    pub shot_seed: u64,
    pub tie_seed: u64,
    pub threshold: f64,
    pub foundations: String,
    pub records: PredictionRecords,
}

impl Predictions {
    fn meta(&self) -> ReportMeta {
        ReportMeta {
            strategy: self.task.name().to_string(),
            shots: self.shots,
            split_seed: self.split_seed,
            shot_seed: self.shot_seed,
            tie_seed: self.tie_seed,
        }
    }
}

/// Per-item audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub foundation: Option<Foundation>,
    /// `ok`, `abstained`, `no_slots` or `error`.
    pub status: String,
    pub decision: Value,
    pub prompts: Vec<PromptTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub predictions: Predictions,
    pub traces: Vec<TraceRecord>,
    pub generations: Vec<GenerationRecord>,
    pub failures: Vec<ItemFailure>,
}

/// Settings recorded in the prediction file.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings {
    pub shots: usize,
    pub split_seed: u64,
    pub shot_seed: u64,
}

enum UnitResult<T> {
    Done(T, Value),
    Abstained(String),
    NoSlots,
    Failed(String),
}

struct Unit<T> {
    result: UnitResult<T>,
    transcript: Transcript,
    item: usize,
    entity: Option<String>,
    foundation: Option<Foundation>,
}

fn classify<T>(r: Result<(T, Value), PipelineError>) -> Result<UnitResult<T>, Error> {
    match r {
        Ok((v, d)) => Ok(UnitResult::Done(v, d)),
        Err(PipelineError::AllAbstained { stage, .. }) => Ok(UnitResult::Abstained(stage)),
        Err(PipelineError::NoSlotStructure(_)) => Ok(UnitResult::NoSlots),
        Err(PipelineError::Client(e)) => Ok(UnitResult::Failed(e.to_string())),
        Err(other) => Err(other.into()),
    }
}

fn resolution_json(r: &Resolution) -> Value {
    match r {
        Resolution::UniqueArgmax => json!({"rule": "unique_argmax"}),
        Resolution::TieBreak { pair, .. } => json!({"rule": "tie_break", "pair": [pair.0, pair.1]}),
        Resolution::SeededChoice { tied } => json!({"rule": "seeded_choice", "tied": tied}),
    }
}

/// Run `task` over every test item (every gold entity for role tasks),
/// with at most `concurrency` items in flight. Output is in corpus order.
pub fn run_task(
    classifier: &Classifier<'_>,
    task: Task,
    shots: &ShotSet,
    test: &Corpus,
    foundations: &FoundationSource,
    settings: RunSettings,
    concurrency: usize,
) -> Result<RunOutput, Error> {
    task.validate_shots(shots.k)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))?;

    // (item index, entity) work units.
    let units: Vec<(usize, Option<&str>)> = match task {
        Task::RoleOnePass | Task::RoleTwoStep => test
            .items()
            .iter()
            .enumerate()
            .flat_map(|(i, it)| it.entities.iter().map(move |e| (i, Some(e.span.as_str()))))
            .collect(),
        _ => (0..test.len()).map(|i| (i, None)).collect(),
    };

    enum Pred {
        Foundation(Option<Foundation>),
        Role(Option<Role>),
        Joint(SlotFillResult),
    }

    let run_unit = |&(i, entity): &(usize, Option<&str>)| -> Result<Unit<Pred>, Error> {
        let item = &test.items()[i];
        let target = Target::from(item);
        let mut transcript = Transcript::default();
        let mut foundation = None;
        let result = match task {
            Task::MfOnePass => classify(
                classifier
                    .classify_mf_one_pass(target, shots, &mut transcript)
                    .map(|o| (Pred::Foundation(Some(o.label)), json!({"label": o.label}))),
            )?,
            Task::MfOneVsAll => classify(
                classifier
                    .classify_mf_one_vs_all(target, shots, &mut transcript)
                    .map(|o| {
                        let d = json!({
                            "label": o.label,
                            "confidence": o.confidence.0,
                            "resolution": resolution_json(&o.resolution),
                        });
                        (Pred::Foundation(Some(o.label)), d)
                    }),
            )?,
            Task::RoleOnePass | Task::RoleTwoStep => {
                let f = foundations.resolve(item)?;
                foundation = Some(f);
                let entity = entity.expect("role units carry an entity");
                let out = if task == Task::RoleOnePass {
                    classifier
                        .classify_role_one_pass(target, entity, f, shots, &mut transcript)
                        .map(|o| (Pred::Role(Some(o.label)), json!({"label": o.label})))
                } else {
                    classifier
                        .classify_role_two_step(target, entity, f, shots, &mut transcript)
                        .map(|o| {
                            let d = json!({
                                "label": o.label,
                                "step2_called": o.positive.is_some(),
                            });
                            (Pred::Role(Some(o.label)), d)
                        })
                };
                classify(out)?
            }
            Task::Joint => {
                let f = foundations.resolve(item)?;
                foundation = Some(f);
                classify(
                    classifier
                        .run_joint_slotfill(item, f, shots, &mut transcript)
                        .map(|o| {
                            let d = json!({"fills": o.fills});
                            (Pred::Joint(o.slots), d)
                        }),
                )?
            }
        };
        Ok(Unit {
            result,
            transcript,
            item: i,
            entity: entity.map(str::to_string),
            foundation,
        })
    };

    let done: Vec<Unit<Pred>> = pool
        .install(|| units.par_iter().map(run_unit).collect::<Vec<_>>())
        .into_iter()
        .collect::<Result<_, _>>()?;

    let mut mf = Vec::new();
    let mut roles = Vec::new();
    let mut joint = Vec::new();
    let mut traces = Vec::new();
    let mut generations = Vec::new();
    let mut failures = Vec::new();
    for unit in done {
        let item = &test.items()[unit.item];
        let (status, decision, pred) = match unit.result {
            UnitResult::Done(p, d) => ("ok", d, Some(p)),
            UnitResult::Abstained(stage) => ("abstained", json!({"stage": stage}), None),
            UnitResult::NoSlots => ("no_slots", Value::Null, None),
            UnitResult::Failed(message) => {
                failures.push(ItemFailure {
                    id: item.id.clone(),
                    entity: unit.entity.clone(),
                    message: message.clone(),
                });
                ("error", json!({"error": message}), None)
            }
        };
        match task {
            Task::MfOnePass | Task::MfOneVsAll => mf.push(MfRecord {
                id: item.id.clone(),
                gold: item.foundation,
                pred: match pred {
                    Some(Pred::Foundation(f)) => f,
                    _ => None,
                },
            }),
            Task::RoleOnePass | Task::RoleTwoStep => {
                let entity = unit.entity.clone().expect("role unit");
                let gold = item
                    .roles_for(&entity)
                    .next()
                    .expect("entity comes from the item");
                roles.push(RoleRecord {
                    id: item.id.clone(),
                    foundation: unit.foundation.expect("resolved"),
                    gold,
                    pred: match pred {
                        Some(Pred::Role(r)) => r,
                        _ => None,
                    },
                    entity,
                });
            }
            Task::Joint => joint.push(JointRecord {
                id: item.id.clone(),
                foundation: unit.foundation.expect("resolved"),
                fills: match pred {
                    Some(Pred::Joint(s)) => s.fills,
                    _ => BTreeMap::new(),
                },
            }),
        }
        traces.push(TraceRecord {
            item_id: item.id.clone(),
            entity: unit.entity,
            foundation: unit.foundation,
            status: status.to_string(),
            decision,
            prompts: unit.transcript.prompts,
        });
        generations.extend(unit.transcript.generations);
    }

    let records = match task {
        Task::MfOnePass | Task::MfOneVsAll => PredictionRecords::Foundation(mf),
        Task::RoleOnePass | Task::RoleTwoStep => PredictionRecords::Role(roles),
        Task::Joint => PredictionRecords::Joint(joint),
    };
    Ok(RunOutput {
        predictions: Predictions {
            task,
            shots: settings.shots,
            split_seed: settings.split_seed,
            shot_seed: settings.shot_seed,
            tie_seed: classifier.tie_seed,
            threshold: classifier.threshold,
            foundations: foundations.name().to_string(),
            records,
        },
        traces,
        generations,
        failures,
    })
}

/// Scores for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Classification {
        report: EvalReport,
    },
    /// One report per gold foundation.
    Roles {
        per_foundation: BTreeMap<Foundation, EvalReport>,
    },
    Joint {
        report: JointReport,
    },
}

impl Report {
    pub fn to_table(&self) -> String {
        match self {
            Report::Classification { report } => report.to_table(),
            Report::Roles { per_foundation } => per_foundation
                .iter()
                .map(|(f, r)| format!("== {f}\n{}", r.to_table()))
                .collect::<Vec<_>>()
                .join("\n"),
            Report::Joint { report } => report.to_table(),
        }
    }

    pub fn to_csv(&self) -> String {
        match self {
            Report::Classification { report } => report.to_csv(),
            Report::Roles { per_foundation } => {
                let mut out = String::from("foundation,label,precision,recall,f1,support\n");
                for (f, r) in per_foundation {
                    for c in &r.per_class {
                        out.push_str(&format!(
                            "{f},{},{:.2},{:.2},{:.2},{}\n",
                            c.label, c.precision, c.recall, c.f1, c.support
                        ));
                    }
                }
                out
            }
            Report::Joint { report } => report.to_csv(),
        }
    }
}

fn lookup<'a>(gold: &'a Corpus, id: &str) -> Result<&'a AnnotatedItem, Error> {
    gold.get(id)
        .ok_or_else(|| Error::Predictions(format!("id `{id}` is not in the gold corpus")))
}

/// Recompute a report from stored predictions against a gold corpus. No
/// generation happens here.
pub fn score_predictions(p: &Predictions, gold: &Corpus) -> Result<Report, Error> {
    if p.records.is_empty() {
        return Err(Error::Predictions("no prediction records".into()));
    }
    let meta = p.meta();
    match &p.records {
        PredictionRecords::Foundation(rs) => {
            let mut pairs = Vec::with_capacity(rs.len());
            for r in rs {
                let item = lookup(gold, &r.id)?;
                if item.foundation != r.gold {
                    return Err(Error::Predictions(format!(
                        "id `{}`: gold `{}` disagrees with corpus `{}`",
                        r.id, r.gold, item.foundation
                    )));
                }
                pairs.push((item.foundation, r.pred));
            }
            Ok(Report::Classification {
                report: classification_report(&pairs)?.with_meta(meta),
            })
        }
        PredictionRecords::Role(rs) => {
            let mut groups: BTreeMap<Foundation, Vec<(Role, Option<Role>)>> = BTreeMap::new();
            for r in rs {
                let item = lookup(gold, &r.id)?;
                if !item.roles_for(&r.entity).any(|g| g == r.gold) {
                    return Err(Error::Predictions(format!(
                        "id `{}`: no gold entity `{}` with role `{}`",
                        r.id, r.entity, r.gold
                    )));
                }
                groups.entry(r.gold.foundation()).or_default().push((r.gold, r.pred));
            }
            let per_foundation = groups
                .into_iter()
                .map(|(f, pairs)| Ok((f, classification_report(&pairs)?.with_meta(meta.clone()))))
                .collect::<Result<_, Error>>()?;
            Ok(Report::Roles { per_foundation })
        }
        PredictionRecords::Joint(rs) => {
            let mut outcomes = Vec::new();
            let mut gold_total = 0;
            let mut gold_matched = 0;
            for r in rs {
                let item = lookup(gold, &r.id)?;
                let slots = SlotFillResult {
                    fills: r.fills.clone(),
                    unparsed_remainder: String::new(),
                };
                let fills = evaluate_fills(&slots, item, p.threshold);
                let spans: BTreeSet<String> = item.entities.iter().map(|e| normalize(&e.span)).collect();
                let hit: BTreeSet<String> = fills
                    .iter()
                    .filter_map(|f| f.outcome.matched_gold.as_deref().map(normalize))
                    .collect();
                gold_total += spans.len();
                gold_matched += spans.intersection(&hit).count();
                outcomes.extend(fills.into_iter().map(|f| (f.outcome, f.role_correct)));
            }
            let report = joint_report(&outcomes)?
                .with_gold_recall(gold_matched, gold_total)
                .with_meta(meta);
            Ok(Report::Joint { report })
        }
    }
}
