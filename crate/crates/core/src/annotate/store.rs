use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::diff::{diff_tokens, DiffSpan};
use crate::augment::ShiftCategory;
use crate::corpus::token_sequence;
use crate::evaluate::LabeledPair;
use crate::jsonl::{self, JsonlError};
use crate::matching::PairRecord;
use crate::metrics::{cohens_kappa, MetricsError};

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("unknown pair {0}")]
    UnknownPair(String),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("pair {0} is already loaded")]
    DuplicatePair(String),
    #[error("annotator {annotator} already labeled pair {pair_id}")]
    DuplicateLabel { pair_id: String, annotator: String },
    #[error("pair {0} already holds two labels")]
    TaskFull(String),
    #[error("score -1 requires a category in C1..C4")]
    MissingCategory,
    #[error("score 1 must not carry a category")]
    UnexpectedCategory,
    #[error("score must be 1 or -1, got {0}")]
    InvalidScore(i8),
    #[error("pair {0} is not conflicted")]
    NotConflicted(String),
    #[error("no pair has two labels yet")]
    NoDoublyLabeled,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("event log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("event log line {line}: {source}")]
    Replay { line: usize, source: Box<AnnotateError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Unlabeled,
    PartiallyLabeled,
    Labeled,
    Conflicted,
    Adjudicated,
}

fn check_score(score: i8, category: Option<ShiftCategory>) -> Result<(), AnnotateError> {
    match (score, category) {
        (1, None) => Ok(()),
        (1, Some(_)) => Err(AnnotateError::UnexpectedCategory),
        (-1, Some(c)) if c.is_shift() => Ok(()),
        (-1, _) => Err(AnnotateError::MissingCategory),
        (s, _) => Err(AnnotateError::InvalidScore(s)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLabel {
    pub pair_id: String,
    pub annotator_id: String,
    pub score: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ShiftCategory>,
    /// Unix milliseconds.
    #[serde(default)]
    pub timestamp: u64,
}

impl AnnotationLabel {
    fn verdict(&self) -> (i8, Option<ShiftCategory>) {
        (self.score, self.category)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationRecord {
    pub pair_id: String,
    pub adjudicator_id: String,
    pub score: i8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<ShiftCategory>,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub timestamp: u64,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Pair(PairRecord),
    Annotator { id: String },
    Label(AnnotationLabel),
    Adjudication(AdjudicationRecord),
}

#[derive(Debug, Clone)]
struct TaskState {
    pair: PairRecord,
    labels: Vec<AnnotationLabel>,
    adjudication: Option<AdjudicationRecord>,
}

impl TaskState {
    fn status(&self) -> TaskStatus {
        if self.adjudication.is_some() {
            return TaskStatus::Adjudicated;
        }
        match self.labels.as_slice() {
            [] => TaskStatus::Unlabeled,
            [_] => TaskStatus::PartiallyLabeled,
            [x, y, ..] if x.verdict() == y.verdict() => TaskStatus::Labeled,
            _ => TaskStatus::Conflicted,
        }
    }

    fn final_verdict(&self) -> Option<(i8, Option<ShiftCategory>)> {
        match (&self.adjudication, self.status()) {
            (Some(a), _) => Some((a.score, a.category)),
            (None, TaskStatus::Labeled) => Some(self.labels[0].verdict()),
            _ => None,
        }
    }
}

/// A pair as presented to an annotator. Other annotators' labels are
/// withheld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub pair: PairRecord,
    pub tokens_a: Vec<String>,
    pub tokens_b: Vec<String>,
    pub diff: Vec<DiffSpan>,
    pub status: TaskStatus,
    pub label_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementMode {
    /// Kappa over the 1 / −1 score.
    #[default]
    Score,
    /// Kappa over (score, category) treated as one label.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub kappa: f64,
    pub n_pairs: usize,
}

/// In-memory annotation state, optionally mirrored to an append-only JSON
/// Lines event log that is replayed on open.
#[derive(Debug)]
pub struct AnnotationStore {
    tasks: BTreeMap<String, TaskState>,
    annotators: BTreeSet<String>,
    log: Option<(PathBuf, BufWriter<File>)>,
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        AnnotationStore { tasks: BTreeMap::new(), annotators: BTreeSet::new(), log: None }
    }

    /// Replays `path` if it exists, then appends new events to it.
    pub fn open(path: &Path) -> Result<Self, AnnotateError> {
        let mut store = Self::in_memory();
        if path.exists() {
            let events: Vec<Event> = jsonl::read(path)?;
            for (i, ev) in events.into_iter().enumerate() {
                store.apply(ev).map_err(|e| AnnotateError::Replay { line: i + 1, source: Box::new(e) })?;
            }
        }
        let io = |source| AnnotateError::Io { path: path.to_path_buf(), source };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        store.log = Some((path.to_path_buf(), BufWriter::new(file)));
        Ok(store)
    }

    fn record(&mut self, ev: Event) -> Result<(), AnnotateError> {
        self.check(&ev)?;
        if let Some((path, w)) = &mut self.log {
            let line = serde_json::to_string(&ev).expect("serializable event");
            let io = |source| AnnotateError::Io { path: path.clone(), source };
            writeln!(w, "{line}").map_err(io)?;
            w.flush().map_err(io)?;
        }
        self.apply(ev)
    }

    fn check(&self, ev: &Event) -> Result<(), AnnotateError> {
        match ev {
            Event::Pair(p) if self.tasks.contains_key(&p.id) => Err(AnnotateError::DuplicatePair(p.id.clone())),
            Event::Pair(_) | Event::Annotator { .. } => Ok(()),
            Event::Label(l) => {
                check_score(l.score, l.category)?;
                if !self.annotators.contains(&l.annotator_id) {
                    return Err(AnnotateError::UnknownAnnotator(l.annotator_id.clone()));
                }
                let task = self.task_state(&l.pair_id)?;
                if task.labels.iter().any(|x| x.annotator_id == l.annotator_id) {
                    return Err(AnnotateError::DuplicateLabel {
                        pair_id: l.pair_id.clone(),
                        annotator: l.annotator_id.clone(),
                    });
                }
                if task.labels.len() >= 2 {
                    return Err(AnnotateError::TaskFull(l.pair_id.clone()));
                }
                Ok(())
            }
            Event::Adjudication(a) => {
                let task = self.task_state(&a.pair_id)?;
                if task.status() != TaskStatus::Conflicted {
                    return Err(AnnotateError::NotConflicted(a.pair_id.clone()));
                }
                check_score(a.score, a.category)
            }
        }
    }

    fn apply(&mut self, ev: Event) -> Result<(), AnnotateError> {
        self.check(&ev)?;
        match ev {
            Event::Pair(p) => {
                self.tasks.insert(p.id.clone(), TaskState { pair: p, labels: Vec::new(), adjudication: None });
            }
            Event::Annotator { id } => {
                self.annotators.insert(id);
            }
            Event::Label(l) => self.tasks.get_mut(&l.pair_id).expect("checked").labels.push(l),
            Event::Adjudication(a) => {
                let task = self.tasks.get_mut(&a.pair_id).expect("checked");
                task.adjudication = Some(a);
            }
        }
        Ok(())
    }

    fn task_state(&self, pair_id: &str) -> Result<&TaskState, AnnotateError> {
        self.tasks.get(pair_id).ok_or_else(|| AnnotateError::UnknownPair(pair_id.to_string()))
    }

    /// Adds pairs not already present; returns how many were new.
    pub fn load_pairs(&mut self, pairs: impl IntoIterator<Item = PairRecord>) -> Result<usize, AnnotateError> {
        let mut added = 0;
        for p in pairs {
            if !self.tasks.contains_key(&p.id) {
                self.record(Event::Pair(p))?;
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn register_annotator(&mut self, id: &str) -> Result<(), AnnotateError> {
        if self.annotators.contains(id) {
            return Ok(());
        }
        self.record(Event::Annotator { id: id.to_string() })
    }

    pub fn is_registered(&self, id: &str) -> bool {
        self.annotators.contains(id)
    }

    pub fn annotators(&self) -> impl Iterator<Item = &str> {
        self.annotators.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    fn view(task: &TaskState) -> AnnotationTask {
        AnnotationTask {
            tokens_a: token_sequence(&task.pair.sentence_a),
            tokens_b: token_sequence(&task.pair.sentence_b),
            diff: diff_tokens(&task.pair.sentence_a, &task.pair.sentence_b),
            status: task.status(),
            label_count: task.labels.len(),
            pair: task.pair.clone(),
        }
    }

    pub fn task(&self, pair_id: &str) -> Result<AnnotationTask, AnnotateError> {
        self.task_state(pair_id).map(Self::view)
    }

    /// Labels submitted for a pair, in submission order.
    pub fn labels(&self, pair_id: &str) -> Result<Vec<AnnotationLabel>, AnnotateError> {
        self.task_state(pair_id).map(|t| t.labels.clone())
    }

    pub fn status(&self, pair_id: &str) -> Result<TaskStatus, AnnotateError> {
        self.task_state(pair_id).map(TaskState::status)
    }

    /// Lowest-id pair with fewer than two labels that `annotator` has not labeled.
    pub fn next_pair(&self, annotator: &str) -> Result<Option<AnnotationTask>, AnnotateError> {
        if !self.annotators.contains(annotator) {
            return Err(AnnotateError::UnknownAnnotator(annotator.to_string()));
        }
        Ok(self
            .tasks
            .values()
            .find(|t| t.labels.len() < 2 && t.labels.iter().all(|l| l.annotator_id != annotator))
            .map(Self::view))
    }

    pub fn submit_label(&mut self, label: AnnotationLabel) -> Result<TaskStatus, AnnotateError> {
        let id = label.pair_id.clone();
        self.record(Event::Label(label))?;
        self.status(&id)
    }

    pub fn adjudicate(&mut self, record: AdjudicationRecord) -> Result<TaskStatus, AnnotateError> {
        let id = record.pair_id.clone();
        self.record(Event::Adjudication(record))?;
        self.status(&id)
    }

    pub fn conflicts(&self) -> Vec<AnnotationTask> {
        self.tasks.values().filter(|t| t.status() == TaskStatus::Conflicted).map(Self::view).collect()
    }

    /// The two pre-adjudication labels of every doubly labeled pair, ordered
    /// by annotator id within each pair.
    pub fn label_pairs(&self) -> Vec<(AnnotationLabel, AnnotationLabel)> {
        self.tasks
            .values()
            .filter(|t| t.labels.len() == 2)
            .map(|t| {
                let (x, y) = (&t.labels[0], &t.labels[1]);
                if x.annotator_id <= y.annotator_id { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) }
            })
            .collect()
    }

    pub fn compute_agreement(&self, mode: AgreementMode) -> Result<Agreement, AnnotateError> {
        let pairs = self.label_pairs();
        if pairs.is_empty() {
            return Err(AnnotateError::NoDoublyLabeled);
        }
        let key = |l: &AnnotationLabel| match mode {
            AgreementMode::Score => (l.score, None),
            AgreementMode::Joint => l.verdict(),
        };
        let a: Vec<_> = pairs.iter().map(|p| key(&p.0)).collect();
        let b: Vec<_> = pairs.iter().map(|p| key(&p.1)).collect();
        Ok(Agreement { kappa: cohens_kappa(&a, &b)?, n_pairs: pairs.len() })
    }

    /// Final labels of labeled and adjudicated pairs, ordered by pair id.
    pub fn export_labels(&self) -> Vec<LabeledPair> {
        self.tasks
            .values()
            .filter_map(|t| {
                let (label, category) = t.final_verdict()?;
                Some(LabeledPair::new(t.pair.id.clone(), t.pair.sentence_a.clone(), t.pair.sentence_b.clone(), label, category))
            })
            .collect()
    }
}
