use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{render_prompt, AugmentError, ChatClient, ShiftCategory, TripletDataset, TripletRecord};
use crate::corpus::{Document, Sentence};
use crate::jsonl;

/// A sentence to augment, with the report it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub id: String,
    pub text: String,
    pub company: String,
    pub period: String,
}

impl Anchor {
    pub fn new(sentence: &Sentence, doc: &Document) -> Self {
        Anchor {
            id: sentence.id.clone(),
            text: sentence.text.clone(),
            company: doc.company.clone(),
            period: doc.period.clone(),
        }
    }

    fn record_id(&self, category: ShiftCategory) -> String {
        format!("{}/{}", self.id, category.code())
    }
}

/// How shift categories are spread over anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CategoryPolicy {
    /// C1, C2, C3, C4, C1, ... in anchor order.
    #[default]
    RoundRobin,
    Fixed(ShiftCategory),
    /// Uniform draw per anchor from a seeded stream.
    Random(u64),
}

impl CategoryPolicy {
    pub fn assign(&self, n: usize) -> Vec<ShiftCategory> {
        match *self {
            CategoryPolicy::RoundRobin => (0..n).map(|i| ShiftCategory::ALL[i % 4]).collect(),
            CategoryPolicy::Fixed(c) => vec![c; n],
            CategoryPolicy::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| ShiftCategory::ALL[rng.random_range(0..4)]).collect()
            }
        }
    }
}

impl FromStr for CategoryPolicy {
    type Err = AugmentError;

    /// Accepts `round_robin`, `fixed:<Cn>` and `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, AugmentError> {
        let err = || AugmentError::Policy(s.to_string());
        match s.split_once(':') {
            None if s == "round_robin" => Ok(CategoryPolicy::RoundRobin),
            Some(("fixed", cat)) => {
                let c: ShiftCategory = cat.parse().map_err(|_| err())?;
                if !c.is_shift() {
                    return Err(AugmentError::InvalidCategory(c));
                }
                Ok(CategoryPolicy::Fixed(c))
            }
            Some(("random", seed)) => Ok(CategoryPolicy::Random(seed.parse().map_err(|_| err())?)),
            _ => Err(err()),
        }
    }
}

const RETRY_TEMPERATURE_BUMP: f64 = 0.2;

fn validated_completion(
    client: &ChatClient,
    prompt: &str,
    anchor: &str,
    must_differ: bool,
) -> Result<String, AugmentError> {
    let base = client.config().temperature;
    let mut last = String::new();
    for temperature in [base, base + RETRY_TEMPERATURE_BUMP] {
        match client.chat_complete_at(prompt, temperature) {
            Ok(text) if must_differ && text == anchor.trim() => last = "completion repeats the anchor".into(),
            Ok(text) => return Ok(text),
            Err(AugmentError::EmptyCompletion) => last = "empty completion".into(),
            Err(e) => return Err(e),
        }
    }
    Err(AugmentError::Validation(last))
}

/// Produces one triplet: a paraphrase positive and a `category` negative.
pub fn generate_triplet(
    anchor: &Anchor,
    category: ShiftCategory,
    client: &ChatClient,
) -> Result<TripletRecord, AugmentError> {
    if !category.is_shift() {
        return Err(AugmentError::InvalidCategory(category));
    }
    let positive = validated_completion(client, &render_prompt(ShiftCategory::NoShift, &anchor.text)?, &anchor.text, false)?;
    let negative = validated_completion(client, &render_prompt(category, &anchor.text)?, &anchor.text, true)?;
    Ok(TripletRecord {
        id: anchor.record_id(category),
        anchor: anchor.text.clone(),
        positive,
        negative,
        category,
        source_model: client.model().to_string(),
        company: anchor.company.clone(),
        period: anchor.period.clone(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// JSON Lines file of finished triplets; existing entries are reused.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub dataset: TripletDataset,
    /// Anchor ids that were skipped, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Generates one triplet per anchor, in anchor order.
///
/// Up to `concurrency` anchors are in flight at once. Finished triplets are
/// appended to the checkpoint after each batch, so an interrupted run picks
/// up where it stopped.
pub fn build_dataset(
    anchors: &[Anchor],
    policy: &CategoryPolicy,
    client: &ChatClient,
    opts: &BuildOptions,
) -> Result<BuildOutcome, AugmentError> {
    if anchors.is_empty() {
        return Err(AugmentError::EmptyInput);
    }
    let categories = policy.assign(anchors.len());
    let mut done: HashMap<String, TripletRecord> = HashMap::new();
    if let Some(p) = opts.checkpoint.as_deref().filter(|p| p.exists()) {
        for r in jsonl::read::<TripletRecord>(p)? {
            done.insert(r.id.clone(), r);
        }
        log::info!("resuming from checkpoint with {} triplets", done.len());
    }

    let todo: Vec<usize> =
        (0..anchors.len()).filter(|&i| !done.contains_key(&anchors[i].record_id(categories[i]))).collect();
    let mut skipped = Vec::new();
    let width = client.config().concurrency.max(1);
    for chunk in todo.chunks(width) {
        let results: Vec<(usize, Result<TripletRecord, AugmentError>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let category = categories[i];
                    (i, scope.spawn(move || generate_triplet(&anchors[i], category, client)))
                })
                .collect();
            handles.into_iter().map(|(i, h)| (i, h.join().expect("generation worker panicked"))).collect()
        });
        let mut lines = String::new();
        for (i, result) in results {
            match result {
                Ok(rec) => {
                    lines.push_str(&serde_json::to_string(&rec).expect("serializable record"));
                    lines.push('\n');
                    done.insert(rec.id.clone(), rec);
                }
                Err(e) => {
                    log::warn!("skipping anchor {}: {e}", anchors[i].id);
                    skipped.push((anchors[i].id.clone(), e.to_string()));
                }
            }
        }
        if let Some(p) = &opts.checkpoint {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|source| crate::jsonl::JsonlError::Io { path: p.display().to_string(), source })?;
            f.write_all(lines.as_bytes())
                .map_err(|source| crate::jsonl::JsonlError::Io { path: p.display().to_string(), source })?;
        }
    }

    let records: Vec<TripletRecord> = anchors
        .iter()
        .zip(&categories)
        .filter_map(|(a, &c)| done.remove(&a.record_id(c)))
        .collect();
    if records.is_empty() {
        let last = skipped.last().map(|s| s.1.clone()).unwrap_or_default();
        return Err(AugmentError::AllAnchorsFailed(last));
    }
    Ok(BuildOutcome { dataset: TripletDataset::new(records)?, skipped })
}
