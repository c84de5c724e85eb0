//! LLM-driven triplet generation: shift categories, prompt templates, the
//! chat client, dataset assembly and quality assessment.

mod assess;
mod client;
mod dataset;
mod prompt;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use assess::{assess_dataset, AssessmentReport, Quartiles, SideMeans};
pub use client::{
    clean_completion, parse_chat_response, CachedTransport, ChatClient, ChatMessage, ChatRequest, ChatTransport,
    HttpChatTransport, LlmConfig, TransportError, DEFAULT_API_KEY_ENV,
};
pub use dataset::{build_dataset, generate_triplet, Anchor, BuildOptions, BuildOutcome, CategoryPolicy};
pub use prompt::{render_prompt, PromptTemplate};

use crate::jsonl::{self, JsonlError};
use crate::metrics::MetricsError;
use crate::provider::ProviderError;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("sentence is empty")]
    EmptySentence,
    #[error("category {0} cannot label a negative")]
    InvalidCategory(ShiftCategory),
    #[error("no anchor sentences")]
    EmptyInput,
    #[error("every anchor failed; last error: {0}")]
    AllAnchorsFailed(String),
    #[error("completion request failed after {attempts} attempt(s): {source}")]
    Transport { attempts: u32, source: TransportError },
    #[error("completion was empty")]
    EmptyCompletion,
    #[error("completion failed validation: {0}")]
    Validation(String),
    #[error("unknown category policy {0:?}")]
    Policy(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("duplicate triplet id {0}")]
    DuplicateId(String),
    #[error("invalid triplet {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// Semantic shift categories; `NoShift` labels paraphrases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShiftCategory {
    IntensifiedSentiment,
    ElaboratedDetails,
    PlanRealization,
    EmergingSituations,
    NoShift,
}

impl ShiftCategory {
    /// The four shift categories, C1..C4.
    pub const ALL: [ShiftCategory; 4] = [
        ShiftCategory::IntensifiedSentiment,
        ShiftCategory::ElaboratedDetails,
        ShiftCategory::PlanRealization,
        ShiftCategory::EmergingSituations,
    ];

    pub fn code(self) -> &'static str {
        match self {
            ShiftCategory::IntensifiedSentiment => "C1",
            ShiftCategory::ElaboratedDetails => "C2",
            ShiftCategory::PlanRealization => "C3",
            ShiftCategory::EmergingSituations => "C4",
            ShiftCategory::NoShift => "none",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShiftCategory::IntensifiedSentiment => "Intensified Sentiment",
            ShiftCategory::ElaboratedDetails => "Elaborated Details",
            ShiftCategory::PlanRealization => "Plan Realization",
            ShiftCategory::EmergingSituations => "Emerging Situations",
            ShiftCategory::NoShift => "No Semantic Shift",
        }
    }

    /// One-line definition shown to annotators.
    pub fn definition(self) -> &'static str {
        match self {
            ShiftCategory::IntensifiedSentiment => {
                "One sentence uses stronger positive or negative phrasing than the other."
            }
            ShiftCategory::ElaboratedDetails => {
                "One sentence gives substantially more detail about the business situation."
            }
            ShiftCategory::PlanRealization => {
                "One sentence anticipates an event that the other reports as having happened or happening."
            }
            ShiftCategory::EmergingSituations => "One sentence introduces information absent from the other.",
            ShiftCategory::NoShift => "The sentences are paraphrases with the same meaning and sentiment.",
        }
    }

    /// Position among C1..C4, `None` for `NoShift`.
    pub fn index(self) -> Option<usize> {
        ShiftCategory::ALL.iter().position(|&c| c == self)
    }

    pub fn is_shift(self) -> bool {
        self != ShiftCategory::NoShift
    }
}

impl fmt::Display for ShiftCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ShiftCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm: String = s.trim().to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Ok(match norm.as_str() {
            "c1" | "intensifiedsentiment" => ShiftCategory::IntensifiedSentiment,
            "c2" | "elaborateddetails" => ShiftCategory::ElaboratedDetails,
            "c3" | "planrealization" => ShiftCategory::PlanRealization,
            "c4" | "emergingsituations" => ShiftCategory::EmergingSituations,
            "none" | "noshift" | "nosemanticshift" => ShiftCategory::NoShift,
            _ => return Err(format!("unknown shift category {s:?}")),
        })
    }
}

impl Serialize for ShiftCategory {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for ShiftCategory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Anchor, paraphrase and shifted rewrite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub id: String,
    pub anchor: String,
    pub positive: String,
    pub negative: String,
    pub category: ShiftCategory,
    pub source_model: String,
    pub company: String,
    pub period: String,
}

impl TripletRecord {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |reason: &str| AugmentError::InvalidRecord { id: self.id.clone(), reason: reason.into() };
        if self.anchor.trim().is_empty() || self.positive.trim().is_empty() || self.negative.trim().is_empty() {
            return Err(bad("empty text"));
        }
        if !self.category.is_shift() {
            return Err(bad("negative category must be C1..C4"));
        }
        Ok(())
    }
}

/// Validated collection of triplets with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletDataset {
    records: Vec<TripletRecord>,
}

impl TripletDataset {
    pub fn new(records: Vec<TripletRecord>) -> Result<Self, AugmentError> {
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(AugmentError::DuplicateId(r.id.clone()));
            }
        }
        Ok(TripletDataset { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TripletRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TripletRecord> {
        self.records
    }

    /// Records whose category is not `category`.
    pub fn without_category(&self, category: ShiftCategory) -> TripletDataset {
        TripletDataset { records: self.records.iter().filter(|r| r.category != category).cloned().collect() }
    }

    pub fn categories(&self) -> Vec<ShiftCategory> {
        let mut cats: Vec<_> = self.records.iter().map(|r| r.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }

    pub fn read(path: &Path) -> Result<Self, AugmentError> {
        TripletDataset::new(jsonl::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), AugmentError> {
        Ok(jsonl::write(path, &self.records)?)
    }
}
