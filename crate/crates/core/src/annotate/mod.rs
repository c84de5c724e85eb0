//! Double-blind pair annotation: task queue, label collection, conflict
//! adjudication and inter-annotator agreement over an append-only event log.

mod diff;
mod store;

pub use diff::{diff_sequences, diff_tokens, DiffOp, DiffSpan};
pub use store::{
    AdjudicationRecord, Agreement, AgreementMode, AnnotateError, AnnotationLabel, AnnotationStore, AnnotationTask,
    Event, TaskStatus,
};

use crate::augment::ShiftCategory;

/// Guidance shown to annotators next to each pair.
pub fn instructions() -> String {
    let mut text = String::from(
        "Read both sentences. Highlighted tokens differ between them. \
         Score 1 if the second sentence carries the same financial information as the first, \
         or -1 if its meaning has shifted. For a shift, choose the category that fits best:\n",
    );
    for c in ShiftCategory::ALL {
        text.push_str(&format!("{} {}: {}\n", c.code(), c.name(), c.definition()));
    }
    text
}
