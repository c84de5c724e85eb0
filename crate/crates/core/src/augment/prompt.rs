//! One-shot prompt templates, one per shift category plus the paraphrase
//! template used for positives.

use super::{AugmentError, ShiftCategory};

/// Instruction, one-shot example and question layout for one category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub category: ShiftCategory,
    pub instruction: &'static str,
    pub example_sentence: &'static str,
    pub example_answer: &'static str,
    pub question_prefix: &'static str,
}

const TASK_PREFIX: &str = "You are required to finish the task:";

const INTENSIFIED: PromptTemplate = PromptTemplate {
    category: ShiftCategory::IntensifiedSentiment,
    instruction: "Restating the given sentence so that the resulting sentence is semantically similar to the original sentence, but with much stronger negative sentiment by using more negative words.",
    example_sentence: "Changes in laws, regulations and policies and the related interpretations and enforcement practices may alter the landscape in which we do business and may significantly affect our cost of doing business.",
    example_answer: "Changes in and/or failure to comply with other laws and regulations specific to the environments in which we operate could materially adversely affect our reputation, market position, or our business and financial performance.",
    question_prefix: "The given sentence is:",
};

const ELABORATED: PromptTemplate = PromptTemplate {
    category: ShiftCategory::ElaboratedDetails,
    instruction: "Restating the given sentence so that the resulting sentence is semantically similar to the original sentence, but with much stronger negative sentiment by using more detailed description about the unfavorable situation.",
    example_sentence: "We also have outsourced elements of our operations to third parties, and, as a result, we manage a number of third-party vendors who may or could have access to our confidential information.",
    example_answer: "We also have outsourced elements of our operations to third parties, and, as a result, we manage a number of third-party suppliers who may or could have access to our confidential information, including, but not limited to, intellectual property, proprietary business information and personal information of patients, employees and customers (collectively \u{201c}Confidential Information\u{201d}).",
    question_prefix: "The given sentence is:",
};

const PLAN_REALIZATION: PromptTemplate = PromptTemplate {
    category: ShiftCategory::PlanRealization,
    instruction: "Restating the given sentence so that the resulting sentence is semantically similar to the original sentence, but with much stronger negative sentiment by changing the tense (from going to influence to have influenced).",
    example_sentence: "Although these attacks and breaches have not had a direct, material impact on us, we believe these incidents are likely to continue and we are unable to predict the direct or indirect impact of future attacks or breaches to our business.",
    example_answer: "Such attacks and breaches have resulted, and may continue to result in, fraudulent activity and ultimately, financial losses to Visa\u{2019}s clients, and it is difficult to predict the direct or indirect impact of future attacks or breaches to our business.",
    question_prefix: "The given sentence is:",
};

const EMERGING: PromptTemplate = PromptTemplate {
    category: ShiftCategory::EmergingSituations,
    instruction: "Restating the given sentence so that the resulting sentence is semantically similar to the original sentence, but with much stronger negative sentiment by adding some unfavorable circumstances.",
    example_sentence: "These tariffs, and any additional tariffs imposed by the U.S., China or other countries or any additional retaliatory measures by any of these countries, could increase our costs, reduce our sales and earnings or otherwise have an adverse effect on our operations.",
    example_answer: "While the U.S. and China signed what is being known as the Phase One Deal in January 2020, which included the suspension and rollback of tariffs, any new tariffs imposed by the U.S., China or other countries or any additional retaliatory measures by any of these countries, could increase our costs, reduce our sales and earnings or otherwise have an adverse effect on our operations.",
    question_prefix: "The given sentence is:",
};

const NO_SHIFT: PromptTemplate = PromptTemplate {
    category: ShiftCategory::NoShift,
    instruction: "Restating the sentence so that the resulting sentence is semantically and sentimentally similar to the given sentence.",
    example_sentence: "Many of our competitors are companies that are larger than we are, with greater financial and operational resources than we have.",
    example_answer: "We compete with many larger companies that have greater financial and operational resources than we have.",
    question_prefix: "The given sentence is:",
};

impl PromptTemplate {
    pub fn for_category(category: ShiftCategory) -> &'static PromptTemplate {
        match category {
            ShiftCategory::IntensifiedSentiment => &INTENSIFIED,
            ShiftCategory::ElaboratedDetails => &ELABORATED,
            ShiftCategory::PlanRealization => &PLAN_REALIZATION,
            ShiftCategory::EmergingSituations => &EMERGING,
            ShiftCategory::NoShift => &NO_SHIFT,
        }
    }

    pub fn render(&self, sentence: &str) -> Result<String, AugmentError> {
        let sentence = sentence.trim();
        if sentence.is_empty() {
            return Err(AugmentError::EmptySentence);
        }
        // The question reads "...: {sentence}. Expected answer:"; a sentence
        // that already ends in terminal punctuation is not given a second one.
        let stop = if sentence.ends_with(['.', '?', '!']) { "" } else { "." };
        Ok(format!(
            "{TASK_PREFIX} {}\n### Example: {} {} Expected answer: {}\n### Question: {} {sentence}{stop} Expected answer:",
            self.instruction, self.question_prefix, self.example_sentence, self.example_answer, self.question_prefix,
        ))
    }
}

/// Renders the prompt asking for a `category` rewrite of `sentence`.
pub fn render_prompt(category: ShiftCategory, sentence: &str) -> Result<String, AugmentError> {
    PromptTemplate::for_category(category).render(sentence)
}
