//! Plain-text report ingestion, sentence segmentation and token normalization.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} is not valid UTF-8")]
    Decode { path: PathBuf },
    #[error("{path} has no content")]
    EmptyDocument { path: PathBuf },
    #[error("document period must not be empty")]
    EmptyPeriod,
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// One report section for one company and period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub company: String,
    pub period: String,
    pub text: String,
}

/// A segmented sentence. `token_count` is not part of the export format and is
/// recomputed on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    #[serde(skip)]
    pub token_count: usize,
}

impl Sentence {
    pub fn new(doc_id: &str, index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let token_count = tokenize(&text).len();
        Sentence { id: format!("{doc_id}:{index}"), doc_id: doc_id.to_string(), index, text, token_count }
    }
}

/// Normalized token set used by Jaccard.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSet {
    tokens: BTreeSet<String>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &TokenSet) -> usize {
        self.tokens.intersection(&other.tokens).count()
    }

    pub fn union_len(&self, other: &TokenSet) -> usize {
        self.tokens.union(&other.tokens).count()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSet { tokens: iter.into_iter().map(Into::into).filter(|t: &String| !t.is_empty()).collect() }
    }
}

/// Ordered token sequence: lowercase, whitespace split, edge punctuation
/// stripped, empties dropped. Duplicates are kept.
pub fn token_sequence(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Deduplicated normalized tokens of `text`.
pub fn tokenize(text: &str) -> TokenSet {
    token_sequence(text).into_iter().collect()
}

pub const DEFAULT_ABBREVIATIONS: &[&str] =
    &["inc.", "u.s.", "no.", "approx.", "mr.", "corp.", "co.", "e.g.", "i.e."];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    /// Lowercase tokens, each ending in '.', that never end a sentence.
    pub abbreviations: Vec<String>,
    /// Sentences with fewer tokens are dropped. 0 keeps everything.
    pub min_tokens: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig { abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(), min_tokens: 0 }
    }
}

/// Reads a UTF-8 text file into a [`Document`].
pub fn ingest_document(path: &Path, company: &str, period: &str) -> Result<Document, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    let raw = String::from_utf8(bytes).map_err(|_| CorpusError::Decode { path: path.to_path_buf() })?;
    document_from_text(&raw, company, period).map_err(|e| match e {
        CorpusError::EmptyDocument { .. } => CorpusError::EmptyDocument { path: path.to_path_buf() },
        other => other,
    })
}

/// Builds a document from raw text; the id hashes company, period and content.
pub fn document_from_text(raw: &str, company: &str, period: &str) -> Result<Document, CorpusError> {
    let text = raw.replace("\r\n", "\n").replace('\r', "\n");
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyDocument { path: PathBuf::new() });
    }
    if period.trim().is_empty() {
        return Err(CorpusError::EmptyPeriod);
    }
    let mut hasher = Sha256::new();
    hasher.update(company.as_bytes());
    hasher.update([0u8]);
    hasher.update(period.as_bytes());
    hasher.update([0u8]);
    hasher.update(text.as_bytes());
    let digest = hex::encode(hasher.finalize());
    Ok(Document {
        id: format!("{company}-{period}-{}", &digest[..12]),
        company: company.to_string(),
        period: period.to_string(),
        text,
    })
}

/// Splits a document into sentences with the default segmenter settings.
pub fn segment_sentences(doc: &Document) -> Vec<Sentence> {
    segment_with(doc, &SegmenterConfig::default())
}

pub fn segment_with(doc: &Document, cfg: &SegmenterConfig) -> Vec<Sentence> {
    let mut out = Vec::new();
    for span in sentence_spans(&doc.text, &cfg.abbreviations) {
        let text = doc.text[span.0..span.1].trim();
        if text.is_empty() {
            continue;
        }
        let sentence = Sentence::new(&doc.id, out.len(), text);
        if sentence.token_count < cfg.min_tokens {
            continue;
        }
        out.push(sentence);
    }
    // Indices stay dense after filtering.
    for (i, s) in out.iter_mut().enumerate() {
        if s.index != i {
            *s = Sentence::new(&doc.id, i, std::mem::take(&mut s.text));
        }
    }
    out
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Byte ranges of sentences in `text`. Ranges are contiguous and cover the text.
fn sentence_spans(text: &str, abbreviations: &[String]) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if matches!(c, '.' | '?' | '!') {
            let mut end = i + 1;
            while end < chars.len() && is_closer(chars[end].1) {
                end += 1;
            }
            let mut next = end;
            while next < chars.len() && chars[next].1.is_whitespace() {
                next += 1;
            }
            let has_gap = next > end;
            let opens_sentence = next < chars.len() && {
                let n = chars[next].1;
                n.is_uppercase() || n.is_ascii_digit()
            };
            if has_gap && opens_sentence && !(c == '.' && ends_with_abbreviation(&text[start..pos + 1], abbreviations))
            {
                let end_byte = if end < chars.len() { chars[end].0 } else { text.len() };
                spans.push((start, end_byte));
                start = end_byte;
                i = next;
                continue;
            }
        }
        i += 1;
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    spans
}

fn ends_with_abbreviation(prefix: &str, abbreviations: &[String]) -> bool {
    let word = prefix.rsplit(char::is_whitespace).next().unwrap_or("");
    let word = word.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    abbreviations.iter().any(|a| *a == word)
}

/// One line of a corpus manifest. A missing id is derived from the content.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default)]
    pub id: Option<String>,
    pub company: String,
    pub period: String,
    pub path: PathBuf,
}

/// Loads every document in a JSON Lines manifest. Relative paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let entries: Vec<ManifestEntry> = jsonl::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    let mut docs = Vec::with_capacity(entries.len());
    for entry in entries {
        let file = if entry.path.is_absolute() { entry.path.clone() } else { base.join(&entry.path) };
        let mut doc = ingest_document(&file, &entry.company, &entry.period)?;
        if let Some(id) = entry.id {
            doc.id = id;
        }
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads a sentence export, recomputing token counts.
pub fn read_sentences(path: &Path) -> Result<Vec<Sentence>, CorpusError> {
    let mut sentences: Vec<Sentence> = jsonl::read(path)?;
    for s in &mut sentences {
        s.token_count = tokenize(&s.text).len();
    }
    Ok(sentences)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        document_from_text(text, "AAPL", "2018").unwrap()
    }

    fn texts(text: &str) -> Vec<String> {
        segment_sentences(&doc(text)).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn splits_simple_sentences() {
        assert_eq!(texts("Revenue grew. Costs fell."), ["Revenue grew.", "Costs fell."]);
    }

    #[test]
    fn abbreviation_is_not_a_boundary() {
        assert_eq!(
            texts("Approx. 5% growth occurred. It continued."),
            ["Approx. 5% growth occurred.", "It continued."]
        );
        assert_eq!(texts("Apple Inc. Reported sales. Fine."), ["Apple Inc. Reported sales.", "Fine."]);
    }

    #[test]
    fn single_unterminated_sentence() {
        assert_eq!(texts("One sentence only"), ["One sentence only"]);
    }

    #[test]
    fn lowercase_continuation_and_closers() {
        assert_eq!(texts("See e.g. the note. Next one."), ["See e.g. the note.", "Next one."]);
        assert_eq!(texts("He said \"stop.\" Then left!"), ["He said \"stop.\"", "Then left!"]);
        assert_eq!(texts("Value was 3.5 million. 2019 was worse?"), ["Value was 3.5 million.", "2019 was worse?"]);
    }

    #[test]
    fn sentence_fields() {
        let d = doc("Revenue grew strongly. Costs fell.");
        let s = segment_sentences(&d);
        assert_eq!(s[1].index, 1);
        assert_eq!(s[1].doc_id, d.id);
        assert_eq!(s[1].id, format!("{}:1", d.id));
        assert_eq!(s[0].token_count, 3);
    }

    #[test]
    fn min_token_filter_keeps_dense_indices() {
        let cfg = SegmenterConfig { min_tokens: 3, ..Default::default() };
        let s = segment_with(&doc("Ok. Revenue grew strongly. Yes. Costs fell sharply again."), &cfg);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].index, 1);
        assert_eq!(s[1].text, "Costs fell sharply again.");
    }

    #[test]
    fn tokenize_examples() {
        let t = tokenize("We compete, we win.");
        assert_eq!(t.iter().collect::<Vec<_>>(), ["compete", "we", "win"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A a A.").iter().collect::<Vec<_>>(), ["a"]);
        assert!(tokenize("-- ... ,").is_empty());
    }

    #[test]
    fn ingest_errors_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("aapl_2018.txt");
        fs::write(&p, "Risk factors.\r\nOur business is subject to risks.").unwrap();
        let a = ingest_document(&p, "AAPL", "2018").unwrap();
        let b = ingest_document(&p, "AAPL", "2018").unwrap();
        assert_eq!(a.id, b.id);
        assert_eq!(a.company, "AAPL");
        assert!(!a.text.contains('\r'));

        let empty = dir.path().join("empty.txt");
        fs::write(&empty, "  \n").unwrap();
        assert!(matches!(ingest_document(&empty, "AAPL", "2018"), Err(CorpusError::EmptyDocument { .. })));
        assert!(matches!(ingest_document(&dir.path().join("nope"), "A", "1"), Err(CorpusError::Io { .. })));
        let bad = dir.path().join("bad.txt");
        fs::write(&bad, [0xff, 0xfe, 0x41]).unwrap();
        assert!(matches!(ingest_document(&bad, "A", "1"), Err(CorpusError::Decode { .. })));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "Sales rose. Margins held.").unwrap();
        fs::write(dir.path().join("b.txt"), "Sales fell.").unwrap();
        let manifest = dir.path().join("manifest.jsonl");
        fs::write(
            &manifest,
            "{\"id\":\"d1\",\"company\":\"X\",\"period\":\"2018\",\"path\":\"a.txt\"}\n\
             {\"company\":\"X\",\"period\":\"2019\",\"path\":\"b.txt\"}\n",
        )
        .unwrap();
        let docs = load_manifest(&manifest).unwrap();
        assert_eq!(docs[0].id, "d1");
        assert!(docs[1].id.starts_with("X-2019-"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn text_strategy() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                prop_oneof![
                    "[A-Z][a-z]{0,6}",
                    "[a-z]{1,8}",
                    "[0-9]{1,3}",
                    Just("Inc.".to_string()),
                    Just("U.S.".to_string()),
                    "[a-z]{1,5}[.?!]",
                ],
                1..30,
            )
            .prop_map(|words| words.join(" "))
        }

        proptest! {
            #[test]
            fn segmentation_covers_text(text in text_strategy()) {
                let d = doc(&text);
                let sentences = segment_sentences(&d);
                let joined: String = sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
                let squash = |s: &str| s.split_whitespace().collect::<String>();
                prop_assert_eq!(squash(&joined), squash(&d.text));
                prop_assert_eq!(&sentences, &segment_sentences(&d));
                for (i, s) in sentences.iter().enumerate() {
                    prop_assert_eq!(s.index, i);
                    prop_assert_eq!(s.text.trim(), s.text.as_str());
                }
            }

            #[test]
            fn tokenize_idempotent(text in "[ -~]{0,80}") {
                let once = tokenize(&text);
                let joined = once.iter().collect::<Vec<_>>().join(" ");
                prop_assert_eq!(tokenize(&joined), once.clone());
                prop_assert!(once.iter().all(|t| !t.is_empty() && t.to_lowercase() == t));
            }
        }
    }
}
