//! Document corpus: ingestion of line-delimited records, segmentation to a
//! token budget, and seeded uniform sampling with an optional source mix.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Default segment budget in tokens.
pub const DEFAULT_SEGMENT_BUDGET: usize = 5992;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus store is empty")]
    Empty,
    #[error("invalid source mix: {0}")]
    InvalidMix(String),
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("store file line {line}: {message}")]
    BadStoreRecord { line: usize, message: String },
    #[error("segment budget must be positive")]
    ZeroBudget,
}

/// A corpus passage used as challenger context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: String,
    pub token_estimate: usize,
}

/// Approximate token counting used for segmentation.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(bytes / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteQuarterEstimator;

impl TokenEstimator for ByteQuarterEstimator {
    fn estimate(&self, text: &str) -> usize {
        text.len().div_ceil(4)
    }
}

/// Outcome of one `ingest` call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub records: usize,
    pub added: usize,
    pub skipped_empty: usize,
    pub skipped_malformed: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    #[serde(default)]
    source: Option<String>,
}

/// Splits `text` into contiguous pieces whose estimate fits `budget`.
///
/// Each cut is placed just after the last whitespace character that fits in
/// the budget; if the prefix has no whitespace the cut is made at the budget
/// boundary itself. Concatenating the pieces yields `text` exactly.
pub fn segment<'a>(text: &'a str, budget: usize, est: &dyn TokenEstimator) -> Vec<&'a str> {
    assert!(budget > 0, "segment budget must be positive");
    let mut out = Vec::new();
    let mut rest = text;
    while !rest.is_empty() && est.estimate(rest) > budget {
        // Largest char-boundary prefix that fits; estimates are monotone in
        // prefix length.
        let bounds: Vec<usize> = rest
            .char_indices()
            .map(|(i, _)| i)
            .skip(1)
            .chain(std::iter::once(rest.len()))
            .collect();
        let fitting = bounds.partition_point(|&b| est.estimate(&rest[..b]) <= budget);
        let fit = if fitting == 0 { 0 } else { bounds[fitting - 1] };
        let cut = rest[..fit]
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_whitespace())
            .map(|(i, c)| i + c.len_utf8())
            .filter(|&c| c > 0)
            .unwrap_or(fit);
        let cut = if cut == 0 {
            // A single character over budget; emit it alone to make progress.
            rest.chars().next().map_or(rest.len(), char::len_utf8)
        } else {
            cut
        };
        out.push(&rest[..cut]);
        rest = &rest[cut..];
    }
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// An immutable-after-ingestion collection of documents.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    documents: Vec<Document>,
    seed: u64,
    source_mix: Option<BTreeMap<String, f64>>,
}

impl CorpusStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn source_mix(&self) -> Option<&BTreeMap<String, f64>> {
        self.source_mix.as_ref()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Document counts per source tag.
    pub fn source_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for d in &self.documents {
            *counts.entry(d.source.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Sets per-source sampling proportions. An empty map restores plain
    /// uniform sampling over all documents.
    pub fn set_source_mix(&mut self, mix: BTreeMap<String, f64>) -> Result<(), CorpusError> {
        if mix.is_empty() {
            self.source_mix = None;
            return Ok(());
        }
        let counts = self.source_counts();
        let mut total = 0.0;
        for (source, &w) in &mix {
            if !(0.0..=1.0).contains(&w) {
                return Err(CorpusError::InvalidMix(format!(
                    "weight for `{source}` is {w}, outside [0, 1]"
                )));
            }
            if w > 0.0 && !counts.contains_key(source) {
                return Err(CorpusError::InvalidMix(format!(
                    "source `{source}` has weight {w} but no documents"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(CorpusError::InvalidMix(format!(
                "weights sum to {total}, not 1"
            )));
        }
        self.source_mix = Some(mix);
        Ok(())
    }

    fn push(&mut self, text: &str, source: &str, est: &dyn TokenEstimator) {
        let id = format!("{source}-{:07}", self.documents.len());
        self.documents.push(Document {
            id,
            text: text.to_owned(),
            source: source.to_owned(),
            token_estimate: est.estimate(text),
        });
    }

    /// Adds one raw text, segmenting it to `budget`. Returns the number of
    /// documents created (zero for blank text).
    pub fn add_text(
        &mut self,
        text: &str,
        source: &str,
        budget: usize,
        est: &dyn TokenEstimator,
    ) -> Result<usize, CorpusError> {
        if budget == 0 {
            return Err(CorpusError::ZeroBudget);
        }
        if text.trim().is_empty() {
            return Ok(0);
        }
        let pieces = segment(text, budget, est);
        let n = pieces.len();
        for piece in pieces {
            self.push(piece, source, est);
        }
        Ok(n)
    }

    /// Reads line-delimited `{text, source?}` records from `reader`.
    /// `source` is used for records without their own tag.
    pub fn ingest_reader<R: BufRead>(
        &mut self,
        reader: R,
        source: &str,
        budget: usize,
        est: &dyn TokenEstimator,
    ) -> Result<IngestReport, CorpusError> {
        if budget == 0 {
            return Err(CorpusError::ZeroBudget);
        }
        let mut report = IngestReport::default();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CorpusError::Io {
                path: PathBuf::from("<reader>"),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            report.records += 1;
            let record: RawRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(line = lineno + 1, error = %e, "skipping malformed record");
                    report.skipped_malformed += 1;
                    continue;
                }
            };
            if record.text.trim().is_empty() {
                report.skipped_empty += 1;
                continue;
            }
            let tag = record.source.as_deref().unwrap_or(source);
            report.added += self.add_text(&record.text, tag, budget, est)?;
        }
        Ok(report)
    }

    pub fn ingest(
        &mut self,
        path: &Path,
        source: &str,
        budget: usize,
    ) -> Result<IngestReport, CorpusError> {
        self.ingest_with(path, source, budget, &ByteQuarterEstimator)
    }

    pub fn ingest_with(
        &mut self,
        path: &Path,
        source: &str,
        budget: usize,
        est: &dyn TokenEstimator,
    ) -> Result<IngestReport, CorpusError> {
        let file = File::open(path).map_err(|e| CorpusError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        self.ingest_reader(BufReader::new(file), source, budget, est)
    }

    /// Draws `n` documents with replacement.
    ///
    /// With a source mix, each draw first picks a source by weight and then a
    /// document uniformly within it; otherwise every document is equally
    /// likely. The stream depends only on `(seed, call_index)`, so concurrent
    /// callers using distinct call indices get disjoint reproducible streams.
    pub fn sample(&self, n: usize, call_index: u64) -> Result<Vec<&Document>, CorpusError> {
        if self.documents.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut rng = seed::rng(self.seed, &[seed::hash_str("corpus.sample"), call_index]);
        let by_source: Option<Vec<(f64, Vec<usize>)>> = self.source_mix.as_ref().map(|mix| {
            mix.iter()
                .filter(|(_, &w)| w > 0.0)
                .map(|(s, &w)| {
                    let idx = self
                        .documents
                        .iter()
                        .enumerate()
                        .filter(|(_, d)| &d.source == s)
                        .map(|(i, _)| i)
                        .collect();
                    (w, idx)
                })
                .collect()
        });
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let i = match &by_source {
                None => rng.random_range(0..self.documents.len()),
                Some(groups) => {
                    let total: f64 = groups.iter().map(|(w, _)| w).sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut chosen = &groups[groups.len() - 1].1;
                    for (w, idx) in groups {
                        if u < *w {
                            chosen = idx;
                            break;
                        }
                        u -= w;
                    }
                    chosen[rng.random_range(0..chosen.len())]
                }
            };
            out.push(&self.documents[i]);
        }
        Ok(out)
    }

    /// Writes the store as line-delimited `{id, text, source, token_estimate}`.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |e| CorpusError::Io {
            path: path.to_owned(),
            source: e,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        for d in &self.documents {
            let line = serde_json::to_string(d).expect("document serializes");
            writeln!(w, "{line}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|e| CorpusError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut store = Self::new(seed);
        let mut seen = std::collections::HashSet::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::Io {
                path: path.to_owned(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document =
                serde_json::from_str(&line).map_err(|e| CorpusError::BadStoreRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if doc.text.is_empty() {
                return Err(CorpusError::BadStoreRecord {
                    line: i + 1,
                    message: "empty text".into(),
                });
            }
            if !seen.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateId(doc.id));
            }
            store.documents.push(doc);
        }
        Ok(store)
    }

    /// Appends documents loaded from another store file, re-keying ids.
    pub fn extend_from(&mut self, other: &CorpusStore) {
        for d in &other.documents {
            let id = format!("{}-{:07}", d.source, self.documents.len());
            self.documents.push(Document { id, ..d.clone() });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn words(n_tokens: usize) -> String {
        // "abc " is exactly one token under the byte/4 estimator.
        "abc ".repeat(n_tokens)
    }

    /// Independent re-statement of the split rule: greedily take the longest
    /// prefix of at most `4 * budget` bytes ending in whitespace.
    fn oracle_split(text: &str, budget: usize) -> Vec<usize> {
        let max = budget * 4;
        let bytes = text.as_bytes();
        let mut sizes = Vec::new();
        let mut start = 0;
        while bytes.len() - start > max {
            let window = &bytes[start..start + max];
            let cut = window
                .iter()
                .rposition(|b| b.is_ascii_whitespace())
                .map(|p| p + 1)
                .unwrap_or(max);
            sizes.push(cut);
            start += cut;
        }
        sizes.push(bytes.len() - start);
        sizes
    }

    #[test]
    fn twelve_thousand_tokens_split_into_three() {
        let text = words(12_000);
        let est = ByteQuarterEstimator;
        let pieces = segment(&text, 5992, &est);
        let sizes: Vec<usize> = pieces.iter().map(|p| est.estimate(p)).collect();
        let expected: Vec<usize> = oracle_split(&text, 5992)
            .into_iter()
            .map(|b| b.div_ceil(4))
            .collect();
        assert_eq!(sizes, expected);
        assert_eq!(sizes, vec![5992, 5992, 16]);
    }

    #[test]
    fn short_text_not_split() {
        let mut store = CorpusStore::new(0);
        let n = store
            .add_text(&words(100), "math", 5992, &ByteQuarterEstimator)
            .unwrap();
        assert_eq!(n, 1);
        assert_eq!(store.documents()[0].token_estimate, 100);
    }

    #[test]
    fn split_prefers_whitespace_and_is_lossless() {
        let text = "alpha beta gamma delta epsilon";
        let pieces = segment(text, 3, &ByteQuarterEstimator);
        assert_eq!(pieces.concat(), text);
        for p in &pieces {
            assert!(ByteQuarterEstimator.estimate(p) <= 3);
        }
        assert_eq!(pieces[0], "alpha beta ");
    }

    #[test]
    fn unbroken_text_is_hard_cut() {
        let text = "x".repeat(30);
        let pieces = segment(&text, 2, &ByteQuarterEstimator);
        assert_eq!(
            pieces.iter().map(|p| p.len()).collect::<Vec<_>>(),
            vec![8, 8, 8, 6]
        );
    }

    #[test]
    fn multibyte_text_cut_on_char_boundaries() {
        let text = "é".repeat(20);
        let pieces = segment(&text, 3, &ByteQuarterEstimator);
        assert_eq!(pieces.concat(), text);
        assert!(pieces.iter().all(|p| p.len() <= 12));
    }

    #[test]
    fn ingest_skips_blank_and_malformed() {
        let input = r#"{"text": "hello world"}
{"text": "   "}
not json
{"nope": 1}
{"text": "from general", "source": "general"}
"#;
        let mut store = CorpusStore::new(1);
        let report = store
            .ingest_reader(Cursor::new(input), "math", 5992, &ByteQuarterEstimator)
            .unwrap();
        assert_eq!(
            report,
            IngestReport {
                records: 5,
                added: 2,
                skipped_empty: 1,
                skipped_malformed: 2
            }
        );
        assert_eq!(store.documents()[0].source, "math");
        assert_eq!(store.documents()[1].source, "general");
    }

    #[test]
    fn twenty_thousand_records() {
        let mut input = String::new();
        for i in 0..20_000 {
            input.push_str(&format!("{{\"text\": \"document number {i}\"}}\n"));
        }
        let mut store = CorpusStore::new(1);
        let report = store
            .ingest_reader(Cursor::new(input), "general", 5992, &ByteQuarterEstimator)
            .unwrap();
        assert_eq!(report.added, 20_000);
        let ids: std::collections::HashSet<_> = store.documents().iter().map(|d| &d.id).collect();
        assert_eq!(ids.len(), 20_000);
    }

    #[test]
    fn missing_file_is_an_error() {
        let mut store = CorpusStore::new(0);
        let err = store
            .ingest(Path::new("/definitely/not/here.jsonl"), "x", 10)
            .unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn empty_store_cannot_sample() {
        let store = CorpusStore::new(0);
        assert!(matches!(store.sample(1, 0), Err(CorpusError::Empty)));
    }

    #[test]
    fn singleton_store_repeats() {
        let mut store = CorpusStore::new(3);
        store
            .add_text("only", "s", 10, &ByteQuarterEstimator)
            .unwrap();
        let s = store.sample(3, 0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|d| d.text == "only"));
    }

    #[test]
    fn sample_is_deterministic_per_call_index() {
        let mut store = CorpusStore::new(42);
        for i in 0..50 {
            store
                .add_text(&format!("doc {i}"), "s", 10, &ByteQuarterEstimator)
                .unwrap();
        }
        let a: Vec<_> = store
            .sample(128, 5)
            .unwrap()
            .iter()
            .map(|d| d.id.clone())
            .collect();
        let b: Vec<_> = store
            .sample(128, 5)
            .unwrap()
            .iter()
            .map(|d| d.id.clone())
            .collect();
        let c: Vec<_> = store
            .sample(128, 6)
            .unwrap()
            .iter()
            .map(|d| d.id.clone())
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mix_validation() {
        let mut store = CorpusStore::new(0);
        store
            .add_text("a", "math", 10, &ByteQuarterEstimator)
            .unwrap();
        let bad_sum = BTreeMap::from([("math".to_string(), 0.7)]);
        assert!(store.set_source_mix(bad_sum).is_err());
        let missing = BTreeMap::from([("math".to_string(), 0.5), ("general".to_string(), 0.5)]);
        assert!(store.set_source_mix(missing).is_err());
        let ok = BTreeMap::from([("math".to_string(), 1.0)]);
        assert!(store.set_source_mix(ok).is_ok());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = CorpusStore::new(9);
        store
            .add_text(&words(30), "math", 8, &ByteQuarterEstimator)
            .unwrap();
        store.save(&path).unwrap();
        let loaded = CorpusStore::load(&path, 9).unwrap();
        assert_eq!(loaded.documents(), store.documents());
    }
}
