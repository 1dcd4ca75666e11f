use std::collections::BTreeSet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryTag {
    Formative,
    Observation,
    Platform,
    Survey,
    Plan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub timestamp: NaiveDateTime,
    pub text: String,
    pub tags: BTreeSet<MemoryTag>,
    /// Reserved; the default scorer ignores it.
    pub importance: f64,
}

impl MemoryRecord {
    pub fn new(timestamp: NaiveDateTime, text: impl Into<String>, tag: MemoryTag) -> Self {
        Self { timestamp, text: text.into(), tags: BTreeSet::from([tag]), importance: 0.0 }
    }

    pub fn has_tag(&self, tag: MemoryTag) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("memory text must not be empty")]
    EmptyText,
    #[error("memory at {new} would precede the latest memory at {latest}")]
    OutOfOrder { new: NaiveDateTime, latest: NaiveDateTime },
}

/// Weights of the retrieval score `recency_weight · recency + relevance_weight · overlap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalWeights {
    pub recency: f64,
    pub relevance: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self { recency: 0.1, relevance: 1.0 }
    }
}

/// Append-only, time-ordered memory of one agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    records: Vec<MemoryRecord>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MemoryRecord) -> Result<(), MemoryError> {
        if record.text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        if let Some(last) = self.records.last() {
            if record.timestamp < last.timestamp {
                return Err(MemoryError::OutOfOrder { new: record.timestamp, latest: last.timestamp });
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The `n` newest records carrying `tag`, oldest first.
    pub fn latest_with_tag(&self, tag: MemoryTag, n: usize) -> Vec<&MemoryRecord> {
        let mut hits: Vec<_> = self.records.iter().rev().filter(|r| r.has_tag(tag)).take(n).collect();
        hits.reverse();
        hits
    }

    /// Top-`k` records for `query`.
    ///
    /// Recency is the record's rank in insertion order scaled to (0, 1];
    /// relevance is the cosine similarity of the lowercase word sets. Ties go
    /// to the newer timestamp, then to the earlier insertion.
    pub fn retrieve(&self, query: &str, k: usize, weights: RetrievalWeights) -> Vec<&MemoryRecord> {
        let query_tokens = tokens(query);
        let n = self.records.len() as f64;
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let recency = (i + 1) as f64 / n;
                let relevance = token_cosine(&query_tokens, &tokens(&r.text));
                (weights.recency * recency + weights.relevance * relevance, i)
            })
            .collect();
        scored.sort_by(|(sa, ia), (sb, ib)| {
            sb.total_cmp(sa)
                .then_with(|| self.records[*ib].timestamp.cmp(&self.records[*ia].timestamp))
                .then_with(|| ia.cmp(ib))
        });
        scored.into_iter().take(k).map(|(_, i)| &self.records[i]).collect()
    }
}

pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_cosine(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let shared = a.intersection(b).count() as f64;
    shared / ((a.len() as f64) * (b.len() as f64)).sqrt()
}
