//! Ranked runs: the ordered `(pmid, score)` lists passed between retrieval,
//! re-ranking, fusion and evaluation, plus the line-delimited run-file format.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("run for question {question_id} lists pmid {pmid} more than once")]
    DuplicatePmid { question_id: String, pmid: String },
}

/// Pipeline stage that produced a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Retrieval,
    Crossencoder,
    Llm,
    Fused,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Retrieval => "retrieval",
            Stage::Crossencoder => "crossencoder",
            Stage::Llm => "llm",
            Stage::Fused => "fused",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub pmid: String,
    pub score: f64,
}

impl RankedItem {
    pub fn new(pmid: impl Into<String>, score: f64) -> Self {
        Self {
            pmid: pmid.into(),
            score,
        }
    }
}

/// Ordered result list for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRun {
    pub question_id: String,
    pub stage: Stage,
    pub items: Vec<RankedItem>,
}

impl RankedRun {
    pub fn new(question_id: impl Into<String>, stage: Stage, items: Vec<RankedItem>) -> Self {
        Self {
            question_id: question_id.into(),
            stage,
            items,
        }
    }

    /// Builds a run whose scores are rank points `len + 1 - r`.
    pub fn from_order<S: AsRef<str>>(question_id: impl Into<String>, stage: Stage, pmids: &[S]) -> Self {
        let n = pmids.len();
        let items = pmids
            .iter()
            .enumerate()
            .map(|(i, p)| RankedItem::new(p.as_ref(), (n - i) as f64))
            .collect();
        Self::new(question_id, stage, items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn pmids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.pmid.as_str())
    }

    pub fn truncated(&self, k: usize) -> Self {
        Self {
            question_id: self.question_id.clone(),
            stage: self.stage,
            items: self.items.iter().take(k).cloned().collect(),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let mut seen = HashSet::with_capacity(self.items.len());
        for item in &self.items {
            if !seen.insert(item.pmid.as_str()) {
                return Err(RunError::DuplicatePmid {
                    question_id: self.question_id.clone(),
                    pmid: item.pmid.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Numeric order on digit-string identifiers of any length. Non-digit
/// strings (never produced by the corpus) fall back to plain string order.
pub fn cmp_pmid(a: &str, b: &str) -> Ordering {
    let a_num = a.bytes().all(|c| c.is_ascii_digit());
    let b_num = b.bytes().all(|c| c.is_ascii_digit());
    if a_num && b_num {
        let at = a.trim_start_matches('0');
        let bt = b.trim_start_matches('0');
        at.len()
            .cmp(&bt.len())
            .then_with(|| at.cmp(bt))
            .then_with(|| a.cmp(b))
    } else {
        a.cmp(b)
    }
}

/// Higher score first, then smaller numeric pmid. NaN sorts last.
pub fn cmp_hits(a_score: f64, a_pmid: &str, b_score: f64, b_pmid: &str) -> Ordering {
    match b_score.partial_cmp(&a_score) {
        Some(Ordering::Equal) => cmp_pmid(a_pmid, b_pmid),
        Some(o) => o,
        None => a_score.is_nan().cmp(&b_score.is_nan()).then_with(|| cmp_pmid(a_pmid, b_pmid)),
    }
}

pub fn sort_items(items: &mut [RankedItem]) {
    items.sort_by(|a, b| cmp_hits(a.score, &a.pmid, b.score, &b.pmid));
}

pub fn read_runs(path: &Path) -> Result<Vec<RankedRun>, RunError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| RunError::Io {
        path: p.clone(),
        source,
    })?;
    let mut runs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RunError::Io {
            path: p.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let run: RankedRun = serde_json::from_str(&line).map_err(|e| RunError::Parse {
            path: p.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        run.validate()?;
        runs.push(run);
    }
    Ok(runs)
}

pub fn write_runs(path: &Path, runs: &[RankedRun]) -> Result<(), RunError> {
    let p = path.display().to_string();
    let io = |source| RunError::Io {
        path: p.clone(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for run in runs {
        let line = serde_json::to_string(run).expect("runs always serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmid_order_is_numeric() {
        assert_eq!(cmp_pmid("9", "10"), Ordering::Less);
        assert_eq!(cmp_pmid("123", "123"), Ordering::Equal);
        assert_eq!(cmp_pmid("0042", "42"), Ordering::Less);
        assert_eq!(cmp_pmid("100", "99"), Ordering::Greater);
    }

    #[test]
    fn hits_sort_by_score_then_pmid() {
        let mut items = vec![
            RankedItem::new("20", 0.5),
            RankedItem::new("3", 0.5),
            RankedItem::new("7", 0.9),
        ];
        sort_items(&mut items);
        let order: Vec<_> = items.iter().map(|i| i.pmid.as_str()).collect();
        assert_eq!(order, ["7", "3", "20"]);
    }

    #[test]
    fn run_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let runs = vec![
            RankedRun::from_order("q1", Stage::Llm, &["1", "2"]),
            RankedRun::new("q2", Stage::Retrieval, vec![RankedItem::new("5", 0.25)]),
        ];
        write_runs(&path, &runs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"question_id":"q1","stage":"llm","items":[{"pmid":"1","score":2.0}"#));
        assert_eq!(read_runs(&path).unwrap(), runs);
    }

    #[test]
    fn duplicate_pmids_rejected() {
        let run = RankedRun::from_order("q", Stage::Fused, &["1", "1"]);
        assert!(matches!(run.validate(), Err(RunError::DuplicatePmid { .. })));
    }
}
