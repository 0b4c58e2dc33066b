//! BioASQ question sets: loading, stratified splits, hard-negative mining
//! for pairwise training data, and few-shot example pools.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::CorpusMap;
use crate::metrics::{GoldDocs, GoldExact, YesNo};
use crate::par::{self, Execution};
use crate::run::{cmp_pmid, RankedRun};

pub const DEFAULT_SPLIT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];
/// Types with fewer questions than this go entirely to train.
pub const MIN_PER_TYPE_FOR_SPLIT: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: invalid BioASQ JSON: {message}")]
    Format { path: String, message: String },
    #[error("question {id}: unknown question type {qtype:?}")]
    UnknownType { id: String, qtype: String },
    #[error("question {id}: document URLs without a /pubmed/<digits> suffix: {urls:?}")]
    BadDocumentUrls { id: String, urls: Vec<String> },
    #[error("question {id}: malformed exact_answer: {reason}")]
    BadExactAnswer { id: String, reason: String },
    #[error("duplicate question id {0}")]
    DuplicateId(String),
    #[error("split ratios must be three non-negative values summing to 1, got {0:?}")]
    Ratios(Vec<f64>),
    #[error("few-shot pool for {qtype} has {available} questions, {requested} requested")]
    FewshotPool {
        qtype: QType,
        available: usize,
        requested: usize,
    },
    #[error("cutoff fraction must be in (0, 1], got {0}")]
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QType {
    YesNo,
    Factoid,
    List,
    Summary,
}

impl QType {
    pub const ALL: [QType; 4] = [QType::YesNo, QType::Factoid, QType::List, QType::Summary];

    pub fn as_str(self) -> &'static str {
        match self {
            QType::YesNo => "yesno",
            QType::Factoid => "factoid",
            QType::List => "list",
            QType::Summary => "summary",
        }
    }
}

impl std::fmt::Display for QType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for QType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QType::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| format!("unknown question type {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub pmid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub body: String,
    pub qtype: QType,
    /// Gold pmids in file order, without repeats.
    pub gold_documents: Vec<String>,
    pub snippets: Vec<Snippet>,
    /// `None` when the file carries no exact answer (e.g. test batches).
    pub exact_answer: Option<GoldExact>,
    pub ideal_answer: Option<String>,
    /// The question object as read, for writing splits back out.
    pub raw: Value,
}

impl Question {
    pub fn gold_set(&self) -> GoldDocs {
        self.gold_documents.iter().cloned().collect()
    }

    pub fn snippet_texts(&self) -> Vec<String> {
        self.snippets.iter().map(|s| s.text.clone()).collect()
    }
}

/// Extracts the pmid from a `.../pubmed/<digits>` URL.
pub fn pmid_from_url(url: &str) -> Option<&str> {
    let tail = &url[url.rfind("/pubmed/")? + "/pubmed/".len()..];
    let tail = tail.trim_end_matches('/');
    (!tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit())).then_some(tail)
}

fn strings(v: &Value) -> Option<Vec<String>> {
    v.as_array()?
        .iter()
        .map(|x| x.as_str().map(str::to_string))
        .collect()
}

/// Factoid: a flat array is one synonym group, nested arrays are groups.
/// List: nested arrays are groups, a flat array is one group per item.
fn synonym_groups(v: &Value, qtype: QType) -> Result<Vec<Vec<String>>, String> {
    let arr = match v {
        Value::String(s) => return Ok(vec![vec![s.clone()]]),
        Value::Array(a) => a,
        _ => return Err("expected a string or an array".into()),
    };
    if arr.iter().all(Value::is_string) {
        let flat = strings(v).expect("all strings");
        return Ok(match qtype {
            QType::Factoid if !flat.is_empty() => vec![flat],
            _ => flat.into_iter().map(|s| vec![s]).collect(),
        });
    }
    let groups: Vec<Vec<String>> = arr
        .iter()
        .map(|g| match g {
            Value::String(s) => Some(vec![s.clone()]),
            other => strings(other),
        })
        .collect::<Option<_>>()
        .ok_or("groups must be arrays of strings")?;
    if groups.iter().any(Vec::is_empty) {
        return Err("empty synonym group".into());
    }
    Ok(groups)
}

fn parse_exact(id: &str, qtype: QType, v: Option<&Value>) -> Result<Option<GoldExact>, DatasetError> {
    let bad = |reason: String| DatasetError::BadExactAnswer {
        id: id.to_string(),
        reason,
    };
    if qtype == QType::Summary {
        return Ok(Some(GoldExact::Summary));
    }
    let Some(v) = v.filter(|v| !v.is_null()) else {
        return Ok(None);
    };
    Ok(Some(match qtype {
        QType::YesNo => {
            let s = v.as_str().ok_or_else(|| bad("yes/no answer must be a string".into()))?;
            GoldExact::YesNo(s.parse::<YesNo>().map_err(|e| bad(e.to_string()))?)
        }
        QType::Factoid => GoldExact::Factoid(synonym_groups(v, qtype).map_err(bad)?),
        QType::List => GoldExact::List(synonym_groups(v, qtype).map_err(bad)?),
        QType::Summary => unreachable!(),
    }))
}

fn parse_question(v: &Value, path: &str) -> Result<Question, DatasetError> {
    let field = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
    let format = |message: String| DatasetError::Format {
        path: path.to_string(),
        message,
    };
    let id = field("id").ok_or_else(|| format("question without a string id".into()))?;
    let body = field("body").ok_or_else(|| format(format!("question {id} has no body")))?;
    let qtype_raw = field("type").ok_or_else(|| format(format!("question {id} has no type")))?;
    let qtype = qtype_raw.parse().map_err(|_| DatasetError::UnknownType {
        id: id.clone(),
        qtype: qtype_raw,
    })?;
    let mut q = Question {
        id,
        body,
        qtype,
        gold_documents: Vec::new(),
        snippets: Vec::new(),
        exact_answer: None,
        ideal_answer: None,
        raw: v.clone(),
    };
    let mut bad_urls = Vec::new();
    let mut seen = HashSet::new();
    for url in v.get("documents").and_then(Value::as_array).into_iter().flatten() {
        match url.as_str().and_then(pmid_from_url) {
            Some(p) => {
                if seen.insert(p.to_string()) {
                    q.gold_documents.push(p.to_string());
                }
            }
            None => bad_urls.push(url.to_string()),
        }
    }
    for s in v.get("snippets").and_then(Value::as_array).into_iter().flatten() {
        let url = s.get("document").and_then(Value::as_str).unwrap_or_default();
        match pmid_from_url(url) {
            Some(p) => q.snippets.push(Snippet {
                pmid: p.to_string(),
                text: s.get("text").and_then(Value::as_str).unwrap_or_default().to_string(),
            }),
            None => bad_urls.push(url.to_string()),
        }
    }
    if !bad_urls.is_empty() {
        return Err(DatasetError::BadDocumentUrls {
            id: q.id.clone(),
            urls: bad_urls,
        });
    }
    q.exact_answer = parse_exact(&q.id, q.qtype, v.get("exact_answer"))?;
    q.ideal_answer = match v.get("ideal_answer") {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Array(a)) => a.iter().find_map(Value::as_str).map(str::to_string),
        _ => None,
    };
    Ok(q)
}

pub fn parse_bioasq(text: &str, path: &str) -> Result<Vec<Question>, DatasetError> {
    let format = |message: String| DatasetError::Format {
        path: path.to_string(),
        message,
    };
    let doc: Value = serde_json::from_str(text).map_err(|e| format(e.to_string()))?;
    let items = doc
        .get("questions")
        .and_then(Value::as_array)
        .ok_or_else(|| format("missing top-level \"questions\" array".into()))?;
    let mut ids = HashSet::new();
    let mut out = Vec::with_capacity(items.len());
    for v in items {
        let q = parse_question(v, path)?;
        if !ids.insert(q.id.clone()) {
            return Err(DatasetError::DuplicateId(q.id));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn load_bioasq(path: &Path) -> Result<Vec<Question>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bioasq(&text, &path.display().to_string())
}

/// Writes questions back in BioASQ shape, each object as originally read.
pub fn save_bioasq(path: &Path, questions: &[Question]) -> Result<(), DatasetError> {
    let doc = serde_json::json!({ "questions": questions.iter().map(|q| &q.raw).collect::<Vec<_>>() });
    let text = serde_json::to_string_pretty(&doc).expect("json values serialize");
    fs::write(path, text + "\n").map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn gold_docs_map(questions: &[Question]) -> HashMap<String, GoldDocs> {
    questions.iter().map(|q| (q.id.clone(), q.gold_set())).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<Question>,
    pub val: Vec<Question>,
    pub test: Vec<Question>,
}

fn check_ratios(ratios: [f64; 3]) -> Result<(), DatasetError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Ratios(ratios.to_vec()));
    }
    Ok(())
}

/// Per-type split sizes by largest remainder. Remainder ties go to the split
/// furthest below its global target, then to the earlier split.
pub fn split_sizes(type_counts: &[usize], ratios: [f64; 3]) -> Vec<[usize; 3]> {
    let total: usize = type_counts.iter().filter(|&&n| n >= MIN_PER_TYPE_FOR_SPLIT).sum();
    let mut assigned = [0usize; 3];
    let mut out = Vec::with_capacity(type_counts.len());
    for &n in type_counts {
        if n < MIN_PER_TYPE_FOR_SPLIT {
            out.push([n, 0, 0]);
            continue;
        }
        let ideal: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
        let mut sizes = [0usize; 3];
        for i in 0..3 {
            sizes[i] = ideal[i].floor() as usize;
        }
        let mut left = n - sizes.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        let deficit = |i: usize| ratios[i] * total as f64 - (assigned[i] + sizes[i]) as f64;
        order.sort_by(|&a, &b| {
            let fa = ideal[a] - ideal[a].floor();
            let fb = ideal[b] - ideal[b].floor();
            fb.total_cmp(&fa)
                .then_with(|| deficit(b).total_cmp(&deficit(a)))
                .then_with(|| a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if ratios[i] > 0.0 {
                sizes[i] += 1;
                left -= 1;
            }
        }
        for i in 0..3 {
            assigned[i] += sizes[i];
        }
        out.push(sizes);
    }
    out
}

/// Question-level split stratified by type. Membership is seeded; each split
/// keeps file order.
pub fn stratified_split(questions: &[Question], ratios: [f64; 3], seed: u64) -> Result<Split, DatasetError> {
    check_ratios(ratios)?;
    let by_type: Vec<Vec<usize>> = QType::ALL
        .iter()
        .map(|t| (0..questions.len()).filter(|&i| questions[i].qtype == *t).collect())
        .collect();
    let counts: Vec<usize> = by_type.iter().map(Vec::len).collect();
    let sizes = split_sizes(&counts, ratios);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bucket = vec![0u8; questions.len()];
    for (t, idxs) in by_type.iter().enumerate() {
        if !idxs.is_empty() && idxs.len() < MIN_PER_TYPE_FOR_SPLIT {
            log::warn!(
                "only {} {} questions; all assigned to train",
                idxs.len(),
                QType::ALL[t]
            );
        }
        let mut shuffled = idxs.clone();
        shuffled.shuffle(&mut rng);
        let [tr, va, _] = sizes[t];
        for (pos, &i) in shuffled.iter().enumerate() {
            bucket[i] = if pos < tr {
                0
            } else if pos < tr + va {
                1
            } else {
                2
            };
        }
    }
    let mut split = Split::default();
    for (q, b) in questions.iter().zip(bucket) {
        match b {
            0 => split.train.push(q.clone()),
            1 => split.val.push(q.clone()),
            _ => split.test.push(q.clone()),
        }
    }
    Ok(split)
}

/// Keeps the last `ceil(fraction * n)` questions (file order as age).
pub fn filter_recent(questions: &[Question], fraction: f64) -> Result<Vec<Question>, DatasetError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DatasetError::Fraction(fraction));
    }
    let keep = ((fraction * questions.len() as f64).ceil() as usize).min(questions.len());
    Ok(questions[questions.len() - keep..].to_vec())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub question_id: String,
    pub pmid: String,
    pub label: u8,
}

fn sort_pairs(pairs: &mut [TrainingPair]) {
    pairs.sort_by(|a, b| {
        a.question_id
            .cmp(&b.question_id)
            .then_with(|| b.label.cmp(&a.label))
            .then_with(|| cmp_pmid(&a.pmid, &b.pmid))
    });
}

/// Positives: every gold document. Negatives: top-`depth` retrieved minus gold.
pub fn mine_hard_negatives(question: &Question, retrieved: &RankedRun, depth: usize) -> Vec<TrainingPair> {
    if question.gold_documents.is_empty() {
        log::warn!("question {} has no gold documents; skipped", question.id);
        return Vec::new();
    }
    let gold = question.gold_set();
    let pair = |pmid: &str, label| TrainingPair {
        question_id: question.id.clone(),
        pmid: pmid.to_string(),
        label,
    };
    let mut pairs: Vec<TrainingPair> = question.gold_documents.iter().map(|p| pair(p, 1)).collect();
    pairs.extend(retrieved.pmids().take(depth).filter(|p| !gold.contains(*p)).map(|p| pair(p, 0)));
    sort_pairs(&mut pairs);
    pairs
}

/// Mines every question; questions without a run get positives only.
pub fn mine_all(questions: &[Question], runs: &[RankedRun], depth: usize, exec: Execution) -> Vec<TrainingPair> {
    let by_id: HashMap<&str, &RankedRun> = runs.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let mut pairs: Vec<TrainingPair> = par::map(exec, questions, |q| {
        let empty = RankedRun::new(q.id.clone(), crate::run::Stage::Retrieval, Vec::new());
        mine_hard_negatives(q, by_id.get(q.id.as_str()).copied().unwrap_or(&empty), depth)
    })
    .into_iter()
    .flatten()
    .collect();
    sort_pairs(&mut pairs);
    pairs
}

fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Writes `question_id, pmid, label, question_text, doc_text` rows. Pairs
/// whose document is missing from the corpus are skipped; returns the
/// number of rows written.
pub fn write_pairs_tsv<W: Write>(
    mut out: W,
    pairs: &[TrainingPair],
    questions: &[Question],
    corpus: &CorpusMap,
) -> io::Result<usize> {
    let bodies: HashMap<&str, &str> = questions.iter().map(|q| (q.id.as_str(), q.body.as_str())).collect();
    let mut written = 0;
    let mut missing = 0;
    for p in pairs {
        let (Some(doc), Some(body)) = (corpus.get(&p.pmid), bodies.get(p.question_id.as_str())) else {
            missing += 1;
            continue;
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            tsv_field(&p.question_id),
            p.pmid,
            p.label,
            tsv_field(body),
            tsv_field(&doc.title_and_abstract())
        )?;
        written += 1;
    }
    if missing > 0 {
        log::warn!("{missing} training pairs skipped: document or question not found");
    }
    out.flush()?;
    Ok(written)
}

/// A solved example for few-shot prompting.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotExample {
    pub snippets: Vec<String>,
    pub body: String,
    pub exact_answer: Option<GoldExact>,
    pub ideal_answer: Option<String>,
}

impl From<&Question> for FewShotExample {
    fn from(q: &Question) -> Self {
        Self {
            snippets: q.snippet_texts(),
            body: q.body.clone(),
            exact_answer: q.exact_answer.clone(),
            ideal_answer: q.ideal_answer.clone(),
        }
    }
}

/// Seeded sample of `n` distinct questions of `qtype`, in pool order.
pub fn sample_fewshot(pool: &[Question], qtype: QType, n: usize, seed: u64) -> Result<Vec<FewShotExample>, DatasetError> {
    let candidates: Vec<&Question> = pool.iter().filter(|q| q.qtype == qtype).collect();
    if candidates.len() < n {
        return Err(DatasetError::FewshotPool {
            qtype,
            available: candidates.len(),
            requested: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, candidates.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| FewShotExample::from(candidates[i])).collect())
}
