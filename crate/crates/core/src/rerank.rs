//! Two-stage re-ranking: pointwise relevance scoring of retrieved candidates,
//! then a listwise chat-model pass that reorders the top candidates.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ChatMessage, ClientError, ServiceClient};
use crate::corpus::CorpusMap;
use crate::fusion::rank_points_scores;
use crate::par::{self, Execution};
use crate::run::{sort_items, RankedItem, RankedRun, Stage};

pub const DEFAULT_DOC_CHAR_BUDGET: usize = 1200;
pub const MAX_LISTWISE_CANDIDATES: usize = 30;
/// Pairs per `/score` request.
pub const SCORE_REQUEST_BATCH: usize = 64;

pub const LISTWISE_SYSTEM: &str =
    "You are a biomedical literature search assistant. You rank PubMed abstracts by how well they help answer a question.";

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("question {question_id}: no candidates to re-rank")]
    EmptyCandidates { question_id: String },
    #[error("question {question_id}: {count} candidates exceed the listwise limit of {MAX_LISTWISE_CANDIDATES}")]
    TooManyCandidates { question_id: String, count: usize },
    #[error("question {question_id}: pmid {pmid} is not in the corpus")]
    MissingDocument { question_id: String, pmid: String },
    #[error("question {question_id}: no question text available")]
    MissingQuestion { question_id: String },
    #[error("question {question_id}: scorer failed: {source}")]
    Scorer {
        question_id: String,
        #[source]
        source: ClientError,
    },
    #[error("question {question_id}: chat model failed: {source}")]
    Chat {
        question_id: String,
        #[source]
        source: ClientError,
    },
    #[error("writing audit log {path}: {source}")]
    Audit {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RerankError {
    pub fn is_upstream(&self) -> bool {
        matches!(self, RerankError::Scorer { .. } | RerankError::Chat { .. })
    }
}

/// Scores (query, document) pairs; one score per document, aligned by position.
pub trait PairScorer: Send + Sync {
    fn score(&self, query: &str, docs: &[(String, String)]) -> Result<Vec<f64>, ClientError>;
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError>;
}

impl PairScorer for ServiceClient {
    fn score(&self, query: &str, docs: &[(String, String)]) -> Result<Vec<f64>, ClientError> {
        self.score_pairs(query, docs)
    }
}

impl ChatModel for ServiceClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        self.chat(messages)
    }
}

fn doc_text<'a>(corpus: &'a CorpusMap, question_id: &str, pmid: &str) -> Result<&'a crate::corpus::Document, RerankError> {
    corpus.get(pmid).ok_or_else(|| RerankError::MissingDocument {
        question_id: question_id.to_string(),
        pmid: pmid.to_string(),
    })
}

/// Scores every candidate, sorts by score (ties: smaller pmid) and keeps `k`.
pub fn pointwise_rerank(
    question: &str,
    candidates: &RankedRun,
    corpus: &CorpusMap,
    scorer: &dyn PairScorer,
    k: usize,
) -> Result<RankedRun, RerankError> {
    let qid = candidates.question_id.as_str();
    if k == 0 {
        return Err(RerankError::ZeroK);
    }
    if candidates.is_empty() {
        return Err(RerankError::EmptyCandidates {
            question_id: qid.to_string(),
        });
    }
    let docs = candidates
        .pmids()
        .map(|p| Ok((p.to_string(), doc_text(corpus, qid, p)?.title_and_abstract())))
        .collect::<Result<Vec<_>, RerankError>>()?;
    let mut items = Vec::with_capacity(docs.len());
    for chunk in docs.chunks(SCORE_REQUEST_BATCH) {
        let scores = scorer.score(question, chunk).map_err(|source| RerankError::Scorer {
            question_id: qid.to_string(),
            source,
        })?;
        if scores.len() != chunk.len() {
            return Err(RerankError::Scorer {
                question_id: qid.to_string(),
                source: ClientError::Protocol(format!("{} scores for {} documents", scores.len(), chunk.len())),
            });
        }
        items.extend(chunk.iter().zip(scores).map(|((p, _), s)| RankedItem::new(p.clone(), s)));
    }
    sort_items(&mut items);
    items.truncate(k);
    Ok(RankedRun::new(qid, Stage::Crossencoder, items))
}

/// Cuts `text` to at most `budget` characters on a char boundary.
pub fn truncate_chars(text: &str, budget: usize) -> &str {
    match text.char_indices().nth(budget) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

/// System + user message asking for the `min(want, n)` best candidate ordinals.
pub fn build_listwise_prompt(
    question: &str,
    top: &RankedRun,
    corpus: &CorpusMap,
    want: usize,
    doc_char_budget: usize,
) -> Result<Vec<ChatMessage>, RerankError> {
    let qid = top.question_id.as_str();
    if top.is_empty() {
        return Err(RerankError::EmptyCandidates {
            question_id: qid.to_string(),
        });
    }
    if top.len() > MAX_LISTWISE_CANDIDATES {
        return Err(RerankError::TooManyCandidates {
            question_id: qid.to_string(),
            count: top.len(),
        });
    }
    let want = want.max(1).min(top.len());
    let mut user = format!("Question: {}\n\nCandidate documents:\n", question.trim());
    for (i, pmid) in top.pmids().enumerate() {
        let doc = doc_text(corpus, qid, pmid)?;
        let entry = format!("{} — {}", doc.title.trim(), doc.abstract_text.trim());
        user.push_str(&format!("[{}] {}\n", i + 1, truncate_chars(&entry, doc_char_budget)));
    }
    user.push_str(&format!(
        "\nSelect exactly the {want} candidates most relevant to the question, most relevant first. \
         Answer with their numbers as a bracketed comma-separated list, for example [3, 1, 2], and nothing else."
    ));
    Ok(vec![ChatMessage::system(LISTWISE_SYSTEM), ChatMessage::user(user)])
}

fn parse_int_list(inner: &str) -> Option<Vec<&str>> {
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.iter().all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit())) {
        Some(parts)
    } else {
        None
    }
}

/// First bracketed integer list in `raw`, filtered to unique in-range
/// ordinals and capped at `want`. Never fails; no list gives `[]`.
pub fn parse_listwise_response(raw: &str, candidate_count: usize, want: usize) -> Vec<usize> {
    let mut rest = raw;
    let list = loop {
        let Some(open) = rest.find('[') else {
            return Vec::new();
        };
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else {
            return Vec::new();
        };
        let inner = &after[..close];
        // A nested '[' means this bracket did not close a plain list.
        if !inner.contains('[') {
            if let Some(parts) = parse_int_list(inner) {
                break parts;
            }
        }
        rest = after;
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in list {
        if out.len() >= want {
            break;
        }
        let Ok(n) = p.parse::<usize>() else { continue };
        if (1..=candidate_count).contains(&n) && seen.insert(n) {
            out.push(n);
        }
    }
    out
}

/// Audit record of one listwise call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListwisePromptExchange {
    pub question_id: String,
    pub prompt: Vec<ChatMessage>,
    pub raw_response: String,
    pub parsed_order: Vec<usize>,
    pub fallback_fill: usize,
}

/// Applies a parsed ordinal list to `top`, filling from `top`'s own order.
/// Returns the chosen pmids and how many slots were filled.
pub fn apply_listwise_order(top: &RankedRun, order: &[usize], k: usize) -> (Vec<String>, usize) {
    let pmids: Vec<&str> = top.pmids().collect();
    let mut chosen: Vec<String> = Vec::with_capacity(k);
    let mut used = HashSet::new();
    for &o in order {
        if chosen.len() >= k {
            break;
        }
        if let Some(p) = o.checked_sub(1).and_then(|i| pmids.get(i)) {
            if used.insert(*p) {
                chosen.push(p.to_string());
            }
        }
    }
    let from_parse = chosen.len();
    for p in &pmids {
        if chosen.len() >= k {
            break;
        }
        if used.insert(p) {
            chosen.push(p.to_string());
        }
    }
    let fill = chosen.len() - from_parse;
    (chosen, fill)
}

/// Listwise stage over the pointwise top candidates. Scores are rank points
/// `k + 1 - r`. Transport failures are errors; unusable answers are not.
pub fn llm_rerank(
    question: &str,
    top: &RankedRun,
    corpus: &CorpusMap,
    chat: &dyn ChatModel,
    k: usize,
    doc_char_budget: usize,
) -> Result<(RankedRun, ListwisePromptExchange), RerankError> {
    if k == 0 {
        return Err(RerankError::ZeroK);
    }
    let qid = top.question_id.clone();
    let want = k.min(top.len());
    let prompt = build_listwise_prompt(question, top, corpus, want, doc_char_budget)?;
    let raw = chat.complete(&prompt).map_err(|source| RerankError::Chat {
        question_id: qid.clone(),
        source,
    })?;
    let parsed = parse_listwise_response(&raw, top.len(), want);
    let (chosen, fallback_fill) = apply_listwise_order(top, &parsed, k);
    let scores = rank_points_scores(chosen.len(), k);
    let items = chosen.into_iter().zip(scores).map(|(p, s)| RankedItem::new(p, s)).collect();
    let run = RankedRun::new(qid.clone(), Stage::Llm, items);
    let exchange = ListwisePromptExchange {
        question_id: qid,
        prompt,
        raw_response: raw,
        parsed_order: parsed,
        fallback_fill,
    };
    Ok((run, exchange))
}

fn question_text<'a>(questions: &'a HashMap<String, String>, qid: &str) -> Result<&'a str, RerankError> {
    questions
        .get(qid)
        .map(String::as_str)
        .ok_or_else(|| RerankError::MissingQuestion {
            question_id: qid.to_string(),
        })
}

/// Pointwise stage for every run; output order follows `runs`.
pub fn pointwise_batch(
    questions: &HashMap<String, String>,
    runs: &[RankedRun],
    corpus: &CorpusMap,
    scorer: &dyn PairScorer,
    k: usize,
    exec: Execution,
) -> Result<Vec<RankedRun>, RerankError> {
    par::try_map(exec, runs, |run| {
        pointwise_rerank(question_text(questions, &run.question_id)?, run, corpus, scorer, k)
    })
}

pub fn llm_batch(
    questions: &HashMap<String, String>,
    runs: &[RankedRun],
    corpus: &CorpusMap,
    chat: &dyn ChatModel,
    k: usize,
    doc_char_budget: usize,
    exec: Execution,
) -> Result<Vec<(RankedRun, ListwisePromptExchange)>, RerankError> {
    par::try_map(exec, runs, |run| {
        llm_rerank(question_text(questions, &run.question_id)?, run, corpus, chat, k, doc_char_budget)
    })
}

fn audit_file_name(question_id: &str) -> String {
    let safe: String = question_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Writes one pretty-printed exchange per question into `dir`.
pub fn write_audit(dir: &Path, exchanges: &[ListwisePromptExchange]) -> Result<(), RerankError> {
    let io = |path: &Path, source| RerankError::Audit {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for ex in exchanges {
        let path = dir.join(audit_file_name(&ex.question_id));
        let body = serde_json::to_string_pretty(ex).expect("exchange serializes");
        fs::write(&path, body + "\n").map_err(|e| io(&path, e))?;
    }
    Ok(())
}
