//! Answer-generation prompts (system preamble, few-shot turns, query and
//! answer-formatting templates) and parsing of model answers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::ChatMessage;
use crate::dataset::{FewShotExample, QType, Question};
use crate::metrics::{normalize_answer, GoldExact, PredictedExact, YesNo};
use crate::rerank::truncate_chars;

pub const DEFAULT_SNIPPET_BUDGET: usize = 12_000;
pub const MAX_FACTOID_ENTITIES: usize = 5;
pub const MAX_LIST_ITEM_CHARS: usize = 100;

pub const TEMPLATE_FILES: [&str; 8] = [
    "system.txt",
    "aft1_yesno_exact.txt",
    "aft1_factoid_exact.txt",
    "aft1_list_exact.txt",
    "aft1_ideal.txt",
    "aft2_list.txt",
    "aft2_factoid.txt",
    "aft2_summary.txt",
];
pub const MANIFEST_FILE: &str = "MANIFEST.sha256";

const EMBEDDED: [&str; 8] = [
    include_str!("../assets/templates/system.txt"),
    include_str!("../assets/templates/aft1_yesno_exact.txt"),
    include_str!("../assets/templates/aft1_factoid_exact.txt"),
    include_str!("../assets/templates/aft1_list_exact.txt"),
    include_str!("../assets/templates/aft1_ideal.txt"),
    include_str!("../assets/templates/aft2_list.txt"),
    include_str!("../assets/templates/aft2_factoid.txt"),
    include_str!("../assets/templates/aft2_summary.txt"),
];
const EMBEDDED_MANIFEST: &str = include_str!("../assets/templates/MANIFEST.sha256");

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("style must be 1, 2 or 3, got {0}")]
    Style(u8),
    #[error("summary questions have no exact answer")]
    SummaryExact,
    #[error("{expected} few-shot examples required, {got} given")]
    ShotCount { expected: usize, got: usize },
    #[error("question {0} has no snippets")]
    NoSnippets(String),
    #[error("question {0}: style 2/3 ideal prompt needs an exact answer for the hint")]
    MissingHint(String),
    #[error("few-shot example lacks the gold {0} answer")]
    FewShotAnswer(&'static str),
    #[error("cannot parse {qtype} answer from {raw:?}")]
    Unparseable { qtype: QType, raw: String },
    #[error("template {file}: {message}")]
    Template { file: String, message: String },
    #[error("question {id}: {qtype} question cannot take a {got} exact answer")]
    ShapeMismatch { id: String, qtype: QType, got: &'static str },
    #[error("answer for unknown question {0}")]
    UnknownQuestion(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Exact,
    Ideal,
}

impl std::str::FromStr for AnswerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(AnswerKind::Exact),
            "ideal" => Ok(AnswerKind::Ideal),
            other => Err(format!("unknown answer kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub style: u8,
    pub n_shots: usize,
    pub qtype: QType,
    pub kind: AnswerKind,
}

impl PromptSpec {
    /// (query template, formatting template) for the style.
    pub fn templates(&self) -> Result<(u8, u8), PromptError> {
        match self.style {
            1 => Ok((1, 1)),
            2 => Ok((2, 1)),
            3 => Ok((2, 2)),
            s => Err(PromptError::Style(s)),
        }
    }
}

/// The text assets, either compiled in or loaded from a directory whose
/// manifest must match.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    texts: BTreeMap<&'static str, String>,
}

fn parse_manifest(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let (hash, file) = l.split_once("  ")?;
            Some((file.trim().to_string(), hash.trim().to_string()))
        })
        .collect()
}

fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

impl TemplateSet {
    fn checked(files: Vec<(&'static str, String)>, manifest: &str) -> Result<Self, PromptError> {
        let sums = parse_manifest(manifest);
        for (name, text) in &files {
            let err = |message: String| PromptError::Template {
                file: name.to_string(),
                message,
            };
            let want = sums.get(*name).ok_or_else(|| err("not listed in manifest".into()))?;
            let got = sha256_hex(text.as_bytes());
            if &got != want {
                return Err(err(format!("checksum {got} does not match manifest {want}")));
            }
        }
        Ok(Self {
            texts: files.into_iter().map(|(n, t)| (n, t.trim_end().to_string())).collect(),
        })
    }

    pub fn embedded() -> Self {
        let files = TEMPLATE_FILES.iter().copied().zip(EMBEDDED.iter().map(|s| s.to_string())).collect();
        Self::checked(files, EMBEDDED_MANIFEST).expect("embedded templates match their manifest")
    }

    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|e| PromptError::Template {
                file: dir.join(name).display().to_string(),
                message: e.to_string(),
            })
        };
        let manifest = read(MANIFEST_FILE)?;
        let files = TEMPLATE_FILES
            .iter()
            .map(|n| Ok((*n, read(n)?)))
            .collect::<Result<Vec<_>, PromptError>>()?;
        Self::checked(files, &manifest)
    }

    pub fn get(&self, name: &str) -> &str {
        &self.texts[name]
    }

    pub fn system(&self) -> &str {
        self.get("system.txt")
    }

    /// Instruction block appended to each query.
    pub fn formatting_block(&self, qtype: QType, kind: AnswerKind, template: u8) -> Result<String, PromptError> {
        let base = match (kind, qtype) {
            (AnswerKind::Exact, QType::Summary) => return Err(PromptError::SummaryExact),
            (AnswerKind::Exact, QType::YesNo) => self.get("aft1_yesno_exact.txt"),
            (AnswerKind::Exact, QType::Factoid) => self.get("aft1_factoid_exact.txt"),
            (AnswerKind::Exact, QType::List) => self.get("aft1_list_exact.txt"),
            (AnswerKind::Ideal, _) => self.get("aft1_ideal.txt"),
        };
        let extra = match (template, kind, qtype) {
            (1, _, _) => None,
            (2, AnswerKind::Exact, QType::List) => Some(self.get("aft2_list.txt")),
            (2, AnswerKind::Exact, QType::Factoid) => Some(self.get("aft2_factoid.txt")),
            (2, AnswerKind::Exact, _) => None,
            (2, AnswerKind::Ideal, _) => Some(self.get("aft2_summary.txt")),
            (t, _, _) => return Err(PromptError::Style(t)),
        };
        Ok(match extra {
            Some(e) => format!("{base}\n{e}"),
            None => base.to_string(),
        })
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::embedded()
    }
}

/// Joins snippets with newlines, dropping whole snippets from the end to fit
/// `budget` characters. A lone oversized first snippet is cut to the budget.
pub fn join_snippets(snippets: &[String], budget: usize) -> String {
    let mut out = String::new();
    let mut used = 0;
    for (i, s) in snippets.iter().enumerate() {
        let len = s.chars().count() + usize::from(i > 0);
        if used + len > budget {
            if i == 0 {
                return truncate_chars(s, budget).to_string();
            }
            break;
        }
        if i > 0 {
            out.push('\n');
        }
        out.push_str(s);
        used += len;
    }
    out
}

/// Text used for the hint: first synonym of each group, comma-separated.
pub fn hint_text(exact: &GoldExact) -> Option<String> {
    match exact {
        GoldExact::YesNo(v) => Some(v.as_str().to_string()),
        GoldExact::Factoid(g) | GoldExact::List(g) => {
            let names: Vec<&str> = g.iter().filter_map(|s| s.first().map(String::as_str)).collect();
            (!names.is_empty()).then(|| names.join(", "))
        }
        GoldExact::Summary => None,
    }
}

fn query_text(
    templates: &TemplateSet,
    spec: &PromptSpec,
    snippets: &[String],
    body: &str,
    hint: Option<&str>,
    snippet_budget: usize,
) -> Result<String, PromptError> {
    let (qt, aft) = spec.templates()?;
    let block = templates.formatting_block(spec.qtype, spec.kind, aft)?;
    let passage = join_snippets(snippets, snippet_budget);
    let question = match hint {
        Some(h) if qt == 2 && spec.kind == AnswerKind::Ideal && spec.qtype != QType::Summary => {
            format!("{body} (Hint: short answer is {h})")
        }
        _ => body.to_string(),
    };
    Ok(format!("Passage: {passage}\nQuestion: {question}\n{block}"))
}

fn needs_hint(spec: &PromptSpec) -> Result<bool, PromptError> {
    Ok(spec.templates()?.0 == 2 && spec.kind == AnswerKind::Ideal && spec.qtype != QType::Summary)
}

/// Gold answer of a few-shot example as the assistant turn.
fn example_answer(ex: &FewShotExample, spec: &PromptSpec) -> Result<String, PromptError> {
    if spec.kind == AnswerKind::Ideal {
        return ex.ideal_answer.clone().ok_or(PromptError::FewShotAnswer("ideal"));
    }
    let full_lists = spec.templates()?.0 == 2;
    match (&ex.exact_answer, spec.qtype) {
        (Some(GoldExact::YesNo(v)), QType::YesNo) => Ok(v.as_str().to_string()),
        (Some(GoldExact::Factoid(g)), QType::Factoid) => Ok(g
            .iter()
            .filter_map(|s| s.first().cloned())
            .take(MAX_FACTOID_ENTITIES)
            .collect::<Vec<_>>()
            .join("\n")),
        (Some(GoldExact::List(g)), QType::List) => {
            let take = if full_lists { g.len() } else { 1 };
            Ok(g.iter().filter_map(|s| s.first().cloned()).take(take).collect::<Vec<_>>().join("\n"))
        }
        _ => Err(PromptError::FewShotAnswer("exact")),
    }
}

/// `[system, (user, assistant) × n, user]`. `hint` is the system exact
/// answer for style 2/3 ideal prompts on non-summary questions.
pub fn build_prompt(
    templates: &TemplateSet,
    question: &Question,
    snippets: &[String],
    spec: &PromptSpec,
    fewshot: &[FewShotExample],
    hint: Option<&str>,
    snippet_budget: usize,
) -> Result<Vec<ChatMessage>, PromptError> {
    if fewshot.len() != spec.n_shots {
        return Err(PromptError::ShotCount {
            expected: spec.n_shots,
            got: fewshot.len(),
        });
    }
    if snippets.is_empty() {
        return Err(PromptError::NoSnippets(question.id.clone()));
    }
    let hinted = needs_hint(spec)?;
    if hinted && hint.is_none() {
        return Err(PromptError::MissingHint(question.id.clone()));
    }
    let mut messages = vec![ChatMessage::system(templates.system())];
    for ex in fewshot {
        let ex_hint = if hinted {
            ex.exact_answer.as_ref().and_then(hint_text)
        } else {
            None
        };
        messages.push(ChatMessage::user(query_text(
            templates,
            spec,
            &ex.snippets,
            &ex.body,
            ex_hint.as_deref(),
            snippet_budget,
        )?));
        messages.push(ChatMessage::assistant(example_answer(ex, spec)?));
    }
    messages.push(ChatMessage::user(query_text(
        templates,
        spec,
        snippets,
        &question.body,
        hint,
        snippet_budget,
    )?));
    Ok(messages)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "value")]
pub enum ExactAnswer {
    YesNo(YesNo),
    Factoid(Vec<String>),
    List(Vec<String>),
}

impl ExactAnswer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ExactAnswer::YesNo(_) => "yesno",
            ExactAnswer::Factoid(_) => "factoid",
            ExactAnswer::List(_) => "list",
        }
    }

    /// One entity per line, the form the model is asked to produce.
    pub fn to_text(&self) -> String {
        match self {
            ExactAnswer::YesNo(v) => v.as_str().to_string(),
            ExactAnswer::Factoid(items) | ExactAnswer::List(items) => items.join("\n"),
        }
    }

    pub fn to_predicted(&self) -> PredictedExact {
        match self {
            ExactAnswer::YesNo(v) => PredictedExact::YesNo(Some(*v)),
            ExactAnswer::Factoid(v) => PredictedExact::Factoid(v.clone()),
            ExactAnswer::List(v) => PredictedExact::List(v.clone()),
        }
    }

    /// Hint text for style 2/3 ideal prompts.
    pub fn hint(&self) -> String {
        match self {
            ExactAnswer::YesNo(v) => v.as_str().to_string(),
            ExactAnswer::Factoid(items) | ExactAnswer::List(items) => items.join(", "),
        }
    }
}

fn strip_marker(item: &str) -> &str {
    let t = item.trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r;
        }
    }
    t.trim_start_matches(['-', '*', '•', '–'])
}

fn split_entities(raw: &str) -> Vec<String> {
    let trimmed = raw.trim();
    if trimmed.starts_with('[') {
        if let Ok(Value::Array(items)) = serde_json::from_str::<Value>(trimmed) {
            let flat: Vec<String> = items
                .iter()
                .filter_map(|v| match v {
                    Value::String(s) => Some(s.clone()),
                    Value::Array(inner) => inner.first().and_then(Value::as_str).map(str::to_string),
                    _ => None,
                })
                .collect();
            if !flat.is_empty() {
                return flat;
            }
        }
    }
    let lines: Vec<&str> = trimmed.lines().filter(|l| !l.trim().is_empty()).collect();
    let pieces: Vec<&str> = if lines.len() == 1 {
        lines[0].split([',', ';']).collect()
    } else {
        lines
    };
    pieces.into_iter().map(|p| strip_marker(p).to_string()).collect()
}

fn entities(raw: &str, cap: Option<usize>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in split_entities(raw) {
        let norm = normalize_answer(&item);
        let norm = normalize_answer(truncate_chars(&norm, MAX_LIST_ITEM_CHARS));
        if norm.is_empty() || !seen.insert(norm.clone()) {
            continue;
        }
        out.push(norm);
        if cap.is_some_and(|c| out.len() >= c) {
            break;
        }
    }
    out
}

pub fn parse_exact_answer(raw: &str, qtype: QType) -> Result<ExactAnswer, PromptError> {
    let fail = || PromptError::Unparseable {
        qtype,
        raw: raw.to_string(),
    };
    match qtype {
        QType::YesNo => {
            let lower = raw.trim().to_lowercase();
            let core = lower.trim_matches(|c: char| !c.is_alphanumeric());
            match core {
                "yes" => return Ok(ExactAnswer::YesNo(YesNo::Yes)),
                "no" => return Ok(ExactAnswer::YesNo(YesNo::No)),
                _ => {}
            }
            if lower.starts_with("yes,") {
                Ok(ExactAnswer::YesNo(YesNo::Yes))
            } else if lower.starts_with("no,") {
                Ok(ExactAnswer::YesNo(YesNo::No))
            } else {
                Err(fail())
            }
        }
        QType::Factoid => {
            let e = entities(raw, Some(MAX_FACTOID_ENTITIES));
            if e.is_empty() {
                Err(fail())
            } else {
                Ok(ExactAnswer::Factoid(e))
            }
        }
        QType::List => {
            let e = entities(raw, None);
            if e.is_empty() {
                Err(fail())
            } else {
                Ok(ExactAnswer::List(e))
            }
        }
        QType::Summary => Err(PromptError::SummaryExact),
    }
}

/// One question's system answers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnswerRecord {
    pub exact: Option<ExactAnswer>,
    pub ideal: Option<String>,
}

/// `{"questions": [{"id", "exact_answer"?, "ideal_answer"?}]}` in question order.
pub fn render_answers_file(questions: &[Question], answers: &HashMap<String, AnswerRecord>) -> Result<Value, PromptError> {
    let known: HashSet<&str> = questions.iter().map(|q| q.id.as_str()).collect();
    let mut unknown: Vec<&String> = answers.keys().filter(|k| !known.contains(k.as_str())).collect();
    unknown.sort();
    if let Some(id) = unknown.first() {
        return Err(PromptError::UnknownQuestion(id.to_string()));
    }
    let mut out = Vec::new();
    for q in questions {
        let Some(a) = answers.get(&q.id) else { continue };
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), json!(q.id));
        let mismatch = |got: &'static str| PromptError::ShapeMismatch {
            id: q.id.clone(),
            qtype: q.qtype,
            got,
        };
        match (&a.exact, q.qtype) {
            (None, _) => {}
            (Some(e), QType::Summary) => return Err(mismatch(e.kind_name())),
            (Some(ExactAnswer::YesNo(v)), QType::YesNo) => {
                obj.insert("exact_answer".into(), json!(v.as_str()));
            }
            (Some(ExactAnswer::Factoid(items)), QType::Factoid) | (Some(ExactAnswer::List(items)), QType::List) => {
                let nested: Vec<Vec<&String>> = items.iter().map(|i| vec![i]).collect();
                obj.insert("exact_answer".into(), json!(nested));
            }
            (Some(e), _) => return Err(mismatch(e.kind_name())),
        }
        if let Some(ideal) = &a.ideal {
            obj.insert("ideal_answer".into(), json!(ideal));
        }
        out.push(Value::Object(obj));
    }
    Ok(json!({ "questions": out }))
}

/// Exact and ideal predictions for one question.
pub type Prediction = (Option<PredictedExact>, Option<String>);

/// Reads a submission back into per-question predictions.
pub fn read_answers_file(value: &Value, questions: &[Question]) -> Result<HashMap<String, Prediction>, PromptError> {
    let types: HashMap<&str, QType> = questions.iter().map(|q| (q.id.as_str(), q.qtype)).collect();
    let mut out = HashMap::new();
    for item in value.get("questions").and_then(Value::as_array).into_iter().flatten() {
        let id = item.get("id").and_then(Value::as_str).unwrap_or_default();
        let qtype = *types.get(id).ok_or_else(|| PromptError::UnknownQuestion(id.to_string()))?;
        let exact = item.get("exact_answer");
        let names = || -> Vec<String> {
            exact
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
                .filter_map(|v| match v {
                    Value::String(s) => Some(s.clone()),
                    Value::Array(a) => a.first().and_then(Value::as_str).map(str::to_string),
                    _ => None,
                })
                .collect()
        };
        let predicted = match qtype {
            QType::YesNo => Some(PredictedExact::YesNo(
                exact.and_then(Value::as_str).and_then(|s| s.parse().ok()),
            )),
            QType::Factoid => exact.map(|_| PredictedExact::Factoid(names())),
            QType::List => exact.map(|_| PredictedExact::List(names())),
            QType::Summary => None,
        };
        let ideal = item.get("ideal_answer").and_then(|v| match v {
            Value::String(s) => Some(s.clone()),
            Value::Array(a) => a.first().and_then(Value::as_str).map(str::to_string),
            _ => None,
        });
        out.insert(id.to_string(), (predicted, ideal));
    }
    Ok(out)
}
