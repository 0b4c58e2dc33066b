//! Evaluation metrics for document retrieval (Phase A) and answers (Phase B).
//!
//! Zero denominators yield 0 for precision, recall and F1. Aggregates are
//! compensated means, so they do not depend on question order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::stable_mean;
use crate::run::RankedRun;

pub const AP_CUTOFF: usize = 10;
pub const DEFAULT_RECALL_NS: [usize; 4] = [10, 100, 1000, 10000];
/// Skip-bigram window for ROUGE-SU4: pairs with `j - i <= 4`.
pub const SU4_MAX_GAP: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("question {0} has no gold documents")]
    EmptyGold(String),
    #[error("run for question {question_id} lists pmid {pmid} more than once")]
    DuplicatePmid { question_id: String, pmid: String },
    #[error("question ids differ: only in runs {only_runs:?}, only in gold {only_gold:?}")]
    IdMismatch {
        only_runs: Vec<String>,
        only_gold: Vec<String>,
    },
    #[error("{0} predictions for {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("invalid yes/no label {0:?}")]
    InvalidYesNo(String),
}

pub type GoldDocs = HashSet<String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            YesNo::Yes => YesNo::No,
            YesNo::No => YesNo::Yes,
        }
    }
}

impl std::str::FromStr for YesNo {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "yes" => Ok(YesNo::Yes),
            "no" => Ok(YesNo::No),
            _ => Err(MetricsError::InvalidYesNo(s.to_string())),
        }
    }
}

/// Recall, precision and F1.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

impl Prf {
    pub fn from_counts(overlap: f64, cand: f64, reference: f64) -> Self {
        let recall = ratio(overlap, reference);
        let precision = ratio(overlap, cand);
        Self {
            recall,
            precision,
            f1: f1(precision, recall),
        }
    }

    fn mean(values: &[Prf]) -> Prf {
        let col = |f: fn(&Prf) -> f64| stable_mean(&values.iter().map(f).collect::<Vec<_>>());
        Prf {
            recall: col(|p| p.recall),
            precision: col(|p| p.precision),
            f1: col(|p| p.f1),
        }
    }
}

pub fn recall_at_n(run: &RankedRun, gold: &GoldDocs, n: usize) -> Result<f64, MetricsError> {
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold(run.question_id.clone()));
    }
    let hits = run.pmids().take(n).filter(|p| gold.contains(*p)).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// AP over the first `cutoff` items, normalized by `min(|gold|, cutoff)`.
pub fn average_precision_at(run: &RankedRun, gold: &GoldDocs, cutoff: usize) -> Result<f64, MetricsError> {
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold(run.question_id.clone()));
    }
    let mut seen = HashSet::new();
    let mut relevant = 0usize;
    let mut sum = 0.0;
    for (i, pmid) in run.pmids().take(cutoff).enumerate() {
        if !seen.insert(pmid) {
            return Err(MetricsError::DuplicatePmid {
                question_id: run.question_id.clone(),
                pmid: pmid.to_string(),
            });
        }
        if gold.contains(pmid) {
            relevant += 1;
            sum += relevant as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / gold.len().min(cutoff) as f64)
}

pub fn average_precision_at10(run: &RankedRun, gold: &GoldDocs) -> Result<f64, MetricsError> {
    average_precision_at(run, gold, AP_CUTOFF)
}

fn check_ids<'a>(
    run_ids: impl Iterator<Item = &'a str>,
    gold_ids: impl Iterator<Item = &'a str>,
) -> Result<(), MetricsError> {
    let r: BTreeSet<&str> = run_ids.collect();
    let g: BTreeSet<&str> = gold_ids.collect();
    if r == g {
        return Ok(());
    }
    Err(MetricsError::IdMismatch {
        only_runs: r.difference(&g).map(|s| s.to_string()).collect(),
        only_gold: g.difference(&r).map(|s| s.to_string()).collect(),
    })
}

/// Mean AP@10; runs and gold must cover exactly the same questions.
pub fn map_at10(runs: &[RankedRun], golds: &HashMap<String, GoldDocs>) -> Result<f64, MetricsError> {
    check_ids(runs.iter().map(|r| r.question_id.as_str()), golds.keys().map(String::as_str))?;
    let aps = runs
        .iter()
        .map(|r| average_precision_at10(r, &golds[&r.question_id]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(stable_mean(&aps))
}

/// Lowercase, trim, collapse whitespace, strip surrounding punctuation.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

fn normalized_groups(groups: &[Vec<String>]) -> Vec<HashSet<String>> {
    groups
        .iter()
        .map(|g| g.iter().map(|s| normalize_answer(s)).filter(|s| !s.is_empty()).collect())
        .collect()
}

/// Reciprocal rank of the first prediction matching any synonym group.
pub fn mrr(predicted: &[String], gold: &[Vec<String>]) -> f64 {
    let groups = normalized_groups(gold);
    predicted
        .iter()
        .position(|p| {
            let p = normalize_answer(p);
            groups.iter().any(|g| g.contains(&p))
        })
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// List F1 where each synonym group can be claimed by one prediction.
pub fn list_f1(predicted: &[String], gold: &[Vec<String>]) -> Prf {
    let groups = normalized_groups(gold);
    let mut claimed = vec![false; groups.len()];
    let mut tp = 0usize;
    for p in predicted {
        let p = normalize_answer(p);
        if let Some(i) = (0..groups.len()).find(|&i| !claimed[i] && groups[i].contains(&p)) {
            claimed[i] = true;
            tp += 1;
        }
    }
    Prf::from_counts(tp as f64, predicted.len() as f64, groups.len() as f64)
}

pub fn mean_list_f1(cases: &[(Vec<String>, Vec<Vec<String>>)]) -> f64 {
    let values: Vec<f64> = cases.iter().map(|(p, g)| list_f1(p, g).f1).collect();
    stable_mean(&values)
}

/// `(F1 of "yes" + F1 of "no") / 2`.
pub fn macro_f1_yesno(predictions: &[YesNo], golds: &[YesNo]) -> Result<f64, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), golds.len()));
    }
    let class_f1 = |c: YesNo| {
        let tp = predictions.iter().zip(golds).filter(|(p, g)| **p == c && **g == c).count();
        let pred = predictions.iter().filter(|p| **p == c).count();
        let actual = golds.iter().filter(|g| **g == c).count();
        f1(ratio(tp as f64, pred as f64), ratio(tp as f64, actual as f64))
    };
    Ok((class_f1(YesNo::Yes) + class_f1(YesNo::No)) / 2.0)
}

/// Lowercases, drops non-alphanumerics except hyphens inside a token, and
/// splits on whitespace.
pub fn rouge_tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|chunk| {
            let kept: String = chunk
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '-')
                .flat_map(char::to_lowercase)
                .collect();
            let t = kept.trim_matches('-');
            (!t.is_empty()).then(|| t.to_string())
        })
        .collect()
}

type Unit<'a> = (&'a str, Option<&'a str>);

fn count_units<'a>(tokens: &'a [String], unigrams: bool, max_gap: usize) -> HashMap<Unit<'a>, usize> {
    let mut counts = HashMap::new();
    for (i, a) in tokens.iter().enumerate() {
        if unigrams {
            *counts.entry((a.as_str(), None)).or_insert(0) += 1;
        }
        for b in tokens.iter().skip(i + 1).take(max_gap) {
            *counts.entry((a.as_str(), Some(b.as_str()))).or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_prf(cand: &HashMap<Unit, usize>, reference: &HashMap<Unit, usize>) -> Prf {
    let overlap: usize = cand
        .iter()
        .map(|(u, c)| (*c).min(reference.get(u).copied().unwrap_or(0)))
        .sum();
    let total = |m: &HashMap<Unit, usize>| m.values().sum::<usize>() as f64;
    Prf::from_counts(overlap as f64, total(cand), total(reference))
}

pub fn rouge_2(candidate: &str, reference: &str) -> Prf {
    let c = rouge_tokenize(candidate);
    let r = rouge_tokenize(reference);
    clipped_prf(&count_units(&c, false, 1), &count_units(&r, false, 1))
}

pub fn rouge_su4(candidate: &str, reference: &str) -> Prf {
    let c = rouge_tokenize(candidate);
    let r = rouge_tokenize(reference);
    clipped_prf(&count_units(&c, true, SU4_MAX_GAP), &count_units(&r, true, SU4_MAX_GAP))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAQuestion {
    pub question_id: String,
    pub ap_at10: f64,
    pub recall: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseAReport {
    pub questions: usize,
    pub map_at10: f64,
    pub recall: BTreeMap<String, f64>,
    /// Questions skipped because their gold set is empty.
    pub excluded: Vec<String>,
    pub per_question: Vec<PhaseAQuestion>,
}

/// Evaluates every question with non-empty gold. A question in the gold
/// without a run is scored as an empty run; runs without gold are an error.
pub fn eval_phase_a(
    runs: &[RankedRun],
    golds: &HashMap<String, GoldDocs>,
    recall_ns: &[usize],
) -> Result<PhaseAReport, MetricsError> {
    let by_id: HashMap<&str, &RankedRun> = runs.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let unknown: Vec<String> = by_id
        .keys()
        .filter(|q| !golds.contains_key(**q))
        .map(|q| q.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        return Err(MetricsError::IdMismatch {
            only_runs: unknown,
            only_gold: Vec::new(),
        });
    }
    let mut ids: Vec<&String> = golds.keys().collect();
    ids.sort();
    let mut excluded = Vec::new();
    let mut per_question = Vec::new();
    for qid in ids {
        let gold = &golds[qid];
        if gold.is_empty() {
            log::warn!("question {qid} has no gold documents; excluded from Phase A aggregates");
            excluded.push(qid.clone());
            continue;
        }
        let empty = RankedRun::new(qid.clone(), crate::run::Stage::Retrieval, Vec::new());
        let run = by_id.get(qid.as_str()).copied().unwrap_or(&empty);
        let mut recall = BTreeMap::new();
        for &n in recall_ns {
            recall.insert(format!("recall@{n}"), recall_at_n(run, gold, n)?);
        }
        per_question.push(PhaseAQuestion {
            question_id: qid.clone(),
            ap_at10: average_precision_at10(run, gold)?,
            recall,
        });
    }
    let aps: Vec<f64> = per_question.iter().map(|q| q.ap_at10).collect();
    let mut recall = BTreeMap::new();
    for &n in recall_ns {
        let key = format!("recall@{n}");
        let vals: Vec<f64> = per_question.iter().map(|q| q.recall[&key]).collect();
        recall.insert(key, stable_mean(&vals));
    }
    Ok(PhaseAReport {
        questions: per_question.len(),
        map_at10: stable_mean(&aps),
        recall,
        excluded,
        per_question,
    })
}

/// Gold exact answer in evaluation form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "value")]
pub enum GoldExact {
    YesNo(YesNo),
    Factoid(Vec<Vec<String>>),
    List(Vec<Vec<String>>),
    Summary,
}

/// System exact answer; `YesNo(None)` is an unparseable yes/no reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "value")]
pub enum PredictedExact {
    YesNo(Option<YesNo>),
    Factoid(Vec<String>),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBCase {
    pub question_id: String,
    pub gold_exact: GoldExact,
    pub gold_ideal: Option<String>,
    pub predicted_exact: Option<PredictedExact>,
    pub predicted_ideal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBQuestion {
    pub question_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yesno_correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reciprocal_rank: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_2: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_su4: Option<Prf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBReport {
    pub yesno_questions: usize,
    pub yesno_f1_yes: f64,
    pub yesno_f1_no: f64,
    pub yesno_macro_f1: f64,
    pub factoid_questions: usize,
    pub factoid_mrr: f64,
    pub list_questions: usize,
    pub list_mean_f1: f64,
    pub ideal_questions: usize,
    pub rouge_2: Prf,
    pub rouge_su4: Prf,
    pub per_question: Vec<PhaseBQuestion>,
}

/// Missing or unparseable yes/no answers count as the wrong label; missing
/// factoid/list answers score 0.
pub fn eval_phase_b(cases: &[PhaseBCase]) -> PhaseBReport {
    let mut yn_pred = Vec::new();
    let mut yn_gold = Vec::new();
    let mut rr = Vec::new();
    let mut lf = Vec::new();
    let mut r2 = Vec::new();
    let mut su4 = Vec::new();
    let mut per_question = Vec::new();
    for case in cases {
        let mut q = PhaseBQuestion {
            question_id: case.question_id.clone(),
            yesno_correct: None,
            reciprocal_rank: None,
            list: None,
            rouge_2: None,
            rouge_su4: None,
        };
        match (&case.gold_exact, &case.predicted_exact) {
            (GoldExact::YesNo(g), p) => {
                let pred = match p {
                    Some(PredictedExact::YesNo(Some(v))) => *v,
                    _ => g.flipped(),
                };
                yn_pred.push(pred);
                yn_gold.push(*g);
                q.yesno_correct = Some(pred == *g);
            }
            (GoldExact::Factoid(g), p) => {
                let v = match p {
                    Some(PredictedExact::Factoid(items)) | Some(PredictedExact::List(items)) => mrr(items, g),
                    _ => 0.0,
                };
                rr.push(v);
                q.reciprocal_rank = Some(v);
            }
            (GoldExact::List(g), p) => {
                let v = match p {
                    Some(PredictedExact::List(items)) | Some(PredictedExact::Factoid(items)) => list_f1(items, g),
                    _ => Prf::default(),
                };
                lf.push(v.f1);
                q.list = Some(v);
            }
            (GoldExact::Summary, _) => {}
        }
        if let Some(gold) = &case.gold_ideal {
            let cand = case.predicted_ideal.as_deref().unwrap_or("");
            let a = rouge_2(cand, gold);
            let b = rouge_su4(cand, gold);
            r2.push(a);
            su4.push(b);
            q.rouge_2 = Some(a);
            q.rouge_su4 = Some(b);
        }
        per_question.push(q);
    }
    let class_f1 = |c: YesNo| {
        let tp = yn_pred.iter().zip(&yn_gold).filter(|(p, g)| **p == c && **g == c).count();
        let pred = yn_pred.iter().filter(|p| **p == c).count();
        let actual = yn_gold.iter().filter(|g| **g == c).count();
        f1(ratio(tp as f64, pred as f64), ratio(tp as f64, actual as f64))
    };
    let (fy, fn_) = (class_f1(YesNo::Yes), class_f1(YesNo::No));
    PhaseBReport {
        yesno_questions: yn_gold.len(),
        yesno_f1_yes: fy,
        yesno_f1_no: fn_,
        yesno_macro_f1: (fy + fn_) / 2.0,
        factoid_questions: rr.len(),
        factoid_mrr: stable_mean(&rr),
        list_questions: lf.len(),
        list_mean_f1: stable_mean(&lf),
        ideal_questions: r2.len(),
        rouge_2: Prf::mean(&r2),
        rouge_su4: Prf::mean(&su4),
        per_question,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::Stage;

    fn run(p: &[&str]) -> RankedRun {
        RankedRun::from_order("q", Stage::Retrieval, p)
    }

    fn gold(p: &[&str]) -> GoldDocs {
        p.iter().map(|s| s.to_string()).collect()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision_at10(&run(&["a", "b", "c"]), &gold(&["a", "c", "z"])).unwrap();
        assert!((ap - 5.0 / 9.0).abs() < 1e-12);
        assert_eq!(average_precision_at10(&run(&["x"]), &gold(&["a"])).unwrap(), 0.0);
        assert!(matches!(
            average_precision_at10(&run(&["a", "a"]), &gold(&["a"])),
            Err(MetricsError::DuplicatePmid { .. })
        ));
        assert!(matches!(average_precision_at10(&run(&["a"]), &gold(&[])), Err(MetricsError::EmptyGold(_))));
    }

    #[test]
    fn recall_examples() {
        let r = run(&["a", "x", "b", "y"]);
        assert_eq!(recall_at_n(&r, &gold(&["a", "b", "c", "d"]), 10).unwrap(), 0.5);
        assert_eq!(recall_at_n(&r, &gold(&["a"]), 1).unwrap(), 1.0);
        assert_eq!(recall_at_n(&r, &gold(&["z"]), 4).unwrap(), 0.0);
    }

    #[test]
    fn map_checks_ids() {
        let mut golds = HashMap::new();
        golds.insert("q".to_string(), gold(&["a"]));
        golds.insert("r".to_string(), gold(&["a"]));
        let err = map_at10(&[run(&["a"])], &golds).unwrap_err();
        assert_eq!(
            err,
            MetricsError::IdMismatch {
                only_runs: vec![],
                only_gold: vec!["r".into()]
            }
        );
    }

    #[test]
    fn answer_metrics() {
        let g = vec![s(&["TREM2", "triggering receptor"]), s(&["APOE"])];
        assert_eq!(mrr(&s(&["x", "y", " trem2."]), &g), 1.0 / 3.0);
        assert_eq!(mrr(&s(&["x"]), &g), 0.0);
        let four = vec![s(&["a"]), s(&["b"]), s(&["c"]), s(&["d"])];
        assert!((list_f1(&s(&["a", "z"]), &four).f1 - 1.0 / 3.0).abs() < 1e-12);
        let dup = list_f1(&s(&["a", "A"]), &four);
        assert_eq!(dup.precision, 0.5);
        assert_eq!(list_f1(&[], &four).f1, 0.0);
        use YesNo::*;
        let m = macro_f1_yesno(&[Yes, Yes, Yes, Yes], &[Yes, Yes, No, No]).unwrap();
        assert!((m - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(macro_f1_yesno(&[Yes, No], &[No, Yes]).unwrap(), 0.0);
        assert_eq!(macro_f1_yesno(&[Yes, No], &[Yes, No]).unwrap(), 1.0);
    }

    #[test]
    fn rouge_examples() {
        let p = rouge_2("the cat sat", "the cat ate");
        assert_eq!((p.recall, p.precision, p.f1), (0.5, 0.5, 0.5));
        assert_eq!(rouge_2("cat", "cat"), Prf::default());
        let same = rouge_su4("Well-known drug, works.", "well-known drug works");
        assert_eq!((same.recall, same.precision, same.f1), (1.0, 1.0, 1.0));
        assert_eq!(rouge_su4("a b", "c d"), Prf::default());
        assert_eq!(rouge_tokenize("-x- A.B (c-d) --"), ["x", "ab", "c-d"]);
    }

    #[test]
    fn phase_b_unparseable_yesno_is_wrong() {
        let cases = vec![
            PhaseBCase {
                question_id: "1".into(),
                gold_exact: GoldExact::YesNo(YesNo::Yes),
                gold_ideal: None,
                predicted_exact: Some(PredictedExact::YesNo(None)),
                predicted_ideal: None,
            },
            PhaseBCase {
                question_id: "2".into(),
                gold_exact: GoldExact::YesNo(YesNo::No),
                gold_ideal: Some("a b c".into()),
                predicted_exact: Some(PredictedExact::YesNo(Some(YesNo::No))),
                predicted_ideal: Some("a b c".into()),
            },
        ];
        let r = eval_phase_b(&cases);
        assert_eq!(r.per_question[0].yesno_correct, Some(false));
        assert_eq!(r.yesno_questions, 2);
        assert_eq!(r.rouge_2.f1, 1.0);
        assert!((r.yesno_macro_f1 - (0.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }
}
