//! Golden renderings of model-facing prompts. Set `PUBRANK_UPDATE_GOLDEN=1`
//! to rewrite the files after an intentional change.

use std::fs;
use std::path::PathBuf;

use pubrank_core::clients::ChatMessage;
use pubrank_core::corpus::{corpus_map, Document};
use pubrank_core::dataset::{parse_bioasq, FewShotExample};
use pubrank_core::prompts::{build_prompt, AnswerKind, PromptSpec, TemplateSet, DEFAULT_SNIPPET_BUDGET};
use pubrank_core::rerank::{build_listwise_prompt, DEFAULT_DOC_CHAR_BUDGET};
use pubrank_core::run::{RankedRun, Stage};

fn render(messages: &[ChatMessage]) -> String {
    serde_json::to_string_pretty(messages).unwrap() + "\n"
}

fn check_golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("PUBRANK_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} drifted from its golden copy");
}

#[test]
fn listwise_prompt_golden() {
    let docs = vec![
        Document::new("101", "Statins and myopathy", "Muscle symptoms were reported in 5% of patients."),
        Document::new("7", "", "An abstract without a title, mentioning CYP3A4 inhibitors."),
        Document::new("55", "Long record", "x".repeat(1500)),
    ];
    let corpus = corpus_map(docs);
    let run = RankedRun::from_order("q1", Stage::Crossencoder, &["55", "101", "7"]);
    let msgs = build_listwise_prompt(
        "  Do statins cause muscle pain? ",
        &run,
        &corpus,
        10,
        DEFAULT_DOC_CHAR_BUDGET,
    )
    .unwrap();
    check_golden("listwise_prompt.json", &render(&msgs));
}

const QUESTIONS: &str = r#"{"questions": [
  {"id": "f1", "type": "factoid", "body": "Which gene is mutated in cystic fibrosis?",
   "documents": ["http://www.ncbi.nlm.nih.gov/pubmed/1"],
   "snippets": [{"document": "http://www.ncbi.nlm.nih.gov/pubmed/1", "text": "CFTR mutations cause cystic fibrosis."},
                {"document": "http://www.ncbi.nlm.nih.gov/pubmed/1", "text": "The F508del allele is most common."}],
   "exact_answer": [["CFTR", "cystic fibrosis transmembrane conductance regulator"]],
   "ideal_answer": ["Cystic fibrosis is caused by mutations in CFTR."]},
  {"id": "f2", "type": "factoid", "body": "What enzyme does aspirin inhibit?",
   "documents": ["http://www.ncbi.nlm.nih.gov/pubmed/2"],
   "snippets": [{"document": "http://www.ncbi.nlm.nih.gov/pubmed/2", "text": "Aspirin irreversibly inhibits cyclooxygenase."}],
   "exact_answer": [["cyclooxygenase", "COX"], ["COX-1"]],
   "ideal_answer": "Aspirin inhibits cyclooxygenase."}
]}"#;

#[test]
fn answer_prompt_golden() {
    let qs = parse_bioasq(QUESTIONS, "inline").unwrap();
    let shot = FewShotExample::from(&qs[1]);
    let templates = TemplateSet::embedded();
    for (style, kind, name) in [
        (1, AnswerKind::Exact, "prompt_s1_factoid_exact.json"),
        (3, AnswerKind::Exact, "prompt_s3_factoid_exact.json"),
        (2, AnswerKind::Ideal, "prompt_s2_factoid_ideal.json"),
    ] {
        let spec = PromptSpec {
            style,
            n_shots: 1,
            qtype: qs[0].qtype,
            kind,
        };
        let hint = (kind == AnswerKind::Ideal).then_some("CFTR");
        let msgs = build_prompt(
            &templates,
            &qs[0],
            &qs[0].snippet_texts(),
            &spec,
            std::slice::from_ref(&shot),
            hint,
            DEFAULT_SNIPPET_BUDGET,
        )
        .unwrap();
        assert_eq!(msgs.len(), 4);
        check_golden(name, &render(&msgs));
    }
}
