use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn pubrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pubrank"))
        .args(args)
        .current_dir(dir)
        .env_remove("PUBRANK_EMBED_URL")
        .env_remove("PUBRANK_SCORE_URL")
        .env_remove("PUBRANK_CHAT_URL")
        .env_remove("PUBRANK_FIXTURES_DIR")
        .env_remove("PUBRANK_FIXTURE_MODE")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pubrank(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    pubrank(dir, args).status.code().expect("exit code")
}

fn article(pmid: u32, title: &str, abs: &str) -> String {
    format!(
        "<PubmedArticle><MedlineCitation><PMID>{pmid}</PMID><Article><ArticleTitle>{title}</ArticleTitle>\
         <Abstract><AbstractText>{abs}</AbstractText></Abstract></Article></MedlineCitation></PubmedArticle>\n"
    )
}

fn url(pmid: u32) -> String {
    format!("http://www.ncbi.nlm.nih.gov/pubmed/{pmid}")
}

/// Corpus XML with 40 records plus a duplicate and an abstract-less one,
/// and eight questions (two per type) whose gold documents are in it.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut xml = String::from("<PubmedArticleSet>\n");
    for i in 0..40u32 {
        xml.push_str(&article(100 + i, &format!("Study {i}"), &format!("Topic t{} result {i}.", i % 8)));
    }
    xml.push_str(&article(105, "Study 5 revised", "Topic t5 revised."));
    xml.push_str("<PubmedArticle><MedlineCitation><PMID>999</PMID><Article><ArticleTitle>x</ArticleTitle></Article></MedlineCitation></PubmedArticle>\n");
    xml.push_str("</PubmedArticleSet>\n");
    fs::create_dir(dir.path().join("xml")).unwrap();
    fs::write(dir.path().join("xml/a.xml"), xml).unwrap();

    let types = ["yesno", "factoid", "list", "summary"];
    let questions: Vec<Value> = (0..8u32)
        .map(|q| {
            let qtype = types[q as usize % 4];
            let gold = [100 + q, 108 + q, 116 + q];
            let mut v = json!({
                "id": format!("q{q}"),
                "type": qtype,
                "body": format!("What is known about t{q}?"),
                "documents": gold.iter().map(|&p| url(p)).collect::<Vec<_>>(),
                "snippets": [{"document": url(gold[0]), "text": format!("t{q} is described in study {q}.")}],
                "ideal_answer": [format!("t{q} is well described.")],
            });
            match qtype {
                "yesno" => v["exact_answer"] = json!("yes"),
                "factoid" => v["exact_answer"] = json!([[format!("t{q}")]]),
                "list" => v["exact_answer"] = json!([[format!("t{q}")], ["study"]]),
                _ => {}
            }
            v
        })
        .collect();
    let qpath = dir.path().join("questions.json");
    fs::write(&qpath, serde_json::to_string_pretty(&json!({ "questions": questions })).unwrap()).unwrap();
    (dir, qpath)
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["--help"]), 0);
    assert_eq!(code(dir.path(), &["--version"]), 0);
    assert_eq!(code(dir.path(), &["bogus"]), 1);
    assert_eq!(code(dir.path(), &["fuse", "--a", "x"]), 1);
    assert_eq!(code(dir.path(), &["pipeline"]), 1);
    assert_eq!(code(dir.path(), &["--config", "missing.toml", "pipeline"]), 1);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(p, &["eval", "phase-a", "--run", "nope.jsonl", "--gold", "nope.json", "--report", "r.json"]), 2);
    assert_eq!(code(p, &["index", "build", "--vectors", "nope.prv", "--out", "i.prix"]), 2);
}

#[test]
fn retrieval_fusion_and_evaluation_flow() {
    let (dir, _) = workspace();
    let p = dir.path();
    let report: Value = serde_json::from_str(&ok(p, &["ingest", "--in", "xml", "--out", "corpus.jsonl"])).unwrap();
    assert_eq!(report["kept"], 40);
    assert_eq!(report["dropped_duplicate"], 1);
    assert_eq!(report["dropped_no_abstract"], 1);

    ok(p, &["--seed", "3", "embed", "--corpus", "corpus.jsonl", "--dim", "32", "--out", "vec.prv"]);
    ok(p, &["--seed", "3", "index", "build", "--vectors", "vec.prv", "--kind", "hnsw", "--m", "4", "--efc", "16", "--out", "h.prix"]);
    ok(p, &["index", "build", "--vectors", "vec.prv", "--kind", "exact", "--out", "e.prix"]);
    assert_eq!(code(p, &["index", "build", "--vectors", "vec.prv", "--m", "1", "--out", "bad.prix"]), 1);

    ok(p, &["--seed", "3", "search", "--index", "h.prix", "--questions", "questions.json", "--k", "20", "--out", "a.jsonl"]);
    ok(p, &["--seed", "4", "search", "--index", "e.prix", "--questions", "questions.json", "--k", "20", "--out", "b.jsonl"]);
    let runs = fs::read_to_string(p.join("a.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 8);

    let stdout = ok(p, &["eval", "phase-a", "--run", "a.jsonl", "--gold", "questions.json", "--report", "ra.json"]);
    assert!(stdout.starts_with("map_at10="));
    let ra: Value = serde_json::from_str(&fs::read_to_string(p.join("ra.json")).unwrap()).unwrap();
    assert_eq!(ra["questions"], 8);

    ok(p, &["fuse", "--a", "a.jsonl", "--b", "b.jsonl", "--mode", "nominate", "--ka", "6", "--out", "n.jsonl"]);
    ok(p, &["fuse", "--a", "a.jsonl", "--b", "b.jsonl", "--w1", "1", "--w2", "7", "--out", "w.jsonl"]);
    assert_eq!(code(p, &["fuse", "--a", "a.jsonl", "--b", "b.jsonl", "--w1", "0", "--w2", "0", "--out", "z.jsonl"]), 1);
    let first = fs::read_to_string(p.join("n.jsonl")).unwrap();
    let line: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(line["items"].as_array().unwrap().len(), 10);

    let best = ok(p, &["gridsearch", "--a", "a.jsonl", "--b", "b.jsonl", "--gold", "questions.json", "--out", "grid.tsv"]);
    assert!(best.starts_with("best w1="));
    let table = fs::read_to_string(p.join("grid.tsv")).unwrap();
    assert_eq!(table.lines().count(), 121);

    ok(p, &["dataset", "mine-negatives", "--split", "questions.json", "--run", "a.jsonl", "--corpus", "corpus.jsonl", "--depth", "20", "--out", "pairs.tsv"]);
    let pairs = fs::read_to_string(p.join("pairs.tsv")).unwrap();
    assert!(pairs.lines().count() >= 24, "{pairs}");
}

#[test]
fn split_prompt_and_answer_flow() {
    let (dir, _) = workspace();
    let p = dir.path();
    let sizes = ok(p, &["--seed", "1", "dataset", "split", "--in", "questions.json", "--out-dir", "splits"]);
    assert!(sizes.starts_with("train="));
    for name in ["train", "val", "test"] {
        assert!(p.join(format!("splits/{name}.json")).exists());
    }
    assert_eq!(code(p, &["dataset", "split", "--in", "questions.json", "--ratios", "0.5,0.5", "--out-dir", "s2"]), 1);

    ok(p, &["prompt", "build", "--questions", "questions.json", "--question-id", "q1", "--style", "1", "--shots", "1", "--out", "p.json"]);
    let msgs: Value = serde_json::from_str(&fs::read_to_string(p.join("p.json")).unwrap()).unwrap();
    assert_eq!(msgs.as_array().unwrap().len(), 4);
    assert_eq!(code(p, &["prompt", "build", "--questions", "questions.json", "--question-id", "q1", "--style", "4", "--out", "x.json"]), 1);
    assert_eq!(code(p, &["prompt", "build", "--questions", "questions.json", "--question-id", "nope", "--out", "x.json"]), 2);

    fs::create_dir(p.join("raw")).unwrap();
    fs::write(p.join("raw/q0.exact.txt"), "Yes, it is.").unwrap();
    fs::write(p.join("raw/q1.exact.txt"), "1. t1\n2. t9").unwrap();
    fs::write(p.join("raw/q2.exact.txt"), "[\"t2\", \"study\"]").unwrap();
    fs::write(p.join("raw/q3.ideal.txt"), "t3 is well described.\n").unwrap();
    fs::write(p.join("raw/q4.exact.txt"), "maybe").unwrap();
    let summary: Value = serde_json::from_str(&ok(p, &["answers", "parse", "--raw", "raw", "--gold", "questions.json", "--out", "answers.json"])).unwrap();
    assert_eq!(summary["answered"], 4);
    assert_eq!(summary["parse_errors"].as_array().unwrap().len(), 1);

    ok(p, &["prompt", "build", "--questions", "questions.json", "--question-id", "q1", "--style", "2", "--kind", "ideal", "--answers-hint", "answers.json", "--out", "h.json"]);
    let hinted = fs::read_to_string(p.join("h.json")).unwrap();
    assert!(hinted.contains("Hint: short answer is t1, t9"), "{hinted}");

    ok(p, &["eval", "phase-b", "--answers", "answers.json", "--gold", "questions.json", "--report", "rb.json"]);
    let rb: Value = serde_json::from_str(&fs::read_to_string(p.join("rb.json")).unwrap()).unwrap();
    assert!(rb.is_object());
}

#[test]
fn rerank_without_a_service_is_an_upstream_error() {
    let (dir, _) = workspace();
    let p = dir.path();
    ok(p, &["ingest", "--in", "xml", "--out", "corpus.jsonl"]);
    ok(p, &["embed", "--corpus", "corpus.jsonl", "--dim", "16", "--out", "vec.prv"]);
    ok(p, &["index", "build", "--vectors", "vec.prv", "--kind", "exact", "--out", "e.prix"]);
    ok(p, &["search", "--index", "e.prix", "--questions", "questions.json", "--k", "30", "--out", "a.jsonl"]);
    let out = Command::new(env!("CARGO_BIN_EXE_pubrank"))
        .args(["rerank", "--stage", "cross", "--in", "a.jsonl", "--questions", "questions.json", "--corpus", "corpus.jsonl", "--k", "30", "--out", "c.jsonl"])
        .current_dir(p)
        .env("PUBRANK_SCORE_URL", "http://127.0.0.1:9")
        .env_remove("PUBRANK_FIXTURES_DIR")
        .env_remove("PUBRANK_FIXTURE_MODE")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = Command::new(env!("CARGO_BIN_EXE_pubrank"))
        .args(["rerank", "--stage", "llm", "--in", "a.jsonl", "--questions", "questions.json", "--corpus", "corpus.jsonl", "--k", "10", "--out", "l.jsonl"])
        .current_dir(p)
        .env("PUBRANK_FIXTURES_DIR", p.join("fixtures"))
        .env("PUBRANK_FIXTURE_MODE", "replay")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_config_errors() {
    let (dir, _) = workspace();
    let p = dir.path();
    fs::write(p.join("bad.toml"), "[paths]\ncorpus = \"c\"\nunknown = 1\n").unwrap();
    assert_eq!(code(p, &["--config", "bad.toml", "pipeline"]), 1);
    fs::write(
        p.join("ok.toml"),
        "[paths]\ncorpus = \"corpus.jsonl\"\nindex = \"missing.prix\"\nquestions = \"questions.json\"\nout_dir = \"out\"\n",
    )
    .unwrap();
    assert_eq!(code(p, &["--config", "ok.toml", "pipeline"]), 2);
}
