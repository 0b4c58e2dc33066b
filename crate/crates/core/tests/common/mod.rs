//! Synthetic corpora and a deterministic keyword-matching model backend
//! shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pubrank_core::clients::{ClientError, Endpoint, Transport, WireResponse};
use pubrank_core::corpus::{write_documents, Document};
use pubrank_core::embedding::{embed_corpus, mock_embed, EmbedText, MockEmbedder};
use pubrank_core::index::{HnswParams, IndexKind, VectorIndex};
use pubrank_core::par::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const FILLER: &[&str] = &[
    "cohort", "patients", "cells", "protein", "levels", "expression", "mice", "clinical", "trial", "analysis",
    "signalling", "tissue", "samples", "response", "treatment", "outcome", "receptor", "pathway", "dose",
    "mutation", "variant", "serum", "imaging", "biopsy", "therapy", "assay", "plasma", "kinase",
];

pub fn topic(i: usize) -> String {
    format!("kw{i:02}")
}

pub fn pmid(j: usize) -> String {
    (20_000 + j).to_string()
}

/// Documents plus BioASQ questions whose gold documents mention the
/// question's topic token three times; distractors mention it once.
pub struct TopicFixture {
    pub docs: Vec<Document>,
    pub questions: Value,
}

pub fn topic_fixture(n_docs: usize, n_questions: usize, gold_per_q: usize, seed: u64) -> TopicFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n).map(|_| FILLER[rng.random_range(0..FILLER.len())].to_string()).collect()
    };
    let mut mentions = vec![0usize; n_docs];
    let mut owner = vec![None; n_docs];
    let mut order: Vec<usize> = (0..n_docs).collect();
    // Deterministic shuffle so gold docs are spread over the pmid range.
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut slots = order.into_iter();
    let mut gold = vec![Vec::new(); n_questions];
    for (q, g) in gold.iter_mut().enumerate() {
        for _ in 0..gold_per_q {
            let d = slots.next().expect("enough documents for gold");
            owner[d] = Some(q);
            mentions[d] = 3;
            g.push(d);
        }
        for _ in 0..gold_per_q {
            let Some(d) = slots.next() else { break };
            owner[d] = Some(q);
            mentions[d] = 1;
        }
    }
    let docs: Vec<Document> = (0..n_docs)
        .map(|d| {
            let mut body = words(&mut rng, 30);
            if let Some(q) = owner[d] {
                for _ in 0..mentions[d] {
                    let at = rng.random_range(0..=body.len());
                    body.insert(at, topic(q));
                }
            }
            let title = words(&mut rng, 5).join(" ");
            Document::new(pmid(d), title, body.join(" ") + ".")
        })
        .collect();
    let types = ["yesno", "factoid", "list", "summary"];
    let questions: Vec<Value> = gold
        .iter()
        .enumerate()
        .map(|(q, g)| {
            let qtype = types[q % 4];
            let mut v = json!({
                "id": format!("q{q:03}"),
                "body": format!("Which findings describe {} regulation?", topic(q)),
                "type": qtype,
                "documents": g.iter().map(|&d| format!("http://www.ncbi.nlm.nih.gov/pubmed/{}", pmid(d))).collect::<Vec<_>>(),
                "snippets": g.iter().take(2).map(|&d| json!({
                    "document": format!("http://www.ncbi.nlm.nih.gov/pubmed/{}", pmid(d)),
                    "text": format!("{} is regulated in {}", topic(q), FILLER[d % FILLER.len()]),
                })).collect::<Vec<_>>(),
                "ideal_answer": [format!("{} is regulated by several pathways.", topic(q))],
            });
            match qtype {
                "yesno" => v["exact_answer"] = json!(if q % 8 == 0 { "yes" } else { "no" }),
                "factoid" => v["exact_answer"] = json!([[topic(q)]]),
                "list" => v["exact_answer"] = json!([[topic(q)], ["pathway"]]),
                _ => {}
            }
            v
        })
        .collect();
    TopicFixture {
        docs,
        questions: json!({ "questions": questions }),
    }
}

fn topic_token(text: &str) -> Option<&str> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .find(|w| w.len() == 4 && w.starts_with("kw") && w[2..].bytes().all(|b| b.is_ascii_digit()))
}

fn count_token(text: &str, token: &str) -> usize {
    text.split(|c: char| !c.is_ascii_alphanumeric()).filter(|w| *w == token).count()
}

fn jitter(a: &str, b: &str) -> f64 {
    let h = Sha256::digest(format!("{a}\u{0}{b}").as_bytes());
    h[0] as f64 / 256.0
}

/// Answers `/embed`, `/score` and `/chat` like the model sidecar would, but
/// from keyword counts. The scorer is noisy; the chat model is not, so the
/// listwise stage genuinely improves on the pointwise one.
#[derive(Debug, Clone)]
pub struct KeywordBackend {
    pub dimension: usize,
    pub seed: u64,
}

impl KeywordBackend {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, seed: 0 }
    }

    pub fn respond(&self, path: &str, body: &str) -> (u16, String) {
        let req: Value = match serde_json::from_str(body) {
            Ok(v) => v,
            Err(e) => return (400, json!({ "error": format!("bad json: {e}") }).to_string()),
        };
        match path {
            "/embed" => {
                let Some(texts) = req["texts"].as_array() else {
                    return (422, json!({ "error": "texts must be an array" }).to_string());
                };
                let embeddings: Vec<Vec<f32>> = texts
                    .iter()
                    .map(|t| mock_embed(t.as_str().unwrap_or_default(), self.dimension, self.seed).into_inner())
                    .collect();
                (200, json!({ "dimension": self.dimension, "embeddings": embeddings }).to_string())
            }
            "/score" => {
                let query = req["query"].as_str().unwrap_or_default();
                let token = topic_token(query).unwrap_or("");
                let scores: Vec<f64> = req["docs"]
                    .as_array()
                    .map(|docs| {
                        docs.iter()
                            .map(|d| {
                                let text = d["text"].as_str().unwrap_or_default();
                                let id = d["id"].as_str().unwrap_or_default();
                                let signal = (count_token(text, token) as f64 / 3.0).min(1.0);
                                0.45 * signal + 0.55 * jitter(query, id)
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                (200, json!({ "scores": scores }).to_string())
            }
            "/chat" => {
                let user = req["messages"]
                    .as_array()
                    .and_then(|m| m.last())
                    .and_then(|m| m["content"].as_str())
                    .unwrap_or_default();
                (200, json!({ "content": listwise_answer(user) }).to_string())
            }
            _ => (404, json!({ "error": "no such endpoint" }).to_string()),
        }
    }
}

/// Ranks `[n] ...` candidate lines by topic-token count (ties: lower n).
pub fn listwise_answer(user: &str) -> String {
    let question = user.lines().next().unwrap_or_default();
    let token = topic_token(question).unwrap_or("");
    let mut cands: Vec<(usize, usize)> = user
        .lines()
        .filter_map(|l| {
            let rest = l.strip_prefix('[')?;
            let close = rest.find(']')?;
            let n: usize = rest[..close].parse().ok()?;
            Some((n, count_token(&rest[close + 1..], token)))
        })
        .collect();
    cands.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let want: usize = user
        .split("Select exactly the ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(cands.len());
    let picked: Vec<String> = cands.iter().take(want).map(|c| c.0.to_string()).collect();
    format!("Ranking: [{}]", picked.join(", "))
}

impl Transport for KeywordBackend {
    fn post(&self, endpoint: Endpoint, body: &str) -> Result<WireResponse, ClientError> {
        let (status, body) = self.respond(endpoint.path(), body);
        Ok(WireResponse { status, body })
    }
}

/// A canned transport: every call returns `chat` as the chat content.
pub struct CannedChat(pub String);

impl Transport for CannedChat {
    fn post(&self, _endpoint: Endpoint, _body: &str) -> Result<WireResponse, ClientError> {
        Ok(WireResponse::ok(json!({ "content": self.0 }).to_string()))
    }
}

/// Serves a [`KeywordBackend`] over HTTP on an ephemeral port.
pub struct MockSidecar {
    pub url: String,
    server: Arc<tiny_http::Server>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl MockSidecar {
    pub fn start(backend: KeywordBackend) -> Self {
        Self::start_with(move |path, body| backend.respond(path, body))
    }

    pub fn start_with(handler: impl Fn(&str, &str) -> (u16, String) + Send + 'static) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock sidecar"));
        let url = format!("http://{}", server.server_addr().to_ip().expect("ip listener"));
        let s = server.clone();
        let handle = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let (status, text) = if *req.method() == tiny_http::Method::Post {
                    handler(req.url(), &body)
                } else {
                    (405, "{\"error\":\"method not allowed\"}".to_string())
                };
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("header");
                let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status).with_header(header));
            }
        });
        Self {
            url,
            server,
            handle: Some(handle),
        }
    }
}

impl Drop for MockSidecar {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}


/// Writes corpus, questions, mock vectors and an HNSW index for `fx` into
/// `dir` and returns the pipeline config text (fixtures under `dir/fixtures`).
pub fn write_pipeline_inputs(dir: &Path, fx: &TopicFixture, dim: usize, seed: u64, mode: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let corpus = dir.join("corpus.jsonl");
    write_documents(fs::File::create(&corpus).unwrap(), &fx.docs).unwrap();
    let questions = dir.join("questions.json");
    fs::write(&questions, serde_json::to_string_pretty(&fx.questions).unwrap()).unwrap();
    let embedder = MockEmbedder::new(dim, seed).unwrap();
    let set = embed_corpus(&embedder, &fx.docs, EmbedText::TitleAbstract, 64, Execution::default()).unwrap();
    let params = HnswParams {
        seed,
        ..HnswParams::default()
    };
    let index = dir.join("index.prix");
    VectorIndex::build(set, IndexKind::Hnsw, params).unwrap().save(&index).unwrap();
    let config = dir.join("pipeline.toml");
    let text = format!(
        "seed = {seed}\n\n[paths]\ncorpus = {:?}\nindex = {:?}\nquestions = {:?}\nout_dir = {:?}\nfixtures = {:?}\n\n\
         [provider]\nembed = \"mock\"\nfixture_mode = \"{mode}\"\n",
        corpus,
        index,
        questions,
        dir.join("out"),
        dir.join("fixtures"),
    );
    fs::write(&config, text).unwrap();
    config
}
