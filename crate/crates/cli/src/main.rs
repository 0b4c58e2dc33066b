//! `pubrank` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 upstream service error.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pubrank_core::clients::{ClientConfig, ClientError, FixtureMode, ServiceClient};
use pubrank_core::corpus::{corpus_map, ingest_paths, load_corpus};
use pubrank_core::dataset::{self, load_bioasq, QType, Question};
use pubrank_core::embedding::{
    embed_batch, embed_corpus, EmbedText, EmbeddingError, EmbeddingProvider, MockEmbedder, RemoteEmbedder, VectorSet,
};
use pubrank_core::fusion::{fuse_all, grid_search_weights, FusionConfig, FusionMode, WeightGrid};
use pubrank_core::index::{search_batch, HnswParams, IndexKind, VectorIndex};
use pubrank_core::metrics::{eval_phase_a, eval_phase_b, PhaseBCase, DEFAULT_RECALL_NS};
use pubrank_core::par::{self, Execution};
use pubrank_core::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use pubrank_core::prompts::{
    self, build_prompt, parse_exact_answer, read_answers_file, render_answers_file, AnswerKind, AnswerRecord,
    PromptSpec, TemplateSet,
};
use pubrank_core::rerank::{llm_batch, pointwise_batch, write_audit, RerankError, DEFAULT_DOC_CHAR_BUDGET};
use pubrank_core::run::{read_runs, write_runs};

#[derive(Parser)]
#[command(name = "pubrank", version, about = "Biomedical retrieval, re-ranking and answer evaluation")]
struct Cli {
    /// Pipeline config (TOML); supplies defaults for --seed and --jobs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse PubMed XML (plain or gzip) into a JSONL corpus.
    Ingest {
        /// Files or directories.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a corpus into a vector file.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = Provider::Mock)]
        provider: Provider,
        #[arg(long, default_value_t = 1024)]
        dim: usize,
        #[arg(long, default_value_t = 512)]
        max_tokens: usize,
        #[arg(long, value_enum, default_value_t = TextField::TitleAbstract)]
        text: TextField,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Index(IndexCommand),
    /// Retrieve candidates for every question.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long, value_enum, default_value_t = Provider::Mock)]
        provider: Provider,
        #[arg(long, default_value_t = 1000)]
        k: usize,
        #[arg(long)]
        ef: Option<usize>,
        #[arg(long, default_value_t = 512)]
        max_tokens: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pointwise (cross) or listwise (llm) re-ranking of a run file.
    Rerank {
        #[arg(long, value_enum)]
        stage: RerankStage,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_DOC_CHAR_BUDGET)]
        doc_chars: usize,
        /// Write one listwise exchange per question here.
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse two run files.
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Weighted)]
        mode: Mode,
        #[arg(long, default_value_t = 6)]
        ka: usize,
        #[arg(long, default_value_t = 1.0)]
        w1: f64,
        #[arg(long, default_value_t = 7.0)]
        w2: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exhaustive fusion-weight search against MAP@10.
    Gridsearch {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_weight: u32,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    #[command(subcommand)]
    Prompt(PromptCommand),
    #[command(subcommand)]
    Answers(AnswersCommand),
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run retrieval, both re-rank stages, fusion and evaluation from --config.
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Hnsw)]
        kind: Kind,
        #[arg(long, default_value_t = 16)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        efc: usize,
        #[arg(long, default_value_t = 128)]
        efs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Question-level split stratified by type.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        /// Keep only the most recent fraction of questions first.
        #[arg(long)]
        recent: Option<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Emit labelled training pairs with hard negatives.
    MineNegatives {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1000)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PromptCommand {
    Build {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        question_id: String,
        #[arg(long, default_value_t = 1)]
        style: u8,
        #[arg(long, default_value_t = 0)]
        shots: usize,
        #[arg(long, value_enum, default_value_t = Kind2::Exact)]
        kind: Kind2,
        /// Few-shot pool (defaults to --questions).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Submission file with the system exact answer used as the hint.
        #[arg(long)]
        answers_hint: Option<PathBuf>,
        /// Template directory with its manifest (defaults to the built-in set).
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnswersCommand {
    /// Parse raw replies (`<id>.exact.txt`, `<id>.ideal.txt`) into a submission.
    Parse {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    PhaseA {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    PhaseB {
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, value_enum)]
    fixture_mode: Option<FixtureModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum TextField {
    TitleAbstract,
    Abstract,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Exact,
    Hnsw,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind2 {
    Exact,
    Ideal,
}

#[derive(Clone, Copy, ValueEnum)]
enum RerankStage {
    Cross,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Nominate,
    Weighted,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureModeArg {
    Record,
    Replay,
    Passthrough,
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: e.into() }
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: e.into() }
}

fn upstream(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 3, error: e.into() }
}

fn client_failure(e: ClientError) -> Failure {
    match e {
        ClientError::Config(_) | ClientError::Precondition(_) => usage(e),
        _ => upstream(e),
    }
}

fn embedding_failure(e: EmbeddingError) -> Failure {
    match e {
        EmbeddingError::Retryable { .. } | EmbeddingError::Protocol(_) => upstream(e),
        EmbeddingError::Config(_) => usage(e),
        _ => data(e),
    }
}

fn rerank_failure(e: RerankError) -> Failure {
    if e.is_upstream() {
        upstream(e)
    } else {
        data(e)
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    Failure {
        code: e.exit_code() as u8,
        error: e.into(),
    }
}

fn build_client() -> Outcome<Arc<ServiceClient>> {
    let (client, _) = ClientConfig::from_env()
        .and_then(|c| c.build())
        .map_err(client_failure)?;
    Ok(Arc::new(client))
}

fn provider(kind: Provider, dim: usize, max_tokens: usize, seed: u64) -> Outcome<Box<dyn EmbeddingProvider>> {
    Ok(match kind {
        Provider::Mock => Box::new(
            MockEmbedder::new(dim, seed)
                .map_err(embedding_failure)?
                .with_max_tokens(max_tokens),
        ),
        Provider::Remote => Box::new(RemoteEmbedder::new(build_client()?, dim, max_tokens).map_err(embedding_failure)?),
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("values serialize") + "\n";
    fs::write(path, text).map_err(|e| data(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}

fn questions_of(path: &Path) -> Outcome<Vec<Question>> {
    load_bioasq(path).map_err(data)
}

fn bodies(questions: &[Question]) -> HashMap<String, String> {
    questions.iter().map(|q| (q.id.clone(), q.body.clone())).collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let config = cli
        .config
        .as_deref()
        .map(PipelineConfig::load)
        .transpose()
        .map_err(pipeline_failure)?;
    let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
    let jobs = cli.jobs.or(config.as_ref().map(|c| c.jobs)).unwrap_or(0);
    if let Command::Pipeline(args) = cli.command {
        let mut config = config.ok_or_else(|| usage(anyhow::anyhow!("pipeline needs --config")))?;
        config.seed = seed;
        config.jobs = jobs;
        if let Some(d) = args.out_dir {
            config.paths.out_dir = d;
        }
        if let Some(f) = args.fixtures {
            config.paths.fixtures = Some(f);
        }
        if let Some(m) = args.fixture_mode {
            config.provider.fixture_mode = Some(match m {
                FixtureModeArg::Record => FixtureMode::Record,
                FixtureModeArg::Replay => FixtureMode::Replay,
                FixtureModeArg::Passthrough => FixtureMode::Passthrough,
            });
        }
        let out = run_pipeline(&config, None).map_err(pipeline_failure)?;
        println!("{}", serde_json::to_string_pretty(&out.manifest).expect("manifest serializes"));
        return Ok(());
    }
    par::with_jobs(jobs, || dispatch(cli.command, seed))
}

fn dispatch(command: Command, seed: u64) -> Outcome {
    let exec = Execution::default();
    match command {
        Command::Ingest { inputs, out } => {
            let report = ingest_paths(&inputs, &out, exec).map_err(data)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Embed {
            corpus,
            provider: kind,
            dim,
            max_tokens,
            text,
            batch,
            out,
        } => {
            let docs = load_corpus(&corpus).map_err(data)?;
            let p = provider(kind, dim, max_tokens, seed)?;
            let field = match text {
                TextField::TitleAbstract => EmbedText::TitleAbstract,
                TextField::Abstract => EmbedText::Abstract,
            };
            let set = embed_corpus(p.as_ref(), &docs, field, batch, exec).map_err(embedding_failure)?;
            set.save(&out).map_err(data)?;
            eprintln!("embedded {} documents", set.len());
        }
        Command::Index(IndexCommand::Build {
            vectors,
            kind,
            m,
            efc,
            efs,
            out,
        }) => {
            let set = VectorSet::load(&vectors).map_err(data)?;
            let kind = match kind {
                Kind::Exact => IndexKind::Exact,
                Kind::Hnsw => IndexKind::Hnsw,
            };
            let params = HnswParams {
                m,
                ef_construction: efc,
                ef_search: efs,
                seed,
            };
            let index = VectorIndex::build(set, kind, params).map_err(|e| match e {
                pubrank_core::index::IndexError::Params(_) => usage(e),
                other => data(other),
            })?;
            index.save(&out).map_err(data)?;
            eprintln!("indexed {} vectors", index.len());
        }
        Command::Search {
            index,
            questions,
            provider: kind,
            k,
            ef,
            max_tokens,
            out,
        } => {
            let index = VectorIndex::load(&index).map_err(data)?;
            let qs = questions_of(&questions)?;
            let p = provider(kind, index.dimension(), max_tokens, seed)?;
            let texts: Vec<&str> = qs.iter().map(|q| q.body.as_str()).collect();
            let vectors = embed_batch(p.as_ref(), &texts).map_err(embedding_failure)?;
            let queries: Vec<_> = qs.iter().map(|q| q.id.clone()).zip(vectors).collect();
            let runs = search_batch(&index, &queries, k, ef, exec).map_err(usage)?;
            write_runs(&out, &runs).map_err(data)?;
        }
        Command::Rerank {
            stage,
            input,
            questions,
            corpus,
            k,
            doc_chars,
            audit,
            out,
        } => {
            let runs = read_runs(&input).map_err(data)?;
            let qs = questions_of(&questions)?;
            let docs = corpus_map(load_corpus(&corpus).map_err(data)?);
            let client = build_client()?;
            let result = match stage {
                RerankStage::Cross => {
                    pointwise_batch(&bodies(&qs), &runs, &docs, client.as_ref(), k, exec).map_err(rerank_failure)?
                }
                RerankStage::Llm => {
                    let pairs = llm_batch(&bodies(&qs), &runs, &docs, client.as_ref(), k, doc_chars, exec)
                        .map_err(rerank_failure)?;
                    let (runs, exchanges): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                    if let Some(dir) = audit {
                        write_audit(&dir, &exchanges).map_err(data)?;
                    }
                    runs
                }
            };
            write_runs(&out, &result).map_err(data)?;
        }
        Command::Fuse {
            a,
            b,
            mode,
            ka,
            w1,
            w2,
            k,
            out,
        } => {
            let cfg = FusionConfig {
                mode: match mode {
                    Mode::Nominate => FusionMode::Nominate,
                    Mode::Weighted => FusionMode::Weighted,
                },
                ka,
                k_total: k,
                w1,
                w2,
                ..FusionConfig::default()
            };
            cfg.validate().map_err(usage)?;
            let fused = fuse_all(&read_runs(&a).map_err(data)?, &read_runs(&b).map_err(data)?, &cfg).map_err(data)?;
            write_runs(&out, &fused).map_err(data)?;
        }
        Command::Gridsearch {
            a,
            b,
            gold,
            max_weight,
            out,
        } => {
            let gold = dataset::gold_docs_map(&questions_of(&gold)?);
            let res = grid_search_weights(
                &read_runs(&a).map_err(data)?,
                &read_runs(&b).map_err(data)?,
                &gold,
                &WeightGrid::integer(max_weight),
                &FusionConfig::default(),
                exec,
            )
            .map_err(data)?;
            let mut table = String::from("w1\tw2\tmap_at10\n");
            for r in &res.table {
                table.push_str(&format!("{}\t{}\t{}\n", r.w1, r.w2, r.map_at10));
            }
            fs::write(&out, table).map_err(|e| data(anyhow::anyhow!("cannot write {}: {e}", out.display())))?;
            println!("best w1={} w2={} map_at10={}", res.w1, res.w2, res.map_at10);
        }
        Command::Dataset(DatasetCommand::Split {
            input,
            ratios,
            recent,
            out_dir,
        }) => {
            let parsed: Vec<f64> = ratios
                .split(',')
                .map(|r| r.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| usage(anyhow::anyhow!("bad --ratios {ratios:?}: {e}")))?;
            let ratios: [f64; 3] = parsed
                .try_into()
                .map_err(|_| usage(anyhow::anyhow!("--ratios needs three values")))?;
            let mut qs = questions_of(&input)?;
            if let Some(f) = recent {
                qs = dataset::filter_recent(&qs, f).map_err(usage)?;
            }
            let split = dataset::stratified_split(&qs, ratios, seed).map_err(usage)?;
            fs::create_dir_all(&out_dir).map_err(data)?;
            for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                dataset::save_bioasq(&out_dir.join(format!("{name}.json")), part).map_err(data)?;
            }
            println!(
                "train={} val={} test={}",
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
        }
        Command::Dataset(DatasetCommand::MineNegatives {
            split,
            run,
            corpus,
            depth,
            out,
        }) => {
            let qs = questions_of(&split)?;
            let runs = read_runs(&run).map_err(data)?;
            let docs = corpus_map(load_corpus(&corpus).map_err(data)?);
            let pairs = dataset::mine_all(&qs, &runs, depth, exec);
            let file = File::create(&out).map_err(data)?;
            let n = dataset::write_pairs_tsv(BufWriter::new(file), &pairs, &qs, &docs).map_err(data)?;
            eprintln!("wrote {n} training pairs");
        }
        Command::Prompt(PromptCommand::Build {
            questions,
            question_id,
            style,
            shots,
            kind,
            train,
            answers_hint,
            templates,
            out,
        }) => {
            let qs = questions_of(&questions)?;
            let q = qs
                .iter()
                .find(|q| q.id == question_id)
                .ok_or_else(|| data(anyhow::anyhow!("question {question_id} not found")))?;
            let pool = match &train {
                Some(p) => questions_of(p)?,
                None => qs.clone(),
            };
            let pool: Vec<Question> = pool.into_iter().filter(|p| p.id != q.id).collect();
            let fewshot = if shots == 0 {
                Vec::new()
            } else {
                dataset::sample_fewshot(&pool, q.qtype, shots, seed).map_err(data)?
            };
            let hint = match &answers_hint {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(data)?;
                    let value: serde_json::Value = serde_json::from_str(&text).map_err(data)?;
                    let answers = read_answers_file(&value, &qs).map_err(data)?;
                    answers.get(&q.id).and_then(|(p, _)| p.as_ref()).and_then(predicted_hint)
                }
                None => None,
            };
            let templates = match &templates {
                Some(dir) => TemplateSet::load_dir(dir).map_err(usage)?,
                None => TemplateSet::embedded(),
            };
            let spec = PromptSpec {
                style,
                n_shots: shots,
                qtype: q.qtype,
                kind: match kind {
                    Kind2::Exact => AnswerKind::Exact,
                    Kind2::Ideal => AnswerKind::Ideal,
                },
            };
            let msgs = build_prompt(
                &templates,
                q,
                &q.snippet_texts(),
                &spec,
                &fewshot,
                hint.as_deref(),
                prompts::DEFAULT_SNIPPET_BUDGET,
            )
            .map_err(|e| match e {
                prompts::PromptError::Style(_) => usage(e),
                other => data(other),
            })?;
            write_json(&out, &msgs)?;
        }
        Command::Answers(AnswersCommand::Parse { raw, gold, out }) => {
            let qs = questions_of(&gold)?;
            let mut answers = HashMap::new();
            let mut errors = Vec::new();
            for q in &qs {
                let read = |suffix: &str| fs::read_to_string(raw.join(format!("{}.{suffix}.txt", q.id))).ok();
                let mut rec = AnswerRecord {
                    exact: None,
                    ideal: read("ideal").map(|s| s.trim().to_string()),
                };
                if q.qtype != QType::Summary {
                    if let Some(text) = read("exact") {
                        match parse_exact_answer(&text, q.qtype) {
                            Ok(e) => rec.exact = Some(e),
                            Err(e) => errors.push(serde_json::json!({ "id": q.id, "error": e.to_string() })),
                        }
                    }
                }
                if rec.exact.is_some() || rec.ideal.is_some() {
                    answers.insert(q.id.clone(), rec);
                }
            }
            let value = render_answers_file(&qs, &answers).map_err(data)?;
            write_json(&out, &value)?;
            println!(
                "{}",
                serde_json::json!({ "answered": answers.len(), "parse_errors": errors })
            );
        }
        Command::Eval(EvalCommand::PhaseA { run, gold, report }) => {
            let gold = dataset::gold_docs_map(&questions_of(&gold)?);
            let r = eval_phase_a(&read_runs(&run).map_err(data)?, &gold, &DEFAULT_RECALL_NS).map_err(data)?;
            write_json(&report, &r)?;
            println!("map_at10={}", r.map_at10);
        }
        Command::Eval(EvalCommand::PhaseB { answers, gold, report }) => {
            let qs = questions_of(&gold)?;
            let text = fs::read_to_string(&answers).map_err(data)?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(data)?;
            let predicted = read_answers_file(&value, &qs).map_err(data)?;
            let cases: Vec<PhaseBCase> = qs
                .iter()
                .filter_map(|q| {
                    let gold_exact = q.exact_answer.clone()?;
                    let (p, ideal) = predicted.get(&q.id).cloned().unwrap_or((None, None));
                    Some(PhaseBCase {
                        question_id: q.id.clone(),
                        gold_exact,
                        gold_ideal: q.ideal_answer.clone(),
                        predicted_exact: p,
                        predicted_ideal: ideal,
                    })
                })
                .collect();
            let r = eval_phase_b(&cases);
            write_json(&report, &r)?;
        }
        Command::Pipeline(_) => unreachable!("handled before dispatch"),
    }
    Ok(())
}

fn predicted_hint(p: &pubrank_core::metrics::PredictedExact) -> Option<String> {
    use pubrank_core::metrics::PredictedExact;
    match p {
        PredictedExact::YesNo(v) => v.map(|v| v.as_str().to_string()),
        PredictedExact::Factoid(v) | PredictedExact::List(v) => (!v.is_empty()).then(|| v.join(", ")),
    }
}
