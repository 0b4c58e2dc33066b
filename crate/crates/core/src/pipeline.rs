//! End-to-end Phase A run: retrieve, pointwise re-rank, listwise re-rank,
//! fuse, evaluate. Every stage's run file is persisted next to a manifest
//! that pins the config, seeds, fixture digests and output checksums.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::{canonical_json, ClientConfig, FixtureMode, FixtureStore, ServiceClient};
use crate::corpus::{corpus_map, load_corpus};
use crate::dataset::{gold_docs_map, load_bioasq, Question};
use crate::embedding::{embed_batch, EmbeddingProvider, MockEmbedder, RemoteEmbedder};
use crate::fusion::{fuse_all, FusionConfig};
use crate::index::{search_batch, VectorIndex};
use crate::metrics::{eval_phase_a, PhaseAReport, DEFAULT_RECALL_NS};
use crate::par::Execution;
use crate::rerank::{llm_batch, pointwise_batch, write_audit, ChatModel, PairScorer, DEFAULT_DOC_CHAR_BUDGET};
use crate::run::{write_runs, RankedRun};

pub const MANIFEST_NAME: &str = "manifest.json";
pub const REPORT_NAME: &str = "report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("{stage}: upstream service failed: {message}")]
    Upstream { stage: &'static str, message: String },
}

impl PipelineError {
    /// Process exit code: 1 config, 2 data, 3 upstream.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data { .. } => 2,
            PipelineError::Upstream { .. } => 3,
        }
    }

    fn data(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Data {
            stage,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Remote,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(ProviderKind::Mock),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!("unknown provider {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub index: PathBuf,
    /// BioASQ JSON; gold documents, when present, drive evaluation.
    pub questions: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KValues {
    pub retrieve: usize,
    pub cross: usize,
    #[serde(rename = "final")]
    pub final_k: usize,
}

impl Default for KValues {
    fn default() -> Self {
        Self {
            retrieve: 1000,
            cross: 30,
            final_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub embed: ProviderKind,
    pub max_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_mode: Option<FixtureMode>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            embed: ProviderKind::Mock,
            max_tokens: 512,
            fixture_mode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub doc_char_budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ef_search: Option<usize>,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            doc_char_budget: DEFAULT_DOC_CHAR_BUDGET,
            ef_search: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    #[serde(default)]
    pub jobs: usize,
    pub paths: Paths,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub k: KValues,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub rerank: RerankConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let k = &self.k;
        if k.final_k == 0 || k.cross < k.final_k || k.retrieve < k.cross {
            return Err(PipelineError::Config(format!(
                "k values must satisfy retrieve >= cross >= final >= 1, got {} / {} / {}",
                k.retrieve, k.cross, k.final_k
            )));
        }
        if k.cross > crate::rerank::MAX_LISTWISE_CANDIDATES {
            return Err(PipelineError::Config(format!(
                "cross k {} exceeds the listwise limit {}",
                k.cross,
                crate::rerank::MAX_LISTWISE_CANDIDATES
            )));
        }
        self.fusion.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// sha256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex(&Sha256::digest(canonical_json(&v).as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Model backends used by the stages.
pub struct Services {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub scorer: Arc<dyn PairScorer>,
    pub chat: Arc<dyn ChatModel>,
    pub fixtures: Option<Arc<FixtureStore>>,
}

impl Services {
    /// Client from the environment, with config paths and mode taking
    /// precedence. The embedder dimension must match the index.
    pub fn from_config(config: &PipelineConfig, dimension: usize) -> Result<Self, PipelineError> {
        let mut cc = ClientConfig::from_env().map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(dir) = &config.paths.fixtures {
            cc.fixtures_dir = Some(dir.clone());
        }
        if let Some(mode) = config.provider.fixture_mode {
            cc.fixture_mode = Some(mode);
        }
        let (client, fixtures) = cc.build().map_err(|e| PipelineError::Config(e.to_string()))?;
        Self::with_client(Arc::new(client), fixtures, config, dimension)
    }

    pub fn with_client(
        client: Arc<ServiceClient>,
        fixtures: Option<Arc<FixtureStore>>,
        config: &PipelineConfig,
        dimension: usize,
    ) -> Result<Self, PipelineError> {
        let cfg_err = |e: crate::embedding::EmbeddingError| PipelineError::Config(e.to_string());
        let embedder: Arc<dyn EmbeddingProvider> = match config.provider.embed {
            ProviderKind::Mock => Arc::new(
                MockEmbedder::new(dimension, config.seed)
                    .map_err(cfg_err)?
                    .with_max_tokens(config.provider.max_tokens),
            ),
            ProviderKind::Remote => {
                Arc::new(RemoteEmbedder::new(client.clone(), dimension, config.provider.max_tokens).map_err(cfg_err)?)
            }
        };
        Ok(Self {
            embedder,
            scorer: client.clone(),
            chat: client,
            fixtures,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReports {
    pub retrieval: PhaseAReport,
    pub crossencoder: PhaseAReport,
    pub llm: PhaseAReport,
    pub fused: PhaseAReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub hnsw_seed: u64,
    pub index_kind: crate::index::IndexKind,
    pub questions: usize,
    pub fixture_mode: Option<FixtureMode>,
    pub fixture_digests: Vec<String>,
    /// File name → sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub retrieval: Vec<RankedRun>,
    pub cross30: Vec<RankedRun>,
    pub cross10: Vec<RankedRun>,
    pub llm10: Vec<RankedRun>,
    pub fused: Vec<RankedRun>,
    pub report: Option<StageReports>,
    pub manifest: Manifest,
}

fn upstream_or_data(stage: &'static str, e: crate::rerank::RerankError) -> PipelineError {
    if e.is_upstream() {
        PipelineError::Upstream {
            stage,
            message: e.to_string(),
        }
    } else {
        PipelineError::data(stage, e)
    }
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::data("manifest", format!("{}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Loads inputs named by the config and runs every stage.
pub fn run_pipeline(config: &PipelineConfig, services: Option<Services>) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let index = VectorIndex::load(&config.paths.index).map_err(|e| {
        PipelineError::data("index", format!("cannot load index {}: {e}", config.paths.index.display()))
    })?;
    let questions = load_bioasq(&config.paths.questions).map_err(|e| PipelineError::data("questions", e))?;
    let docs = load_corpus(&config.paths.corpus).map_err(|e| PipelineError::data("corpus", e))?;
    let services = match services {
        Some(s) => s,
        None => Services::from_config(config, index.dimension())?,
    };
    crate::par::with_jobs(config.jobs, || run_stages(config, &index, &questions, docs, &services))
}

fn run_stages(
    config: &PipelineConfig,
    index: &VectorIndex,
    questions: &[Question],
    docs: Vec<crate::corpus::Document>,
    services: &Services,
) -> Result<PipelineOutput, PipelineError> {
    let exec = Execution::default();
    let corpus = corpus_map(docs);
    let bodies: HashMap<String, String> = questions.iter().map(|q| (q.id.clone(), q.body.clone())).collect();

    let texts: Vec<&str> = questions.iter().map(|q| q.body.as_str()).collect();
    let vectors = embed_batch(services.embedder.as_ref(), &texts).map_err(|e| {
        if matches!(e, crate::embedding::EmbeddingError::Retryable { .. }) {
            PipelineError::Upstream {
                stage: "embed",
                message: e.to_string(),
            }
        } else {
            PipelineError::data("embed", e)
        }
    })?;
    let queries: Vec<(String, _)> = questions.iter().map(|q| q.id.clone()).zip(vectors).collect();
    let retrieval = search_batch(index, &queries, config.k.retrieve, config.rerank.ef_search, exec)
        .map_err(|e| PipelineError::data("retrieve", e))?;
    let nonempty: Vec<RankedRun> = retrieval.iter().filter(|r| !r.is_empty()).cloned().collect();
    if nonempty.len() != retrieval.len() {
        return Err(PipelineError::data("retrieve", "index returned no candidates"));
    }

    let cross30 = pointwise_batch(&bodies, &retrieval, &corpus, services.scorer.as_ref(), config.k.cross, exec)
        .map_err(|e| upstream_or_data("crossencoder", e))?;
    let cross10: Vec<RankedRun> = cross30.iter().map(|r| r.truncated(config.k.final_k)).collect();
    let llm = llm_batch(
        &bodies,
        &cross30,
        &corpus,
        services.chat.as_ref(),
        config.k.final_k,
        config.rerank.doc_char_budget,
        exec,
    )
    .map_err(|e| upstream_or_data("llm", e))?;
    let (llm10, exchanges): (Vec<RankedRun>, Vec<_>) = llm.into_iter().unzip();
    let fused = fuse_all(&cross10, &llm10, &config.fusion).map_err(|e| PipelineError::data("fuse", e))?;

    let out = &config.paths.out_dir;
    fs::create_dir_all(out).map_err(|e| PipelineError::data("output", format!("{}: {e}", out.display())))?;
    let files = [
        ("retrieval.jsonl", &retrieval),
        ("cross30.jsonl", &cross30),
        ("cross10.jsonl", &cross10),
        ("llm10.jsonl", &llm10),
        ("fused.jsonl", &fused),
    ];
    let mut outputs = BTreeMap::new();
    for (name, runs) in files {
        let path = out.join(name);
        write_runs(&path, runs).map_err(|e| PipelineError::data("output", e))?;
        outputs.insert(name.to_string(), sha256_file(&path)?);
    }
    write_audit(&out.join("audit"), &exchanges).map_err(|e| PipelineError::data("output", e))?;

    let gold = gold_docs_map(questions);
    let report = if gold.values().any(|g| !g.is_empty()) {
        let eval = |runs: &[RankedRun]| {
            eval_phase_a(runs, &gold, &DEFAULT_RECALL_NS).map_err(|e| PipelineError::data("evaluate", e))
        };
        let r = StageReports {
            retrieval: eval(&retrieval)?,
            crossencoder: eval(&cross10)?,
            llm: eval(&llm10)?,
            fused: eval(&fused)?,
        };
        let path = out.join(REPORT_NAME);
        let text = serde_json::to_string_pretty(&r).expect("report serializes") + "\n";
        fs::write(&path, text).map_err(|e| PipelineError::data("output", format!("{}: {e}", path.display())))?;
        outputs.insert(REPORT_NAME.to_string(), sha256_file(&path)?);
        Some(r)
    } else {
        None
    };

    let manifest = Manifest {
        config_hash: config.hash(),
        seed: config.seed,
        hnsw_seed: index.params().seed,
        index_kind: index.kind(),
        questions: questions.len(),
        fixture_mode: services.fixtures.as_ref().map(|f| f.mode()),
        fixture_digests: services.fixtures.as_ref().map(|f| f.used_digests()).unwrap_or_default(),
        outputs,
    };
    let path = out.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| PipelineError::data("output", format!("{}: {e}", path.display())))?;

    Ok(PipelineOutput {
        retrieval,
        cross30,
        cross10,
        llm10,
        fused,
        report,
        manifest,
    })
}
