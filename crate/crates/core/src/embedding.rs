//! Text → unit-norm vector providers and the `PRV1` vector file.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::{ClientError, ServiceClient};
use crate::corpus::Document;
use crate::par::{self, Execution};

pub const DEFAULT_DIMENSION: usize = 1024;
pub const DEFAULT_MAX_TOKENS: usize = 512;
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embed_batch called with no texts")]
    EmptyBatch,
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("provider returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("retryable failure embedding texts {range:?}: {message}")]
    Retryable { range: Range<usize>, message: String },
    #[error("embedding protocol error: {0}")]
    Protocol(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("vector file {path}: {message}")]
    File { path: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Unit-norm vector of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Accepts values that are already unit norm (within [`NORM_TOLERANCE`]).
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::InvalidVector("zero-length vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector("non-finite component".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbeddingError::InvalidVector(format!("norm {norm} is not 1")));
        }
        Ok(Self(values))
    }

    /// L2-normalizes `values` (computed in f64).
    pub fn normalized(values: &[f64]) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidVector("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::InvalidVector("zero vector".into()));
        }
        Self::new(values.iter().map(|v| (v / norm) as f32).collect())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    /// Cosine similarity; the dot product for unit vectors.
    pub fn cosine(&self, other: &Self) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// Sequential f64 dot product. Exact search and its test oracle both
/// accumulate in this order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProviderInfo {
    pub name: String,
    pub dimension: usize,
    pub max_tokens: usize,
}

impl EmbeddingProviderInfo {
    pub fn new(name: impl Into<String>, dimension: usize, max_tokens: usize) -> Result<Self, EmbeddingError> {
        if dimension == 0 || max_tokens == 0 {
            return Err(EmbeddingError::Config("dimension and max_tokens must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            dimension,
            max_tokens,
        })
    }
}

/// Keeps at most `max_tokens` whitespace-delimited tokens. Text that is
/// already short enough is returned unchanged; otherwise the prefix ends
/// at the last kept token.
pub fn truncate_text(text: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    let mut end = 0;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if in_token {
                in_token = false;
                end = i;
                if count == max_tokens {
                    // Only cut if another token follows.
                    if text[i..].trim_start().is_empty() {
                        return text;
                    }
                    return &text[..end];
                }
            }
        } else if !in_token {
            in_token = true;
            count += 1;
            if count > max_tokens {
                return &text[..end];
            }
        }
    }
    text
}

/// A text embedding backend.
pub trait EmbeddingProvider: Send + Sync {
    fn info(&self) -> &EmbeddingProviderInfo;

    /// Embeds texts that have already been truncated.
    fn embed_truncated(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    fn truncate<'a>(&self, text: &'a str) -> &'a str {
        truncate_text(text, self.info().max_tokens)
    }
}

/// Truncates each text to the provider's token limit, embeds, and checks
/// the result against the provider contract.
pub fn embed_batch<S: AsRef<str>>(
    provider: &dyn EmbeddingProvider,
    texts: &[S],
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if texts.is_empty() {
        return Err(EmbeddingError::EmptyBatch);
    }
    let truncated: Vec<String> = texts.iter().map(|t| provider.truncate(t.as_ref()).to_string()).collect();
    let vectors = provider.embed_truncated(&truncated)?;
    if vectors.len() != texts.len() {
        return Err(EmbeddingError::CountMismatch {
            expected: texts.len(),
            got: vectors.len(),
        });
    }
    let dim = provider.info().dimension;
    if let Some(v) = vectors.iter().find(|v| v.dimension() != dim) {
        return Err(EmbeddingError::Protocol(format!(
            "vector of dimension {} from a provider declaring {dim}",
            v.dimension()
        )));
    }
    Ok(vectors)
}

/// Lowercases and collapses whitespace; the mock embedder's view of text.
pub fn normalize_for_mock(text: &str) -> String {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deterministic stand-in for a bi-encoder: a pure function of
/// (normalized text, dimension, seed).
///
/// The normalized text is hashed to 64 bits, which keys a ChaCha8 stream
/// (`seed` selects the stream) that yields `dimension` standard normals.
///
/// # Panics
/// If `dimension < 8`.
pub fn mock_embed(text: &str, dimension: usize, seed: u64) -> EmbeddingVector {
    assert!(dimension >= 8, "mock embedder needs dimension >= 8");
    let norm = normalize_for_mock(text);
    let digest = Sha256::digest(norm.as_bytes());
    let key = u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(seed);
    let raw: Vec<f64> = (0..dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
    EmbeddingVector::normalized(&raw).expect("gaussian draws are finite and non-zero")
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    info: EmbeddingProviderInfo,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dimension < 8 {
            return Err(EmbeddingError::Config("mock embedder needs dimension >= 8".into()));
        }
        Ok(Self {
            info: EmbeddingProviderInfo::new("mock", dimension, DEFAULT_MAX_TOKENS)?,
            seed,
        })
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.info.max_tokens = max_tokens.max(1);
        self
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn info(&self) -> &EmbeddingProviderInfo {
        &self.info
    }

    fn embed_truncated(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        Ok(texts
            .iter()
            .map(|t| mock_embed(t, self.info.dimension, self.seed))
            .collect())
    }
}

/// Embeds through the `/embed` endpoint in fixed-size request batches.
pub struct RemoteEmbedder {
    client: Arc<ServiceClient>,
    info: EmbeddingProviderInfo,
    request_batch: usize,
}

impl RemoteEmbedder {
    pub fn new(client: Arc<ServiceClient>, dimension: usize, max_tokens: usize) -> Result<Self, EmbeddingError> {
        Ok(Self {
            client,
            info: EmbeddingProviderInfo::new("remote", dimension, max_tokens)?,
            request_batch: 32,
        })
    }

    pub fn with_request_batch(mut self, n: usize) -> Self {
        self.request_batch = n.max(1);
        self
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn info(&self) -> &EmbeddingProviderInfo {
        &self.info
    }

    fn embed_truncated(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for (b, chunk) in texts.chunks(self.request_batch).enumerate() {
            let start = b * self.request_batch;
            let range = start..start + chunk.len();
            let vectors = self.client.embed(chunk).map_err(|e| match e {
                e if e.is_retryable() => EmbeddingError::Retryable {
                    range: range.clone(),
                    message: e.to_string(),
                },
                ClientError::Protocol(m) => EmbeddingError::Protocol(m),
                other => EmbeddingError::Protocol(other.to_string()),
            })?;
            for v in vectors {
                if v.len() != self.info.dimension {
                    return Err(EmbeddingError::Protocol(format!(
                        "remote returned dimension {} but {} was configured",
                        v.len(),
                        self.info.dimension
                    )));
                }
                out.push(EmbeddingVector::new(v)?);
            }
        }
        Ok(out)
    }
}

/// Which document fields are embedded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedText {
    #[default]
    TitleAbstract,
    Abstract,
}

impl EmbedText {
    pub fn render(self, doc: &Document) -> String {
        match self {
            EmbedText::TitleAbstract => doc.title_and_abstract(),
            EmbedText::Abstract => doc.abstract_text.clone(),
        }
    }
}

/// Row-major matrix of unit vectors with their pmids.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    dimension: usize,
    pmids: Vec<String>,
    data: Vec<f32>,
}

const VECTOR_MAGIC: &[u8; 4] = b"PRV1";

impl VectorSet {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            pmids: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds from raw rows; every row must have `dimension` entries.
    pub fn from_rows(dimension: usize, pmids: Vec<String>, data: Vec<f32>) -> Result<Self, EmbeddingError> {
        if data.len() != pmids.len() * dimension {
            return Err(EmbeddingError::InvalidVector(format!(
                "{} floats do not form {} rows of dimension {dimension}",
                data.len(),
                pmids.len()
            )));
        }
        Ok(Self { dimension, pmids, data })
    }

    pub fn push(&mut self, pmid: impl Into<String>, v: &EmbeddingVector) -> Result<(), EmbeddingError> {
        if v.dimension() != self.dimension {
            return Err(EmbeddingError::InvalidVector(format!(
                "dimension {} does not match set dimension {}",
                v.dimension(),
                self.dimension
            )));
        }
        self.pmids.push(pmid.into());
        self.data.extend_from_slice(v.as_slice());
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.pmids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmids.is_empty()
    }

    pub fn pmids(&self) -> &[String] {
        &self.pmids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn write_to<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(VECTOR_MAGIC)?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.pmids.len() as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        for p in &self.pmids {
            w.write_all(&(p.len() as u32).to_le_bytes())?;
            w.write_all(p.as_bytes())?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        self.write_to(File::create(path)?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, EmbeddingError> {
        let bad = |m: &str| EmbeddingError::File {
            path: "<vectors>".into(),
            message: m.to_string(),
        };
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("missing header"))?;
        if &magic != VECTOR_MAGIC {
            return Err(bad("bad magic, expected PRV1"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        let dimension = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8).map_err(|_| bad("truncated header"))?;
        let count = u64::from_le_bytes(b8) as usize;
        let floats = count
            .checked_mul(dimension)
            .ok_or_else(|| bad("row count overflows"))?;
        let mut raw = vec![0u8; floats.checked_mul(4).ok_or_else(|| bad("row count overflows"))?];
        r.read_exact(&mut raw).map_err(|_| bad("truncated vector rows"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut pmids = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b4).map_err(|_| bad("truncated pmid table"))?;
            let mut s = vec![0u8; u32::from_le_bytes(b4) as usize];
            r.read_exact(&mut s).map_err(|_| bad("truncated pmid table"))?;
            pmids.push(String::from_utf8(s).map_err(|_| bad("pmid is not utf-8"))?);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(bad("trailing bytes after pmid table"));
        }
        Ok(Self { dimension, pmids, data })
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        Self::read_from(File::open(path)?).map_err(|e| match e {
            EmbeddingError::File { message, .. } => EmbeddingError::File {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Embeds every document in request-sized batches, in parallel when
/// allowed. Row order follows `docs`.
pub fn embed_corpus(
    provider: &dyn EmbeddingProvider,
    docs: &[Document],
    text: EmbedText,
    batch_size: usize,
    exec: Execution,
) -> Result<VectorSet, EmbeddingError> {
    let batches: Vec<&[Document]> = docs.chunks(batch_size.max(1)).collect();
    let embedded = par::try_map(exec, &batches, |batch| {
        let texts: Vec<String> = batch.iter().map(|d| text.render(d)).collect();
        embed_batch(provider, &texts)
    })?;
    let mut set = VectorSet::new(provider.info().dimension);
    for (batch, vectors) in batches.iter().zip(embedded) {
        for (doc, v) in batch.iter().zip(vectors) {
            set.push(doc.pmid.clone(), &v)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_text("a b c", 2), "a b");
        assert_eq!(truncate_text("  a  b ", 2), "  a  b ");
        assert_eq!(truncate_text("", 3), "");
        let long: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let text = long.join(" ");
        let cut = truncate_text(&text, 512);
        assert_eq!(cut.split_whitespace().count(), 512);
        assert!(text.starts_with(cut));
        let exact = long[..512].join("\n");
        assert_eq!(truncate_text(&exact, 512), exact);
    }

    #[test]
    fn mock_is_deterministic_and_normalized() {
        let a = mock_embed("insulin", 64, 7);
        let b = mock_embed("insulin", 64, 7);
        assert_eq!(a, b);
        assert!((l2_norm(a.as_slice()) - 1.0).abs() < 1e-5);
        assert_eq!(mock_embed("Text ", 64, 7), mock_embed("text", 64, 7));
        assert_ne!(mock_embed("text", 64, 1), mock_embed("text", 64, 2));
        assert!(a.cosine(&mock_embed("aspirin", 64, 7)) < 0.999);
    }

    #[test]
    fn embed_batch_checks_contract() {
        let m = MockEmbedder::new(16, 1).unwrap();
        assert!(matches!(embed_batch(&m, &[] as &[&str]), Err(EmbeddingError::EmptyBatch)));
        let v = embed_batch(&m, &["x y", "z"]).unwrap();
        assert_eq!(v.len(), 2);
        assert!(MockEmbedder::new(4, 1).is_err());
    }

    #[test]
    fn truncation_is_applied_before_embedding() {
        let m = MockEmbedder::new(16, 3).unwrap().with_max_tokens(2);
        let v = embed_batch(&m, &["a b c d"]).unwrap();
        assert_eq!(v[0], mock_embed("a b", 16, 3));
    }

    #[test]
    fn vector_file_layout() {
        let mut set = VectorSet::new(8);
        set.push("42", &mock_embed("x", 8, 0)).unwrap();
        let mut bytes = Vec::new();
        set.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"PRV1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 16 + 8 * 4 + 4 + 2);
        assert_eq!(VectorSet::read_from(bytes.as_slice()).unwrap(), set);
        assert!(VectorSet::read_from(&bytes[..bytes.len() - 1]).is_err());
    }
}
