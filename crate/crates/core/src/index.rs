//! Exact and HNSW nearest-neighbour search over unit vectors.
//!
//! Similarity is the dot product (cosine on unit vectors). Results are
//! ordered by score descending, ties by smaller numeric pmid.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{dot, l2_norm, EmbeddingVector, VectorSet};
use crate::par::{self, Execution};
use crate::run::{cmp_hits, RankedItem, RankedRun, Stage};

pub const INDEX_MAGIC: &[u8; 4] = b"PRIX";
pub const INDEX_VERSION: u32 = 1;
/// Build-time tolerance on stored vector norms (f32 storage rounding).
pub const BUILD_NORM_TOLERANCE: f64 = 1e-4;
const EXACT_CHUNK: usize = 4096;
const MAX_LEVEL: usize = 16;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("invalid index parameters: {0}")]
    Params(String),
    #[error("duplicate pmid {0} in vector set")]
    DuplicatePmid(String),
    #[error("vector for pmid {pmid} has norm {norm}, expected 1")]
    NotUnitNorm { pmid: String, norm: f64 },
    #[error("query has dimension {got}, index has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index file is corrupt: {0}")]
    Corrupt(String),
    #[error("index file version {found} is not supported (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Exact,
    Hnsw,
}

impl std::str::FromStr for IndexKind {
    type Err = IndexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(IndexKind::Exact),
            "hnsw" => Ok(IndexKind::Hnsw),
            other => Err(IndexError::Params(format!("unknown index kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Max neighbours per node above layer 0 (layer 0 allows twice this).
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Keys the per-ordinal level draws.
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub pmid: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Graph {
    /// links[node][layer] = neighbour ids; a node has `level + 1` layers.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    max_level: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    kind: IndexKind,
    params: HnswParams,
    vectors: VectorSet,
    graph: Option<Graph>,
}

/// (score, id) with a total order: higher score first is "greater", ties
/// resolved towards the smaller id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f64,
    id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Level of the node inserted at `ordinal`; depends only on (seed, ordinal).
fn sample_level(seed: u64, ordinal: usize, m: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ordinal as u64);
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let ml = 1.0 / (m as f64).ln();
    ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
}

impl VectorIndex {
    /// Builds an index; HNSW insertion is sequential in row order.
    pub fn build(vectors: VectorSet, kind: IndexKind, params: HnswParams) -> Result<Self, IndexError> {
        if kind == IndexKind::Hnsw {
            if params.m < 2 {
                return Err(IndexError::Params("M must be at least 2".into()));
            }
            if params.ef_construction < params.m {
                return Err(IndexError::Params("ef_construction must be at least M".into()));
            }
        }
        let mut seen = HashSet::with_capacity(vectors.len());
        for (i, pmid) in vectors.pmids().iter().enumerate() {
            if !seen.insert(pmid.as_str()) {
                return Err(IndexError::DuplicatePmid(pmid.clone()));
            }
            let norm = l2_norm(vectors.row(i));
            if !norm.is_finite() || (norm - 1.0).abs() > BUILD_NORM_TOLERANCE {
                return Err(IndexError::NotUnitNorm {
                    pmid: pmid.clone(),
                    norm,
                });
            }
        }
        let mut index = Self {
            kind,
            params,
            vectors,
            graph: None,
        };
        if kind == IndexKind::Hnsw {
            let mut graph = Graph {
                links: Vec::with_capacity(index.vectors.len()),
                entry: None,
                max_level: 0,
            };
            for i in 0..index.vectors.len() {
                index.insert(&mut graph, i as u32);
            }
            index.graph = Some(graph);
        }
        Ok(index)
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn dimension(&self) -> usize {
        self.vectors.dimension()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn pmids(&self) -> &[String] {
        self.vectors.pmids()
    }

    pub fn vectors(&self) -> &VectorSet {
        &self.vectors
    }

    fn sim(&self, q: &[f32], id: u32) -> f64 {
        dot(q, self.vectors.row(id as usize))
    }

    fn search_layer(&self, graph: &Graph, q: &[f32], entries: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited: HashSet<u32> = entries.iter().map(|e| e.id).collect();
        let mut candidates: BinaryHeap<Scored> = entries.iter().copied().collect();
        let mut results: BinaryHeap<Reverse<Scored>> = entries.iter().copied().map(Reverse).collect();
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().expect("results start non-empty").0;
            if c < worst && results.len() >= ef {
                break;
            }
            for &nb in &graph.links[c.id as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let s = Scored {
                    score: self.sim(q, nb),
                    id: nb,
                };
                let worst = results.peek().expect("results non-empty").0;
                if results.len() < ef || s > worst {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Neighbour-diversity heuristic: keep a candidate only if it is closer
    /// to the base than to any already kept neighbour, then back-fill with
    /// the pruned ones. `candidates` must be sorted best first.
    fn select_neighbors(&self, candidates: &[Scored], m: usize) -> Vec<u32> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned: Vec<Scored> = Vec::new();
        for &c in candidates {
            if kept.len() >= m {
                break;
            }
            let row = self.vectors.row(c.id as usize);
            let diverse = kept.iter().all(|k| dot(row, self.vectors.row(k.id as usize)) < c.score);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for p in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(p);
        }
        kept.into_iter().map(|s| s.id).collect()
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&self, graph: &mut Graph, id: u32) {
        let level = sample_level(self.params.seed, id as usize, self.params.m);
        graph.links.push(vec![Vec::new(); level + 1]);
        let Some(entry) = graph.entry else {
            graph.entry = Some(id);
            graph.max_level = level;
            return;
        };
        let q = self.vectors.row(id as usize);
        let mut eps = vec![Scored {
            score: self.sim(q, entry),
            id: entry,
        }];
        for layer in (level + 1..=graph.max_level).rev() {
            eps = self.search_layer(graph, q, &eps, 1, layer);
        }
        for layer in (0..=level.min(graph.max_level)).rev() {
            let found = self.search_layer(graph, q, &eps, self.params.ef_construction, layer);
            let chosen = self.select_neighbors(&found, self.params.m);
            graph.links[id as usize][layer] = chosen.clone();
            let cap = self.max_links(layer);
            for nb in chosen {
                let list = &mut graph.links[nb as usize][layer];
                list.push(id);
                if list.len() > cap {
                    let base = self.vectors.row(nb as usize);
                    let mut scored: Vec<Scored> = list
                        .iter()
                        .map(|&x| Scored {
                            score: dot(base, self.vectors.row(x as usize)),
                            id: x,
                        })
                        .collect();
                    scored.sort_by(|a, b| b.cmp(a));
                    let shrunk = self.select_neighbors(&scored, cap);
                    graph.links[nb as usize][layer] = shrunk;
                }
            }
            eps = found;
        }
        if level > graph.max_level {
            graph.max_level = level;
            graph.entry = Some(id);
        }
    }

    fn check_query(&self, q: &[f32], k: usize) -> Result<(), IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if q.len() != self.dimension() {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension(),
                got: q.len(),
            });
        }
        Ok(())
    }

    fn to_hits(&self, mut ids: Vec<Scored>, k: usize) -> Vec<SearchHit> {
        let pmids = self.vectors.pmids();
        ids.sort_by(|a, b| cmp_hits(a.score, &pmids[a.id as usize], b.score, &pmids[b.id as usize]));
        ids.truncate(k);
        ids.into_iter()
            .map(|s| SearchHit {
                pmid: pmids[s.id as usize].clone(),
                score: s.score,
            })
            .collect()
    }

    /// Full scan; the true top-k under the tie-break rule.
    pub fn query_exact(&self, q: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.check_query(q, k)?;
        let pmids = self.vectors.pmids();
        let cmp = |a: &Scored, b: &Scored| cmp_hits(a.score, &pmids[a.id as usize], b.score, &pmids[b.id as usize]);
        let n = self.len();
        let chunks = n.div_ceil(EXACT_CHUNK);
        let exec = if n >= 4 * EXACT_CHUNK {
            Execution::Parallel
        } else {
            Execution::Sequential
        };
        let partial = par::map_range(exec, chunks, |c| {
            let lo = c * EXACT_CHUNK;
            let hi = (lo + EXACT_CHUNK).min(n);
            let mut scored: Vec<Scored> = (lo..hi)
                .map(|i| Scored {
                    score: self.sim(q, i as u32),
                    id: i as u32,
                })
                .collect();
            if scored.len() > k {
                scored.select_nth_unstable_by(k - 1, cmp);
                scored.truncate(k);
            }
            scored
        });
        Ok(self.to_hits(partial.into_iter().flatten().collect(), k))
    }

    /// Top-k hits. Exact indexes scan; HNSW indexes use `ef_search`
    /// (default from the build parameters), widened to at least `k`.
    pub fn query(&self, q: &[f32], k: usize, ef_search: Option<usize>) -> Result<Vec<SearchHit>, IndexError> {
        self.check_query(q, k)?;
        let graph = match (&self.graph, self.kind) {
            (Some(g), IndexKind::Hnsw) => g,
            _ => return self.query_exact(q, k),
        };
        let Some(entry) = graph.entry else {
            return Ok(Vec::new());
        };
        let ef = ef_search.unwrap_or(self.params.ef_search).max(k);
        let mut eps = vec![Scored {
            score: self.sim(q, entry),
            id: entry,
        }];
        for layer in (1..=graph.max_level).rev() {
            eps = self.search_layer(graph, q, &eps, 1, layer);
        }
        let found = self.search_layer(graph, q, &eps, ef, 0);
        Ok(self.to_hits(found, k))
    }

    /// Walks the whole graph and reports the first broken invariant.
    pub fn validate_graph(&self) -> Result<(), String> {
        let Some(graph) = &self.graph else {
            return Ok(());
        };
        let n = self.len();
        if graph.links.len() != n {
            return Err(format!("{} link lists for {n} nodes", graph.links.len()));
        }
        if n > 0 {
            let entry = graph.entry.ok_or("non-empty graph without entry point")? as usize;
            if graph.links[entry].len() != graph.max_level + 1 {
                return Err("entry point is not on the top layer".into());
            }
        }
        for (node, layers) in graph.links.iter().enumerate() {
            if layers.is_empty() || layers.len() > graph.max_level + 1 {
                return Err(format!("node {node} has {} layers", layers.len()));
            }
            for (layer, list) in layers.iter().enumerate() {
                if list.len() > self.max_links(layer) {
                    return Err(format!("node {node} has {} links on layer {layer}", list.len()));
                }
                let mut seen = HashSet::new();
                for &nb in list {
                    let nb = nb as usize;
                    if nb >= n {
                        return Err(format!("node {node} links to missing node {nb}"));
                    }
                    if nb == node {
                        return Err(format!("node {node} links to itself"));
                    }
                    if graph.links[nb].len() <= layer {
                        return Err(format!("node {node} links to {nb} above its level on layer {layer}"));
                    }
                    if !seen.insert(nb) {
                        return Err(format!("node {node} lists {nb} twice on layer {layer}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(INDEX_MAGIC);
        b.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        b.push(match self.kind {
            IndexKind::Exact => 0,
            IndexKind::Hnsw => 1,
        });
        b.extend_from_slice(&(self.dimension() as u32).to_le_bytes());
        b.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in [self.params.m, self.params.ef_construction, self.params.ef_search] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.extend_from_slice(&self.params.seed.to_le_bytes());
        for x in self.vectors.data() {
            b.extend_from_slice(&x.to_le_bytes());
        }
        for p in self.vectors.pmids() {
            b.extend_from_slice(&(p.len() as u32).to_le_bytes());
            b.extend_from_slice(p.as_bytes());
        }
        if let Some(g) = &self.graph {
            b.extend_from_slice(&g.entry.map_or(u64::MAX, u64::from).to_le_bytes());
            b.extend_from_slice(&(g.max_level as u32).to_le_bytes());
            for layers in &g.links {
                b.push(layers.len() as u8);
                for list in layers {
                    b.extend_from_slice(&(list.len() as u32).to_le_bytes());
                    for nb in list {
                        b.extend_from_slice(&nb.to_le_bytes());
                    }
                }
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |m: &str| IndexError::Corrupt(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != INDEX_MAGIC {
            return Err(corrupt("missing PRIX header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != INDEX_VERSION {
            return Err(IndexError::Version {
                found: version,
                supported: INDEX_VERSION,
            });
        }
        if bytes.len() < 8 + 32 {
            return Err(corrupt("file too short for checksum"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Cursor { buf: body, pos: 8 };
        let kind = match r.u8()? {
            0 => IndexKind::Exact,
            1 => IndexKind::Hnsw,
            k => return Err(IndexError::Corrupt(format!("unknown kind tag {k}"))),
        };
        let dimension = r.u32()? as usize;
        let count = r.u64()? as usize;
        let params = HnswParams {
            m: r.u32()? as usize,
            ef_construction: r.u32()? as usize,
            ef_search: r.u32()? as usize,
            seed: r.u64()?,
        };
        let floats = count.checked_mul(dimension).ok_or_else(|| corrupt("size overflow"))?;
        let raw = r.take(floats.checked_mul(4).ok_or_else(|| corrupt("size overflow"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut pmids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let s = r.take(len)?;
            pmids.push(String::from_utf8(s.to_vec()).map_err(|_| corrupt("pmid is not utf-8"))?);
        }
        let vectors = VectorSet::from_rows(dimension, pmids, data).map_err(|e| IndexError::Corrupt(e.to_string()))?;
        let graph = if kind == IndexKind::Hnsw {
            let entry = match r.u64()? {
                u64::MAX => None,
                e => Some(e as u32),
            };
            let max_level = r.u32()? as usize;
            let mut links = Vec::with_capacity(count);
            for _ in 0..count {
                let layers = r.u8()? as usize;
                let mut node = Vec::with_capacity(layers);
                for _ in 0..layers {
                    let len = r.u32()? as usize;
                    let mut list = Vec::with_capacity(len.min(1024));
                    for _ in 0..len {
                        list.push(r.u32()?);
                    }
                    node.push(list);
                }
                links.push(node);
            }
            Some(Graph {
                links,
                entry,
                max_level,
            })
        } else {
            None
        };
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let index = Self {
            kind,
            params,
            vectors,
            graph,
        };
        index.validate_graph().map_err(IndexError::Corrupt)?;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, self.to_bytes()).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| IndexError::Corrupt("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Runs one query per question and returns retrieval-stage runs in input order.
pub fn search_batch(
    index: &VectorIndex,
    queries: &[(String, EmbeddingVector)],
    k: usize,
    ef_search: Option<usize>,
    exec: Execution,
) -> Result<Vec<RankedRun>, IndexError> {
    par::try_map(exec, queries, |(qid, v)| {
        let hits = index.query(v.as_slice(), k, ef_search)?;
        Ok(RankedRun::new(
            qid.clone(),
            Stage::Retrieval,
            hits.into_iter().map(|h| RankedItem::new(h.pmid, h.score)).collect(),
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::mock_embed;

    fn random_set(n: usize, dim: usize, seed: u64) -> VectorSet {
        let mut set = VectorSet::new(dim);
        for i in 0..n {
            set.push((i + 1).to_string(), &mock_embed(&format!("doc {i}"), dim, seed)).unwrap();
        }
        set
    }

    #[test]
    fn empty_index_answers_empty() {
        for kind in [IndexKind::Exact, IndexKind::Hnsw] {
            let idx = VectorIndex::build(VectorSet::new(8), kind, HnswParams::default()).unwrap();
            assert!(idx.query(&[0.0; 8], 5, None).unwrap().is_empty());
            let back = VectorIndex::from_bytes(&idx.to_bytes()).unwrap();
            assert!(back.is_empty());
        }
    }

    #[test]
    fn self_retrieval_and_clamp() {
        let set = random_set(100, 16, 1);
        let q = set.row(41).to_vec();
        let idx = VectorIndex::build(set, IndexKind::Exact, HnswParams::default()).unwrap();
        assert_eq!(idx.len(), 100);
        let hits = idx.query(&q, 5, None).unwrap();
        assert_eq!(hits[0].pmid, "42");
        assert!((hits[0].score - 1.0).abs() < 1e-5);
        assert_eq!(idx.query(&q, 1000, None).unwrap().len(), 100);
        assert!(matches!(idx.query(&q[..3], 5, None), Err(IndexError::DimensionMismatch { .. })));
        assert!(matches!(idx.query(&q, 0, None), Err(IndexError::ZeroK)));
    }

    #[test]
    fn ties_break_on_numeric_pmid() {
        let v = mock_embed("same", 8, 0);
        let mut set = VectorSet::new(8);
        for p in ["100", "9", "20"] {
            set.push(p, &v).unwrap();
        }
        let idx = VectorIndex::build(set, IndexKind::Exact, HnswParams::default()).unwrap();
        let hits: Vec<_> = idx.query(v.as_slice(), 3, None).unwrap().into_iter().map(|h| h.pmid).collect();
        assert_eq!(hits, ["9", "20", "100"]);
    }

    #[test]
    fn build_rejects_bad_input() {
        let v = mock_embed("x", 8, 0);
        let mut set = VectorSet::new(8);
        set.push("1", &v).unwrap();
        set.push("1", &v).unwrap();
        assert!(matches!(
            VectorIndex::build(set, IndexKind::Exact, HnswParams::default()),
            Err(IndexError::DuplicatePmid(_))
        ));
        let raw = VectorSet::from_rows(2, vec!["1".into()], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            VectorIndex::build(raw, IndexKind::Exact, HnswParams::default()),
            Err(IndexError::NotUnitNorm { .. })
        ));
        let bad = HnswParams {
            m: 1,
            ..HnswParams::default()
        };
        assert!(VectorIndex::build(VectorSet::new(8), IndexKind::Hnsw, bad).is_err());
    }

    #[test]
    fn hnsw_build_is_deterministic_and_valid() {
        let params = HnswParams {
            m: 4,
            ef_construction: 16,
            ef_search: 16,
            seed: 9,
        };
        let a = VectorIndex::build(random_set(300, 16, 2), IndexKind::Hnsw, params).unwrap();
        let b = VectorIndex::build(random_set(300, 16, 2), IndexKind::Hnsw, params).unwrap();
        assert_eq!(a, b);
        a.validate_graph().unwrap();
    }

    #[test]
    fn persistence_roundtrip_and_corruption() {
        let set = random_set(200, 16, 3);
        let idx = VectorIndex::build(set.clone(), IndexKind::Hnsw, HnswParams::default()).unwrap();
        let bytes = idx.to_bytes();
        let back = VectorIndex::from_bytes(&bytes).unwrap();
        for i in 0..20 {
            let q = set.row(i * 7);
            assert_eq!(idx.query(q, 10, None).unwrap(), back.query(q, 10, None).unwrap());
        }
        assert!(matches!(
            VectorIndex::from_bytes(&bytes[..bytes.len() - 10]),
            Err(IndexError::Corrupt(_))
        ));
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(VectorIndex::from_bytes(&flipped), Err(IndexError::Corrupt(_))));
        let mut versioned = bytes;
        versioned[4] = 9;
        assert!(matches!(
            VectorIndex::from_bytes(&versioned),
            Err(IndexError::Version { found: 9, supported: 1 })
        ));
    }
}
