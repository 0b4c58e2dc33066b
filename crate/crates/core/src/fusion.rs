//! Two-system rank fusion and weight grid search.
//!
//! Fusion works on rank points only: the item at 1-based rank `r` of a
//! window of size `K` is worth `K + 1 - r`, items outside the window 0.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{map_at10, GoldDocs, MetricsError};
use crate::par::{self, Execution};
use crate::run::{cmp_pmid, RankedItem, RankedRun, Stage};

pub const DEFAULT_RANK_POINTS_K: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("question ids differ between runs: only in A {only_a:?}, only in B {only_b:?}")]
    IdMismatch { only_a: Vec<String>, only_b: Vec<String> },
    #[error("no gold documents for question {0}")]
    MissingGold(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Nominate,
    Weighted,
}

impl std::str::FromStr for FusionMode {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nominate" => Ok(FusionMode::Nominate),
            "weighted" => Ok(FusionMode::Weighted),
            other => Err(FusionError::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub ka: usize,
    pub k_total: usize,
    pub w1: f64,
    pub w2: f64,
    pub rank_points_k: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Weighted,
            ka: 6,
            k_total: 10,
            w1: 1.0,
            w2: 7.0,
            rank_points_k: DEFAULT_RANK_POINTS_K,
        }
    }
}

impl FusionConfig {
    pub fn weighted(w1: f64, w2: f64) -> Self {
        Self {
            mode: FusionMode::Weighted,
            w1,
            w2,
            ..Self::default()
        }
    }

    pub fn nominate(ka: usize) -> Self {
        Self {
            mode: FusionMode::Nominate,
            ka,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.k_total == 0 {
            return Err(FusionError::Config("k_total must be at least 1".into()));
        }
        if self.rank_points_k == 0 {
            return Err(FusionError::Config("rank_points_k must be at least 1".into()));
        }
        match self.mode {
            FusionMode::Nominate if self.ka > self.k_total => {
                Err(FusionError::Config(format!("ka = {} exceeds k_total = {}", self.ka, self.k_total)))
            }
            FusionMode::Weighted
                if !(self.w1.is_finite() && self.w2.is_finite())
                    || self.w1 < 0.0
                    || self.w2 < 0.0
                    || self.w1 + self.w2 <= 0.0 =>
            {
                Err(FusionError::Config(format!(
                    "weights must be non-negative with a positive sum, got ({}, {})",
                    self.w1, self.w2
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Rank points for the first `n` ranks of a window of size `k`.
pub fn rank_points_scores(n: usize, k: usize) -> Vec<f64> {
    (0..n).map(|i| k.saturating_sub(i) as f64).collect()
}

/// pmid → rank points over the first `k` items of `run`.
pub fn rank_points(run: &RankedRun, k: usize) -> HashMap<&str, f64> {
    run.pmids()
        .take(k)
        .zip(rank_points_scores(k, k))
        .collect()
}

/// First `ka` of A, then B skipping chosen items, then the rest of A.
pub fn fuse_nominate(a: &RankedRun, b: &RankedRun, config: &FusionConfig) -> RankedRun {
    let k = config.k_total;
    let mut chosen: Vec<&str> = Vec::with_capacity(k);
    let mut used = HashSet::new();
    let sources = a.pmids().take(config.ka.min(k)).chain(b.pmids()).chain(a.pmids());
    for p in sources {
        if chosen.len() >= k {
            break;
        }
        if used.insert(p) {
            chosen.push(p);
        }
    }
    RankedRun::from_order(a.question_id.clone(), Stage::Fused, &chosen)
}

/// `w1 * points_A + w2 * points_B`; ties go to higher B points, then the
/// smaller pmid.
pub fn fuse_weighted(a: &RankedRun, b: &RankedRun, config: &FusionConfig) -> RankedRun {
    let k = config.rank_points_k;
    let pa = rank_points(a, k);
    let pb = rank_points(b, k);
    let union: BTreeSet<&str> = pa.keys().chain(pb.keys()).copied().collect();
    let mut scored: Vec<(f64, f64, &str)> = union
        .into_iter()
        .map(|p| {
            let sa = pa.get(p).copied().unwrap_or(0.0);
            let sb = pb.get(p).copied().unwrap_or(0.0);
            (config.w1 * sa + config.w2 * sb, sb, p)
        })
        .collect();
    scored.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then_with(|| y.1.total_cmp(&x.1))
            .then_with(|| cmp_pmid(x.2, y.2))
    });
    scored.truncate(config.k_total);
    let items = scored.into_iter().map(|(s, _, p)| RankedItem::new(p, s)).collect();
    RankedRun::new(a.question_id.clone(), Stage::Fused, items)
}

pub fn fuse(a: &RankedRun, b: &RankedRun, config: &FusionConfig) -> RankedRun {
    match config.mode {
        FusionMode::Nominate => fuse_nominate(a, b, config),
        FusionMode::Weighted => fuse_weighted(a, b, config),
    }
}

/// Pairs runs by question id; both sides must cover the same questions.
/// Output follows A's order.
pub fn align_runs<'a>(
    runs_a: &'a [RankedRun],
    runs_b: &'a [RankedRun],
) -> Result<Vec<(&'a RankedRun, &'a RankedRun)>, FusionError> {
    let bmap: HashMap<&str, &RankedRun> = runs_b.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let aset: BTreeSet<&str> = runs_a.iter().map(|r| r.question_id.as_str()).collect();
    let bset: BTreeSet<&str> = bmap.keys().copied().collect();
    if aset != bset {
        return Err(FusionError::IdMismatch {
            only_a: aset.difference(&bset).map(|s| s.to_string()).collect(),
            only_b: bset.difference(&aset).map(|s| s.to_string()).collect(),
        });
    }
    Ok(runs_a.iter().map(|a| (a, bmap[a.question_id.as_str()])).collect())
}

pub fn fuse_all(
    runs_a: &[RankedRun],
    runs_b: &[RankedRun],
    config: &FusionConfig,
) -> Result<Vec<RankedRun>, FusionError> {
    config.validate()?;
    Ok(align_runs(runs_a, runs_b)?
        .into_iter()
        .map(|(a, b)| fuse(a, b, config))
        .collect())
}

/// Candidate weight pairs, in ascending lexicographic (w1, w2) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightGrid {
    pairs: Vec<(u32, u32)>,
}

impl WeightGrid {
    /// All `(w1, w2)` in `0..=max` squared except `(0, 0)`.
    pub fn integer(max: u32) -> Self {
        let pairs = (0..=max)
            .flat_map(|w1| (0..=max).map(move |w2| (w1, w2)))
            .filter(|&p| p != (0, 0))
            .collect();
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }
}

impl Default for WeightGrid {
    fn default() -> Self {
        Self::integer(10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub w1: u32,
    pub w2: u32,
    pub map_at10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub w1: u32,
    pub w2: u32,
    pub map_at10: f64,
    pub table: Vec<GridRow>,
}

/// Exhaustive MAP@10 over the grid. The best MAP wins; ties go to the
/// lexicographically smallest `(w1, w2)`.
pub fn grid_search_weights(
    runs_a: &[RankedRun],
    runs_b: &[RankedRun],
    gold: &HashMap<String, GoldDocs>,
    grid: &WeightGrid,
    base: &FusionConfig,
    exec: Execution,
) -> Result<GridSearchResult, FusionError> {
    let pairs = align_runs(runs_a, runs_b)?;
    if grid.pairs.is_empty() {
        return Err(FusionError::Config("empty weight grid".into()));
    }
    let mut sub_gold = HashMap::with_capacity(pairs.len());
    for (a, _) in &pairs {
        let g = gold
            .get(&a.question_id)
            .filter(|g| !g.is_empty())
            .ok_or_else(|| FusionError::MissingGold(a.question_id.clone()))?;
        sub_gold.insert(a.question_id.clone(), g.clone());
    }
    let rows = par::try_map(exec, &grid.pairs, |&(w1, w2)| {
        let cfg = FusionConfig {
            mode: FusionMode::Weighted,
            w1: w1 as f64,
            w2: w2 as f64,
            ..*base
        };
        let fused: Vec<RankedRun> = pairs.iter().map(|(a, b)| fuse_weighted(a, b, &cfg)).collect();
        Ok::<_, FusionError>(GridRow {
            w1,
            w2,
            map_at10: map_at10(&fused, &sub_gold)?,
        })
    })?;
    let mut table = rows;
    table.sort_by_key(|r| (r.w1, r.w2));
    let best = table
        .iter()
        .copied()
        .reduce(|best, r| if r.map_at10 > best.map_at10 { r } else { best })
        .expect("grid is non-empty");
    Ok(GridSearchResult {
        w1: best.w1,
        w2: best.w2,
        map_at10: best.map_at10,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &[&str]) -> RankedRun {
        RankedRun::from_order("q", Stage::Crossencoder, p)
    }

    fn order(r: &RankedRun) -> Vec<&str> {
        r.pmids().collect()
    }

    #[test]
    fn points() {
        let r = run(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k"]);
        let p = rank_points(&r, 10);
        assert_eq!(p["a"], 10.0);
        assert_eq!(p["j"], 1.0);
        assert!(!p.contains_key("k"));
    }

    #[test]
    fn nominate_example() {
        let a = run(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let b = run(&["x", "a", "y", "b", "z", "q", "r", "s", "t", "u"]);
        let out = fuse_nominate(&a, &b, &FusionConfig::nominate(6));
        assert_eq!(order(&out), ["a", "b", "c", "d", "e", "f", "x", "y", "z", "q"]);
        assert_eq!(order(&fuse_nominate(&a, &a, &FusionConfig::nominate(6))), order(&a));
        assert_eq!(order(&fuse_nominate(&a, &b, &FusionConfig::nominate(10))), order(&a));
        let short_b = run(&["a"]);
        assert_eq!(order(&fuse_nominate(&a, &short_b, &FusionConfig::nominate(2))), order(&a));
    }

    #[test]
    fn weighted_example() {
        let a = run(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let b = run(&["e", "x"]);
        let out = fuse_weighted(&a, &b, &FusionConfig::weighted(1.0, 7.0));
        assert_eq!(out.items[0], RankedItem::new("e", 76.0));
        assert_eq!(out.items[1], RankedItem::new("x", 63.0));
        assert_eq!(out.items[2], RankedItem::new("a", 10.0));
        let pure_a = fuse_weighted(&a, &b, &FusionConfig::weighted(1.0, 0.0));
        assert_eq!(order(&pure_a), order(&a));
        let scaled = fuse_weighted(&a, &b, &FusionConfig::weighted(2.0, 14.0));
        assert_eq!(order(&scaled), order(&out));
    }

    #[test]
    fn config_validation() {
        assert!(FusionConfig::weighted(0.0, 0.0).validate().is_err());
        assert!(FusionConfig::nominate(11).validate().is_err());
        assert!(FusionConfig::default().validate().is_ok());
    }

    #[test]
    fn grid_tie_break_and_mismatch() {
        let a = vec![run(&["a", "b"])];
        let gold: HashMap<String, GoldDocs> = [("q".to_string(), ["a".to_string()].into())].into();
        let res = grid_search_weights(&a, &a, &gold, &WeightGrid::default(), &FusionConfig::default(), Execution::Sequential)
            .unwrap();
        assert_eq!((res.w1, res.w2), (0, 1));
        assert_eq!(res.table.len(), 120);
        let other = vec![RankedRun::from_order("r", Stage::Llm, &["a"])];
        assert!(matches!(
            grid_search_weights(&a, &other, &gold, &WeightGrid::default(), &FusionConfig::default(), Execution::Sequential),
            Err(FusionError::IdMismatch { .. })
        ));
    }
}
