//! Filtered ranking evaluation: MRR and Hits@{1,3,10}.
//!
//! Ties are broken by mean rank: the gold entity is placed after every
//! strictly better candidate and after half (rounded down) of the
//! candidates with an identical score.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::kg::{KnowledgeGraph, Query, Split, TruthIndex};
use crate::model::DSparsE;
use crate::{kernels, Error, Real, Result};

/// Queries scored per batch during evaluation.
const EVAL_CHUNK: usize = 256;

/// Anything that scores every entity as the object of `(s, r)`.
pub trait Scorer: Sync {
    fn n_entities(&self) -> usize;

    /// Row-major `B × n_entities` scores; higher means more plausible.
    fn score(&self, subjects: &[usize], relations: &[usize]) -> Result<Vec<Real>>;
}

impl Scorer for DSparsE {
    fn n_entities(&self) -> usize {
        self.config().n_entities
    }

    fn score(&self, subjects: &[usize], relations: &[usize]) -> Result<Vec<Real>> {
        self.predict(subjects, relations)
    }
}

/// Rank of `gold` among all entities except the other known answers.
///
/// `filter` is the sorted set of known objects and must contain `gold`.
pub fn filtered_rank(scores: &[Real], gold: usize, filter: &[usize]) -> Result<usize> {
    debug_assert!(filter.windows(2).all(|w| w[0] < w[1]), "filter must be sorted");
    if filter.binary_search(&gold).is_err() {
        return Err(Error::Protocol(format!("gold entity {gold} missing from its filter set")));
    }
    let Some(&target) = scores.get(gold) else {
        return Err(Error::Index {
            what: "gold entity",
            index: gold,
            len: scores.len(),
        });
    };
    if target.is_nan() {
        return Err(Error::Protocol(format!("score of gold entity {gold} is NaN")));
    }
    let (mut greater, mut equal) = (0usize, 0usize);
    for &s in scores {
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    }
    // gold itself was counted as equal
    equal -= 1;
    for &c in filter {
        if c == gold {
            continue;
        }
        match scores.get(c) {
            Some(&s) if s > target => greater -= 1,
            Some(&s) if s == target => equal -= 1,
            _ => {}
        }
    }
    Ok(1 + greater + equal / 2)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Metrics {
    fn map(self, other: Metrics, f: impl Fn(f64, f64) -> f64) -> Metrics {
        Metrics {
            mrr: f(self.mrr, other.mrr),
            hits1: f(self.hits1, other.hits1),
            hits3: f(self.hits3, other.hits3),
            hits10: f(self.hits10, other.hits10),
        }
    }
}

/// MRR and Hits@{1,3,10} of a list of 1-based ranks.
pub fn mrr_hits(ranks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::param("no ranks to summarise"));
    }
    if ranks.contains(&0) {
        return Err(Error::param("ranks start at 1"));
    }
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits1: hits(1),
        hits3: hits(3),
        hits10: hits(10),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub ranks: Vec<usize>,
    pub metrics: Metrics,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn n_queries(&self) -> usize {
        self.ranks.len()
    }
}

/// Ranks every query against the filter index.
pub fn rank_queries<S: Scorer + ?Sized>(scorer: &S, queries: &[Query], truth: &TruthIndex) -> Result<Vec<usize>> {
    let n = scorer.n_entities();
    let chunks: Vec<&[Query]> = queries.chunks(EVAL_CHUNK).collect();
    let parts = kernels::map_ordered(&chunks, |chunk| -> Result<Vec<usize>> {
        let subjects: Vec<usize> = chunk.iter().map(|q| q.subject).collect();
        let relations: Vec<usize> = chunk.iter().map(|q| q.relation).collect();
        let scores = scorer.score(&subjects, &relations)?;
        if scores.len() != chunk.len() * n {
            return Err(Error::shape("score", &[chunk.len(), n], &[scores.len()]));
        }
        chunk
            .iter()
            .zip(scores.chunks(n.max(1)))
            .map(|(q, row)| filtered_rank(row, q.gold, truth.objects(q.subject, q.relation)))
            .collect()
    });
    let mut ranks = Vec::with_capacity(queries.len());
    for p in parts {
        ranks.extend(p?);
    }
    Ok(ranks)
}

/// Filtered evaluation of both query directions of every triple in `split`.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, kg: &KnowledgeGraph, split: Split) -> Result<EvalReport> {
    let queries = kg.queries(split);
    if queries.is_empty() {
        return Err(Error::param(format!("split '{split}' is empty")));
    }
    let ranks = rank_queries(scorer, &queries, kg.truth())?;
    let metrics = mrr_hits(&ranks)?;
    Ok(EvalReport {
        split: split.to_string(),
        ranks,
        metrics,
        metadata: BTreeMap::new(),
    })
}

/// Per-run metrics as they appear in the structured report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Mean and sample standard deviation across repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub split: String,
    pub n_queries: usize,
    #[serde(flatten)]
    pub mean: Metrics,
    pub std: Metrics,
    pub runs: Vec<RunMetrics>,
}

impl AggregateReport {
    /// `runs` pairs each report with the seed that produced it.
    pub fn from_runs(runs: &[(u64, EvalReport)]) -> Result<Self> {
        let Some((_, first)) = runs.first() else {
            return Err(Error::param("no runs to aggregate"));
        };
        let n = runs.len() as f64;
        let sum = runs
            .iter()
            .fold(Metrics::default(), |acc, (_, r)| acc.map(r.metrics, |a, b| a + b));
        let mean = sum.map(sum, |s, _| s / n);
        let std = if runs.len() < 2 {
            Metrics::default()
        } else {
            let sq = runs.iter().fold(Metrics::default(), |acc, (_, r)| {
                acc.map(r.metrics.map(mean, |x, m| (x - m) * (x - m)), |a, b| a + b)
            });
            sq.map(sq, |s, _| (s / (n - 1.0)).sqrt())
        };
        Ok(AggregateReport {
            split: first.split.clone(),
            n_queries: first.n_queries(),
            mean,
            std,
            runs: runs
                .iter()
                .enumerate()
                .map(|(i, (seed, r))| RunMetrics {
                    run: i,
                    seed: *seed,
                    metrics: r.metrics,
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::param(format!("bad report json: {e}")))
    }

    /// Flat `key = value` record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split = {}", self.split);
        let _ = writeln!(out, "n_queries = {}", self.n_queries);
        let _ = writeln!(out, "runs = {}", self.runs.len());
        for (name, mean, std) in [
            ("mrr", self.mean.mrr, self.std.mrr),
            ("hits1", self.mean.hits1, self.std.hits1),
            ("hits3", self.mean.hits3, self.std.hits3),
            ("hits10", self.mean.hits10, self.std.hits10),
        ] {
            let _ = writeln!(out, "{name} = {mean:.6}");
            let _ = writeln!(out, "{name}_std = {std:.6}");
        }
        for r in &self.runs {
            let m = r.metrics;
            let _ = writeln!(
                out,
                "run{}.seed = {}\nrun{}.mrr = {:.6}\nrun{}.hits1 = {:.6}\nrun{}.hits3 = {:.6}\nrun{}.hits10 = {:.6}",
                r.run, r.seed, r.run, m.mrr, r.run, m.hits1, r.run, m.hits3, r.run, m.hits10
            );
        }
        out
    }
}
