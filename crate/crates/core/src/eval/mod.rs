//! Filtered entity ranking and the analyses built on top of it.

mod breakdown;
mod neighbors;
mod rank;

use std::fs;
use std::path::Path;

pub use breakdown::{breakdown_by_relation, hop_bucket, mrr_by_hops, BreakdownRow, HOP_BUCKETS};
pub use neighbors::nearest_entities;
pub use rank::{rank_query, AverageTies, OptimisticTies, PessimisticTies, RankAccumulator, RankingReport, TiePolicy};

use hitter_tensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::batch::{build_queries, collate, Batcher, QueryExample};
use crate::error::{io_err, Result};
use crate::kg::{EntityId, RelationId, Triple, Vocab};
use crate::model::Hitter;

/// Anything that scores every entity for a list of queries.
pub trait QueryScorer {
    fn score(&self, examples: &[QueryExample]) -> Result<Vec<Vec<f64>>>;
}

/// Eval-mode scoring with a model snapshot.
pub struct ModelScorer<'m, T: Scalar> {
    pub model: &'m Hitter<T>,
}

impl<T: Scalar> QueryScorer for ModelScorer<'_, T> {
    fn score(&self, examples: &[QueryExample]) -> Result<Vec<Vec<f64>>> {
        // pad only as wide as this chunk needs
        let cap = examples.iter().map(|e| e.neighbors.len()).max().unwrap_or(0);
        let batch = collate(examples, cap, self.model.mask_token())?;
        let logits = self.model.score_batch(&batch)?;
        Ok((0..logits.rows())
            .map(|i| logits.row(i).iter().map(|x| x.as_f64()).collect())
            .collect())
    }
}

/// One ranked query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub src: EntityId,
    pub predicate: RelationId,
    pub target: EntityId,
    pub rank: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub records: Vec<QueryRecord>,
    pub report: RankingReport,
}

pub struct Evaluator<'g> {
    batcher: &'g Batcher<'g>,
    policy: Box<dyn TiePolicy>,
    batch_size: usize,
}

impl<'g> Evaluator<'g> {
    pub fn new(batcher: &'g Batcher<'g>, policy: Box<dyn TiePolicy>, batch_size: usize) -> Self {
        Self {
            batcher,
            policy,
            batch_size: batch_size.max(1),
        }
    }

    pub fn policy(&self) -> &dyn TiePolicy {
        self.policy.as_ref()
    }

    /// Rank both directions of every triple under the filtered setting.
    pub fn evaluate_split(&self, scorer: &dyn QueryScorer, triples: &[Triple]) -> Result<SplitResult> {
        let graph = self.batcher.graph();
        let queries = build_queries(triples, graph.vocab());
        let mut records = Vec::with_capacity(queries.len());
        let mut acc = RankAccumulator::default();
        for chunk in queries.chunks(self.batch_size) {
            let examples = chunk
                .iter()
                .map(|&q| self.batcher.eval_example(q))
                .collect::<Result<Vec<_>>>()?;
            let scores = scorer.score(&examples)?;
            for (q, row) in chunk.iter().zip(&scores) {
                let mask = graph.filtered_candidates(q.src, q.predicate, q.target);
                let rank = rank_query(row, q.target, Some(&mask), self.policy.as_ref())?;
                acc.push(rank);
                records.push(QueryRecord {
                    src: q.src,
                    predicate: q.predicate,
                    target: q.target,
                    rank,
                });
            }
        }
        Ok(SplitResult {
            records,
            report: acc.report(),
        })
    }
}

pub fn write_report_json(path: &Path, report: &RankingReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn write_breakdown_csv(path: &Path, rows: &[BreakdownRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))
}

/// Per-query ranks with names resolved.
pub fn write_ranks_csv(path: &Path, records: &[QueryRecord], vocab: &Vocab) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source", "relation", "target", "rank"])?;
    for r in records {
        w.write_record([
            vocab.entity_name(r.src)?.to_string(),
            vocab.relation_name(r.predicate)?,
            vocab.entity_name(r.target)?.to_string(),
            r.rank.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))
}
