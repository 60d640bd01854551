//! Query construction, neighborhood sampling, source perturbation and
//! collation into padded batches.

mod collate;
mod mep;
mod sample;

pub use collate::{collate, decollate, Batch, PAD};
pub use mep::{apply_mep, MepConfig, Perturbation};
pub use sample::{sample_neighborhood, SamplingConfig};

use hitter_tensor::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple, Vocab};

/// An incomplete triple: predict `target` from `(src, predicate)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub src: EntityId,
    pub predicate: RelationId,
    pub target: EntityId,
}

/// A query plus the context the model gets to see.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryExample {
    pub src: EntityId,
    pub predicate: RelationId,
    pub target: EntityId,
    pub neighbors: Vec<(RelationId, EntityId)>,
    pub perturbation: Perturbation,
}

impl QueryExample {
    pub fn query(&self) -> Query {
        Query {
            src: self.src,
            predicate: self.predicate,
            target: self.target,
        }
    }
}

/// Both directions of every triple: `(s, r -> o)` then `(o, r^-1 -> s)`.
pub fn build_queries(triples: &[Triple], vocab: &Vocab) -> Vec<Query> {
    triples
        .iter()
        .flat_map(|t| {
            [
                Query {
                    src: t.subject,
                    predicate: t.predicate,
                    target: t.object,
                },
                Query {
                    src: t.object,
                    predicate: vocab.reciprocal(t.predicate),
                    target: t.subject,
                },
            ]
        })
        .collect()
}

/// Turns queries into examples against one graph.
#[derive(Clone, Debug)]
pub struct Batcher<'g> {
    graph: &'g KnowledgeGraph,
    sampling: SamplingConfig,
    mep: MepConfig,
}

impl<'g> Batcher<'g> {
    pub fn new(graph: &'g KnowledgeGraph, sampling: SamplingConfig, mep: MepConfig) -> Result<Self> {
        sampling.validate()?;
        mep.validate()?;
        Ok(Self {
            graph,
            sampling,
            mep,
        })
    }

    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.graph
    }

    pub fn sampling(&self) -> &SamplingConfig {
        &self.sampling
    }

    pub fn mep(&self) -> &MepConfig {
        &self.mep
    }

    /// Full neighborhood of the source with the query's own training edge
    /// taken out.
    fn context_without_gold(&self, q: &Query) -> Result<Vec<(RelationId, EntityId)>> {
        let full = self.graph.neighbors_of(q.src)?;
        if self.sampling.remove_all_gold_pairs {
            return Ok(full.iter().copied().filter(|&(_, e)| e != q.target).collect());
        }
        let mut out = full.to_vec();
        if let Some(pos) = out.iter().position(|&p| p == (q.predicate, q.target)) {
            out.remove(pos);
        }
        Ok(out)
    }

    pub fn train_example<R: Rng + ?Sized>(&self, q: Query, rng: &mut R) -> Result<QueryExample> {
        let full = self.context_without_gold(&q)?;
        let neighbors = sample_neighborhood(
            &full,
            self.sampling.cap,
            Some(self.sampling.train_keep_frac),
            rng,
        );
        let perturbation = apply_mep(&self.mep, self.graph.vocab().num_entities(), rng);
        Ok(QueryExample {
            src: q.src,
            predicate: q.predicate,
            target: q.target,
            neighbors,
            perturbation,
        })
    }

    /// Unperturbed example with the full neighborhood; when it exceeds the cap
    /// a fixed per-source sample is used so repeated evaluations agree.
    pub fn eval_example(&self, q: Query) -> Result<QueryExample> {
        let full = self.graph.neighbors_of(q.src)?;
        let neighbors = if full.len() > self.sampling.cap {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.sampling.eval_seed ^ (q.src as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            sample_neighborhood(full, self.sampling.cap, None, &mut rng)
        } else {
            full.to_vec()
        };
        Ok(QueryExample {
            src: q.src,
            predicate: q.predicate,
            target: q.target,
            neighbors,
            perturbation: Perturbation::NotSelected,
        })
    }

    pub fn example<R: Rng + ?Sized>(&self, q: Query, mode: Mode, rng: &mut R) -> Result<QueryExample> {
        match mode {
            Mode::Train => self.train_example(q, rng),
            Mode::Eval => self.eval_example(q),
        }
    }

    pub fn build_query_examples<R: Rng + ?Sized>(
        &self,
        triples: &[Triple],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<QueryExample>> {
        build_queries(triples, self.graph.vocab())
            .into_iter()
            .map(|q| self.example(q, mode, rng))
            .collect()
    }
}

/// Fails if any example still sees the edge its own query was built from.
pub fn check_no_leakage(examples: &[QueryExample]) -> Result<()> {
    for ex in examples {
        if ex.neighbors.contains(&(ex.predicate, ex.target)) {
            return Err(CoreError::Contract(format!(
                "gold pair ({}, {}) leaked into the context of entity {}",
                ex.predicate, ex.target, ex.src
            )));
        }
    }
    Ok(())
}
