use super::{Perturbation, QueryExample};
use crate::error::{CoreError, Result};
use crate::kg::{EntityId, RelationId};

/// Filler id in padded neighbor slots.
pub const PAD: usize = usize::MAX;

/// Row-major padded view of a list of examples. Neighbor matrices are
/// `[len, cap]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub cap: usize,
    /// Id shown in the source slot: the true source, a replacement, or `mask_token`.
    pub sources: Vec<usize>,
    pub predicates: Vec<RelationId>,
    pub neighbor_relations: Vec<usize>,
    pub neighbor_entities: Vec<usize>,
    pub valid: Vec<bool>,
    pub perturbations: Vec<u8>,
    pub targets: Vec<EntityId>,
    /// Untouched source ids, the labels of the recovery objective.
    pub original_sources: Vec<EntityId>,
    pub mask_token: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn neighbor_count(&self, i: usize) -> usize {
        self.valid[i * self.cap..(i + 1) * self.cap]
            .iter()
            .filter(|&&v| v)
            .count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (RelationId, EntityId)> + '_ {
        let row = i * self.cap..(i + 1) * self.cap;
        row.filter(|&j| self.valid[j])
            .map(|j| (self.neighbor_relations[j], self.neighbor_entities[j]))
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.perturbations[i] != 0
    }
}

/// Pad examples to `cap` neighbor slots. Masked sources are written as
/// `mask_token` (conventionally the entity count).
pub fn collate(examples: &[QueryExample], cap: usize, mask_token: usize) -> Result<Batch> {
    let n = examples.len();
    let mut b = Batch {
        cap,
        sources: Vec::with_capacity(n),
        predicates: Vec::with_capacity(n),
        neighbor_relations: vec![PAD; n * cap],
        neighbor_entities: vec![PAD; n * cap],
        valid: vec![false; n * cap],
        perturbations: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
        original_sources: Vec::with_capacity(n),
        mask_token,
    };
    for (i, ex) in examples.iter().enumerate() {
        if ex.neighbors.len() > cap {
            return Err(CoreError::Contract(format!(
                "example {i} has {} neighbors, cap is {cap}",
                ex.neighbors.len()
            )));
        }
        b.sources.push(match ex.perturbation {
            Perturbation::Mask => mask_token,
            Perturbation::RandomReplace(e) => e,
            Perturbation::NotSelected | Perturbation::Keep => ex.src,
        });
        b.predicates.push(ex.predicate);
        b.perturbations.push(ex.perturbation.code());
        b.targets.push(ex.target);
        b.original_sources.push(ex.src);
        for (j, &(r, e)) in ex.neighbors.iter().enumerate() {
            b.neighbor_relations[i * cap + j] = r;
            b.neighbor_entities[i * cap + j] = e;
            b.valid[i * cap + j] = true;
        }
    }
    Ok(b)
}

pub fn decollate(batch: &Batch) -> Result<Vec<QueryExample>> {
    (0..batch.len())
        .map(|i| {
            let perturbation = match batch.perturbations[i] {
                0 => Perturbation::NotSelected,
                1 => Perturbation::Mask,
                2 => Perturbation::RandomReplace(batch.sources[i]),
                3 => Perturbation::Keep,
                c => return Err(CoreError::Contract(format!("unknown perturbation code {c}"))),
            };
            Ok(QueryExample {
                src: batch.original_sources[i],
                predicate: batch.predicates[i],
                target: batch.targets[i],
                neighbors: batch.neighbors(i).collect(),
                perturbation,
            })
        })
        .collect()
}
