use std::collections::{HashMap, VecDeque};

use super::triples::Triple;
use super::vocab::{EntityId, RelationId, Vocab};
use crate::error::{CoreError, Result};

/// Per-entity adjacency `(relation, entity)` built from training triples.
///
/// A triple `(s, r, o)` contributes `(r, o)` to `s` and `(r^-1, s)` to `o`,
/// in file order.
#[derive(Clone, Debug, Default)]
pub struct NeighborIndex {
    offsets: Vec<usize>,
    pairs: Vec<(RelationId, EntityId)>,
}

impl NeighborIndex {
    pub fn build(train: &[Triple], vocab: &Vocab) -> Self {
        let n = vocab.num_entities();
        let mut lists: Vec<Vec<(RelationId, EntityId)>> = vec![Vec::new(); n];
        for t in train {
            lists[t.subject].push((t.predicate, t.object));
            lists[t.object].push((vocab.reciprocal(t.predicate), t.subject));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut pairs = Vec::with_capacity(2 * train.len());
        for list in lists {
            pairs.extend(list);
            offsets.push(pairs.len());
        }
        Self { offsets, pairs }
    }

    pub fn num_entities(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn total_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn neighbors_of(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        if e >= self.num_entities() {
            return Err(CoreError::Index {
                kind: "entity",
                id: e,
                size: self.num_entities(),
            });
        }
        Ok(&self.pairs[self.offsets[e]..self.offsets[e + 1]])
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.offsets[e + 1] - self.offsets[e]
    }

    /// BFS distances from `src` over the undirected training graph.
    pub fn hops_from(&self, src: EntityId) -> Result<Vec<Option<usize>>> {
        let mut dist = vec![None; self.num_entities()];
        self.neighbors_of(src)?;
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("visited");
            for &(_, v) in self.neighbors_of(u)? {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// Shortest path length ignoring direction and relation type; `None` if unreachable.
    pub fn hop_distance(&self, a: EntityId, b: EntityId) -> Result<Option<usize>> {
        self.neighbors_of(b)?;
        if a == b {
            self.neighbors_of(a)?;
            return Ok(Some(0));
        }
        let mut dist = vec![usize::MAX; self.num_entities()];
        dist[a] = 0;
        let mut queue = VecDeque::from([a]);
        while let Some(u) = queue.pop_front() {
            for &(_, v) in self.neighbors_of(u)? {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    if v == b {
                        return Ok(Some(dist[v]));
                    }
                    queue.push_back(v);
                }
            }
        }
        Ok(None)
    }
}

/// Known true targets per `(source, relation)` over every split, reciprocals included.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    num_entities: usize,
    known: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn build<'a>(splits: impl IntoIterator<Item = &'a [Triple]>, vocab: &Vocab) -> Self {
        let mut known: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for split in splits {
            for t in split {
                known.entry((t.subject, t.predicate)).or_default().push(t.object);
                known
                    .entry((t.object, vocab.reciprocal(t.predicate)))
                    .or_default()
                    .push(t.subject);
            }
        }
        for v in known.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self {
            num_entities: vocab.num_entities(),
            known,
        }
    }

    pub fn known_targets(&self, src: EntityId, rel: RelationId) -> &[EntityId] {
        self.known.get(&(src, rel)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_known(&self, src: EntityId, rel: RelationId, target: EntityId) -> bool {
        self.known_targets(src, rel).binary_search(&target).is_ok()
    }

    /// Entities eligible for ranking: everything except other known targets.
    pub fn filtered_candidates(&self, src: EntityId, rel: RelationId, gold: EntityId) -> Vec<bool> {
        let mut mask = vec![true; self.num_entities];
        for &e in self.known_targets(src, rel) {
            mask[e] = false;
        }
        if gold < mask.len() {
            mask[gold] = true;
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(triples: &[(&str, &str, &str)]) -> (Vocab, Vec<Triple>) {
        let v = Vocab::from_names(triples.iter().copied());
        let t = triples
            .iter()
            .map(|(s, r, o)| {
                Triple::new(
                    v.entity_id(s).unwrap(),
                    v.relation_id(r).unwrap(),
                    v.entity_id(o).unwrap(),
                )
            })
            .collect();
        (v, t)
    }

    #[test]
    fn single_edge_appears_in_both_directions() {
        let (v, t) = graph(&[("a", "r", "b")]);
        let idx = NeighborIndex::build(&t, &v);
        assert_eq!(idx.neighbors_of(0).unwrap(), &[(0, 1)]);
        assert_eq!(idx.neighbors_of(1).unwrap(), &[(1, 0)]);
        assert!(idx.neighbors_of(2).is_err());
    }

    #[test]
    fn incoming_edges_use_the_reciprocal_relation() {
        let (v, t) = graph(&[("a", "r", "b"), ("c", "s", "a")]);
        let idx = NeighborIndex::build(&t, &v);
        let (a, b, c) = (0, 1, 2);
        let (r, s) = (0, 1);
        assert_eq!(idx.neighbors_of(a).unwrap(), &[(r, b), (v.reciprocal(s), c)]);
    }

    #[test]
    fn star_center_has_one_pair_per_spoke() {
        let spokes: Vec<String> = (0..7).map(|i| format!("s{i}")).collect();
        let triples: Vec<_> = spokes.iter().map(|s| ("c", "r", s.as_str())).collect();
        let (v, t) = graph(&triples);
        let idx = NeighborIndex::build(&t, &v);
        assert_eq!(idx.neighbors_of(0).unwrap().len(), 7);
        assert_eq!(idx.total_pairs(), 14);
    }

    #[test]
    fn isolated_entity_has_no_neighbors() {
        let (v, t) = graph(&[("a", "r", "b"), ("x", "r", "y")]);
        // only the first triple goes into the index
        let idx = NeighborIndex::build(&t[..1], &v);
        assert!(idx.neighbors_of(v.entity_id("x").unwrap()).unwrap().is_empty());
        assert_eq!(idx.hop_distance(0, v.entity_id("y").unwrap()).unwrap(), None);
    }

    #[test]
    fn chain_hops() {
        let (v, t) = graph(&[("a", "r", "b"), ("c", "r", "b"), ("c", "s", "d")]);
        let idx = NeighborIndex::build(&t, &v);
        let id = |n| v.entity_id(n).unwrap();
        assert_eq!(idx.hop_distance(id("a"), id("a")).unwrap(), Some(0));
        assert_eq!(idx.hop_distance(id("a"), id("b")).unwrap(), Some(1));
        assert_eq!(idx.hop_distance(id("a"), id("d")).unwrap(), Some(3));
        assert_eq!(idx.hops_from(id("d")).unwrap()[id("a")], Some(3));
    }

    #[test]
    fn filter_masks_other_known_targets() {
        let (v, t) = graph(&[("s", "r", "g"), ("s", "r", "x"), ("s", "r", "y"), ("q", "r", "g")]);
        let f = FilterIndex::build([t.as_slice()], &v);
        let id = |n| v.entity_id(n).unwrap();
        let mask = f.filtered_candidates(id("s"), 0, id("g"));
        let off: Vec<_> = (0..mask.len()).filter(|&i| !mask[i]).collect();
        assert_eq!(off, vec![id("x"), id("y")]);
        // only gold known -> nothing filtered
        let mask = f.filtered_candidates(id("g"), v.reciprocal(0), id("s"));
        assert!(!mask[id("q")]);
        let mask = f.filtered_candidates(id("q"), 0, id("g"));
        assert!(mask.iter().all(|&m| m));
    }
}
