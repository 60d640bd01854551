use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{QueryRecord, RankAccumulator};
use crate::error::Result;
use crate::kg::{NeighborIndex, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub key: String,
    pub count: usize,
    pub mrr: f64,
}

/// Per base relation (reciprocal queries folded in), largest groups first.
pub fn breakdown_by_relation(records: &[QueryRecord], vocab: &Vocab) -> Result<Vec<BreakdownRow>> {
    let mut groups: BTreeMap<usize, RankAccumulator> = BTreeMap::new();
    for r in records {
        groups
            .entry(vocab.base_relation(r.predicate))
            .or_default()
            .push(r.rank);
    }
    let mut rows = groups
        .into_iter()
        .map(|(rel, acc)| {
            Ok(BreakdownRow {
                key: vocab.relation_name(rel)?,
                count: acc.count(),
                mrr: acc.report().mrr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
    Ok(rows)
}

pub const HOP_BUCKETS: [&str; 7] = ["0", "1", "2", "3", "4", "5+", "unreachable"];

pub fn hop_bucket(hops: Option<usize>) -> &'static str {
    match hops {
        None => "unreachable",
        Some(h) if h >= 5 => "5+",
        Some(h) => HOP_BUCKETS[h],
    }
}

/// Group queries by the training-graph distance between source and gold.
/// Only nonempty buckets are returned, in distance order.
pub fn mrr_by_hops(records: &[QueryRecord], graph: &NeighborIndex) -> Result<Vec<BreakdownRow>> {
    let mut dist_cache: HashMap<usize, Vec<Option<usize>>> = HashMap::new();
    let mut groups: HashMap<&'static str, RankAccumulator> = HashMap::new();
    for r in records {
        let dist = match dist_cache.entry(r.src) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(graph.hops_from(r.src)?),
        };
        let hops = dist.get(r.target).copied().flatten();
        groups.entry(hop_bucket(hops)).or_default().push(r.rank);
    }
    Ok(HOP_BUCKETS
        .iter()
        .filter_map(|&key| {
            groups.get(key).map(|acc| BreakdownRow {
                key: key.to_string(),
                count: acc.count(),
                mrr: acc.report().mrr,
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KnowledgeGraph;

    fn rec(src: usize, predicate: usize, target: usize, rank: f64) -> QueryRecord {
        QueryRecord {
            src,
            predicate,
            target,
            rank,
        }
    }

    #[test]
    fn buckets() {
        assert_eq!(hop_bucket(Some(1)), "1");
        assert_eq!(hop_bucket(Some(7)), "5+");
        assert_eq!(hop_bucket(None), "unreachable");
    }

    #[test]
    fn reciprocals_fold_onto_their_base() {
        let t = |a: &str, b: &str, c: &str| (a.to_string(), b.to_string(), c.to_string());
        let g = KnowledgeGraph::from_named(&[t("a", "r", "b"), t("b", "s", "c")], &[], &[]).unwrap();
        let v = g.vocab();
        let recs = [rec(0, 0, 1, 1.0), rec(1, v.reciprocal(0), 0, 2.0), rec(1, 1, 2, 1.0)];
        let rows = breakdown_by_relation(&recs, v).unwrap();
        assert_eq!(rows[0].key, "r");
        assert_eq!(rows[0].count, 2);
        assert!((rows[0].mrr - 0.75).abs() < 1e-12);
        assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), recs.len());
    }
}
