use serde::{Deserialize, Serialize};

use super::KnowledgeGraph;

/// Counts in the form of the usual benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    /// `2 * triples / entities` over every split, one decimal.
    pub avg_degree: f64,
}

impl DatasetStats {
    pub fn of(graph: &KnowledgeGraph) -> Self {
        let entities = graph.vocab().num_entities();
        let triples = graph.train().len() + graph.valid().len() + graph.test().len();
        Self {
            entities,
            relations: graph.vocab().num_base_relations(),
            triples,
            avg_degree: round1(degree(triples, entities)),
        }
    }

    /// Mean neighbor-list length of the training graph, unrounded.
    pub fn train_degree(graph: &KnowledgeGraph) -> f64 {
        degree(graph.train().len(), graph.vocab().num_entities())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

fn degree(triples: usize, entities: usize) -> f64 {
    if entities == 0 {
        0.0
    } else {
        2.0 * triples as f64 / entities as f64
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}
