use std::collections::HashMap;

use crate::error::{CoreError, Result};

pub type EntityId = usize;
pub type RelationId = usize;

/// Accumulates names in first-appearance order while files are read.
#[derive(Clone, Debug, Default)]
pub struct VocabBuilder {
    entities: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
}

impl VocabBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, name: &str) -> EntityId {
        intern(&mut self.entities, &mut self.entity_ids, name)
    }

    pub fn relation(&mut self, name: &str) -> RelationId {
        intern(&mut self.relations, &mut self.relation_ids, name)
    }

    pub fn finish(self) -> Vocab {
        Vocab {
            entities: self.entities,
            entity_ids: self.entity_ids,
            relations: self.relations,
            relation_ids: self.relation_ids,
        }
    }
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    names.push(name.to_string());
    ids.insert(name.to_string(), names.len() - 1);
    names.len() - 1
}

/// Entity and relation tables. Relation ids `[0, R)` are the raw relations
/// and `[R, 2R)` their reciprocals, so `reciprocal(r) = (r + R) mod 2R`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    entities: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
}

pub const RECIPROCAL_SUFFIX: &str = "^-1";

impl Vocab {
    /// Build from raw `(subject, relation, object)` names in order.
    pub fn from_names<'a>(triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut b = VocabBuilder::new();
        for (s, r, o) in triples {
            b.entity(s);
            b.relation(r);
            b.entity(o);
        }
        b.finish()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Relations as they appear in the files.
    pub fn num_base_relations(&self) -> usize {
        self.relations.len()
    }

    /// Size of the relation table including reciprocals.
    pub fn num_relations(&self) -> usize {
        2 * self.relations.len()
    }

    pub fn reciprocal(&self, r: RelationId) -> RelationId {
        let n = self.num_base_relations();
        (r + n) % (2 * n)
    }

    pub fn is_reciprocal(&self, r: RelationId) -> bool {
        r >= self.num_base_relations()
    }

    pub fn base_relation(&self, r: RelationId) -> RelationId {
        r % self.num_base_relations().max(1)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        if let Some(&r) = self.relation_ids.get(name) {
            return Some(r);
        }
        let base = name.strip_suffix(RECIPROCAL_SUFFIX)?;
        self.relation_ids.get(base).map(|&r| self.reciprocal(r))
    }

    pub fn entity_name(&self, id: EntityId) -> Result<&str> {
        self.entities.get(id).map(String::as_str).ok_or(CoreError::Index {
            kind: "entity",
            id,
            size: self.entities.len(),
        })
    }

    pub fn relation_name(&self, id: RelationId) -> Result<String> {
        if id >= self.num_relations() {
            return Err(CoreError::Index {
                kind: "relation",
                id,
                size: self.num_relations(),
            });
        }
        let base = &self.relations[self.base_relation(id)];
        Ok(if self.is_reciprocal(id) {
            format!("{base}{RECIPROCAL_SUFFIX}")
        } else {
            base.clone()
        })
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn base_relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn require_entity(&self, name: &str) -> Result<EntityId> {
        self.entity_id(name).ok_or_else(|| CoreError::Vocab {
            kind: "entity",
            name: name.to_string(),
        })
    }

    pub fn require_relation(&self, name: &str) -> Result<RelationId> {
        self.relation_id(name).ok_or_else(|| CoreError::Vocab {
            kind: "relation",
            name: name.to_string(),
        })
    }
}
