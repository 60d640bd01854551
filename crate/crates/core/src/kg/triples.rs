use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::{EntityId, RelationId, Vocab, VocabBuilder};
use crate::error::{io_err, CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub predicate: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, predicate: RelationId, object: EntityId) -> Self {
        Self {
            subject,
            predicate,
            object,
        }
    }
}

/// Integer-encoded facts of one split, duplicates removed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripleSet {
    triples: Vec<Triple>,
}

impl TripleSet {
    /// Keeps the first occurrence of every triple.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut dropped = 0usize;
        for t in triples {
            if seen.insert(t) {
                kept.push(t);
            } else {
                dropped += 1;
            }
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} duplicate triples");
        }
        Self { triples: kept }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Triple> {
        self.triples.iter()
    }

    pub fn as_slice(&self) -> &[Triple] {
        &self.triples
    }
}

impl<'a> IntoIterator for &'a TripleSet {
    type Item = &'a Triple;
    type IntoIter = std::slice::Iter<'a, Triple>;

    fn into_iter(self) -> Self::IntoIter {
        self.triples.iter()
    }
}

pub enum VocabMode<'a> {
    /// Unknown names are added.
    Build(&'a mut VocabBuilder),
    /// Unknown names are an error.
    Frozen(&'a Vocab),
}

/// Parse a TAB-separated `subject relation object` file.
pub fn read_raw_triples(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_raw_triples(&text, path)
}

pub(crate) fn parse_raw_triples(text: &str, path: &Path) -> Result<Vec<(String, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CoreError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()));
    }
    Ok(out)
}

pub fn encode_triples(raw: &[(String, String, String)], mode: VocabMode<'_>) -> Result<TripleSet> {
    let mut out = Vec::with_capacity(raw.len());
    match mode {
        VocabMode::Build(b) => {
            for (s, r, o) in raw {
                let s = b.entity(s);
                let r = b.relation(r);
                let o = b.entity(o);
                out.push(Triple::new(s, r, o));
            }
        }
        VocabMode::Frozen(v) => {
            for (s, r, o) in raw {
                let r = v.require_relation(r)?;
                if v.is_reciprocal(r) {
                    return Err(CoreError::Vocab {
                        kind: "relation",
                        name: format!("{r} (reciprocal ids cannot appear in files)"),
                    });
                }
                out.push(Triple::new(v.require_entity(s)?, r, v.require_entity(o)?));
            }
        }
    }
    Ok(TripleSet::from_triples(out))
}

pub fn load_triples(path: &Path, mode: VocabMode<'_>) -> Result<TripleSet> {
    encode_triples(&read_raw_triples(path)?, mode)
}
