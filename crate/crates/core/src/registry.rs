//! Name-keyed registries for interchangeable strategies.
//!
//! Each family (tie policies, weight-decay styles, synthetic graph patterns)
//! is a trait object behind a [`Registry`]; configs and CLI flags pick an
//! implementation by name at runtime.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use hitter_tensor::{Coupled, Decoupled, WeightDecay};

use crate::error::{CoreError, Result};
use crate::eval::{AverageTies, OptimisticTies, PessimisticTies, TiePolicy};
use crate::synthetic::{ChainPattern, CompositionPattern, GraphPattern, StarPattern};

pub type Constructor<T> = fn() -> Box<T>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Constructor<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, make: Constructor<T>) -> &mut Self {
        self.entries.insert(name, make);
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>> {
        self.entries
            .get(name)
            .map(|make| make())
            .ok_or_else(|| CoreError::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

static TIE_POLICIES: LazyLock<Registry<dyn TiePolicy>> = LazyLock::new(|| {
    let mut r: Registry<dyn TiePolicy> = Registry::new("tie policy");
    r.register("average", || Box::new(AverageTies))
        .register("pessimistic", || Box::new(PessimisticTies))
        .register("optimistic", || Box::new(OptimisticTies));
    r
});

static DECAY_STYLES: LazyLock<Registry<dyn WeightDecay>> = LazyLock::new(|| {
    let mut r: Registry<dyn WeightDecay> = Registry::new("adam style");
    r.register("decoupled", || Box::new(Decoupled))
        .register("coupled", || Box::new(Coupled));
    r
});

static GRAPH_PATTERNS: LazyLock<Registry<dyn GraphPattern>> = LazyLock::new(|| {
    let mut r: Registry<dyn GraphPattern> = Registry::new("graph pattern");
    r.register("composition", || Box::new(CompositionPattern))
        .register("star", || Box::new(StarPattern))
        .register("chain", || Box::new(ChainPattern));
    r
});

pub fn tie_policies() -> &'static Registry<dyn TiePolicy> {
    &TIE_POLICIES
}

pub fn decay_styles() -> &'static Registry<dyn WeightDecay> {
    &DECAY_STYLES
}

pub fn graph_patterns() -> &'static Registry<dyn GraphPattern> {
    &GRAPH_PATTERNS
}
