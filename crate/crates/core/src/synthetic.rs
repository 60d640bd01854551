//! Small generated graphs whose held-out links follow from known structure.
//!
//! * `composition`: triads `(a, b, c)` with `r0(a, b)`, `r1(b, c)` and
//!   `r2(a, c)`. Every held-out `r2` fact is implied by the two training
//!   edges around it, so a model that reads the neighborhood of `a` can
//!   recover `c`.
//! * `chain`: a path `e0 - e1 - ...`; held-out links join entities a known
//!   number of hops apart.
//! * `star`: hubs with spokes; held-out links join spokes of the same hub
//!   (two hops) or of different hubs (disconnected).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};
use crate::kg::{TEST_FILE, TRAIN_FILE, VALID_FILE};
use crate::registry::graph_patterns;

pub type NamedTriple = (String, String, String);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub relations: usize,
    pub pattern: String,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<NamedTriple>,
    pub valid: Vec<NamedTriple>,
    pub test: Vec<NamedTriple>,
    /// Training-graph distance between the endpoints of each test triple,
    /// as constructed.
    pub test_hops: Vec<Option<usize>>,
}

pub trait GraphPattern: Send + Sync {
    fn name(&self) -> &'static str;

    fn generate(&self, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<SyntheticDataset>;

    /// Check the property the pattern promises on a generated dataset.
    fn verify(&self, data: &SyntheticDataset) -> Result<()>;
}

fn entity(i: usize) -> String {
    format!("e{i:04}")
}

fn relation(i: usize) -> String {
    format!("r{i}")
}

fn triple(s: usize, r: usize, o: usize) -> NamedTriple {
    (entity(s), relation(r), entity(o))
}

fn degenerate(detail: impl Into<String>) -> CoreError {
    CoreError::Config(format!("degenerate synthetic spec: {}", detail.into()))
}

/// Train-only edges on extra relations so they exist in the vocabulary.
fn distractors(spec: &SyntheticSpec, first: usize, rng: &mut ChaCha8Rng, out: &mut Vec<NamedTriple>) {
    for r in first..spec.relations {
        for _ in 0..spec.entities / 10 + 1 {
            let s = rng.random_range(0..spec.entities);
            let mut o = rng.random_range(0..spec.entities);
            if o == s {
                o = (o + 1) % spec.entities;
            }
            out.push(triple(s, r, o));
        }
    }
}

pub struct CompositionPattern;

impl GraphPattern for CompositionPattern {
    fn name(&self) -> &'static str {
        "composition"
    }

    fn generate(&self, spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<SyntheticDataset> {
        if spec.entities < 9 || spec.relations < 3 {
            return Err(degenerate("composition needs >= 9 entities and >= 3 relations"));
        }
        // random role assignment so ids carry no structure
        let mut ids: Vec<usize> = (0..spec.entities).collect();
        ids.shuffle(rng);
        let triads: Vec<[usize; 3]> = ids.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let leftovers = &ids[triads.len() * 3..];

        let mut data = SyntheticDataset::default();
        for &[a, b, c] in &triads {
            data.train.push(triple(a, 0, b));
            data.train.push(triple(b, 1, c));
        }
        let mut order: Vec<usize> = (0..triads.len()).collect();
        order.shuffle(rng);
        let half = triads.len().div_ceil(2);
        for (slot, &t) in order.iter().enumerate() {
            let [a, _, c] = triads[t];
            let fact = triple(a, 2, c);
            if slot < half {
                data.train.push(fact);
            } else if (slot - half).is_multiple_of(2) {
                data.test.push(fact);
                data.test_hops.push(Some(2));
            } else {
                data.valid.push(fact);
            }
        }
        // spare entities become extra heads of training triads
        for (i, &x) in leftovers.iter().enumerate() {
            let [_, b, c] = triads[order[i % half]];
            data.train.push(triple(x, 0, b));
            data.train.push(triple(x, 2, c));
        }
        distractors(spec, 3, rng, &mut data.train);
        if data.test.is_empty() || data.valid.is_empty() {
            return Err(degenerate("too few triads to hold out facts"));
        }
        Ok(data)
    }

    fn verify(&self, data: &SyntheticDataset) -> Result<()> {
        let train: HashSet<&NamedTriple> = data.train.iter().collect();
        let (r1, r2) = (relation(0), relation(1));
        for (a, _, c) in data.test.iter().chain(&data.valid) {
            let implied = data.train.iter().any(|(s, r, b)| {
                s == a && *r == r1 && train.contains(&(b.clone(), r2.clone(), c.clone()))
            });
            if !implied {
                return Err(CoreError::Contract(format!(
                    "held-out fact ({a}, r2, {c}) is not implied by training edges"
                )));
            }
        }
        Ok(())
    }
}

/// Cap on how far apart held-out chain endpoints may be.
const CHAIN_MAX_SPAN: usize = 7;

pub struct ChainPattern;

impl GraphPattern for ChainPattern {
    fn name(&self) -> &'static str {
        "chain"
    }

    fn generate(&self, spec: &SyntheticSpec, _rng: &mut ChaCha8Rng) -> Result<SyntheticDataset> {
        if spec.entities < 4 || spec.relations < 2 {
            return Err(degenerate("chain needs >= 4 entities and >= 2 relations"));
        }
        let n = spec.entities;
        let mut data = SyntheticDataset::default();
        for i in 0..n - 1 {
            data.train.push(triple(i, 0, i + 1));
        }
        let mut to_test = true;
        for i in 0..n {
            for j in i + 2..n.min(i + CHAIN_MAX_SPAN + 1) {
                if to_test {
                    data.test.push(triple(i, 1, j));
                    data.test_hops.push(Some(j - i));
                } else {
                    data.valid.push(triple(i, 1, j));
                }
                to_test = !to_test;
            }
        }
        distractors_disjoint(spec, 2, &mut data);
        Ok(data)
    }

    fn verify(&self, data: &SyntheticDataset) -> Result<()> {
        verify_hops(data)
    }
}

pub struct StarPattern;

impl GraphPattern for StarPattern {
    fn name(&self) -> &'static str {
        "star"
    }

    fn generate(&self, spec: &SyntheticSpec, _rng: &mut ChaCha8Rng) -> Result<SyntheticDataset> {
        if spec.entities < 6 || spec.relations < 2 {
            return Err(degenerate("star needs >= 6 entities and >= 2 relations"));
        }
        let hubs = (spec.entities / 8).max(2);
        let mut spokes: Vec<Vec<usize>> = vec![Vec::new(); hubs];
        let mut data = SyntheticDataset::default();
        for e in hubs..spec.entities {
            let h = (e - hubs) % hubs;
            spokes[h].push(e);
            data.train.push(triple(h, 0, e));
        }
        let mut to_test = true;
        let mut hold = |data: &mut SyntheticDataset, s: usize, o: usize, hops: Option<usize>| {
            if to_test {
                data.test.push(triple(s, 1, o));
                data.test_hops.push(hops);
            } else {
                data.valid.push(triple(s, 1, o));
            }
            to_test = !to_test;
        };
        for (h, list) in spokes.iter().enumerate() {
            for w in list.windows(2) {
                hold(&mut data, w[0], w[1], Some(2));
            }
            let other = &spokes[(h + 1) % hubs];
            if let (Some(&s), Some(&o)) = (list.first(), other.last()) {
                hold(&mut data, s, o, None);
                hold(&mut data, o, s, None);
            }
        }
        distractors_disjoint(spec, 2, &mut data);
        Ok(data)
    }

    fn verify(&self, data: &SyntheticDataset) -> Result<()> {
        verify_hops(data)
    }
}

/// Extra relations for hop patterns only parallel existing edges, so the
/// constructed distances stay intact.
fn distractors_disjoint(spec: &SyntheticSpec, first: usize, data: &mut SyntheticDataset) {
    let base: Vec<NamedTriple> = data.train.clone();
    for r in first..spec.relations {
        for (s, _, o) in base.iter().step_by(3) {
            data.train.push((s.clone(), relation(r), o.clone()));
        }
    }
}

fn verify_hops(data: &SyntheticDataset) -> Result<()> {
    let kg = crate::kg::KnowledgeGraph::from_named(&data.train, &data.valid, &data.test)?;
    for ((s, _, o), want) in data.test.iter().zip(&data.test_hops) {
        let v = kg.vocab();
        let got = kg.hop_distance(v.require_entity(s)?, v.require_entity(o)?)?;
        if got != *want {
            return Err(CoreError::Contract(format!(
                "({s}, {o}) is {got:?} hops apart, constructed as {want:?}"
            )));
        }
    }
    Ok(())
}

/// Generate with the named pattern and check its promise before returning.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.entities < 2 || spec.relations < 1 {
        return Err(degenerate("need at least 2 entities and 1 relation"));
    }
    let pattern = graph_patterns().create(&spec.pattern)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = pattern.generate(spec, &mut rng)?;
    pattern.verify(&data)?;
    Ok(data)
}

impl SyntheticDataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, triples) in [(TRAIN_FILE, &self.train), (VALID_FILE, &self.valid), (TEST_FILE, &self.test)] {
            let mut text = String::new();
            for (s, r, o) in triples {
                text.push_str(&format!("{s}\t{r}\t{o}\n"));
            }
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        Ok(())
    }
}
