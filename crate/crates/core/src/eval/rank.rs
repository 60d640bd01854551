use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// How candidates scoring exactly like the gold entity count toward its rank.
pub trait TiePolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Rank given `greater` strictly better candidates and `ties` other
    /// candidates with an equal score.
    fn rank(&self, greater: usize, ties: usize) -> f64;
}

/// Middle of the tied block.
pub struct AverageTies;

impl TiePolicy for AverageTies {
    fn name(&self) -> &'static str {
        "average"
    }

    fn rank(&self, greater: usize, ties: usize) -> f64 {
        1.0 + greater as f64 + ties as f64 / 2.0
    }
}

/// Gold goes last among its ties.
pub struct PessimisticTies;

impl TiePolicy for PessimisticTies {
    fn name(&self) -> &'static str {
        "pessimistic"
    }

    fn rank(&self, greater: usize, ties: usize) -> f64 {
        1.0 + (greater + ties) as f64
    }
}

/// Gold goes first among its ties. Inflates results for degenerate models.
pub struct OptimisticTies;

impl TiePolicy for OptimisticTies {
    fn name(&self) -> &'static str {
        "optimistic"
    }

    fn rank(&self, greater: usize, _ties: usize) -> f64 {
        1.0 + greater as f64
    }
}

/// Rank of `gold` among the candidates with `mask[i] == true` (all when `None`).
pub fn rank_query<S: PartialOrd + Copy>(
    scores: &[S],
    gold: usize,
    mask: Option<&[bool]>,
    policy: &dyn TiePolicy,
) -> Result<f64> {
    if gold >= scores.len() {
        return Err(CoreError::Index {
            kind: "entity",
            id: gold,
            size: scores.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != scores.len() {
            return Err(CoreError::Contract(format!(
                "{} mask entries for {} scores",
                m.len(),
                scores.len()
            )));
        }
        if !m[gold] {
            return Err(CoreError::Contract(format!("gold entity {gold} is filtered out")));
        }
    }
    let g = scores[gold];
    let (mut greater, mut ties) = (0, 0);
    for (i, &s) in scores.iter().enumerate() {
        if i == gold || mask.is_some_and(|m| !m[i]) {
            continue;
        }
        if s > g {
            greater += 1;
        } else if s == g {
            ties += 1;
        }
    }
    Ok(policy.rank(greater, ties))
}

/// Aggregate ranking metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub mrr: f64,
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub queries: usize,
}

/// Running sums; merging shards is exact and order-independent up to
/// floating point summation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankAccumulator {
    count: usize,
    reciprocal: f64,
    rank: f64,
    hits: [usize; 3],
}

impl RankAccumulator {
    pub fn push(&mut self, rank: f64) {
        self.count += 1;
        self.reciprocal += 1.0 / rank;
        self.rank += rank;
        for (h, k) in self.hits.iter_mut().zip([1.0, 3.0, 10.0]) {
            if rank <= k {
                *h += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.reciprocal += other.reciprocal;
        self.rank += other.rank;
        for (a, b) in self.hits.iter_mut().zip(other.hits) {
            *a += b;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn report(&self) -> RankingReport {
        let n = self.count.max(1) as f64;
        RankingReport {
            mrr: self.reciprocal / n,
            mr: self.rank / n,
            hits1: self.hits[0] as f64 / n,
            hits3: self.hits[1] as f64 / n,
            hits10: self.hits[2] as f64 / n,
            queries: self.count,
        }
    }
}

impl FromIterator<f64> for RankAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::default();
        for r in iter {
            acc.push(r);
        }
        acc
    }
}
