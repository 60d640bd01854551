use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Upper bound on the context size.
    pub cap: usize,
    /// Fraction of the capped context kept for a training example.
    pub train_keep_frac: f64,
    /// Remove every pair pointing at the target instead of only the gold edge.
    pub remove_all_gold_pairs: bool,
    /// Seed for the fixed truncation of oversized neighborhoods at eval time.
    pub eval_seed: u64,
}

impl SamplingConfig {
    pub fn unlimited() -> Self {
        Self {
            cap: usize::MAX,
            train_keep_frac: 1.0,
            remove_all_gold_pairs: false,
            eval_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_keep_frac > 0.0 && self.train_keep_frac <= 1.0) {
            return Err(CoreError::Config(format!(
                "train_keep_frac must be in (0, 1], got {}",
                self.train_keep_frac
            )));
        }
        Ok(())
    }
}

/// Uniform subsample without replacement, keeping the original relative order.
///
/// First truncates to at most `cap` pairs; when `keep_frac` is given (training)
/// a further `ceil(keep_frac * k)` of the `k` survivors are kept.
pub fn sample_neighborhood<T: Copy, R: Rng + ?Sized>(
    full: &[T],
    cap: usize,
    keep_frac: Option<f64>,
    rng: &mut R,
) -> Vec<T> {
    let mut kept = subsample(full, cap, rng);
    if let Some(frac) = keep_frac {
        let k = kept.len();
        let target = ((frac * k as f64).ceil() as usize).min(k);
        kept = subsample(&kept, target, rng);
    }
    kept
}

fn subsample<T: Copy, R: Rng + ?Sized>(items: &[T], n: usize, rng: &mut R) -> Vec<T> {
    if items.len() <= n {
        return items.to_vec();
    }
    let mut picks = index::sample(rng, items.len(), n).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| items[i]).collect()
}
