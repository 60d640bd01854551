use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::kg::EntityId;

/// What happened to the source entity of one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Perturbation {
    NotSelected,
    Mask,
    RandomReplace(EntityId),
    /// Selected for recovery but shown unchanged.
    Keep,
}

impl Perturbation {
    pub fn code(self) -> u8 {
        match self {
            Perturbation::NotSelected => 0,
            Perturbation::Mask => 1,
            Perturbation::RandomReplace(_) => 2,
            Perturbation::Keep => 3,
        }
    }

    pub fn is_selected(self) -> bool {
        self != Perturbation::NotSelected
    }
}

/// Source perturbation rates. The three fractions split the selected examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MepConfig {
    pub select_prob: f64,
    pub mask_frac: f64,
    pub replace_frac: f64,
    pub keep_frac: f64,
    /// Train the model to recover the original source of selected examples.
    pub use_aux_loss: bool,
}

impl MepConfig {
    pub fn disabled() -> Self {
        Self {
            select_prob: 0.0,
            mask_frac: 1.0,
            replace_frac: 0.0,
            keep_frac: 0.0,
            use_aux_loss: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.select_prob, self.mask_frac, self.replace_frac, self.keep_frac];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(CoreError::Config(format!("perturbation rates must be in [0, 1]: {parts:?}")));
        }
        let total = self.mask_frac + self.replace_frac + self.keep_frac;
        if (total - 1.0).abs() > 1e-9 {
            return Err(CoreError::Config(format!(
                "mask, replace and keep fractions must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

/// Draw the perturbation of one example. Replacements are uniform over all
/// entities and may hit the true source.
pub fn apply_mep<R: Rng + ?Sized>(cfg: &MepConfig, num_entities: usize, rng: &mut R) -> Perturbation {
    if cfg.select_prob == 0.0 || rng.random::<f64>() >= cfg.select_prob {
        return Perturbation::NotSelected;
    }
    let u = rng.random::<f64>();
    if u < cfg.mask_frac {
        Perturbation::Mask
    } else if u < cfg.mask_frac + cfg.replace_frac && num_entities > 0 {
        Perturbation::RandomReplace(rng.random_range(0..num_entities))
    } else {
        Perturbation::Keep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_selection_never_perturbs() {
        let cfg = MepConfig {
            select_prob: 0.0,
            mask_frac: 0.6,
            replace_frac: 0.12,
            keep_frac: 0.28,
            use_aux_loss: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| apply_mep(&cfg, 10, &mut rng) == Perturbation::NotSelected));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let mut cfg = MepConfig::disabled();
        cfg.keep_frac = 0.2;
        assert!(cfg.validate().is_err());
        cfg.mask_frac = 0.8;
        cfg.validate().unwrap();
    }
}
