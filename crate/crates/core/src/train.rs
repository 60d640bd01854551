//! Optimization: warmup-then-decay schedule, Adam steps, periodic dev
//! evaluation with early stopping and the per-epoch run ledger.

use std::path::Path;
use std::time::Instant;

use hitter_tensor::{clip_global_norm, Adam, AdamConfig, Mode, Tape, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{build_queries, check_no_leakage, collate, Batcher, Query};
use crate::error::{io_err, CoreError, Result};
use crate::eval::{Evaluator, ModelScorer, SplitResult};
use crate::kg::Triple;
use crate::model::Hitter;
use crate::registry::{decay_styles, tie_policies};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub eval_every: usize,
    /// Evaluations without a strict dev MRR improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Registered weight-decay style, `decoupled` or `coupled`.
    pub adam_style: String,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient norm bound; `0` disables clipping.
    pub clip_norm: f64,
    pub decay_norm_params: bool,
    pub eval_batch_size: usize,
    pub tie_policy: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 0.1,
            batch_size: 512,
            max_epochs: 500,
            warmup_fraction: 0.1,
            eval_every: 5,
            patience: 10,
            seed: 0,
            adam_style: "decoupled".into(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 0.0,
            decay_norm_params: false,
            eval_batch_size: 256,
            tie_policy: "average".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(CoreError::Config(format!(
                "warmup_fraction must be in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(CoreError::Config("batch sizes must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(CoreError::Config("eval_every must be at least 1".into()));
        }
        if self.lr < 0.0 || self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return Err(CoreError::Config("lr, weight_decay and clip_norm must be >= 0".into()));
        }
        decay_styles().create(&self.adam_style)?;
        tie_policies().create(&self.tie_policy)?;
        Ok(())
    }
}

/// Linear warmup from 0 to `peak` over `floor(warmup_fraction * total)`
/// steps, then linear decay back to 0 at `total`.
pub fn lr_at_step(step: u64, total: u64, peak: f64, warmup_fraction: f64) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    let warm = (warmup_fraction * total as f64).floor() as u64;
    if step < warm {
        peak * step as f64 / warm as f64
    } else {
        peak * (total - step) as f64 / (total - warm) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub epoch: usize,
    pub loss: f64,
    pub dev_mrr: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLedger {
    pub rows: Vec<LedgerRow>,
    pub best_mrr: Option<f64>,
    pub best_epoch: Option<usize>,
}

impl RunLedger {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Rows without the wall-clock column, for reproducibility checks.
    pub fn deterministic_part(&self) -> Vec<(usize, u64, Option<u64>, u64)> {
        self.rows
            .iter()
            .map(|r| (r.epoch, r.loss.to_bits(), r.dev_mrr.map(f64::to_bits), r.lr.to_bits()))
            .collect()
    }
}

pub struct FitOutcome {
    /// Weights of the best dev evaluation.
    pub model: Hitter,
    pub ledger: RunLedger,
}

pub struct Trainer<'b> {
    batcher: &'b Batcher<'b>,
    config: TrainConfig,
    model: Hitter,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    queries: Vec<Query>,
    step: u64,
    total_steps: u64,
}

impl<'b> Trainer<'b> {
    pub fn new(batcher: &'b Batcher<'b>, mut model: Hitter, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let graph = batcher.graph();
        if graph.train().is_empty() {
            return Err(CoreError::Config("training split is empty".into()));
        }
        model.set_norm_decay(config.decay_norm_params);
        let adam_cfg = AdamConfig {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            weight_decay: config.weight_decay,
        };
        let adam = Adam::new(model.store(), adam_cfg, decay_styles().create(&config.adam_style)?);
        let queries = build_queries(graph.train().as_slice(), graph.vocab());
        let steps_per_epoch = queries.len().div_ceil(config.batch_size) as u64;
        Ok(Self {
            batcher,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            total_steps: steps_per_epoch * config.max_epochs as u64,
            config,
            model,
            adam,
            queries,
            step: 0,
        })
    }

    pub fn model(&self) -> &Hitter {
        &self.model
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn current_lr(&self) -> f64 {
        lr_at_step(self.step + 1, self.total_steps, self.config.lr, self.config.warmup_fraction)
    }

    /// Forward, backward and one optimizer update on these queries.
    pub fn train_step(&mut self, queries: &[Query]) -> Result<f64> {
        let examples = queries
            .iter()
            .map(|&q| self.batcher.train_example(q, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        if cfg!(debug_assertions) {
            check_no_leakage(&examples)?;
        }
        let cap = examples.iter().map(|e| e.neighbors.len()).max().unwrap_or(0);
        let batch = collate(&examples, cap, self.model.mask_token())?;
        let lr = self.current_lr();
        let non_finite = |step| CoreError::NonFiniteLoss {
            step,
            sources: batch.original_sources.clone(),
        };
        let (loss, mut grads) = {
            let tape = Tape::new();
            let out = match self.model.loss(&tape, &batch, Mode::Train, &mut self.rng) {
                Err(CoreError::Tensor(TensorError::NonFinite { .. })) => return Err(non_finite(self.step)),
                other => other?,
            };
            let loss = out.total.value().data()[0] as f64;
            let grads = tape.backward(out.total)?.for_store(self.model.store());
            (loss, grads)
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(self.step));
        }
        if self.config.clip_norm > 0.0 {
            clip_global_norm(&mut grads, self.config.clip_norm);
        }
        self.adam.step(self.model.store_mut(), &grads, lr)?;
        self.step += 1;
        Ok(loss)
    }

    /// One pass over the shuffled training queries; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut order = std::mem::take(&mut self.queries);
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0;
        let result = (|| {
            for chunk in order.chunks(self.config.batch_size) {
                total += self.train_step(chunk)?;
                batches += 1;
            }
            Ok(total / batches.max(1) as f64)
        })();
        self.queries = order;
        result
    }

    pub fn evaluate(&self, triples: &[Triple]) -> Result<SplitResult> {
        evaluate_model(&self.model, self.batcher, &self.config, triples)
    }

    /// Train up to `max_epochs`, evaluating every `eval_every` epochs and at
    /// the last one. Stops after `patience` evaluations without strict
    /// improvement and returns the best-scoring weights.
    pub fn fit(mut self, valid: &[Triple], checkpoint: Option<&Path>) -> Result<FitOutcome> {
        if self.config.max_epochs == 0 {
            return Err(CoreError::NoTraining);
        }
        let mut ledger = RunLedger::default();
        let mut best: Option<Vec<hitter_tensor::Tensor<f32>>> = None;
        let mut stale = 0;
        for epoch in 1..=self.config.max_epochs {
            let started = Instant::now();
            let lr = self.current_lr();
            let loss = self.run_epoch()?;
            let due = epoch % self.config.eval_every == 0 || epoch == self.config.max_epochs;
            let dev_mrr = if due && !valid.is_empty() {
                Some(self.evaluate(valid)?.report.mrr)
            } else {
                None
            };
            ledger.rows.push(LedgerRow {
                epoch,
                loss,
                dev_mrr,
                lr,
                seconds: started.elapsed().as_secs_f64(),
            });
            log::info!("epoch {epoch} loss {loss:.5} lr {lr:.3e} dev_mrr {dev_mrr:?}");
            let Some(mrr) = dev_mrr else { continue };
            if ledger.best_mrr.is_none_or(|b| mrr > b) {
                ledger.best_mrr = Some(mrr);
                ledger.best_epoch = Some(epoch);
                best = Some(self.model.store().values());
                if let Some(path) = checkpoint {
                    self.model.save(path)?;
                }
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.config.patience {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
        if let Some(values) = best {
            self.model.store_mut().load_values(values)?;
        } else if let Some(path) = checkpoint {
            self.model.save(path)?;
        }
        Ok(FitOutcome {
            model: self.model,
            ledger,
        })
    }
}

pub fn evaluate_model(model: &Hitter, batcher: &Batcher<'_>, config: &TrainConfig, triples: &[Triple]) -> Result<SplitResult> {
    let evaluator = Evaluator::new(batcher, tie_policies().create(&config.tie_policy)?, config.eval_batch_size);
    evaluator.evaluate_split(&ModelScorer { model }, triples)
}
