//! The two-level encoder: a pair encoder over `(entity, relation)` and a
//! context encoder over the source pair plus its neighbor pairs.

mod checkpoint;
mod config;
mod encoder;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Activation, HitterConfig, NormPlacement};

use hitter_tensor::{Mode, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch::Batch;
use crate::error::{CoreError, Result};
use crate::kg::{EntityId, RelationId};
use encoder::{Dense, Encoder, Init, Norm, Run};

/// Slot roles inside a pair sequence.
const SLOT_CLS: usize = 0;
const SLOT_ENTITY: usize = 1;
const SLOT_RELATION: usize = 2;
/// Slot roles inside a context sequence.
const SLOT_GCLS: usize = 0;
const SLOT_SOURCE: usize = 1;
const SLOT_NEIGHBOR: usize = 2;

#[derive(Clone, Debug)]
struct ContextParams {
    gcls: ParamId,
    types: ParamId,
    encoder: Encoder,
}

#[derive(Clone, Debug)]
struct MepHead {
    dense: Dense,
    norm: Norm,
}

/// Parameters plus the wiring between them.
#[derive(Clone, Debug)]
pub struct Hitter<T: Scalar = f32> {
    config: HitterConfig,
    num_entities: usize,
    num_relations: usize,
    store: ParamStore<T>,
    entities: ParamId,
    relations: ParamId,
    cls: ParamId,
    mask: ParamId,
    pair_types: ParamId,
    pair_encoder: Encoder,
    context: Option<ContextParams>,
    mep_head: Option<MepHead>,
    norm_params: Vec<ParamId>,
}

/// Intermediate and final outputs of one batched forward pass.
pub struct ForwardOutputs<'t, T: Scalar> {
    /// Pooled source pair, `[B, d]`.
    pub m_src: Var<'t, T>,
    /// Context outputs at the graph-level and source slots, `[B, d]` each.
    pub t_gcls: Option<Var<'t, T>>,
    pub t_src: Option<Var<'t, T>>,
    /// `[B, |E|]`.
    pub logits: Var<'t, T>,
}

pub struct LossOutput<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub lp: f64,
    /// Zero when the recovery objective is off or nothing was selected.
    pub mep: f64,
}

impl<T: Scalar> Hitter<T> {
    /// Fresh model with `N(0, init_std)` weights drawn from `seed`.
    pub fn new(config: HitterConfig, num_entities: usize, num_relations: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_entities == 0 || num_relations == 0 {
            return Err(CoreError::Config("model needs at least one entity and relation".into()));
        }
        let d = config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut norm_params = Vec::new();
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
            std: config.init_std,
            norms: &mut norm_params,
        };
        let entities = init.normal("entity_embeddings".into(), &[num_entities, d]);
        let relations = init.normal("relation_embeddings".into(), &[num_relations, d]);
        let cls = init.normal("token.cls".into(), &[1, d]);
        let mask = init.normal("token.mask".into(), &[1, d]);
        let pair_types = init.normal("type.entity_block".into(), &[3, d]);
        let pair_encoder = Encoder::new(&mut init, "entity_encoder", config.entity_layers, &config);
        let context = config.context_enabled.then(|| ContextParams {
            gcls: init.normal("token.gcls".into(), &[1, d]),
            types: init.normal("type.context_block".into(), &[3, d]),
            encoder: Encoder::new(&mut init, "context_encoder", config.context_layers, &config),
        });
        let mep_head = (config.context_enabled && config.mep_aux_enabled && config.mep_transform).then(|| {
            MepHead {
                dense: init.dense("mep.dense", d, d),
                norm: init.norm("mep.norm", d),
            }
        });
        Ok(Self {
            config,
            num_entities,
            num_relations,
            store,
            entities,
            relations,
            cls,
            mask,
            pair_types,
            pair_encoder,
            context,
            mep_head,
            norm_params,
        })
    }

    pub fn config(&self) -> &HitterConfig {
        &self.config
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Id written into the source slot of a masked example.
    pub fn mask_token(&self) -> usize {
        self.num_entities
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn entity_table(&self) -> &Tensor<T> {
        self.store.get(self.entities).value()
    }

    pub fn entity_param(&self) -> ParamId {
        self.entities
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Whether layer-norm gains and biases take weight decay (off by default).
    pub fn set_norm_decay(&mut self, decay: bool) {
        for &id in &self.norm_params {
            self.store.get_mut(id).decay = decay;
        }
    }

    /// Input rows for each `(entity slot, relation)` pair: `[3 * P, d]` laid
    /// out as `[CLS], entity, relation` per pair, with type rows added.
    /// An entity slot equal to [`mask_token`](Self::mask_token) reads the mask vector.
    pub fn embed_pairs<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        pairs: &[(usize, RelationId)],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var<'t, T>> {
        let sources = [
            tape.param(&self.store, self.entities),
            tape.param(&self.store, self.mask),
            tape.param(&self.store, self.cls),
            tape.param(&self.store, self.relations),
        ];
        let mut index = Vec::with_capacity(3 * pairs.len());
        let mut types = Vec::with_capacity(3 * pairs.len());
        for &(e, r) in pairs {
            let entity = if e == self.mask_token() { (1, 0) } else { (0, e) };
            index.extend([(2, 0), entity, (3, r)]);
            types.extend([SLOT_CLS, SLOT_ENTITY, SLOT_RELATION]);
        }
        let tokens = tape.gather(&sources, &index)?;
        let types = tape.param(&self.store, self.pair_types).gather_rows(&types)?;
        Ok(tokens.add(&types)?.dropout(self.config.embedding_dropout, mode, rng)?)
    }

    /// Encode each pair independently and pool at its `[CLS]` slot: `[P, d]`.
    pub fn entity_block_forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        embedded: Var<'t, T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var<'t, T>> {
        let mut run = Run { mode, rng };
        let out = self.pair_encoder.forward(tape, &self.store, embedded, 3, None, &mut run)?;
        let pairs = out.value().rows() / 3;
        let cls_rows: Vec<usize> = (0..pairs).map(|p| 3 * p).collect();
        Ok(out.gather_rows(&cls_rows)?)
    }

    /// Run the context encoder over `[GCLS], source, neighbors...` for each
    /// example. Example `i` owns `counts[i]` consecutive rows of `neighbors`.
    /// Returns the outputs at the `[GCLS]` and source slots.
    pub fn context_block_forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        m_src: Var<'t, T>,
        neighbors: Option<Var<'t, T>>,
        counts: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let ctx = self
            .context
            .as_ref()
            .ok_or_else(|| CoreError::Contract("context block is disabled in this model".into()))?;
        let b = counts.len();
        if m_src.value().rows() != b {
            return Err(CoreError::Contract(format!(
                "{} source rows for {b} examples",
                m_src.value().rows()
            )));
        }
        let total: usize = counts.iter().sum();
        let available = neighbors.map_or(0, |n| n.value().rows());
        if total != available {
            return Err(CoreError::Contract(format!(
                "neighbor counts sum to {total} but {available} rows were given"
            )));
        }
        let len = 2 + counts.iter().copied().max().unwrap_or(0);
        let mut sources = vec![tape.param(&self.store, ctx.gcls), m_src];
        if let Some(n) = neighbors {
            sources.push(n);
        }
        let mut index = Vec::with_capacity(b * len);
        let mut types = Vec::with_capacity(b * len);
        let mut key_mask = Vec::with_capacity(b * len);
        let mut offset = 0;
        for (i, &c) in counts.iter().enumerate() {
            index.extend([(0, 0), (1, i)]);
            types.extend([SLOT_GCLS, SLOT_SOURCE]);
            key_mask.extend([true, true]);
            for j in 0..len - 2 {
                if j < c {
                    index.push((2, offset + j));
                    key_mask.push(true);
                } else {
                    index.push((0, 0));
                    key_mask.push(false);
                }
                types.push(SLOT_NEIGHBOR);
            }
            offset += c;
        }
        let x = tape.gather(&sources, &index)?;
        let types = tape.param(&self.store, ctx.types).gather_rows(&types)?;
        let x = x.add(&types)?.dropout(self.config.dropout, mode, rng)?;
        let mut run = Run { mode, rng };
        let out = ctx
            .encoder
            .forward(tape, &self.store, x, len, Some(&key_mask), &mut run)?;
        let gcls: Vec<usize> = (0..b).map(|i| i * len).collect();
        let src: Vec<usize> = (0..b).map(|i| i * len + 1).collect();
        Ok((out.gather_rows(&gcls)?, out.gather_rows(&src)?))
    }

    /// Dot product of each row of `h` with every entity embedding.
    pub fn score_entities<'t>(&self, tape: &'t Tape<T>, h: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(h.matmul_nt(&tape.param(&self.store, self.entities))?)
    }

    pub fn lp_loss<'t>(&self, logits: &Var<'t, T>, targets: &[EntityId]) -> Result<Var<'t, T>> {
        Ok(logits.cross_entropy_smoothed(targets, self.config.label_smoothing)?)
    }

    /// Recovery loss over selected rows only; `None` when the objective is
    /// off or no row is selected.
    pub fn mep_loss<'t>(
        &self,
        tape: &'t Tape<T>,
        t_src: &Var<'t, T>,
        original_sources: &[EntityId],
        selected: &[bool],
    ) -> Result<Option<Var<'t, T>>> {
        if !self.config.mep_aux_enabled || !self.config.context_enabled {
            return Ok(None);
        }
        let rows: Vec<usize> = (0..selected.len()).filter(|&i| selected[i]).collect();
        if rows.is_empty() {
            return Ok(None);
        }
        let labels: Vec<EntityId> = rows.iter().map(|&i| original_sources[i]).collect();
        let mut h = t_src.gather_rows(&rows)?;
        if let Some(head) = &self.mep_head {
            h = head.dense.apply(tape, &self.store, &h)?.gelu()?;
            h = head.norm.apply(tape, &self.store, &h, self.config.layer_norm_eps)?;
        }
        let logits = self.score_entities(tape, &h)?;
        Ok(Some(logits.cross_entropy_smoothed(&labels, self.config.label_smoothing)?))
    }

    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        batch: &Batch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutputs<'t, T>> {
        if batch.is_empty() {
            return Err(CoreError::Contract("empty batch".into()));
        }
        if batch.mask_token != self.mask_token() {
            return Err(CoreError::Contract(format!(
                "batch mask token {} but model expects {}",
                batch.mask_token,
                self.mask_token()
            )));
        }
        let b = batch.len();
        let mut pairs: Vec<(usize, RelationId)> = (0..b).map(|i| (batch.sources[i], batch.predicates[i])).collect();
        let mut counts = vec![0; b];
        if self.context.is_some() {
            for (i, count) in counts.iter_mut().enumerate() {
                for (r, e) in batch.neighbors(i) {
                    pairs.push((e, r));
                    *count += 1;
                }
            }
        }
        let embedded = self.embed_pairs(tape, &pairs, mode, rng)?;
        let reps = self.entity_block_forward(tape, embedded, mode, rng)?;
        let m_src = reps.gather_rows(&(0..b).collect::<Vec<_>>())?;
        if self.context.is_none() {
            let logits = self.score_entities(tape, &m_src)?;
            return Ok(ForwardOutputs {
                m_src,
                t_gcls: None,
                t_src: None,
                logits,
            });
        }
        let neighbors = if pairs.len() > b {
            Some(reps.gather_rows(&(b..pairs.len()).collect::<Vec<_>>())?)
        } else {
            None
        };
        let (t_gcls, t_src) = self.context_block_forward(tape, m_src, neighbors, &counts, mode, rng)?;
        let logits = self.score_entities(tape, &t_gcls)?;
        Ok(ForwardOutputs {
            m_src,
            t_gcls: Some(t_gcls),
            t_src: Some(t_src),
            logits,
        })
    }

    /// `L = L_LP + L_MEP` for one batch.
    pub fn loss<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        batch: &Batch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<LossOutput<'t, T>> {
        let out = self.forward(tape, batch, mode, rng)?;
        let lp = self.lp_loss(&out.logits, &batch.targets)?;
        let lp_value = lp.value().data()[0].as_f64();
        let selected: Vec<bool> = (0..batch.len()).map(|i| batch.is_selected(i)).collect();
        let mep = match &out.t_src {
            Some(t_src) => self.mep_loss(tape, t_src, &batch.original_sources, &selected)?,
            None => None,
        };
        Ok(match mep {
            Some(m) => LossOutput {
                lp: lp_value,
                mep: m.value().data()[0].as_f64(),
                total: lp.add(&m)?,
            },
            None => LossOutput {
                total: lp,
                lp: lp_value,
                mep: 0.0,
            },
        })
    }

    /// Eval-mode logits `[B, |E|]`.
    pub fn score_batch(&self, batch: &Batch) -> Result<Tensor<T>> {
        let tape = Tape::new();
        // eval mode never draws from the generator
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&tape, batch, Mode::Eval, &mut rng)?;
        Ok((*out.logits.value()).clone())
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> Hitter<U> {
        let mut store = ParamStore::new();
        for (_, p) in self.store.iter() {
            store.add(p.name.clone(), p.value().cast::<U>(), p.decay);
        }
        Hitter {
            config: self.config.clone(),
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            store,
            entities: self.entities,
            relations: self.relations,
            cls: self.cls,
            mask: self.mask,
            pair_types: self.pair_types,
            pair_encoder: self.pair_encoder.clone(),
            context: self.context.clone(),
            mep_head: self.mep_head.clone(),
            norm_params: self.norm_params.clone(),
        }
    }
}

/// Closed-form parameter count for a configuration.
pub fn expected_param_count(cfg: &HitterConfig, num_entities: usize, num_relations: usize) -> usize {
    let d = cfg.d_model;
    let f = cfg.ffn_dim;
    let layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
    let stack = |layers: usize| layers * layer + if cfg.norm == NormPlacement::Pre { 2 * d } else { 0 };
    let mut n = num_entities * d + num_relations * d + 2 * d + 3 * d + stack(cfg.entity_layers);
    if cfg.context_enabled {
        n += d + 3 * d + stack(cfg.context_layers);
        if cfg.mep_aux_enabled && cfg.mep_transform {
            n += d * d + d + 2 * d;
        }
    }
    n
}
