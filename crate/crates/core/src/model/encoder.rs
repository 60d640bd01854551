use hitter_tensor::{Mode, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{Activation, HitterConfig, NormPlacement};
use crate::error::Result;

/// Shared bookkeeping while registering parameters.
pub(crate) struct Init<'a, T: Scalar, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    pub std: f64,
    pub norms: &'a mut Vec<ParamId>,
}

impl<T: Scalar, R: Rng> Init<'_, T, R> {
    pub fn normal(&mut self, name: String, shape: &[usize]) -> ParamId {
        let dist = Normal::new(0.0, self.std).expect("positive std");
        let n: usize = shape.iter().product();
        let values: Vec<T> = (0..n).map(|_| T::of(dist.sample(self.rng))).collect();
        let t = Tensor::new(shape.to_vec(), values).expect("sized");
        self.store.add(name, t, true)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add(name, Tensor::zeros(shape), true)
    }

    /// Layer norm gain (ones) and bias (zeros).
    pub fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        let gain = self
            .store
            .add(format!("{prefix}.gain"), Tensor::full(&[d], T::one()), false);
        let bias = self.store.add(format!("{prefix}.bias"), Tensor::zeros(&[d]), false);
        self.norms.extend([gain, bias]);
        Norm { gain, bias }
    }

    pub fn dense(&mut self, prefix: &str, input: usize, output: usize) -> Dense {
        Dense {
            weight: self.normal(format!("{prefix}.weight"), &[input, output]),
            bias: self.zeros(format!("{prefix}.bias"), &[output]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    pub fn apply<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: &Var<'t, T>,
        eps: f64,
    ) -> Result<Var<'t, T>> {
        Ok(x.layer_norm(&tape.param(store, self.gain), &tape.param(store, self.bias), eps)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    pub fn apply<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let y = x.matmul(&tape.param(store, self.weight))?;
        Ok(y.add_bias(&tape.param(store, self.bias))?)
    }
}

#[derive(Clone, Debug)]
struct Layer {
    attn_norm: Norm,
    query: Dense,
    key: Dense,
    value: Dense,
    out: Dense,
    ffn_norm: Norm,
    ffn_in: Dense,
    ffn_out: Dense,
}

/// Bidirectional Transformer encoder without positional information.
#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    layers: Vec<Layer>,
    final_norm: Option<Norm>,
    heads: usize,
    dropout: f64,
    eps: f64,
    activation: Activation,
    norm: NormPlacement,
}

/// Per-call execution settings.
pub(crate) struct Run<'a, R: Rng + ?Sized> {
    pub mode: Mode,
    pub rng: &'a mut R,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, prefix: &str, n: usize, cfg: &HitterConfig) -> Self {
        let d = cfg.d_model;
        let layers = (0..n)
            .map(|i| {
                let p = format!("{prefix}.layer{i}");
                Layer {
                    attn_norm: init.norm(&format!("{p}.attn_norm"), d),
                    query: init.dense(&format!("{p}.attn.query"), d, d),
                    key: init.dense(&format!("{p}.attn.key"), d, d),
                    value: init.dense(&format!("{p}.attn.value"), d, d),
                    out: init.dense(&format!("{p}.attn.out"), d, d),
                    ffn_norm: init.norm(&format!("{p}.ffn_norm"), d),
                    ffn_in: init.dense(&format!("{p}.ffn.in"), d, cfg.ffn_dim),
                    ffn_out: init.dense(&format!("{p}.ffn.out"), cfg.ffn_dim, d),
                }
            })
            .collect();
        let final_norm = (cfg.norm == NormPlacement::Pre).then(|| init.norm(&format!("{prefix}.final_norm"), d));
        Self {
            layers,
            final_norm,
            heads: cfg.heads,
            dropout: cfg.dropout,
            eps: cfg.layer_norm_eps,
            activation: cfg.activation,
            norm: cfg.norm,
        }
    }

    /// `x` is `[groups * len, d]`; attention stays within each group of `len` rows.
    pub fn forward<'t, T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        mut x: Var<'t, T>,
        len: usize,
        key_mask: Option<&[bool]>,
        run: &mut Run<'_, R>,
    ) -> Result<Var<'t, T>> {
        for layer in &self.layers {
            let h = match self.norm {
                NormPlacement::Pre => layer.attn_norm.apply(tape, store, &x, self.eps)?,
                NormPlacement::Post => x,
            };
            let q = layer.query.apply(tape, store, &h)?;
            let k = layer.key.apply(tape, store, &h)?;
            let v = layer.value.apply(tape, store, &h)?;
            let a = q.attention(&k, &v, self.heads, len, key_mask)?;
            let a = layer.out.apply(tape, store, &a)?.dropout(self.dropout, run.mode, run.rng)?;
            x = x.add(&a)?;
            if self.norm == NormPlacement::Post {
                x = layer.attn_norm.apply(tape, store, &x, self.eps)?;
            }

            let h = match self.norm {
                NormPlacement::Pre => layer.ffn_norm.apply(tape, store, &x, self.eps)?,
                NormPlacement::Post => x,
            };
            let f = layer.ffn_in.apply(tape, store, &h)?;
            let f = match self.activation {
                Activation::Gelu => f.gelu()?,
                Activation::Relu => f.relu()?,
            };
            let f = layer.ffn_out.apply(tape, store, &f)?.dropout(self.dropout, run.mode, run.rng)?;
            x = x.add(&f)?;
            if self.norm == NormPlacement::Post {
                x = layer.ffn_norm.apply(tape, store, &x, self.eps)?;
            }
        }
        match &self.final_norm {
            Some(n) => n.apply(tape, store, &x, self.eps),
            None => Ok(x),
        }
    }
}
