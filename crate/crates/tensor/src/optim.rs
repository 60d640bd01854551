use crate::error::{shape_err, Result, TensorError};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How weight decay enters an Adam update.
pub trait WeightDecay: Send + Sync {
    fn name(&self) -> &'static str;

    /// Hook on the raw gradient before the moment updates.
    fn adjust_grad(&self, _param: f64, grad: f64, _rate: f64) -> f64 {
        grad
    }

    /// Hook on the parameter before the Adam delta is subtracted.
    fn shrink(&self, param: f64, _lr: f64, _rate: f64) -> f64 {
        param
    }
}

/// `param <- param - lr * rate * param`, separate from the adaptive step.
pub struct Decoupled;

impl WeightDecay for Decoupled {
    fn name(&self) -> &'static str {
        "decoupled"
    }

    fn shrink(&self, param: f64, lr: f64, rate: f64) -> f64 {
        param - lr * rate * param
    }
}

/// Classic L2 penalty folded into the gradient.
pub struct Coupled;

impl WeightDecay for Coupled {
    fn name(&self) -> &'static str {
        "coupled"
    }

    fn adjust_grad(&self, param: f64, grad: f64, rate: f64) -> f64 {
        grad + rate * param
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct Adam<T: Scalar> {
    config: AdamConfig,
    decay: Box<dyn WeightDecay>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig, decay: Box<dyn WeightDecay>) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.value().len()]).collect();
        Self {
            config,
            decay,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn decay_style(&self) -> &'static str {
        self.decay.name()
    }

    /// One bias-corrected update of every parameter in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if lr < 0.0 || !lr.is_finite() {
            return Err(TensorError::Contract(format!("learning rate must be >= 0, got {lr}")));
        }
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(shape_err(
                "adam_step",
                format!("{} params, {} grads, {} states", store.len(), grads.len(), self.first.len()),
            ));
        }
        for ((id, p), g) in store.iter().zip(grads) {
            if p.value().shape() != g.shape() || self.first[id.0].len() != g.len() {
                return Err(shape_err(
                    "adam_step",
                    format!("{}: param {:?} grad {:?}", p.name, p.value().shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let param = store.get_mut(crate::param::ParamId(i));
            let rate = if param.decay { weight_decay } else { 0.0 };
            let values = param.value_mut().data_mut();
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..values.len() {
                let w = values[j].as_f64();
                let gj = self.decay.adjust_grad(w, g.data()[j].as_f64(), rate);
                let mj = beta1 * m[j].as_f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].as_f64() + (1.0 - beta2) * gj * gj;
                m[j] = T::of(mj);
                v[j] = T::of(vj);
                let shrunk = self.decay.shrink(w, lr, rate);
                let delta = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                values[j] = T::of(shrunk - delta);
            }
        }
        Ok(())
    }
}

/// Rescale `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w), true);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(0.7);
        let mut adam = Adam::new(&s, AdamConfig::default(), Box::new(Decoupled));
        adam.step(&mut s, &[Tensor::scalar(0.0)], 0.1).unwrap();
        assert_eq!(s.get(crate::ParamId(0)).value().item(), Some(0.7));
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        for g in [3.0, -0.02] {
            let mut s = store(1.0);
            let mut adam = Adam::new(&s, AdamConfig::default(), Box::new(Decoupled));
            adam.step(&mut s, &[Tensor::scalar(g)], 0.01).unwrap();
            let w = s.get(crate::ParamId(0)).value().item().unwrap();
            let delta = w - 1.0;
            assert!((delta + 0.01 * f64::signum(g)).abs() < 1e-6, "g={g} delta={delta}");
        }
    }

    #[test]
    fn three_steps_on_square_match_hand_stepped_oracle() {
        // f(w) = w^2, grad 2w, from w = 1 with lr 0.1
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * w_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w_ref -= lr * mh / (vh.sqrt() + eps);
            expected.push(w_ref);
        }

        let mut s = store(1.0);
        let mut adam = Adam::new(&s, AdamConfig::default(), Box::new(Decoupled));
        for want in expected {
            let w = s.get(crate::ParamId(0)).value().item().unwrap();
            adam.step(&mut s, &[Tensor::scalar(2.0 * w)], lr).unwrap();
            let got = s.get(crate::ParamId(0)).value().item().unwrap();
            assert!((got - want).abs() < 1e-6, "got {got} want {want}");
        }
    }

    #[test]
    fn decay_styles_differ_and_respect_the_decay_flag() {
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut a = store(2.0);
        let mut adam = Adam::new(&a, cfg, Box::new(Decoupled));
        adam.step(&mut a, &[Tensor::scalar(0.0)], 0.1).unwrap();
        // pure shrink because the Adam delta is zero
        assert!((a.get(crate::ParamId(0)).value().item().unwrap() - 1.98).abs() < 1e-12);

        let mut c = store(2.0);
        let mut adam = Adam::new(&c, cfg, Box::new(Coupled));
        adam.step(&mut c, &[Tensor::scalar(0.0)], 0.1).unwrap();
        // penalty becomes the gradient, so the first step is ~ -lr
        assert!((c.get(crate::ParamId(0)).value().item().unwrap() - 1.9).abs() < 1e-6);

        let mut n = ParamStore::<f64>::new();
        n.add("ln.gain", Tensor::scalar(2.0), false);
        let mut adam = Adam::new(&n, cfg, Box::new(Decoupled));
        adam.step(&mut n, &[Tensor::scalar(0.0)], 0.1).unwrap();
        assert_eq!(n.get(crate::ParamId(0)).value().item(), Some(2.0));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_alone() {
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut s = store(0.3);
        let mut adam = Adam::new(&s, cfg, Box::new(Decoupled));
        adam.step(&mut s, &[Tensor::scalar(5.0)], 0.0).unwrap();
        assert_eq!(s.get(crate::ParamId(0)).value().item(), Some(0.3));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = store(0.3);
        let mut adam = Adam::new(&s, AdamConfig::default(), Box::new(Decoupled));
        let bad = Tensor::<f64>::zeros(&[2]);
        assert!(adam.step(&mut s, &[bad], 0.1).is_err());
        assert!(adam.step(&mut s, &[], 0.1).is_err());
    }

    #[test]
    fn clipping_bounds_the_joint_norm() {
        let mut g = vec![Tensor::<f64>::from_f64(&[2], &[3.0, 4.0]).unwrap()];
        let before = clip_global_norm(&mut g, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((g[0].norm() - 1.0).abs() < 1e-12);
    }
}
