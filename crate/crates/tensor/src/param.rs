use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub name: String,
    /// Whether weight decay applies to this tensor.
    pub decay: bool,
    value: Rc<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn shared(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    /// Copy-on-write access; cheap once no tape holds the value.
    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.value)
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            decay,
            value: Rc::new(value),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Snapshot of every value, in store order.
    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| (*p.value).clone()).collect()
    }

    /// Replace all values; shapes must agree with the current ones.
    pub fn load_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(shape_err(
                "load_values",
                format!("expected {} tensors, got {}", self.params.len(), values.len()),
            ));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(shape_err(
                    "load_values",
                    format!("{}: {:?} vs {:?}", p.name, p.value.shape(), v.shape()),
                ));
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = Rc::new(v);
        }
        Ok(())
    }
}
