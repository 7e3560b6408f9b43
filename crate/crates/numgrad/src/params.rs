use std::collections::HashMap;

use crate::error::{NumgradError, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub requires_grad: bool,
}

/// Named parameter set owned by one model component.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, usize>,
}

/// Graph leaves created for a store by [`ParamStore::bind`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    /// Registers a parameter. Names must be unique within the store.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter name `{name}`");
        let grad = Tensor::zeros(value.shape().to_vec());
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, grad, requires_grad: true });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Freezes or unfreezes every parameter.
    pub fn set_requires_grad(&mut self, on: bool) {
        for p in &mut self.params {
            p.requires_grad = on;
        }
    }

    /// Places every parameter on the graph; frozen ones become constants.
    pub fn bind(&self, g: &mut Graph<T>) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| if p.requires_grad { g.leaf(p.value.clone()) } else { g.constant(p.value.clone()) })
            .collect();
        Binding { vars }
    }

    /// Places every parameter on the graph as a constant regardless of flags.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Binding {
        Binding { vars: self.params.iter().map(|p| g.constant(p.value.clone())).collect() }
    }

    /// Adds the gradients of the bound leaves into the accumulators.
    pub fn accumulate(&mut self, binding: &Binding, grads: &Gradients<T>) {
        for (p, v) in self.params.iter_mut().zip(&binding.vars) {
            if let Some(g) = grads.get(*v) {
                for (acc, d) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc = *acc + *d;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(T::zero());
        }
    }

    /// Overwrites values from `(name, tensor)` pairs, e.g. a loaded checkpoint.
    /// Every parameter of the store must be present with a matching shape.
    pub fn load_named(&mut self, named: &[(String, Tensor<f32>)]) -> Result<()> {
        let lookup: HashMap<&str, &Tensor<f32>> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in &mut self.params {
            let t = lookup.get(p.name.as_str()).ok_or_else(|| NumgradError::UnknownParameter(p.name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(NumgradError::ShapeMismatch {
                    op: "load_named",
                    lhs: p.value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            p.value = t.cast();
        }
        Ok(())
    }

    /// `(name, value)` pairs in registration order, as stored in checkpoints.
    pub fn named_values(&self) -> Vec<(String, Tensor<f32>)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.cast())).collect()
    }

    /// The same parameters in another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            let id = out.add(p.name.clone(), p.value.cast());
            out.params[id.0].requires_grad = p.requires_grad;
        }
        out
    }
}
