//! Named parameter storage and tape-aware parameter access.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Element, GradTape, Gradients, Tensor};

/// Ordered, named collection of learnable tensors. Order is deterministic
/// given the model config, which the weight file format relies on.
#[derive(Clone)]
pub struct ParameterStore<T: Element> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Element> std::fmt::Debug for ParameterStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParameterStore")
            .field("parameters", &self.entries.len())
            .field("elements", &self.total_elements())
            .finish()
    }
}

impl<T: Element> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(self.entries[i].1.shape(), value.shape());
        self.entries[i].1 = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Overwrites every element of every parameter. `fill(zero)` turns the
    /// whole residual network into the identity map.
    pub fn fill(&mut self, value: T) {
        for (_, t) in &mut self.entries {
            *t = Tensor::full(t.shape(), value);
        }
    }

    /// Precision conversion (used when a session precision differs from the
    /// stored one).
    pub fn convert<U: Element>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for (name, t) in &self.entries {
            let data: Vec<U> = t.data().iter().map(|&v| U::from_f64(v.as_f64())).collect();
            out.insert(name.clone(), Tensor::new(t.shape().to_vec(), data).unwrap());
        }
        out
    }
}

/// View of a [`ParameterStore`] during one forward pass. When a tape is
/// attached, each parameter is registered as a differentiable leaf on first
/// access, so gradients can later be read back by name.
pub struct ParamBag<'a, T: Element> {
    store: &'a ParameterStore<T>,
    tape: Option<Rc<GradTape<T>>>,
    views: RefCell<HashMap<String, Tensor<T>>>,
}

impl<'a, T: Element> ParamBag<'a, T> {
    pub fn frozen(store: &'a ParameterStore<T>) -> Self {
        Self {
            store,
            tape: None,
            views: RefCell::new(HashMap::new()),
        }
    }

    pub fn tracked(store: &'a ParameterStore<T>, tape: Rc<GradTape<T>>) -> Self {
        Self {
            store,
            tape: Some(tape),
            views: RefCell::new(HashMap::new()),
        }
    }

    pub fn get(&self, name: &str) -> Result<Tensor<T>> {
        if let Some(v) = self.views.borrow().get(name) {
            return Ok(v.clone());
        }
        let raw = self
            .store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        let view = match &self.tape {
            Some(tape) => tape.watch(raw),
            None => raw.clone(),
        };
        self.views.borrow_mut().insert(name.to_string(), view.clone());
        Ok(view)
    }

    pub fn root(&'a self) -> Scope<'a, T> {
        Scope {
            bag: self,
            prefix: String::new(),
        }
    }

    /// Per-parameter gradients after a backward sweep. Parameters that never
    /// influenced the loss come back as zeros.
    pub fn grad_map(&self, grads: &Gradients<T>) -> Vec<(String, Tensor<T>)> {
        let views = self.views.borrow();
        self.store
            .iter()
            .map(|(name, raw)| {
                let g = match views.get(name) {
                    Some(view) => grads.grad(view),
                    None => Tensor::zeros(raw.shape()),
                };
                (name.to_string(), g)
            })
            .collect()
    }
}

/// Dotted-path accessor into a [`ParamBag`].
pub struct Scope<'a, T: Element> {
    bag: &'a ParamBag<'a, T>,
    prefix: String,
}

impl<'a, T: Element> Scope<'a, T> {
    pub fn sub(&self, name: impl AsRef<str>) -> Scope<'a, T> {
        Scope {
            bag: self.bag,
            prefix: self.join(name.as_ref()),
        }
    }

    pub fn get(&self, name: &str) -> Result<Tensor<T>> {
        self.bag.get(&self.join(name))
    }

    fn join(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }
}
