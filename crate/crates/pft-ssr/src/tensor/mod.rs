//! Dense row-major tensors with eager reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value: shape plus `Arc`-shared element
//! storage. Operations executed while any operand is watched by a
//! [`GradTape`] record a backward rule on that tape; [`GradTape::backward`]
//! replays the rules in exact reverse execution order.
//!
//! Element precision (`f32` / `f64`) is a session-level choice made by
//! instantiating the generic parameter; the same graph runs in either.

mod conv;
mod ops;
mod shape_ops;
mod tape;
#[cfg(test)]
pub(crate) mod tests;

pub use tape::{GradTape, Gradients};

use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar element type of a tensor session.
pub trait Element:
    num_traits::Float + Copy + fmt::Debug + fmt::Display + 'static
{
    const NAME: &'static str;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Gauss error function, used by the exact GELU.
    fn erf(self) -> Self;
}

impl Element for f32 {
    const NAME: &'static str = "f32";
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erf(self as f64) as f32
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef<T: Element> {
    pub(crate) tape: Rc<GradTape<T>>,
    pub(crate) id: usize,
}

/// Dense N-dimensional array, row-major, immutable once built.
#[derive(Clone)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<NodeRef<T>>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides, innermost stride 1.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "new",
                msg: format!("element count {} != shape product", data.len()),
                shape,
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    pub(crate) fn from_arc(shape: Vec<usize>, data: Arc<Vec<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data,
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            data: Arc::new(vec![T::zero(); numel(shape)]),
            shape: shape.to_vec(),
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            data: Arc::new(vec![value; numel(shape)]),
            shape: shape.to_vec(),
            node: None,
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[], value)
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    /// Value of a rank-0 (or single-element) tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Drops the autodiff link, keeping the value.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max |a - b| over all elements; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

fn same_tape<T: Element>(a: &Option<NodeRef<T>>, b: &Option<NodeRef<T>>) -> Option<Rc<GradTape<T>>> {
    match (a, b) {
        (Some(x), Some(y)) => {
            assert!(
                Rc::ptr_eq(&x.tape, &y.tape),
                "operands recorded on different tapes"
            );
            Some(x.tape.clone())
        }
        (Some(x), None) => Some(x.tape.clone()),
        (None, Some(y)) => Some(y.tape.clone()),
        (None, None) => None,
    }
}

/// Builds a result tensor from a unary op, recording `back` when tracked.
/// `back` maps the output gradient to the input gradient.
pub(crate) fn with_grad1<T, F>(shape: Vec<usize>, data: Arc<Vec<T>>, x: &Tensor<T>, back: F) -> Tensor<T>
where
    T: Element,
    F: Fn(&[T]) -> Vec<T> + 'static,
{
    let mut out = Tensor::from_arc(shape, data);
    if let Some(n) = &x.node {
        let id = n.tape.record(
            vec![Some(n.id)],
            Box::new(move |g| vec![Some(back(g))]),
        );
        out.node = Some(NodeRef {
            tape: n.tape.clone(),
            id,
        });
    }
    out
}

/// Binary variant; `back(g, need_a, need_b)` returns the requested gradients.
pub(crate) fn with_grad2<T, F>(
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    back: F,
) -> Tensor<T>
where
    T: Element,
    F: Fn(&[T], bool, bool) -> (Option<Vec<T>>, Option<Vec<T>>) + 'static,
{
    let mut out = Tensor::from_arc(shape, data);
    if let Some(tape) = same_tape(&a.node, &b.node) {
        let (pa, pb) = (a.node_id(), b.node_id());
        let (na, nb) = (pa.is_some(), pb.is_some());
        let id = tape.record(
            vec![pa, pb],
            Box::new(move |g| {
                let (ga, gb) = back(g, na, nb);
                vec![ga, gb]
            }),
        );
        out.node = Some(NodeRef { tape, id });
    }
    out
}

/// Ternary variant, for ops like `layer_norm` and `conv2d`.
pub(crate) fn with_grad3<T, F>(
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    back: F,
) -> Tensor<T>
where
    T: Element,
    F: Fn(&[T], [bool; 3]) -> [Option<Vec<T>>; 3] + 'static,
{
    let mut out = Tensor::from_arc(shape, data);
    let tape = same_tape(&a.node, &b.node);
    let tape = same_tape(
        &tape.map(|t| NodeRef {
            tape: t,
            id: usize::MAX,
        }),
        &c.node,
    );
    if let Some(tape) = tape {
        let ids = [a.node_id(), b.node_id(), c.node_id()];
        let need = [ids[0].is_some(), ids[1].is_some(), ids[2].is_some()];
        let id = tape.record(
            ids.to_vec(),
            Box::new(move |g| back(g, need).to_vec()),
        );
        out.node = Some(NodeRef { tape, id });
    }
    out
}
