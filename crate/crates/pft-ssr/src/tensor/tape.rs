use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{NodeRef, Tensor};

use super::Element;

type BackFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct TapeNode<T> {
    /// Parent node ids, `None` for untracked operands (no gradient flows).
    parents: Vec<Option<usize>>,
    /// Maps the output gradient to per-parent gradient contributions,
    /// aligned with `parents`. Leaves have no rule.
    back: Option<BackFn<T>>,
}

/// Ordered record of differentiable operations executed under it.
///
/// Confined to a single execution context (not `Send`); recording is eager,
/// so node ids are already a topological order.
pub struct GradTape<T: Element> {
    nodes: RefCell<Vec<TapeNode<T>>>,
}

impl<T: Element> GradTape<T> {
    #[allow(clippy::new_ret_no_self)]
    pub fn new() -> Rc<Self> {
        Rc::new(Self {
            nodes: RefCell::new(Vec::new()),
        })
    }

    /// Registers `t` as a differentiable leaf (parameter or input) on this tape.
    pub fn watch(self: &Rc<Self>, t: &Tensor<T>) -> Tensor<T> {
        let id = self.record(Vec::new(), Box::new(|_| Vec::new()));
        let mut out = t.detach();
        out.node = Some(NodeRef {
            tape: self.clone(),
            id,
        });
        out
    }

    pub(crate) fn record(&self, parents: Vec<Option<usize>>, back: BackFn<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(TapeNode {
            parents,
            back: Some(back),
        });
        nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar `loss`. Returns accumulated gradients for
    /// every node reachable from the loss; unreachable nodes read as zero.
    pub fn backward(self: &Rc<Self>, loss: &Tensor<T>) -> Result<Gradients<T>> {
        if !loss.shape().is_empty() && loss.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let loss_id = match &loss.node {
            Some(n) if Rc::ptr_eq(&n.tape, self) => n.id,
            Some(_) => panic!("loss recorded on a different tape"),
            None => {
                return Err(Error::NonScalarLoss {
                    shape: loss.shape().to_vec(),
                })
            }
        };
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss_id] = Some(vec![T::one()]);
        for id in (0..=loss_id).rev() {
            let node = &nodes[id];
            if grads[id].is_none() || node.parents.is_empty() {
                continue;
            }
            let g = grads[id].take().expect("checked above");
            let back = node.back.as_ref().expect("non-leaf node has a rule");
            let contribs = back(&g);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (parent, contrib) in node.parents.iter().zip(contribs) {
                if let (Some(pid), Some(c)) = (parent, contrib) {
                    match &mut grads[*pid] {
                        Some(acc) => {
                            debug_assert_eq!(acc.len(), c.len());
                            for (a, v) in acc.iter_mut().zip(c) {
                                *a = *a + v;
                            }
                        }
                        slot => *slot = Some(c),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward sweep: gradient per tape node.
pub struct Gradients<T: Element> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for a tracked tensor; zero-filled if the tensor did not
    /// contribute to the loss.
    pub fn grad(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = t
            .node_id()
            .expect("gradient requested for an untracked tensor");
        match self.grads.get(id).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(t.shape().to_vec(), g.clone()).expect("shape preserved"),
            None => Tensor::zeros(t.shape()),
        }
    }

}
