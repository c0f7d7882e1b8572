//! Small shared layers: linear projections and the two-layer GELU MLP.

use crate::error::Result;
use crate::params::Scope;
use crate::tensor::{Element, Tensor};

/// `y = x @ w + b` over the last dimension. `w` is `[in, out]`, named
/// `<scope>.weight` / `<scope>.bias`; pass `bias = false` for a pure matrix.
pub fn linear<T: Element>(x: &Tensor<T>, scope: &Scope<'_, T>, bias: bool) -> Result<Tensor<T>> {
    let w = scope.get("weight")?;
    let in_dim = *x.shape().last().expect("linear input has rank >= 1");
    let out_dim = w.shape()[1];
    let lead: Vec<usize> = x.shape()[..x.rank() - 1].to_vec();
    let n: usize = lead.iter().product();
    let flat = x.reshape(&[n, in_dim])?;
    let mut y = flat.matmul(&w)?;
    if bias {
        y = y.add_bcast(&scope.get("bias")?)?;
    }
    let mut out_shape = lead;
    out_shape.push(out_dim);
    y.reshape(&out_shape)
}

/// Pre-norm MLP branch body: `fc2(gelu(fc1(x)))`.
pub fn mlp<T: Element>(x: &Tensor<T>, scope: &Scope<'_, T>) -> Result<Tensor<T>> {
    let h = linear(x, &scope.sub("fc1"), true)?.gelu();
    linear(&h, &scope.sub("fc2"), true)
}

/// LayerNorm with parameters `<scope>.gamma` / `<scope>.beta`.
pub fn layer_norm<T: Element>(x: &Tensor<T>, scope: &Scope<'_, T>) -> Result<Tensor<T>> {
    x.layer_norm(&scope.get("gamma")?, &scope.get("beta")?, crate::nn::LN_EPS)
}

/// LayerNorm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;
