//! Feature extraction and refinement stages built from Residual Swin
//! Transformer Blocks (RSTBs). All stages are siamese: one parameter set,
//! applied to both views, and every stage preserves spatial dimensions.

use crate::error::{Error, Result};
use crate::params::Scope;
use crate::tensor::{Element, Tensor};
use crate::window_attn::{stl_forward, AttnConfig};

/// 3x3 convolution with `(k-1)/2` padding, parameters `<scope>.weight/.bias`.
pub fn conv_layer<T: Element>(x: &Tensor<T>, scope: &Scope<'_, T>) -> Result<Tensor<T>> {
    let w = scope.get("weight")?;
    let pad = w.shape()[2] / 2;
    x.conv2d(&w, &scope.get("bias")?, pad)
}

/// `[B, C, H, W]` -> `[B, H, W, C]`.
pub fn to_channel_last<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.permute(&[0, 2, 3, 1])
}

/// `[B, H, W, C]` -> `[B, C, H, W]`.
pub fn to_channel_first<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.permute(&[0, 3, 1, 2])
}

/// Shallow feature extraction: a single shared 3x3 convolution per view.
pub fn shallow_extract<T: Element>(x: &Tensor<T>, scope: &Scope<'_, T>) -> Result<Tensor<T>> {
    conv_layer(x, &scope.sub("conv"))
}

/// One RSTB on `[B, C, H, W]`: a chain of STLs alternating regular and
/// shifted partitioning, a 3x3 convolution, and a block-level residual.
pub fn rstb_forward<T: Element>(
    x: &Tensor<T>,
    scope: &Scope<'_, T>,
    cfg: AttnConfig,
    stl_count: usize,
) -> Result<Tensor<T>> {
    if stl_count % 2 != 0 {
        return Err(Error::Config(format!(
            "RSTB needs an even STL count to complete the regular/shifted alternation, got {stl_count}"
        )));
    }
    let mut t = to_channel_last(x)?;
    for j in 0..stl_count {
        let shift = if j % 2 == 0 { 0 } else { cfg.window / 2 };
        t = stl_forward(&t, &scope.sub(format!("stl{j}")), cfg, shift)?;
    }
    let t = conv_layer(&to_channel_first(&t)?, &scope.sub("conv"))?;
    x.add(&t)
}

/// Deep extraction: `rstb_count` sequential RSTBs (3 in the full model).
pub fn deep_extract<T: Element>(
    x: &Tensor<T>,
    scope: &Scope<'_, T>,
    cfg: AttnConfig,
    rstb_count: usize,
    stl_count: usize,
) -> Result<Tensor<T>> {
    let mut t = x.clone();
    for i in 0..rstb_count {
        t = rstb_forward(&t, &scope.sub(format!("rstb{i}")), cfg, stl_count)?;
    }
    Ok(t)
}

/// Refinement: RSTBs then a convolution, plus the residual from the shallow
/// features of the same view.
pub fn refine<T: Element>(
    x: &Tensor<T>,
    scope: &Scope<'_, T>,
    shallow: &Tensor<T>,
    cfg: AttnConfig,
    rstb_count: usize,
    stl_count: usize,
) -> Result<Tensor<T>> {
    if x.shape() != shallow.shape() {
        return Err(Error::ShapeMismatch {
            op: "refine",
            lhs: x.shape().to_vec(),
            rhs: shallow.shape().to_vec(),
        });
    }
    let mut t = x.clone();
    for i in 0..rstb_count {
        t = rstb_forward(&t, &scope.sub(format!("rstb{i}")), cfg, stl_count)?;
    }
    conv_layer(&t, &scope.sub("conv"))?.add(shallow)
}
