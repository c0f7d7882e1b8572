//! Parallax Fusion Transformer: stereo cross attention along epipolar rows
//! (SCAM), the cross-view fusion and intra-view refinement transformers, and
//! their composition into PFT layers, blocks, and the full fusion module.
//!
//! All functions take and return channel-last `[B, H, W, C]` features.

use crate::backbone::{conv_layer, to_channel_first, to_channel_last};
use crate::error::{Error, Result};
use crate::nn::{layer_norm, mlp};
use crate::params::Scope;
use crate::tensor::{Element, Tensor};
use crate::window_attn::{stl_forward, AttnConfig};

/// Stereo cross attention with a learnable-scalar residual merge.
///
/// Attention runs independently per (batch, row) pair along the width axis:
/// stereo disparity is horizontal, so a pixel's match in the other view lies
/// on the same row. Single head, scaling 1 / sqrt(C), no positional bias.
///
/// The T1 projection of each view produces that view's queries and serves as
/// the key source for the opposite direction, so both attention directions
/// share it.
pub fn scam<T: Element>(
    xl: &Tensor<T>,
    xr: &Tensor<T>,
    scope: &Scope<'_, T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if xl.shape() != xr.shape() {
        return Err(Error::ShapeMismatch {
            op: "scam",
            lhs: xl.shape().to_vec(),
            rhs: xr.shape().to_vec(),
        });
    }
    let (b, h, w, c) = match xl.shape() {
        [b, h, w, c] => (*b, *h, *w, *c),
        _ => {
            return Err(Error::InvalidShape {
                op: "scam",
                msg: "rank-4 [B, H, W, C] tensor required".into(),
                shape: xl.shape().to_vec(),
            })
        }
    };

    let nl = layer_norm(xl, &scope.sub("norm_l"))?.reshape(&[b * h, w, c])?;
    let nr = layer_norm(xr, &scope.sub("norm_r"))?.reshape(&[b * h, w, c])?;

    // shared projections: a_l is Q of R->L and K of L->R, a_r vice versa
    let a_l = nl.matmul(&scope.get("t1_l")?)?;
    let a_r = nr.matmul(&scope.get("t1_r")?)?;
    let v_l = nl.matmul(&scope.get("t2_l")?)?;
    let v_r = nr.matmul(&scope.get("t2_r")?)?;

    let inv_sqrt_c = 1.0 / (c as f64).sqrt();
    let f_rl = a_l
        .matmul(&a_r.permute(&[0, 2, 1])?)?
        .scale(inv_sqrt_c)
        .softmax(2)?
        .matmul(&v_r)?
        .reshape(&[b, h, w, c])?;
    let f_lr = a_r
        .matmul(&a_l.permute(&[0, 2, 1])?)?
        .scale(inv_sqrt_c)
        .softmax(2)?
        .matmul(&v_l)?
        .reshape(&[b, h, w, c])?;

    let yl = xl.add(&f_rl.scale_by(&scope.get("alpha_l")?)?)?;
    let yr = xr.add(&f_lr.scale_by(&scope.get("alpha_r")?)?)?;
    Ok((yl, yr))
}

/// Pre-residual cross features of [`scam`] (before the alpha merge), exposed
/// for tests probing the shared-projection contract.
pub fn scam_cross_features<T: Element>(
    xl: &Tensor<T>,
    xr: &Tensor<T>,
    scope: &Scope<'_, T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, h, w, c) = match xl.shape() {
        [b, h, w, c] => (*b, *h, *w, *c),
        _ => unreachable!("validated by caller"),
    };
    let nl = layer_norm(xl, &scope.sub("norm_l"))?.reshape(&[b * h, w, c])?;
    let nr = layer_norm(xr, &scope.sub("norm_r"))?.reshape(&[b * h, w, c])?;
    let a_l = nl.matmul(&scope.get("t1_l")?)?;
    let a_r = nr.matmul(&scope.get("t1_r")?)?;
    let v_l = nl.matmul(&scope.get("t2_l")?)?;
    let v_r = nr.matmul(&scope.get("t2_r")?)?;
    let inv_sqrt_c = 1.0 / (c as f64).sqrt();
    let f_rl = a_l
        .matmul(&a_r.permute(&[0, 2, 1])?)?
        .scale(inv_sqrt_c)
        .softmax(2)?
        .matmul(&v_r)?
        .reshape(&[b, h, w, c])?;
    let f_lr = a_r
        .matmul(&a_l.permute(&[0, 2, 1])?)?
        .scale(inv_sqrt_c)
        .softmax(2)?
        .matmul(&v_l)?
        .reshape(&[b, h, w, c])?;
    Ok((f_rl, f_lr))
}

/// Cross-view fusion transformer: the SCAM stage (whose alpha residual IS
/// the "+ X") followed by a shared per-view MLP residual.
pub fn cvft_forward<T: Element>(
    xl: &Tensor<T>,
    xr: &Tensor<T>,
    scope: &Scope<'_, T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (yl, yr) = scam(xl, xr, &scope.sub("scam"))?;
    let refine = |x: &Tensor<T>| -> Result<Tensor<T>> {
        let t = layer_norm(x, &scope.sub("norm"))?;
        x.add(&mlp(&t, &scope.sub("mlp"))?)
    };
    Ok((refine(&yl)?, refine(&yr)?))
}

/// Intra-view refinement transformer: one STL with regular partitioning
/// only (shift 0), shared between views.
pub fn ivrt_forward<T: Element>(
    x: &Tensor<T>,
    scope: &Scope<'_, T>,
    cfg: AttnConfig,
) -> Result<Tensor<T>> {
    stl_forward(x, scope, cfg, 0)
}

/// One PFT layer: cross-view fusion, then intra-view refinement per view.
pub fn pft_layer<T: Element>(
    xl: &Tensor<T>,
    xr: &Tensor<T>,
    scope: &Scope<'_, T>,
    cfg: AttnConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (yl, yr) = cvft_forward(xl, xr, &scope.sub("cvft"))?;
    let ivrt = scope.sub("ivrt");
    Ok((
        ivrt_forward(&yl, &ivrt, cfg)?,
        ivrt_forward(&yr, &ivrt, cfg)?,
    ))
}

/// One PFT block: `layers` sequential PFT layers, a shared 3x3 convolution
/// per view, and a block-level residual from the block input.
pub fn pft_block<T: Element>(
    xl: &Tensor<T>,
    xr: &Tensor<T>,
    scope: &Scope<'_, T>,
    cfg: AttnConfig,
    layers: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (mut yl, mut yr) = (xl.clone(), xr.clone());
    for j in 0..layers {
        (yl, yr) = pft_layer(&yl, &yr, &scope.sub(format!("layer{j}")), cfg)?;
    }
    let conv = |x: &Tensor<T>| -> Result<Tensor<T>> {
        to_channel_last(&conv_layer(&to_channel_first(x)?, &scope.sub("conv"))?)
    };
    Ok((xl.add(&conv(&yl)?)?, xr.add(&conv(&yr)?)?))
}

/// The full fusion module: `blocks` sequential PFT blocks (4 blocks of
/// 6 layers in the full configuration).
pub fn pft_forward<T: Element>(
    xl: &Tensor<T>,
    xr: &Tensor<T>,
    scope: &Scope<'_, T>,
    cfg: AttnConfig,
    blocks: usize,
    layers: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (mut yl, mut yr) = (xl.clone(), xr.clone());
    for i in 0..blocks {
        (yl, yr) = pft_block(&yl, &yr, &scope.sub(format!("block{i}")), cfg, layers)?;
    }
    Ok((yl, yr))
}
