//! 2D convolution (cross-correlation convention) and sub-pixel shuffles on
//! channel-first `[B, C, H, W]` tensors.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::{with_grad1, with_grad3, Element, Tensor};

impl<T: Element> Tensor<T> {
    /// Cross-correlation with zero padding. Output height is
    /// `H + 2*padding - kh + 1`, and likewise for width.
    pub fn conv2d(&self, weight: &Self, bias: &Self, padding: usize) -> Result<Self> {
        let (b, cin, h, w) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    msg: "input must be [B, C, H, W]".into(),
                    shape: self.shape().to_vec(),
                })
            }
        };
        let (cout, cin_w, kh, kw) = match weight.shape() {
            [o, i, kh, kw] => (*o, *i, *kh, *kw),
            _ => {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    msg: "weight must be [Cout, Cin, kh, kw]".into(),
                    shape: weight.shape().to_vec(),
                })
            }
        };
        if cin != cin_w {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if bias.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: vec![cout],
                rhs: bias.shape().to_vec(),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("kernel {}x{} with padding {} does not fit", kh, kw, padding),
                shape: self.shape().to_vec(),
            });
        }
        let oh = h + 2 * padding - kh + 1;
        let ow = w + 2 * padding - kw + 1;

        let x = self.data.clone();
        let wt = weight.data.clone();
        let bs = bias.data();
        let pad = padding as i64;

        let mut out = vec![T::zero(); b * cout * oh * ow];
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bs[co];
                        for ci in 0..cin {
                            for ky in 0..kh {
                                let iy = oy as i64 + ky as i64 - pad;
                                if iy < 0 || iy >= h as i64 {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox as i64 + kx as i64 - pad;
                                    if ix < 0 || ix >= w as i64 {
                                        continue;
                                    }
                                    let xi = ((bi * cin + ci) * h + iy as usize) * w + ix as usize;
                                    let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                    acc = acc + x[xi] * wt[wi];
                                }
                            }
                        }
                        out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }

        Ok(with_grad3(
            vec![b, cout, oh, ow],
            Arc::new(out),
            self,
            weight,
            bias,
            move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![T::zero(); b * cin * h * w];
                    for bi in 0..b {
                        for co in 0..cout {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let go = g[((bi * cout + co) * oh + oy) * ow + ox];
                                    for ci in 0..cin {
                                        for ky in 0..kh {
                                            let iy = oy as i64 + ky as i64 - pad;
                                            if iy < 0 || iy >= h as i64 {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = ox as i64 + kx as i64 - pad;
                                                if ix < 0 || ix >= w as i64 {
                                                    continue;
                                                }
                                                let xi = ((bi * cin + ci) * h + iy as usize) * w
                                                    + ix as usize;
                                                let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                                gx[xi] = gx[xi] + go * wt[wi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    gx
                });
                let gw = need[1].then(|| {
                    let mut gw = vec![T::zero(); cout * cin * kh * kw];
                    for bi in 0..b {
                        for co in 0..cout {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let go = g[((bi * cout + co) * oh + oy) * ow + ox];
                                    for ci in 0..cin {
                                        for ky in 0..kh {
                                            let iy = oy as i64 + ky as i64 - pad;
                                            if iy < 0 || iy >= h as i64 {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = ox as i64 + kx as i64 - pad;
                                                if ix < 0 || ix >= w as i64 {
                                                    continue;
                                                }
                                                let xi = ((bi * cin + ci) * h + iy as usize) * w
                                                    + ix as usize;
                                                let wi = ((co * cin + ci) * kh + ky) * kw + kx;
                                                gw[wi] = gw[wi] + go * x[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    gw
                });
                let gb = need[2].then(|| {
                    let mut gb = vec![T::zero(); cout];
                    for bi in 0..b {
                        for co in 0..cout {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    gb[co] = gb[co] + g[((bi * cout + co) * oh + oy) * ow + ox];
                                }
                            }
                        }
                    }
                    gb
                });
                [gx, gw, gb]
            },
        ))
    }

    /// Rearranges `[B, C*S^2, H, W]` into `[B, C, S*H, S*W]`:
    /// `out[b][c][h*S+i][w*S+j] = in[b][c*S^2 + i*S + j][h][w]`.
    pub fn pixel_shuffle(&self, s: usize) -> Result<Self> {
        let (b, cs, h, w) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => {
                return Err(Error::InvalidShape {
                    op: "pixel_shuffle",
                    msg: "input must be [B, C, H, W]".into(),
                    shape: self.shape().to_vec(),
                })
            }
        };
        if s == 0 || cs % (s * s) != 0 {
            return Err(Error::InvalidShape {
                op: "pixel_shuffle",
                msg: format!("channel count {} not divisible by {}^2", cs, s),
                shape: self.shape().to_vec(),
            });
        }
        let c = cs / (s * s);
        let out = shuffle_fwd(self.data(), b, c, s, h, w);
        Ok(with_grad1(
            vec![b, c, s * h, s * w],
            Arc::new(out),
            self,
            move |g| unshuffle_fwd(g, b, c, s, h, w),
        ))
    }

    /// Exact inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, s: usize) -> Result<Self> {
        let (b, c, sh, sw) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            _ => {
                return Err(Error::InvalidShape {
                    op: "pixel_unshuffle",
                    msg: "input must be [B, C, H, W]".into(),
                    shape: self.shape().to_vec(),
                })
            }
        };
        if s == 0 || sh % s != 0 || sw % s != 0 {
            return Err(Error::InvalidShape {
                op: "pixel_unshuffle",
                msg: format!("spatial dims {}x{} not divisible by {}", sh, sw, s),
                shape: self.shape().to_vec(),
            });
        }
        let (h, w) = (sh / s, sw / s);
        let out = unshuffle_fwd(self.data(), b, c, s, h, w);
        Ok(with_grad1(
            vec![b, c * s * s, h, w],
            Arc::new(out),
            self,
            move |g| shuffle_fwd(g, b, c, s, h, w),
        ))
    }
}

fn shuffle_fwd<T: Element>(x: &[T], b: usize, c: usize, s: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (oh, ow) = (s * h, s * w);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let src_c = ci * s * s + i * s + j;
                    for y in 0..h {
                        for x0 in 0..w {
                            let src = ((bi * c * s * s + src_c) * h + y) * w + x0;
                            let dst = ((bi * c + ci) * oh + y * s + i) * ow + x0 * s + j;
                            out[dst] = x[src];
                        }
                    }
                }
            }
        }
    }
    out
}

fn unshuffle_fwd<T: Element>(x: &[T], b: usize, c: usize, s: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (oh, ow) = (s * h, s * w);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let dst_c = ci * s * s + i * s + j;
                    for y in 0..h {
                        for x0 in 0..w {
                            let dst = ((bi * c * s * s + dst_c) * h + y) * w + x0;
                            let src = ((bi * c + ci) * oh + y * s + i) * ow + x0 * s + j;
                            out[dst] = x[src];
                        }
                    }
                }
            }
        }
    }
    out
}
