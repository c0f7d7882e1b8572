//! Shape-changing ops: all pure element permutations / embeddings, so the
//! backward rules are the inverse rearrangements.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::{numel, strides, with_grad1, Element, Tensor};

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                msg: format!("cannot view {:?} as {:?}", self.shape(), shape),
                shape: shape.to_vec(),
            });
        }
        Ok(with_grad1(shape.to_vec(), self.data.clone(), self, |g| {
            g.to_vec()
        }))
    }

    /// Reorders axes: `out.shape[i] = self.shape[perm[i]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidShape {
                op: "permute",
                msg: format!("invalid permutation {:?}", perm),
                shape: self.shape().to_vec(),
            });
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let out = permute_data(self.data(), &in_shape, perm);
        // inverse permutation for the gradient
        let mut inv = vec![0usize; rank];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let out_shape_b = out_shape.clone();
        Ok(with_grad1(
            out_shape,
            Arc::new(out),
            self,
            move |g| permute_data(g, &out_shape_b, &inv),
        ))
    }

    /// Zero-pads the bottom/right of a `[B, H, W, C]` tensor.
    pub fn pad_hw(&self, pad_bottom: usize, pad_right: usize) -> Result<Self> {
        let [b, h, w, c] = self.dims4("pad_hw")?;
        let (oh, ow) = (h + pad_bottom, w + pad_right);
        let mut out = vec![T::zero(); b * oh * ow * c];
        let x = self.data();
        for bi in 0..b {
            for i in 0..h {
                for j in 0..w {
                    let src = ((bi * h + i) * w + j) * c;
                    let dst = ((bi * oh + i) * ow + j) * c;
                    out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
        Ok(with_grad1(
            vec![b, oh, ow, c],
            Arc::new(out),
            self,
            move |g| {
                let mut gx = vec![T::zero(); b * h * w * c];
                for bi in 0..b {
                    for i in 0..h {
                        for j in 0..w {
                            let dst = ((bi * h + i) * w + j) * c;
                            let src = ((bi * oh + i) * ow + j) * c;
                            gx[dst..dst + c].copy_from_slice(&g[src..src + c]);
                        }
                    }
                }
                gx
            },
        ))
    }

    /// Keeps the top-left `keep_h x keep_w` region of a `[B, H, W, C]` tensor.
    pub fn crop_hw(&self, keep_h: usize, keep_w: usize) -> Result<Self> {
        let [b, h, w, c] = self.dims4("crop_hw")?;
        if keep_h > h || keep_w > w {
            return Err(Error::InvalidShape {
                op: "crop_hw",
                msg: format!("crop {}x{} exceeds {}x{}", keep_h, keep_w, h, w),
                shape: self.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); b * keep_h * keep_w * c];
        let x = self.data();
        for bi in 0..b {
            for i in 0..keep_h {
                for j in 0..keep_w {
                    let src = ((bi * h + i) * w + j) * c;
                    let dst = ((bi * keep_h + i) * keep_w + j) * c;
                    out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
        Ok(with_grad1(
            vec![b, keep_h, keep_w, c],
            Arc::new(out),
            self,
            move |g| {
                let mut gx = vec![T::zero(); b * h * w * c];
                for bi in 0..b {
                    for i in 0..keep_h {
                        for j in 0..keep_w {
                            let dst = ((bi * h + i) * w + j) * c;
                            let src = ((bi * keep_h + i) * keep_w + j) * c;
                            gx[dst..dst + c].copy_from_slice(&g[src..src + c]);
                        }
                    }
                }
                gx
            },
        ))
    }

    /// Torus roll of a `[B, H, W, C]` tensor: output pixel (i, j) takes input
    /// pixel ((i - dy) mod H, (j - dx) mod W).
    pub fn roll_hw(&self, dy: i64, dx: i64) -> Result<Self> {
        let [b, h, w, c] = self.dims4("roll_hw")?;
        let out = roll_data(self.data(), b, h, w, c, dy, dx);
        Ok(with_grad1(
            self.shape().to_vec(),
            Arc::new(out),
            self,
            move |g| roll_data(g, b, h, w, c, -dy, -dx),
        ))
    }

    /// Selects rows of a rank-2 tensor: `out[i] = self[indices[i]]`.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        let (rows, cols) = match self.shape() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::InvalidShape {
                    op: "gather_rows",
                    msg: "rank-2 tensor required".into(),
                    shape: self.shape().to_vec(),
                })
            }
        };
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                msg: format!("index {} out of range for {} rows", bad, rows),
                shape: self.shape().to_vec(),
            });
        }
        let idx: Vec<usize> = indices.to_vec();
        let mut out = vec![T::zero(); idx.len() * cols];
        let x = self.data();
        for (i, &r) in idx.iter().enumerate() {
            out[i * cols..(i + 1) * cols].copy_from_slice(&x[r * cols..(r + 1) * cols]);
        }
        Ok(with_grad1(
            vec![idx.len(), cols],
            Arc::new(out),
            self,
            move |g| {
                let mut gx = vec![T::zero(); rows * cols];
                for (i, &r) in idx.iter().enumerate() {
                    for j in 0..cols {
                        gx[r * cols + j] = gx[r * cols + j] + g[i * cols + j];
                    }
                }
                gx
            },
        ))
    }

    /// Reverses one axis.
    pub fn flip(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        let shape = self.shape().to_vec();
        let out = flip_data(self.data(), &shape, axis);
        let shape_b = shape.clone();
        Ok(with_grad1(shape, Arc::new(out), self, move |g| {
            flip_data(g, &shape_b, axis)
        }))
    }

    fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape() {
            [a, b, c, d] => Ok([*a, *b, *c, *d]),
            _ => Err(Error::InvalidShape {
                op,
                msg: "rank-4 tensor required".into(),
                shape: self.shape().to_vec(),
            }),
        }
    }

}

fn permute_data<T: Element>(x: &[T], in_shape: &[usize], perm: &[usize]) -> Vec<T> {
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_str = strides(in_shape);
    let out_str = strides(&out_shape);
    let mut out = vec![T::zero(); x.len()];
    let mut idx = vec![0usize; rank];
    for (pos, &v) in x.iter().enumerate() {
        // decode the input multi-index
        let mut rem = pos;
        for d in 0..rank {
            idx[d] = rem / in_str[d];
            rem %= in_str[d];
        }
        let mut dst = 0;
        for d in 0..rank {
            dst += idx[perm[d]] * out_str[d];
        }
        out[dst] = v;
    }
    out
}

fn roll_data<T: Element>(x: &[T], b: usize, h: usize, w: usize, c: usize, dy: i64, dx: i64) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let (hh, ww) = (h as i64, w as i64);
    for bi in 0..b {
        for i in 0..h {
            let si = (i as i64 - dy).rem_euclid(hh) as usize;
            for j in 0..w {
                let sj = (j as i64 - dx).rem_euclid(ww) as usize;
                let dst = ((bi * h + i) * w + j) * c;
                let src = ((bi * h + si) * w + sj) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    out
}

fn flip_data<T: Element>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let st = strides(shape);
    let len = shape[axis];
    let stride = st[axis];
    let outer = numel(&shape[..axis]);
    let inner = stride;
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for l in 0..len {
            for i in 0..inner {
                let src = o * len * stride + l * stride + i;
                let dst = o * len * stride + (len - 1 - l) * stride + i;
                out[dst] = x[src];
            }
        }
    }
    out
}
