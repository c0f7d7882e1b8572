//! Arithmetic, attention-math and normalization kernels with backward rules.
//!
//! Every reduction runs in a fixed, data-independent loop order so repeated
//! runs are bit-identical.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::{numel, strides, with_grad1, with_grad2, with_grad3, Element, Tensor};

impl<T: Element> Tensor<T> {
    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(with_grad2(
            self.shape().to_vec(),
            Arc::new(data),
            self,
            other,
            |g, na, nb| {
                (
                    na.then(|| g.to_vec()),
                    nb.then(|| g.to_vec()),
                )
            },
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(with_grad2(
            self.shape().to_vec(),
            Arc::new(data),
            self,
            other,
            |g, na, nb| {
                (
                    na.then(|| g.to_vec()),
                    nb.then(|| g.iter().map(|&v| -v).collect()),
                )
            },
        ))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "mul")?;
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let (a_data, b_data) = (self.data.clone(), other.data.clone());
        Ok(with_grad2(
            self.shape().to_vec(),
            Arc::new(data),
            self,
            other,
            move |g, na, nb| {
                (
                    na.then(|| g.iter().zip(b_data.iter()).map(|(&g, &b)| g * b).collect()),
                    nb.then(|| g.iter().zip(a_data.iter()).map(|(&g, &a)| g * a).collect()),
                )
            },
        ))
    }

    pub fn neg(&self) -> Self {
        let data: Vec<T> = self.data().iter().map(|&v| -v).collect();
        with_grad1(self.shape().to_vec(), Arc::new(data), self, |g| {
            g.iter().map(|&v| -v).collect()
        })
    }

    /// Multiply by a compile-time constant (not differentiated through).
    pub fn scale(&self, c: f64) -> Self {
        let c = T::from_f64(c);
        let data: Vec<T> = self.data().iter().map(|&v| v * c).collect();
        with_grad1(self.shape().to_vec(), Arc::new(data), self, move |g| {
            g.iter().map(|&v| v * c).collect()
        })
    }

    /// Elementwise |x|; subgradient 0 at ties.
    pub fn abs(&self) -> Self {
        let data: Vec<T> = self.data().iter().map(|&v| v.abs()).collect();
        let x = self.data.clone();
        with_grad1(self.shape().to_vec(), Arc::new(data), self, move |g| {
            g.iter()
                .zip(x.iter())
                .map(|(&g, &x)| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
    }

    /// Adds `other` broadcast over leading dimensions: `other.shape` must be
    /// a suffix of `self.shape`. The gradient for `other` sums the lead dims.
    pub fn add_bcast(&self, other: &Self) -> Result<Self> {
        let (ls, rs) = (self.shape(), other.shape());
        if rs.len() > ls.len() || &ls[ls.len() - rs.len()..] != rs {
            return Err(Error::ShapeMismatch {
                op: "add_bcast",
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let blen = numel(rs).max(1);
        let data: Vec<T> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a + other.data()[i % blen])
            .collect();
        Ok(with_grad2(
            ls.to_vec(),
            Arc::new(data),
            self,
            other,
            move |g, na, nb| {
                let gb = nb.then(|| {
                    let mut acc = vec![T::zero(); blen];
                    for (i, &v) in g.iter().enumerate() {
                        acc[i % blen] = acc[i % blen] + v;
                    }
                    acc
                });
                (na.then(|| g.to_vec()), gb)
            },
        ))
    }

    /// Multiply every element by a learnable single-element tensor.
    pub fn scale_by(&self, alpha: &Self) -> Result<Self> {
        if alpha.len() != 1 {
            return Err(Error::InvalidShape {
                op: "scale_by",
                msg: "scale factor must hold exactly one element".into(),
                shape: alpha.shape().to_vec(),
            });
        }
        let a = alpha.data()[0];
        let data: Vec<T> = self.data().iter().map(|&v| v * a).collect();
        let x = self.data.clone();
        Ok(with_grad2(
            self.shape().to_vec(),
            Arc::new(data),
            self,
            alpha,
            move |g, nx, nalpha| {
                let ga = nalpha.then(|| {
                    let mut s = T::zero();
                    for (&g, &x) in g.iter().zip(x.iter()) {
                        s = s + g * x;
                    }
                    vec![s]
                });
                (nx.then(|| g.iter().map(|&v| v * a).collect()), ga)
            },
        ))
    }

    /// Mean over all elements, yielding a rank-0 tensor.
    pub fn mean_all(&self) -> Self {
        let n = T::from_f64(self.len() as f64);
        let mut s = T::zero();
        for &v in self.data() {
            s = s + v;
        }
        let count = self.len();
        with_grad1(vec![], Arc::new(vec![s / n]), self, move |g| {
            let gv = g[0] / T::from_f64(count as f64);
            vec![gv; count]
        })
    }

    pub fn sum_all(&self) -> Self {
        let mut s = T::zero();
        for &v in self.data() {
            s = s + v;
        }
        let count = self.len();
        with_grad1(vec![], Arc::new(vec![s]), self, move |g| vec![g[0]; count])
    }

    /// Batched matrix product over the trailing two dimensions.
    ///
    /// Leading dimensions must match exactly, or `other` may be rank-2 and is
    /// then shared across all batches of `self`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (ls, rs) = (self.shape(), other.shape());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: ls.to_vec(),
            rhs: rs.to_vec(),
        };
        if ls.len() < 2 || rs.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let shared_rhs = rs.len() == 2 && ls.len() > 2;
        if !shared_rhs && ls[..ls.len() - 2] != rs[..rs.len() - 2] {
            return Err(mismatch());
        }
        let batch = numel(&ls[..ls.len() - 2]);
        let mut out_shape = ls[..ls.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);

        let a = self.data.clone();
        let b = other.data.clone();
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let ao = bi * m * k;
            let bo = if shared_rhs { 0 } else { bi * k * n };
            let oo = bi * m * n;
            for i in 0..m {
                for j in 0..n {
                    let mut acc = T::zero();
                    for p in 0..k {
                        acc = acc + a[ao + i * k + p] * b[bo + p * n + j];
                    }
                    out[oo + i * n + j] = acc;
                }
            }
        }

        Ok(with_grad2(
            out_shape,
            Arc::new(out),
            self,
            other,
            move |g, na, nb| {
                // dA = G B^T, dB = A^T G (summed over batches when shared)
                let ga = na.then(|| {
                    let mut ga = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        let bo = if shared_rhs { 0 } else { bi * k * n };
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = T::zero();
                                for j in 0..n {
                                    acc = acc + g[bi * m * n + i * n + j] * b[bo + p * n + j];
                                }
                                ga[bi * m * k + i * k + p] = acc;
                            }
                        }
                    }
                    ga
                });
                let gb = nb.then(|| {
                    let blen = if shared_rhs { k * n } else { batch * k * n };
                    let mut gb = vec![T::zero(); blen];
                    for bi in 0..batch {
                        let bo = if shared_rhs { 0 } else { bi * k * n };
                        for p in 0..k {
                            for j in 0..n {
                                let mut acc = T::zero();
                                for i in 0..m {
                                    acc = acc + a[bi * m * k + i * k + p] * g[bi * m * n + i * n + j];
                                }
                                gb[bo + p * n + j] = gb[bo + p * n + j] + acc;
                            }
                        }
                    }
                    gb
                });
                (ga, gb)
            },
        ))
    }

    /// Numerically stable softmax along `axis` (max-subtraction).
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        let shape = self.shape().to_vec();
        let st = strides(&shape);
        let len = shape[axis];
        let stride = st[axis];
        let outer = numel(&shape[..axis]);
        let inner = stride;
        let x = self.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * stride + i;
                let mut mx = x[base];
                for l in 1..len {
                    let v = x[base + l * stride];
                    if v > mx {
                        mx = v;
                    }
                }
                let mut sum = T::zero();
                for l in 0..len {
                    let e = (x[base + l * stride] - mx).exp();
                    out[base + l * stride] = e;
                    sum = sum + e;
                }
                for l in 0..len {
                    out[base + l * stride] = out[base + l * stride] / sum;
                }
            }
        }
        let out = Arc::new(out);
        let y = out.clone();
        Ok(with_grad1(shape, out, self, move |g| {
            // dx = y * (g - sum(g * y)) per softmax fiber
            let mut gx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * stride + i;
                    let mut dot = T::zero();
                    for l in 0..len {
                        let idx = base + l * stride;
                        dot = dot + g[idx] * y[idx];
                    }
                    for l in 0..len {
                        let idx = base + l * stride;
                        gx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            gx
        }))
    }

    /// LayerNorm over the last dimension with affine `gamma`, `beta` of
    /// extent C. Variance is the population variance.
    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: f64) -> Result<Self> {
        let c = *self.shape().last().ok_or_else(|| Error::InvalidShape {
            op: "layer_norm",
            msg: "rank-0 input".into(),
            shape: vec![],
        })?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: gamma.shape().to_vec(),
                rhs: beta.shape().to_vec(),
            });
        }
        let rows = self.len() / c;
        let eps = T::from_f64(eps);
        let x = self.data.clone();
        let gm = gamma.data.clone();
        let bt = beta.data();
        let cn = T::from_f64(c as f64);

        let mut out = vec![T::zero(); self.len()];
        let mut xhat = vec![T::zero(); self.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / cn;
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var / cn;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..c {
                let xh = (row[j] - mean) * istd;
                xhat[r * c + j] = xh;
                out[r * c + j] = gm[j] * xh + bt[j];
            }
        }
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        let shape = self.shape().to_vec();
        Ok(with_grad3(
            shape,
            Arc::new(out),
            self,
            gamma,
            beta,
            move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![T::zero(); g.len()];
                    for r in 0..rows {
                        let mut mean_gy = T::zero();
                        let mut mean_gyx = T::zero();
                        for j in 0..c {
                            let gy = g[r * c + j] * gm[j];
                            mean_gy = mean_gy + gy;
                            mean_gyx = mean_gyx + gy * xhat[r * c + j];
                        }
                        mean_gy = mean_gy / cn;
                        mean_gyx = mean_gyx / cn;
                        for j in 0..c {
                            let gy = g[r * c + j] * gm[j];
                            gx[r * c + j] =
                                (gy - mean_gy - xhat[r * c + j] * mean_gyx) * inv_std[r];
                        }
                    }
                    gx
                });
                let gg = need[1].then(|| {
                    let mut gg = vec![T::zero(); c];
                    for r in 0..rows {
                        for j in 0..c {
                            gg[j] = gg[j] + g[r * c + j] * xhat[r * c + j];
                        }
                    }
                    gg
                });
                let gb = need[2].then(|| {
                    let mut gb = vec![T::zero(); c];
                    for r in 0..rows {
                        for j in 0..c {
                            gb[j] = gb[j] + g[r * c + j];
                        }
                    }
                    gb
                });
                [gx, gg, gb]
            },
        ))
    }

    /// Exact-erf GELU: x * Phi(x).
    pub fn gelu(&self) -> Self {
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let phi = move |v: T| half * (T::one() + (v * inv_sqrt2).erf());
        let data: Vec<T> = self.data().iter().map(|&v| v * phi(v)).collect();
        let x = self.data.clone();
        with_grad1(self.shape().to_vec(), Arc::new(data), self, move |g| {
            // d/dx [x Phi(x)] = Phi(x) + x phi(x)
            let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
            g.iter()
                .zip(x.iter())
                .map(|(&g, &v)| {
                    let pdf = inv_sqrt_2pi * (-v * v * half).exp();
                    g * (phi(v) + v * pdf)
                })
                .collect()
        })
    }
}
