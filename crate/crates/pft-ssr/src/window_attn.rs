//! Swin-style windowed multi-head self-attention: window partitioning,
//! cyclic shift with its additive mask, relative position bias, and the
//! pre-norm Swin Transformer Layer (STL).

use crate::error::{Error, Result};
use crate::nn::{layer_norm, linear, mlp};
use crate::params::Scope;
use crate::tensor::{Element, Tensor};

/// Additive attention mask value for cross-region pairs. Large enough that
/// softmax maps it to exactly 0 in both precisions without producing NaN.
pub const MASK_NEG: f64 = -1e9;

/// Per-layer attention hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AttnConfig {
    pub window: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub qkv_bias: bool,
}

/// `[B, H, W, C]` -> `[B*HW/M^2, M^2, C]`, windows row-major over the grid,
/// pixels row-major inside each window. H and W must be multiples of `m`.
pub fn window_partition<T: Element>(x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
    let (b, h, w, c) = dims4(x)?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::InvalidShape {
            op: "window_partition",
            msg: format!("{}x{} not divisible by window {}", h, w, m),
            shape: x.shape().to_vec(),
        });
    }
    let (gh, gw) = (h / m, w / m);
    x.reshape(&[b, gh, m, gw, m, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b * gh * gw, m * m, c])
}

/// Exact inverse of [`window_partition`].
pub fn window_merge<T: Element>(
    windows: &Tensor<T>,
    m: usize,
    b: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let (gh, gw) = (h / m, w / m);
    let c = *windows.shape().last().unwrap();
    windows
        .reshape(&[b, gh, gw, m, m, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, h, w, c])
}

/// Torus roll by `(dy, dx)` pixels.
pub fn cyclic_shift<T: Element>(x: &Tensor<T>, dy: i64, dx: i64) -> Result<Tensor<T>> {
    x.roll_hw(dy, dx)
}

/// Fixed index map for the relative position bias: entry `(i, j)` of the
/// flattened `M^2 x M^2` grid holds the table row for the relative offset
/// between window pixels i and j. Entries lie in `[0, (2M-1)^2)`.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let n = m * m;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (iy, ix) = (i / m, i % m);
        for j in 0..n {
            let (jy, jx) = (j / m, j % m);
            let dy = iy as i64 - jy as i64 + m as i64 - 1;
            let dx = ix as i64 - jx as i64 + m as i64 - 1;
            idx.push((dy * (2 * m as i64 - 1) + dx) as usize);
        }
    }
    idx
}

/// Additive mask for shifted-window attention, shape `[nW, M^2, M^2]`.
///
/// Pixels are labeled by the 3x3 region decomposition induced by the shift
/// boundaries; pairs in different regions get [`MASK_NEG`], pairs in the same
/// region 0. All zeros when `shift == 0`.
pub fn build_shift_mask<T: Element>(h: usize, w: usize, m: usize, shift: usize) -> Result<Tensor<T>> {
    assert!(shift < m, "shift must be smaller than the window");
    let (gh, gw) = (h / m, w / m);
    let n = m * m;
    let n_windows = gh * gw;
    if shift == 0 {
        return Ok(Tensor::zeros(&[n_windows, n, n]));
    }
    let band = |pos: usize, len: usize| -> usize {
        if pos < len - m {
            0
        } else if pos < len - shift {
            1
        } else {
            2
        }
    };
    // region label per pixel of the (already shifted) feature map
    let mut labels = vec![0usize; h * w];
    for y in 0..h {
        for x in 0..w {
            labels[y * w + x] = band(y, h) * 3 + band(x, w);
        }
    }
    let mut mask = vec![T::zero(); n_windows * n * n];
    for wy in 0..gh {
        for wx in 0..gw {
            let wi = wy * gw + wx;
            for i in 0..n {
                let li = labels[(wy * m + i / m) * w + wx * m + i % m];
                for j in 0..n {
                    let lj = labels[(wy * m + j / m) * w + wx * m + j % m];
                    if li != lj {
                        mask[(wi * n + i) * n + j] = T::from_f64(MASK_NEG);
                    }
                }
            }
        }
    }
    Tensor::new(vec![n_windows, n, n], mask)
}

/// Windowed multi-head self-attention over `[nW, M^2, C]` windows.
///
/// Per window and head: softmax(Q K^T / sqrt(d) + B [+ mask]) V, heads
/// concatenated and output-projected. `mask` has shape `[nW_grid, M^2, M^2]`
/// and is tiled over batch and heads.
pub fn window_msa<T: Element>(
    x: &Tensor<T>,
    scope: &Scope<'_, T>,
    cfg: AttnConfig,
    mask: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (nw, n, c) = match x.shape() {
        [nw, n, c] => (*nw, *n, *c),
        _ => {
            return Err(Error::InvalidShape {
                op: "window_msa",
                msg: "windows must be [nW, M^2, C]".into(),
                shape: x.shape().to_vec(),
            })
        }
    };
    let heads = cfg.heads;
    if heads == 0 || c % heads != 0 {
        return Err(Error::InvalidShape {
            op: "window_msa",
            msg: format!("channels {} not divisible by {} heads", c, heads),
            shape: x.shape().to_vec(),
        });
    }
    let d = c / heads;
    let m = cfg.window;
    debug_assert_eq!(n, m * m);

    let split = |t: &Tensor<T>| -> Result<Tensor<T>> {
        t.reshape(&[nw, n, heads, d])?.permute(&[0, 2, 1, 3])
    };
    let q = split(&linear(x, &scope.sub("q"), cfg.qkv_bias)?)?;
    let k = split(&linear(x, &scope.sub("k"), cfg.qkv_bias)?)?;
    let v = split(&linear(x, &scope.sub("v"), cfg.qkv_bias)?)?;

    let mut scores = q
        .matmul(&k.permute(&[0, 1, 3, 2])?)?
        .scale(1.0 / (d as f64).sqrt());

    // learnable relative position bias, broadcast over windows
    let table = scope.get("rpb")?;
    let bias = table
        .gather_rows(&relative_position_index(m))?
        .reshape(&[n, n, heads])?
        .permute(&[2, 0, 1])?;
    scores = scores.add_bcast(&bias)?;

    if let Some(mask) = mask {
        let nw_grid = mask.shape()[0];
        debug_assert_eq!(nw % nw_grid, 0);
        let md = mask.data();
        let mut tiled = vec![T::zero(); nw * heads * n * n];
        for wi in 0..nw {
            let src = &md[(wi % nw_grid) * n * n..(wi % nw_grid + 1) * n * n];
            for hd in 0..heads {
                let off = (wi * heads + hd) * n * n;
                tiled[off..off + n * n].copy_from_slice(src);
            }
        }
        scores = scores.add(&Tensor::new(vec![nw, heads, n, n], tiled)?)?;
    }

    let attn = scores.softmax(3)?;
    let out = attn
        .matmul(&v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[nw, n, c])?;
    linear(&out, &scope.sub("proj"), true)
}

/// One Swin Transformer Layer on `[B, H, W, C]`:
/// `x <- x + MSA(LN(x))` (with shift/mask when `shift > 0`), then
/// `x <- x + MLP(LN(x))`. Non-multiple sizes are zero-padded bottom/right
/// around the attention and cropped back.
pub fn stl_forward<T: Element>(
    x: &Tensor<T>,
    scope: &Scope<'_, T>,
    cfg: AttnConfig,
    shift: usize,
) -> Result<Tensor<T>> {
    let (b, h, w, _c) = dims4(x)?;
    let m = cfg.window;
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);

    let mut t = layer_norm(x, &scope.sub("norm1"))?;
    if (ph, pw) != (h, w) {
        t = t.pad_hw(ph - h, pw - w)?;
    }
    if shift > 0 {
        t = cyclic_shift(&t, -(shift as i64), -(shift as i64))?;
    }
    let windows = window_partition(&t, m)?;
    let mask = if shift > 0 {
        Some(build_shift_mask::<T>(ph, pw, m, shift)?)
    } else {
        None
    };
    let a = window_msa(&windows, &scope.sub("attn"), cfg, mask.as_ref())?;
    let mut t = window_merge(&a, m, b, ph, pw)?;
    if shift > 0 {
        t = cyclic_shift(&t, shift as i64, shift as i64)?;
    }
    if (ph, pw) != (h, w) {
        t = t.crop_hw(h, w)?;
    }
    let x = x.add(&t)?;

    let t = layer_norm(&x, &scope.sub("norm2"))?;
    x.add(&mlp(&t, &scope.sub("mlp"))?)
}

fn dims4<T: Element>(x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match x.shape() {
        [b, h, w, c] => Ok((*b, *h, *w, *c)),
        _ => Err(Error::InvalidShape {
            op: "window_attn",
            msg: "rank-4 [B, H, W, C] tensor required".into(),
            shape: x.shape().to_vec(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ParamBag, ParameterStore};
    use crate::tensor::GradTape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Random parameters for one MSA under `prefix` (empty = root).
    fn msa_store(prefix: &str, c: usize, m: usize, heads: usize, seed: u64) -> ParameterStore<f64> {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = |n: &str| {
            if prefix.is_empty() {
                n.to_string()
            } else {
                format!("{prefix}.{n}")
            }
        };
        for name in ["q", "k", "v", "proj"] {
            store.insert(p(&format!("{name}.weight")), random_tensor(&[c, c], &mut rng));
            store.insert(p(&format!("{name}.bias")), random_tensor(&[c], &mut rng));
        }
        store.insert(
            p("rpb"),
            random_tensor(&[(2 * m - 1) * (2 * m - 1), heads], &mut rng),
        );
        store
    }

    /// Random parameters for one full STL at the root scope.
    fn stl_store(c: usize, m: usize, heads: usize, ratio: usize, seed: u64) -> ParameterStore<f64> {
        let mut store = msa_store("attn", c, m, heads, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        for ln in ["norm1", "norm2"] {
            store.insert(format!("{ln}.gamma"), random_tensor(&[c], &mut rng));
            store.insert(format!("{ln}.beta"), random_tensor(&[c], &mut rng));
        }
        store.insert("mlp.fc1.weight", random_tensor(&[c, c * ratio], &mut rng));
        store.insert("mlp.fc1.bias", random_tensor(&[c * ratio], &mut rng));
        store.insert("mlp.fc2.weight", random_tensor(&[c * ratio, c], &mut rng));
        store.insert("mlp.fc2.bias", random_tensor(&[c], &mut rng));
        store
    }

    /// Independent dense-attention oracle: plain scalar loops, no tensor ops.
    fn msa_oracle(
        x: &Tensor<f64>,
        store: &ParameterStore<f64>,
        m: usize,
        heads: usize,
        mask: Option<&Tensor<f64>>,
    ) -> Vec<f64> {
        let (nw, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let d = c / heads;
        let xd = x.data();
        let w = |name: &str| store.get(name).unwrap().data();
        let (wq, bq) = (w("q.weight"), w("q.bias"));
        let (wk, bk) = (w("k.weight"), w("k.bias"));
        let (wv, bv) = (w("v.weight"), w("v.bias"));
        let (wp, bp) = (w("proj.weight"), w("proj.bias"));
        let rpb = w("rpb");
        let rpi = relative_position_index(m);
        let proj_in = |xi: &[f64], wm: &[f64], bm: &[f64], o: usize| -> f64 {
            bm[o] + (0..c).map(|i| xi[i] * wm[i * c + o]).sum::<f64>()
        };
        let mut out = vec![0.0; nw * n * c];
        for wi in 0..nw {
            // heads concatenated before the output projection
            let mut concat = vec![0.0; n * c];
            for h in 0..heads {
                for i in 0..n {
                    let xi = &xd[(wi * n + i) * c..(wi * n + i + 1) * c];
                    let q: Vec<f64> = (0..d).map(|o| proj_in(xi, &wq, &bq, h * d + o)).collect();
                    let mut scores = vec![0.0; n];
                    for j in 0..n {
                        let xj = &xd[(wi * n + j) * c..(wi * n + j + 1) * c];
                        let kj: Vec<f64> =
                            (0..d).map(|o| proj_in(xj, &wk, &bk, h * d + o)).collect();
                        let dot: f64 = q.iter().zip(&kj).map(|(a, b)| a * b).sum();
                        scores[j] = dot / (d as f64).sqrt() + rpb[rpi[i * n + j] * heads + h];
                        if let Some(mask) = mask {
                            let nwg = mask.shape()[0];
                            scores[j] += mask.data()[((wi % nwg) * n + i) * n + j];
                        }
                    }
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for o in 0..d {
                        let mut acc = 0.0;
                        for j in 0..n {
                            let xj = &xd[(wi * n + j) * c..(wi * n + j + 1) * c];
                            acc += exps[j] / z * proj_in(xj, &wv, &bv, h * d + o);
                        }
                        concat[i * c + h * d + o] = acc;
                    }
                }
            }
            for i in 0..n {
                for o in 0..c {
                    out[(wi * n + i) * c + o] = bp[o]
                        + (0..c)
                            .map(|k| concat[i * c + k] * wp[k * c + o])
                            .sum::<f64>();
                }
            }
        }
        out
    }

    #[test]
    fn partition_matches_definition() {
        // 4x4 grid with values 0..16, M=2: window order row-major over the
        // grid, pixels row-major inside each window.
        let x = Tensor::new(vec![1, 4, 4, 1], (0..16).map(|v| v as f64).collect()).unwrap();
        let w = window_partition(&x, 2).unwrap();
        assert_eq!(w.shape(), &[4, 4, 1]);
        assert_eq!(
            w.data(),
            &[
                0.0, 1.0, 4.0, 5.0, // top-left
                2.0, 3.0, 6.0, 7.0, // top-right
                8.0, 9.0, 12.0, 13.0, // bottom-left
                10.0, 11.0, 14.0, 15.0 // bottom-right
            ]
        );
        let back = window_merge(&w, 2, 1, 4, 4).unwrap();
        assert!(back.bitwise_eq(&x));
    }

    #[test]
    fn partition_rejects_non_multiple() {
        let x = Tensor::<f64>::zeros(&[1, 5, 4, 2]);
        assert!(window_partition(&x, 4).is_err());
    }

    #[test]
    fn relative_position_index_properties() {
        let m = 4;
        let idx = relative_position_index(m);
        let n = m * m;
        assert_eq!(idx.len(), n * n);
        let table = (2 * m - 1) * (2 * m - 1);
        assert!(idx.iter().all(|&v| v < table));
        // zero offset maps every diagonal entry to the table center
        let center = (m - 1) * (2 * m - 1) + (m - 1);
        for i in 0..n {
            assert_eq!(idx[i * n + i], center);
        }
        // translating both pixels by the same delta preserves the index
        assert_eq!(idx[0 * n + 5], idx[10 * n + 15]);
        // swapping i and j mirrors the offset through the center
        for i in 0..n {
            for j in 0..n {
                let a = idx[i * n + j];
                let b = idx[j * n + i];
                let (ay, ax) = (a / (2 * m - 1), a % (2 * m - 1));
                let (by, bx) = (b / (2 * m - 1), b % (2 * m - 1));
                assert_eq!(ay as i64 - (m as i64 - 1), -(by as i64 - (m as i64 - 1)));
                assert_eq!(ax as i64 - (m as i64 - 1), -(bx as i64 - (m as i64 - 1)));
            }
        }
    }

    #[test]
    fn shift_mask_regions() {
        let (h, w, m, shift) = (8, 8, 4, 2);
        let mask = build_shift_mask::<f64>(h, w, m, shift).unwrap();
        assert_eq!(mask.shape(), &[4, 16, 16]);
        let md = mask.data();
        let n = 16;
        // top-left window: a single region, fully unmasked
        assert!(md[..n * n].iter().all(|&v| v == 0.0));
        // bottom-right window straddles both wrap boundaries: 4 regions of
        // 4 pixels each -> 4 * 16 unmasked pairs out of 256
        let br = &md[3 * n * n..4 * n * n];
        let zeros = br.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 64);
        assert!(br.iter().all(|&v| v == 0.0 || v == MASK_NEG));
        // every pixel attends at least to itself
        for wi in 0..4 {
            for i in 0..n {
                assert_eq!(md[(wi * n + i) * n + i], 0.0);
            }
        }
        // shift 0 -> all zeros
        let none = build_shift_mask::<f64>(h, w, m, 0).unwrap();
        assert!(none.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn msa_matches_dense_oracle() {
        let (m, heads, c) = (4, 2, 8);
        let store = msa_store("", c, m, heads, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(&[4, m * m, c], &mut rng);
        let cfg = AttnConfig {
            window: m,
            heads,
            mlp_ratio: 2,
            qkv_bias: true,
        };

        let bag = ParamBag::frozen(&store);
        let y = window_msa(&x, &bag.root(), cfg, None).unwrap();
        let want = msa_oracle(&x, &store, m, heads, None);
        let diff = y
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "f64 mismatch {diff}");

        // same computation in f32 stays within single-precision tolerance
        let store32 = store.convert::<f32>();
        let x32 = Tensor::<f32>::from_f64_slice(x.shape(), &x.to_vec()).unwrap();
        let bag32 = ParamBag::frozen(&store32);
        let y32 = window_msa(&x32, &bag32.root(), cfg, None).unwrap();
        let diff32 = y32
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (*a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(diff32 < 1e-5, "f32 mismatch {diff32}");
    }

    #[test]
    fn masked_msa_matches_dense_oracle() {
        let (m, heads, c) = (4, 2, 8);
        let store = msa_store("", c, m, heads, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_tensor(&[4, m * m, c], &mut rng);
        let cfg = AttnConfig {
            window: m,
            heads,
            mlp_ratio: 2,
            qkv_bias: true,
        };
        let mask = build_shift_mask::<f64>(8, 8, m, 2).unwrap();
        let bag = ParamBag::frozen(&store);
        let y = window_msa(&x, &bag.root(), cfg, Some(&mask)).unwrap();
        let want = msa_oracle(&x, &store, m, heads, Some(&mask));
        let diff = y
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10, "masked mismatch {diff}");
    }

    #[test]
    fn zero_parameters_make_stl_identity() {
        let mut store = stl_store(8, 4, 2, 2, 3);
        store.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[2, 8, 8, 8], &mut rng);
        let cfg = AttnConfig {
            window: 4,
            heads: 2,
            mlp_ratio: 2,
            qkv_bias: true,
        };
        let bag = ParamBag::frozen(&store);
        for shift in [0, 2] {
            let y = stl_forward(&x, &bag.root(), cfg, shift).unwrap();
            assert!(y.bitwise_eq(&x), "shift {shift} not bit-exact identity");
        }
    }

    #[test]
    fn stl_preserves_non_multiple_shapes() {
        let store = stl_store(8, 4, 2, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&[1, 5, 5, 8], &mut rng);
        let cfg = AttnConfig {
            window: 4,
            heads: 2,
            mlp_ratio: 2,
            qkv_bias: true,
        };
        let bag = ParamBag::frozen(&store);
        for shift in [0, 2] {
            let y = stl_forward(&x, &bag.root(), cfg, shift).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.all_finite());
        }
    }

    #[test]
    fn constant_field_is_shift_invariant() {
        // A spatially constant input stays constant through attention, so the
        // shifted and unshifted layers must agree.
        let store = stl_store(8, 4, 2, 2, 9);
        let x = Tensor::<f64>::full(&[1, 8, 8, 8], 0.3);
        let cfg = AttnConfig {
            window: 4,
            heads: 2,
            mlp_ratio: 2,
            qkv_bias: true,
        };
        let bag = ParamBag::frozen(&store);
        let y0 = stl_forward(&x, &bag.root(), cfg, 0).unwrap();
        let y2 = stl_forward(&x, &bag.root(), cfg, 2).unwrap();
        assert!(y0.max_abs_diff(&y2) < 1e-9);
        // output is itself spatially constant
        let first = &y0.data()[..8];
        for px in 0..64 {
            for ch in 0..8 {
                assert!((y0.data()[px * 8 + ch] - first[ch]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stl_input_gradient_matches_finite_differences() {
        let store = stl_store(4, 2, 2, 2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_tensor(&[1, 4, 4, 4], &mut rng);
        let cfg = AttnConfig {
            window: 2,
            heads: 2,
            mlp_ratio: 2,
            qkv_bias: true,
        };
        crate::tensor::tests::grad_check(
            |x| {
                let bag = ParamBag::frozen(&store);
                stl_forward(x, &bag.root(), cfg, 1).unwrap().mean_all()
            },
            &x,
            1e-4,
        );
    }

    #[test]
    fn stl_parameter_gradients_match_finite_differences() {
        let store = stl_store(4, 2, 2, 2, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = random_tensor(&[1, 4, 4, 4], &mut rng);
        let cfg = AttnConfig {
            window: 2,
            heads: 2,
            mlp_ratio: 2,
            qkv_bias: true,
        };
        let loss_with = |store: &ParameterStore<f64>| -> f64 {
            let bag = ParamBag::frozen(store);
            stl_forward(&x, &bag.root(), cfg, 1)
                .unwrap()
                .mean_all()
                .item()
        };

        let tape = GradTape::new();
        let bag = ParamBag::tracked(&store, tape.clone());
        let loss = stl_forward(&x, &bag.root(), cfg, 1).unwrap().mean_all();
        let grads = tape.backward(&loss).unwrap();
        let by_name: std::collections::HashMap<String, Tensor<f64>> =
            bag.grad_map(&grads).into_iter().collect();

        let h = 1e-5;
        for name in ["attn.rpb", "attn.q.weight", "norm1.gamma", "mlp.fc2.bias"] {
            let base = store.get(name).unwrap().clone();
            let g = &by_name[name];
            // probe a few entries per parameter
            for i in (0..base.len()).step_by((base.len() / 4).max(1)) {
                let mut plus = store.clone();
                let mut d = base.to_vec();
                d[i] += h;
                plus.set(name, Tensor::new(base.shape().to_vec(), d.clone()).unwrap());
                let mut minus = store.clone();
                d[i] -= 2.0 * h;
                minus.set(name, Tensor::new(base.shape().to_vec(), d).unwrap());
                let numeric = (loss_with(&plus) - loss_with(&minus)) / (2.0 * h);
                let a = g.data()[i];
                let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
                assert!(err <= 1e-4, "{name}[{i}]: analytic {a} vs numeric {numeric}");
            }
        }
    }
}
