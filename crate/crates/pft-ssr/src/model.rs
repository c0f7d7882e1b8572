//! Full PFT-SSR assembly: configuration, parameter initialization, forward
//! pipeline, and the bit-exact weight file format.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{deep_extract, refine, shallow_extract, to_channel_first, to_channel_last};
use crate::error::{Error, Result};
use crate::fusion::pft_forward;
use crate::params::{ParamBag, ParameterStore};
use crate::tensor::{Element, Tensor};
use crate::window_attn::AttnConfig;

/// Architecture hyperparameters. `rstb_count`, `pft_blocks`, and
/// `pft_layers_per_block` default to the published topology (3 / 4 / 6);
/// the remaining values are implementer defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub scale: usize,
    pub embed_dim: usize,
    pub window: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub rstb_count: usize,
    pub stl_per_rstb: usize,
    pub refine_rstb_count: usize,
    pub pft_blocks: usize,
    pub pft_layers_per_block: usize,
    pub qkv_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            embed_dim: 96,
            window: 8,
            heads: 6,
            mlp_ratio: 2,
            rstb_count: 3,
            stl_per_rstb: 6,
            refine_rstb_count: 1,
            pft_blocks: 4,
            pft_layers_per_block: 6,
            qkv_bias: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests, gradient checking, and toy training.
    pub fn toy(scale: usize) -> Self {
        Self {
            scale,
            embed_dim: 16,
            window: 4,
            heads: 2,
            mlp_ratio: 2,
            rstb_count: 1,
            stl_per_rstb: 2,
            refine_rstb_count: 1,
            pft_blocks: 1,
            pft_layers_per_block: 2,
            qkv_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !matches!(self.scale, 2 | 4) {
            problems.push(format!("scale must be 2 or 4, got {}", self.scale));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            problems.push(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.window == 0 {
            problems.push("window must be >= 1".into());
        }
        if self.stl_per_rstb == 0 || self.stl_per_rstb % 2 != 0 {
            problems.push(format!(
                "stl_per_rstb must be a positive even number, got {}",
                self.stl_per_rstb
            ));
        }
        for (name, v) in [
            ("mlp_ratio", self.mlp_ratio),
            ("rstb_count", self.rstb_count),
            ("refine_rstb_count", self.refine_rstb_count),
            ("pft_blocks", self.pft_blocks),
            ("pft_layers_per_block", self.pft_layers_per_block),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn attn(&self) -> AttnConfig {
        AttnConfig {
            window: self.window,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            qkv_bias: self.qkv_bias,
        }
    }

    /// Plain `key = value` serialization; `#` starts a comment.
    pub fn to_kv_string(&self) -> String {
        format!(
            "scale = {}\nembed_dim = {}\nwindow = {}\nheads = {}\nmlp_ratio = {}\n\
             rstb_count = {}\nstl_per_rstb = {}\nrefine_rstb_count = {}\n\
             pft_blocks = {}\npft_layers_per_block = {}\nqkv_bias = {}\n",
            self.scale,
            self.embed_dim,
            self.window,
            self.heads,
            self.mlp_ratio,
            self.rstb_count,
            self.stl_per_rstb,
            self.refine_rstb_count,
            self.pft_blocks,
            self.pft_layers_per_block,
            self.qkv_bias
        )
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_kv(text)? {
            let parse_usize = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad value for {key}: {value}")))
            };
            match key.as_str() {
                "scale" => cfg.scale = parse_usize()?,
                "embed_dim" => cfg.embed_dim = parse_usize()?,
                "window" => cfg.window = parse_usize()?,
                "heads" => cfg.heads = parse_usize()?,
                "mlp_ratio" => cfg.mlp_ratio = parse_usize()?,
                "rstb_count" => cfg.rstb_count = parse_usize()?,
                "stl_per_rstb" => cfg.stl_per_rstb = parse_usize()?,
                "refine_rstb_count" => cfg.refine_rstb_count = parse_usize()?,
                "pft_blocks" => cfg.pft_blocks = parse_usize()?,
                "pft_layers_per_block" => cfg.pft_layers_per_block = parse_usize()?,
                "qkv_bias" => {
                    cfg.qkv_bias = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad value for qkv_bias: {value}")))?
                }
                other => return Err(Error::Config(format!("unknown config key {other}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key = value` lines, ignoring blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{line}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

struct Init<T: Element> {
    store: ParameterStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Element> Init<T> {
    /// Truncated normal (|x| <= 2 sigma), std 0.02, sampled in f64 so both
    /// precisions see the same stream.
    fn trunc_normal(&mut self) -> T {
        const STD: f64 = 0.02;
        loop {
            let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = self.rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            if z.abs() <= 2.0 {
                return T::from_f64(z * STD);
            }
        }
    }

    fn weights(&mut self, name: String, shape: &[usize]) {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n).map(|_| self.trunc_normal()).collect();
        self.store
            .insert(name, Tensor::new(shape.to_vec(), data).expect("sized"));
    }

    fn zeros(&mut self, name: String, shape: &[usize]) {
        self.store.insert(name, Tensor::zeros(shape));
    }

    fn linear(&mut self, scope: &str, inp: usize, out: usize, bias: bool) {
        self.weights(format!("{scope}.weight"), &[inp, out]);
        if bias {
            self.zeros(format!("{scope}.bias"), &[out]);
        }
    }

    fn conv(&mut self, scope: &str, cout: usize, cin: usize, k: usize) {
        self.weights(format!("{scope}.weight"), &[cout, cin, k, k]);
        self.zeros(format!("{scope}.bias"), &[cout]);
    }

    fn layer_norm(&mut self, scope: &str, c: usize) {
        self.store
            .insert(format!("{scope}.gamma"), Tensor::ones(&[c]));
        self.zeros(format!("{scope}.beta"), &[c]);
    }

    fn stl(&mut self, scope: &str, cfg: &ModelConfig) {
        let c = cfg.embed_dim;
        self.layer_norm(&format!("{scope}.norm1"), c);
        for proj in ["q", "k", "v"] {
            self.linear(&format!("{scope}.attn.{proj}"), c, c, cfg.qkv_bias);
        }
        self.linear(&format!("{scope}.attn.proj"), c, c, true);
        let side = 2 * cfg.window - 1;
        self.zeros(format!("{scope}.attn.rpb"), &[side * side, cfg.heads]);
        self.layer_norm(&format!("{scope}.norm2"), c);
        self.linear(&format!("{scope}.mlp.fc1"), c, cfg.mlp_ratio * c, true);
        self.linear(&format!("{scope}.mlp.fc2"), cfg.mlp_ratio * c, c, true);
    }

    fn rstb(&mut self, scope: &str, cfg: &ModelConfig) {
        for j in 0..cfg.stl_per_rstb {
            self.stl(&format!("{scope}.stl{j}"), cfg);
        }
        self.conv(&format!("{scope}.conv"), cfg.embed_dim, cfg.embed_dim, 3);
    }
}

/// Handle over a validated configuration; parameters live separately in a
/// [`ParameterStore`].
#[derive(Clone, Copy, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
}

/// Initializes all weights (truncated-normal std 0.02 for convs and linears,
/// zero biases, unit LayerNorm gains, zero bias tables, zero alphas) in a
/// deterministic order given `seed`.
pub fn build_model<T: Element>(cfg: ModelConfig, seed: u64) -> Result<(ParameterStore<T>, Model)> {
    cfg.validate()?;
    let mut init = Init {
        store: ParameterStore::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let c = cfg.embed_dim;

    init.conv("shallow.conv", c, 3, 3);
    for i in 0..cfg.rstb_count {
        init.rstb(&format!("deep.rstb{i}"), &cfg);
    }
    for i in 0..cfg.pft_blocks {
        for j in 0..cfg.pft_layers_per_block {
            let s = format!("pft.block{i}.layer{j}");
            init.layer_norm(&format!("{s}.cvft.scam.norm_l"), c);
            init.layer_norm(&format!("{s}.cvft.scam.norm_r"), c);
            for t in ["t1_l", "t1_r", "t2_l", "t2_r"] {
                init.weights(format!("{s}.cvft.scam.{t}"), &[c, c]);
            }
            init.zeros(format!("{s}.cvft.scam.alpha_l"), &[1]);
            init.zeros(format!("{s}.cvft.scam.alpha_r"), &[1]);
            init.layer_norm(&format!("{s}.cvft.norm"), c);
            init.linear(&format!("{s}.cvft.mlp.fc1"), c, cfg.mlp_ratio * c, true);
            init.linear(&format!("{s}.cvft.mlp.fc2"), cfg.mlp_ratio * c, c, true);
            init.stl(&format!("{s}.ivrt"), &cfg);
        }
        init.conv(&format!("pft.block{i}.conv"), c, c, 3);
    }
    for i in 0..cfg.refine_rstb_count {
        init.rstb(&format!("refine.rstb{i}"), &cfg);
    }
    init.conv("refine.conv", c, c, 3);
    init.conv("recon.conv", 3 * cfg.scale * cfg.scale, c, 3);

    Ok((init.store, Model { cfg }))
}

impl Model {
    /// Full pipeline on a stereo pair of `[B, 3, H, W]` tensors: shallow and
    /// deep extraction (siamese), parallax fusion, refinement with the
    /// shallow residual, then conv + pixel shuffle reconstruction to
    /// `[B, 3, S*H, S*W]`.
    pub fn forward<T: Element>(
        &self,
        bag: &ParamBag<'_, T>,
        xl: &Tensor<T>,
        xr: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if xl.shape() != xr.shape() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: xl.shape().to_vec(),
                rhs: xr.shape().to_vec(),
            });
        }
        let cfg = &self.cfg;
        let acfg = cfg.attn();
        let root = bag.root();

        let s_l = shallow_extract(xl, &root.sub("shallow"))?;
        let s_r = shallow_extract(xr, &root.sub("shallow"))?;

        let deep = root.sub("deep");
        let d_l = deep_extract(&s_l, &deep, acfg, cfg.rstb_count, cfg.stl_per_rstb)?;
        let d_r = deep_extract(&s_r, &deep, acfg, cfg.rstb_count, cfg.stl_per_rstb)?;

        let (f_l, f_r) = pft_forward(
            &to_channel_last(&d_l)?,
            &to_channel_last(&d_r)?,
            &root.sub("pft"),
            acfg,
            cfg.pft_blocks,
            cfg.pft_layers_per_block,
        )?;

        let reconstruct = |fused: &Tensor<T>, shallow: &Tensor<T>| -> Result<Tensor<T>> {
            let r = refine(
                &to_channel_first(fused)?,
                &root.sub("refine"),
                shallow,
                acfg,
                cfg.refine_rstb_count,
                cfg.stl_per_rstb,
            )?;
            let recon = root.sub("recon");
            let w = recon.get("conv.weight")?;
            r.conv2d(&w, &recon.get("conv.bias")?, 1)?
                .pixel_shuffle(cfg.scale)
        };
        Ok((reconstruct(&f_l, &s_l)?, reconstruct(&f_r, &s_r)?))
    }
}

const WEIGHT_MAGIC: &[u8; 4] = b"PFTW";
const WEIGHT_VERSION: u32 = 1;

/// Writes the store: magic "PFTW", u32 version, u32 entry count; per entry a
/// u16 name length, the name bytes, u8 rank, u32 extents, and the raw values
/// as 32-bit little-endian floats.
pub fn save_weights<T: Element>(store: &ParameterStore<T>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(WEIGHT_MAGIC);
    buf.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.push(t.rank() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a weight file and validates names and shapes against `cfg`'s
/// parameter layout.
pub fn load_weights<T: Element>(path: &Path, cfg: ModelConfig) -> Result<ParameterStore<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;

    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
        path: &'a Path,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.pos + n > self.bytes.len() {
                return Err(Error::Weights(format!(
                    "{}: truncated file at offset {}",
                    self.path.display(),
                    self.pos
                )));
            }
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }
    }
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };

    if cur.take(4)? != WEIGHT_MAGIC {
        return Err(Error::Weights(format!(
            "{}: bad magic, not a weight file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != WEIGHT_VERSION {
        return Err(Error::Weights(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;

    // expected layout for this config (values discarded)
    let (expected, _) = build_model::<T>(cfg, 0)?;
    if count != expected.len() {
        return Err(Error::Weights(format!(
            "{}: {count} entries, config expects {}",
            path.display(),
            expected.len()
        )));
    }

    let mut store = ParameterStore::new();
    for (exp_name, exp_tensor) in expected.iter() {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Weights(format!("{}: non-UTF8 name", path.display())))?;
        if name != exp_name {
            return Err(Error::Weights(format!(
                "{}: entry `{name}` where config expects `{exp_name}`",
                path.display()
            )));
        }
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize);
        }
        if shape != exp_tensor.shape() {
            return Err(Error::Weights(format!(
                "{}: `{name}` has shape {:?}, config expects {:?}",
                path.display(),
                shape,
                exp_tensor.shape()
            )));
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        store.insert(name, Tensor::new(shape, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Weights(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - cur.pos
        )));
    }
    Ok(store)
}
