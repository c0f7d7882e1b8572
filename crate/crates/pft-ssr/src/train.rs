//! Toy training: SGD with momentum on the L1 loss, enough to overfit small
//! stereo pairs deterministically. Makes no claim to any published recipe.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{extract_patch_pair, StereoPair};
use crate::metrics::l1_loss;
use crate::model::{parse_kv, Model, ModelConfig};
use crate::params::{ParamBag, ParameterStore};
use crate::tensor::{Element, GradTape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// LR-space patch side; clamped to the LR image when larger.
    pub patch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.02,
            momentum: 0.9,
            batch_size: 1,
            patch: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.patch == 0 {
            return Err(Error::Config("batch_size and patch must be >= 1".into()));
        }
        Ok(())
    }
}

const TRAIN_KEYS: [&str; 6] = ["steps", "lr", "momentum", "batch_size", "patch", "seed"];

/// Splits one `key = value` file into the model and training configurations.
/// Model keys and training keys may be freely mixed; unknown keys error.
pub fn parse_configs(text: &str) -> Result<(ModelConfig, TrainConfig)> {
    let mut train = TrainConfig::default();
    let mut model_lines = String::new();
    for (key, value) in parse_kv(text)? {
        if TRAIN_KEYS.contains(&key.as_str()) {
            let bad = || Error::Config(format!("bad value for {key}: {value}"));
            match key.as_str() {
                "steps" => train.steps = value.parse().map_err(|_| bad())?,
                "lr" => train.lr = value.parse().map_err(|_| bad())?,
                "momentum" => train.momentum = value.parse().map_err(|_| bad())?,
                "batch_size" => train.batch_size = value.parse().map_err(|_| bad())?,
                "patch" => train.patch = value.parse().map_err(|_| bad())?,
                "seed" => train.seed = value.parse().map_err(|_| bad())?,
                _ => unreachable!(),
            }
        } else {
            model_lines.push_str(&format!("{key} = {value}\n"));
        }
    }
    let model = ModelConfig::from_kv_str(&model_lines)?;
    train.validate()?;
    Ok((model, train))
}

/// One aligned HR/LR stereo sample.
#[derive(Clone)]
pub struct Sample {
    pub hr: StereoPair,
    pub lr: StereoPair,
}

#[derive(Clone, Copy, Debug)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
}

/// Renders the loss curve as one `step,loss` pair per line.
pub fn loss_curve_text(logs: &[StepLog]) -> String {
    let mut out = String::new();
    for l in logs {
        out.push_str(&format!("{},{}\n", l.step, l.loss));
    }
    out
}

/// Stacks per-view images into a `[B, 3, H, W]` batch tensor.
fn stack<T: Element>(views: &[&crate::imaging::Image]) -> Result<Tensor<T>> {
    let (h, w) = (views[0].height, views[0].width);
    let mut data = Vec::with_capacity(views.len() * 3 * h * w);
    for img in views {
        data.extend_from_slice(img.to_tensor::<T>().data());
    }
    Tensor::new(vec![views.len(), 3, h, w], data)
}

/// SGD-with-momentum loop. The loss logged at each step is the batch L1
/// evaluated with the parameters *before* that step's update, so the first
/// entry is the initial model's loss. Fully deterministic given the config.
pub fn train<T: Element>(
    model: &Model,
    store: &mut ParameterStore<T>,
    data: &[Sample],
    tc: &TrainConfig,
) -> Result<Vec<StepLog>> {
    tc.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("no training pairs given".into()));
    }
    for (i, s) in data.iter().enumerate() {
        let scale = model.cfg.scale;
        if s.hr.left.height != s.lr.left.height * scale || s.hr.left.width != s.lr.left.width * scale {
            return Err(Error::Dataset(format!(
                "pair {i}: HR {}x{} is not {scale}x the LR {}x{}",
                s.hr.left.height, s.hr.left.width, s.lr.left.height, s.lr.left.width
            )));
        }
    }

    let scale = model.cfg.scale;
    let ph = tc.patch.min(data.iter().map(|s| s.lr.left.height).min().unwrap());
    let pw = tc.patch.min(data.iter().map(|s| s.lr.left.width).min().unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut velocity: HashMap<String, Vec<T>> = HashMap::new();
    let mut logs = Vec::with_capacity(tc.steps);

    for step in 0..tc.steps {
        // assemble the batch
        let mut lr_left = Vec::new();
        let mut lr_right = Vec::new();
        let mut hr_left = Vec::new();
        let mut hr_right = Vec::new();
        for _ in 0..tc.batch_size {
            let s = &data[rng.gen_range(0..data.len())];
            let max_y = s.lr.left.height - ph;
            let max_x = s.lr.left.width - pw;
            let y = if max_y == 0 { 0 } else { rng.gen_range(0..=max_y) };
            let x = if max_x == 0 { 0 } else { rng.gen_range(0..=max_x) };
            let (lrp, hrp) = extract_patch_pair(&s.hr, &s.lr, y, x, ph, pw, scale)?;
            lr_left.push(lrp.left);
            lr_right.push(lrp.right);
            hr_left.push(hrp.left);
            hr_right.push(hrp.right);
        }
        let xl = stack::<T>(&lr_left.iter().collect::<Vec<_>>())?;
        let xr = stack::<T>(&lr_right.iter().collect::<Vec<_>>())?;
        let tl = stack::<T>(&hr_left.iter().collect::<Vec<_>>())?;
        let tr = stack::<T>(&hr_right.iter().collect::<Vec<_>>())?;

        let tape = GradTape::new();
        let bag = ParamBag::tracked(store, tape.clone());
        let (yl, yr) = model.forward(&bag, &xl, &xr)?;
        let loss = l1_loss(&yl, &yr, &tl, &tr)?;
        let grads = tape.backward(&loss)?;
        let grad_map = bag.grad_map(&grads);
        logs.push(StepLog {
            step,
            loss: loss.item().as_f64(),
        });

        let lr = T::from_f64(tc.lr);
        let mu = T::from_f64(tc.momentum);
        for (name, grad) in grad_map {
            let v = velocity
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); grad.len()]);
            let current = store.get(&name).expect("grad map names come from the store");
            let mut updated = current.to_vec();
            for ((p, vel), g) in updated.iter_mut().zip(v.iter_mut()).zip(grad.data()) {
                *vel = mu * *vel + *g;
                *p = *p - lr * *vel;
            }
            store.set(&name, Tensor::new(current.shape().to_vec(), updated)?);
        }
    }
    Ok(logs)
}
