//! Finite-difference validation of the analytic gradients, reported per
//! parameter group (one group per named parameter tensor).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{build_model, Model, ModelConfig};
use crate::params::{ParamBag, ParameterStore};
use crate::tensor::{GradTape, Tensor};

/// Relative-error bound every group must meet.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Central-difference step.
const FD_H: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GroupResult {
    pub name: String,
    pub max_rel_err: f64,
    pub probes: usize,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub rows: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failing(&self) -> Vec<&GroupResult> {
        self.rows.iter().filter(|r| !r.pass).collect()
    }

    /// Aligned per-group table with a trailing verdict line.
    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!("{:<width$} {:>12} {:>7} {:>6}\n", "group", "max_rel_err", "probes", "status");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$} {:>12.3e} {:>7} {:>6}\n",
                r.name,
                r.max_rel_err,
                r.probes,
                if r.pass { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "{} groups, tolerance {:.0e}: {}\n",
            self.rows.len(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Scalar objective used by the check: mean(yl^2) + mean(yr^2). Quadratic in
/// the outputs, so every output element carries a distinct weight into the
/// gradient and cancellations are unlikely to hide errors.
fn loss_value(model: &Model, store: &ParameterStore<f64>, xl: &Tensor<f64>, xr: &Tensor<f64>) -> Result<f64> {
    let bag = ParamBag::frozen(store);
    let (yl, yr) = model.forward(&bag, xl, xr)?;
    Ok(yl
        .mul(&yl)?
        .mean_all()
        .add(&yr.mul(&yr)?.mean_all())?
        .item())
}

/// One tracked forward/backward sweep; returns the gradient of the objective
/// for every named parameter (zeros for parameters off the loss path).
pub fn analytic_gradient_map(
    model: &Model,
    store: &ParameterStore<f64>,
    xl: &Tensor<f64>,
    xr: &Tensor<f64>,
) -> Result<Vec<(String, Tensor<f64>)>> {
    let tape = GradTape::new();
    let bag = ParamBag::tracked(store, tape.clone());
    let (yl, yr) = model.forward(&bag, xl, xr)?;
    let loss = yl.mul(&yl)?.mean_all().add(&yr.mul(&yr)?.mean_all())?;
    let grads = tape.backward(&loss)?;
    Ok(bag.grad_map(&grads))
}

/// Compares a gradient map against central finite differences, probing
/// `probes_per_group` evenly spaced entries of each parameter tensor.
/// Error metric per probe: |a - n| / max(1, |a|, |n|).
pub fn compare_with_fd(
    model: &Model,
    store: &ParameterStore<f64>,
    xl: &Tensor<f64>,
    xr: &Tensor<f64>,
    analytic: &[(String, Tensor<f64>)],
    probes_per_group: usize,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let mut rows = Vec::with_capacity(analytic.len());
    for (name, grad) in analytic {
        let base = store
            .get(name)
            .expect("analytic map and store share names")
            .clone();
        let len = base.len();
        let probes = probes_per_group.min(len).max(1);
        let mut max_rel_err: f64 = 0.0;
        for p in 0..probes {
            let i = p * len / probes;
            let mut d = base.to_vec();
            d[i] += FD_H;
            let mut plus = store.clone();
            plus.set(name, Tensor::new(base.shape().to_vec(), d.clone())?);
            d[i] -= 2.0 * FD_H;
            let mut minus = store.clone();
            minus.set(name, Tensor::new(base.shape().to_vec(), d)?);
            let numeric =
                (loss_value(model, &plus, xl, xr)? - loss_value(model, &minus, xl, xr)?) / (2.0 * FD_H);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            max_rel_err = max_rel_err.max(err);
        }
        rows.push(GroupResult {
            name: name.clone(),
            max_rel_err,
            probes,
            pass: max_rel_err <= tolerance,
        });
    }
    Ok(GradcheckReport { tolerance, rows })
}

/// End-to-end check on a freshly built model. Runs in 64-bit regardless of
/// the session precision: finite differences need the headroom. The
/// cross-view merge scalars are moved off their zero init so the SCAM branch
/// carries gradient signal.
pub fn check_model(
    cfg: ModelConfig,
    seed: u64,
    input_hw: usize,
    probes_per_group: usize,
) -> Result<GradcheckReport> {
    let (mut store, model) = build_model::<f64>(cfg, seed)?;
    for i in 0..cfg.pft_blocks {
        for j in 0..cfg.pft_layers_per_block {
            for side in ["alpha_l", "alpha_r"] {
                store.set(
                    &format!("pft.block{i}.layer{j}.cvft.scam.{side}"),
                    Tensor::new(vec![1], vec![0.5])?,
                );
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let mut input = || -> Result<Tensor<f64>> {
        let n = 3 * input_hw * input_hw;
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![1, 3, input_hw, input_hw], data)
    };
    let xl = input()?;
    let xr = input()?;
    let analytic = analytic_gradient_map(&model, &store, &xl, &xr)?;
    compare_with_fd(&model, &store, &xl, &xr, &analytic, probes_per_group, GRADCHECK_TOL)
}
