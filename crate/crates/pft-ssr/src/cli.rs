//! Command-line surface: dataset preparation, inference, evaluation,
//! gradient checking, and toy training.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradcheck;
use crate::imaging::{bicubic_resize, load_png, save_png, Image, StereoPair};
use crate::metrics::{evaluate_pair, EvalReport};
use crate::model::{build_model, load_weights, save_weights, ModelConfig};
use crate::params::ParamBag;
use crate::tensor::Element;
use crate::train::{loss_curve_text, parse_configs, Sample, TrainConfig};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Parser, Debug)]
#[command(name = "pft-ssr", about = "Stereo image super-resolution toolkit", version)]
pub struct Cli {
    /// Seed for every stochastic choice (init, patch sampling).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Floating-point precision of the whole session.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,

    /// Model (and for train-toy also training) configuration file,
    /// plain `key = value` lines. Defaults to the built-in toy config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker-count hint. All reductions run in a fixed order, so results
    /// are byte-identical for every value; accepted for interface parity.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate bicubic LR inputs and aligned GT from an HR tree.
    Prep(PrepArgs),
    /// Super-resolve one stereo pair.
    Infer(InferArgs),
    /// Compare SR results against ground truth.
    Eval(EvalArgs),
    /// Validate analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Overfit a small model on a handful of stereo pairs.
    TrainToy(TrainToyArgs),
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    /// Dataset root: expects `<root>/<dataset>/hr/<scene>/{left,right}.png`.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub scale: usize,
    /// Bicubic-halve the ground truth before degradation (high-resolution
    /// sources such as Middlebury).
    #[arg(long)]
    pub preshrink_2x: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub scale: usize,
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// SR tree: `<sr>/<scene>/{left,right}.png`.
    #[arg(long)]
    pub sr: PathBuf,
    /// GT tree with the same layout.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "eval")]
    pub dataset: String,
    #[arg(long, default_value_t = 0)]
    pub scale: usize,
    /// Report file (comma-separated values); also printed to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Finite-difference probes per parameter group.
    #[arg(long, default_value_t = 2)]
    pub probes: usize,
    /// Square input side in LR space.
    #[arg(long, default_value_t = 16)]
    pub input: usize,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    /// HR stereo pairs: `<data>/<scene>/{left,right}.png`
    /// (or under `<data>/hr/`).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `loss_curve.csv` and `weights.pftw`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Entry point; returns the process exit code.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prep(a) => cmd_prep(&cli, a),
        Command::Infer(a) => match cli.precision {
            Precision::F32 => cmd_infer::<f32>(&cli, a),
            Precision::F64 => cmd_infer::<f64>(&cli, a),
        },
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(&cli, a),
        Command::TrainToy(a) => match cli.precision {
            Precision::F32 => cmd_train_toy::<f32>(&cli, a),
            Precision::F64 => cmd_train_toy::<f64>(&cli, a),
        },
    }
}

fn model_config(cli: &Cli) -> Result<ModelConfig> {
    match &cli.config {
        // tolerate combined model+training config files: training keys are
        // simply ignored outside train-toy
        Some(path) => Ok(parse_configs(&fs::read_to_string(path)?)?.0),
        None => Ok(ModelConfig::toy(2)),
    }
}

/// Sorted scenes (subdirectories holding left.png and right.png).
fn scan_scenes(dir: &Path) -> Result<Vec<String>> {
    let mut scenes = Vec::new();
    for entry in fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?
    {
        let entry = entry?;
        if !entry.path().is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let left = entry.path().join("left.png");
        let right = entry.path().join("right.png");
        match (left.exists(), right.exists()) {
            (true, true) => scenes.push(name),
            (false, false) => continue, // unrelated directory
            (l, _) => {
                return Err(Error::Dataset(format!(
                    "scene {name}: missing {} view",
                    if l { "right" } else { "left" }
                )))
            }
        }
    }
    scenes.sort();
    Ok(scenes)
}

fn load_pair(dir: &Path) -> Result<StereoPair> {
    StereoPair::new(load_png(&dir.join("left.png"))?, load_png(&dir.join("right.png"))?)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn cmd_prep(_cli: &Cli, a: &PrepArgs) -> Result<()> {
    if !matches!(a.scale, 2 | 4) {
        return Err(Error::Config(format!("scale must be 2 or 4, got {}", a.scale)));
    }
    let base = a.root.join(&a.dataset);
    let hr_dir = base.join("hr");
    let scenes = scan_scenes(&hr_dir)?;
    if scenes.is_empty() {
        return Err(Error::Dataset(format!(
            "no stereo scenes under {}",
            hr_dir.display()
        )));
    }
    let gt_root = base.join(format!("gt_x{}", a.scale));
    let lr_root = base.join(format!("lr_x{}", a.scale));
    let mut manifest = String::from("scene,view,sha256_hr,sha256_gt,sha256_lr\n");

    for scene in &scenes {
        let pair = load_pair(&hr_dir.join(scene))?;
        fs::create_dir_all(gt_root.join(scene))?;
        fs::create_dir_all(lr_root.join(scene))?;
        for (view, img) in [("left", &pair.left), ("right", &pair.right)] {
            let mut gt = img.clone();
            if a.preshrink_2x {
                gt = bicubic_resize(&gt, gt.height / 2, gt.width / 2)?;
            }
            // crop to multiples of the scale so SR output and GT align
            let (gh, gw) = (gt.height / a.scale * a.scale, gt.width / a.scale * a.scale);
            if gh == 0 || gw == 0 {
                return Err(Error::Dataset(format!(
                    "scene {scene}: {view} view too small for scale {}",
                    a.scale
                )));
            }
            let gt = gt.crop(0, 0, gh, gw)?;
            let lr = bicubic_resize(&gt, gh / a.scale, gw / a.scale)?;
            let gt_path = gt_root.join(scene).join(format!("{view}.png"));
            let lr_path = lr_root.join(scene).join(format!("{view}.png"));
            save_png(&gt, &gt_path)?;
            save_png(&lr, &lr_path)?;
            manifest.push_str(&format!(
                "{scene},{view},{},{},{}\n",
                sha256_file(&hr_dir.join(scene).join(format!("{view}.png")))?,
                sha256_file(&gt_path)?,
                sha256_file(&lr_path)?,
            ));
        }
    }
    fs::write(base.join(format!("manifest_x{}.txt", a.scale)), manifest)?;
    println!(
        "prepared {} scenes at scale {} under {}",
        scenes.len(),
        a.scale,
        base.display()
    );
    Ok(())
}

fn cmd_infer<T: Element>(cli: &Cli, a: &InferArgs) -> Result<()> {
    let mut cfg = model_config(cli)?;
    if cli.config.is_none() {
        cfg.scale = a.scale;
        cfg.validate()?;
    } else if cfg.scale != a.scale {
        return Err(Error::Config(format!(
            "--scale {} conflicts with config scale {}",
            a.scale, cfg.scale
        )));
    }
    let store = load_weights::<T>(&a.weights, cfg)?;
    let (_, model) = build_model::<T>(cfg, 0)?;
    let pair = StereoPair::new(load_png(&a.left)?, load_png(&a.right)?)?;
    let bag = ParamBag::frozen(&store);
    let (yl, yr) = model.forward(&bag, &pair.left.to_tensor(), &pair.right.to_tensor())?;
    fs::create_dir_all(&a.out)?;
    save_png(&Image::from_tensor(&yl)?, &a.out.join("sr_left.png"))?;
    save_png(&Image::from_tensor(&yr)?, &a.out.join("sr_right.png"))?;
    println!(
        "wrote {} and {}",
        a.out.join("sr_left.png").display(),
        a.out.join("sr_right.png").display()
    );
    Ok(())
}

fn cmd_eval(_cli: &Cli, a: &EvalArgs) -> Result<()> {
    let gt_scenes = scan_scenes(&a.gt)?;
    if gt_scenes.is_empty() {
        return Err(Error::Dataset(format!("no scenes under {}", a.gt.display())));
    }
    let missing: Vec<&String> = gt_scenes
        .iter()
        .filter(|s| !a.sr.join(s).join("left.png").exists() || !a.sr.join(s).join("right.png").exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!(
            "SR results missing for scenes: {}",
            missing
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let mut rows = Vec::new();
    for scene in &gt_scenes {
        let sr = load_pair(&a.sr.join(scene))?;
        let gt = load_pair(&a.gt.join(scene))?;
        rows.push(evaluate_pair(scene.clone(), &sr, &gt)?);
    }
    let report = EvalReport::from_rows(a.dataset.clone(), a.scale, rows);
    print!("{}", report.table());
    print!("{}", report.csv());
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.sr.join("eval_report.csv"));
    fs::write(&out, report.csv())?;
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<()> {
    let cfg = model_config(cli)?;
    let (store, _) = build_model::<f64>(cfg, cli.seed)?;
    if store.total_elements() >= 50_000 {
        return Err(Error::Config(format!(
            "gradcheck needs a config below 50k parameters, got {}",
            store.total_elements()
        )));
    }
    let report = gradcheck::check_model(cfg, cli.seed, a.input, a.probes)?;
    print!("{}", report.table());
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "gradient check failed for {} group(s), worst: {}",
            report.failing().len(),
            report
                .failing()
                .first()
                .map(|g| g.name.as_str())
                .unwrap_or("?")
        )))
    }
}

fn cmd_train_toy<T: Element>(cli: &Cli, a: &TrainToyArgs) -> Result<()> {
    let (cfg, mut tc) = match &cli.config {
        Some(path) => parse_configs(&fs::read_to_string(path)?)?,
        None => (ModelConfig::toy(2), TrainConfig::default()),
    };
    if cli.seed != 0 {
        tc.seed = cli.seed;
    }

    // accept pairs directly under --data or under an hr/ subtree
    let data_dir = if a.data.join("hr").is_dir() {
        a.data.join("hr")
    } else {
        a.data.clone()
    };
    let scenes = scan_scenes(&data_dir)?;
    if scenes.is_empty() {
        return Err(Error::Dataset(format!(
            "no stereo pairs under {}",
            data_dir.display()
        )));
    }
    let mut samples = Vec::new();
    for scene in &scenes {
        let hr = load_pair(&data_dir.join(scene))?;
        let (h, w) = (hr.left.height, hr.left.width);
        let (gh, gw) = (h / cfg.scale * cfg.scale, w / cfg.scale * cfg.scale);
        let hr = StereoPair::new(hr.left.crop(0, 0, gh, gw)?, hr.right.crop(0, 0, gh, gw)?)?;
        let lr = StereoPair::new(
            bicubic_resize(&hr.left, gh / cfg.scale, gw / cfg.scale)?,
            bicubic_resize(&hr.right, gh / cfg.scale, gw / cfg.scale)?,
        )?;
        samples.push(Sample { hr, lr });
    }

    let (mut store, model) = build_model::<T>(cfg, cli.seed)?;
    let logs = crate::train::train(&model, &mut store, &samples, &tc)?;

    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("loss_curve.csv"), loss_curve_text(&logs))?;
    save_weights(&store, &a.out.join("weights.pftw"))?;
    let first = logs.first().map(|l| l.loss).unwrap_or(f64::NAN);
    let last = logs.last().map(|l| l.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps on {} pair(s): loss {first:.6} -> {last:.6}; wrote {} and {}",
        tc.steps,
        samples.len(),
        a.out.join("loss_curve.csv").display(),
        a.out.join("weights.pftw").display()
    );
    Ok(())
}
