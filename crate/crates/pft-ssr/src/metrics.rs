//! Training loss and evaluation metrics: L1, PSNR, and SSIM on RGB, plus
//! the Left / (Left+Right)/2 report aggregation.

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::tensor::{Element, Tensor};

/// Mean absolute error over both views, differentiable.
pub fn l1_loss<T: Element>(
    pred_l: &Tensor<T>,
    pred_r: &Tensor<T>,
    target_l: &Tensor<T>,
    target_r: &Tensor<T>,
) -> Result<Tensor<T>> {
    for (p, t) in [(pred_l, target_l), (pred_r, target_r)] {
        if p.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "l1_loss",
                lhs: p.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }
    let left = pred_l.sub(target_l)?.abs().mean_all();
    let right = pred_r.sub(target_r)?.abs().mean_all();
    Ok(left.add(&right)?.scale(0.5))
}

/// Peak signal-to-noise ratio in dB over all RGB elements, dynamic range 1.
/// Identical images yield the `+infinity` sentinel.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims("psnr", a, b)?;
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps for the SSIM window.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *t;
    }
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Structural similarity: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, computed per RGB channel over all fully interior window
/// positions, then averaged over positions and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims("ssim", a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Image(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let (vh, vw) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);

    // separable Gaussian filtering of the five moment maps per channel
    let mut total = 0.0;
    for c in 0..3 {
        let plane = |img: &Image| -> Vec<f64> {
            (0..h * w).map(|i| img.data[i * 3 + c]).collect()
        };
        let x = plane(a);
        let y = plane(b);
        let moments: [Vec<f64>; 5] = [
            x.clone(),
            y.clone(),
            x.iter().map(|v| v * v).collect(),
            y.iter().map(|v| v * v).collect(),
            x.iter().zip(&y).map(|(p, q)| p * q).collect(),
        ];
        let filtered: Vec<Vec<f64>> = moments
            .iter()
            .map(|m| {
                // horizontal pass over full rows, then vertical over valid rows
                let mut hpass = vec![0.0; h * vw];
                for row in 0..h {
                    for col in 0..vw {
                        let mut acc = 0.0;
                        for (k, t) in taps.iter().enumerate() {
                            acc += t * m[row * w + col + k];
                        }
                        hpass[row * vw + col] = acc;
                    }
                }
                let mut out = vec![0.0; vh * vw];
                for row in 0..vh {
                    for col in 0..vw {
                        let mut acc = 0.0;
                        for (k, t) in taps.iter().enumerate() {
                            acc += t * hpass[(row + k) * vw + col];
                        }
                        out[row * vw + col] = acc;
                    }
                }
                out
            })
            .collect();
        let (mx, my, mxx, myy, mxy) = (
            &filtered[0],
            &filtered[1],
            &filtered[2],
            &filtered[3],
            &filtered[4],
        );
        let mut channel = 0.0;
        for i in 0..vh * vw {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let vxy = mxy[i] - ux * uy;
            channel += (2.0 * ux * uy + SSIM_C1) * (2.0 * vxy + SSIM_C2)
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += channel / (vh * vw) as f64;
    }
    Ok(total / 3.0)
}

fn check_dims(op: &str, a: &Image, b: &Image) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Image(format!(
            "{op}: image sizes differ, {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Per-scene metric row of an evaluation run.
#[derive(Clone, Debug)]
pub struct SceneEval {
    pub scene: String,
    pub psnr_left: f64,
    pub ssim_left: f64,
    pub psnr_right: f64,
    pub ssim_right: f64,
}

/// Evaluates one SR/GT stereo pair.
pub fn evaluate_pair(
    scene: impl Into<String>,
    sr: &crate::imaging::StereoPair,
    gt: &crate::imaging::StereoPair,
) -> Result<SceneEval> {
    Ok(SceneEval {
        scene: scene.into(),
        psnr_left: psnr(&sr.left, &gt.left)?,
        ssim_left: ssim(&sr.left, &gt.left)?,
        psnr_right: psnr(&sr.right, &gt.right)?,
        ssim_right: ssim(&sr.right, &gt.right)?,
    })
}

/// Aggregated report: the Left column averages left-view metrics, the avg
/// column averages both views over all images.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub dataset: String,
    pub scale: usize,
    pub rows: Vec<SceneEval>,
    pub psnr_left: f64,
    pub ssim_left: f64,
    pub psnr_avg: f64,
    pub ssim_avg: f64,
}

/// Mean that treats the PSNR infinity sentinel specially: infinities are
/// excluded unless every value is infinite (then the mean reads infinite).
fn sentinel_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut finite: Vec<f64> = values.clone().filter(|v| v.is_finite()).collect();
    // fixed summation order makes the mean permutation-invariant bit-exactly
    finite.sort_by(f64::total_cmp);
    if finite.is_empty() {
        if values.count() == 0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

impl EvalReport {
    pub fn from_rows(dataset: impl Into<String>, scale: usize, rows: Vec<SceneEval>) -> Self {
        let psnr_left = sentinel_mean(rows.iter().map(|r| r.psnr_left));
        let ssim_left = sentinel_mean(rows.iter().map(|r| r.ssim_left));
        let psnr_avg = sentinel_mean(
            rows.iter()
                .flat_map(|r| [r.psnr_left, r.psnr_right])
                .collect::<Vec<_>>()
                .into_iter(),
        );
        let ssim_avg = sentinel_mean(
            rows.iter()
                .flat_map(|r| [r.ssim_left, r.ssim_right])
                .collect::<Vec<_>>()
                .into_iter(),
        );
        Self {
            dataset: dataset.into(),
            scale,
            rows,
            psnr_left,
            ssim_left,
            psnr_avg,
            ssim_avg,
        }
    }

    pub fn images(&self) -> usize {
        self.rows.len()
    }

    /// Machine-readable form with a fixed header.
    pub fn csv(&self) -> String {
        format!(
            "dataset,scale,images,psnr_left,ssim_left,psnr_avg,ssim_avg\n{},{},{},{},{},{},{}\n",
            self.dataset,
            self.scale,
            self.images(),
            fmt_metric(self.psnr_left),
            fmt_metric(self.ssim_left),
            fmt_metric(self.psnr_avg),
            fmt_metric(self.ssim_avg),
        )
    }

    /// Aligned plain-text table with one row per scene plus the aggregate.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>10} {:>10} {:>10} {:>10}\n",
            "scene", "psnr_left", "ssim_left", "psnr_avg", "ssim_avg"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<20} {:>10} {:>10} {:>10} {:>10}\n",
                r.scene,
                fmt_metric(r.psnr_left),
                fmt_metric(r.ssim_left),
                fmt_metric(sentinel_mean([r.psnr_left, r.psnr_right].into_iter())),
                fmt_metric(sentinel_mean([r.ssim_left, r.ssim_right].into_iter())),
            ));
        }
        out.push_str(&format!(
            "{:<20} {:>10} {:>10} {:>10} {:>10}\n",
            format!("{} x{} (n={})", self.dataset, self.scale, self.images()),
            fmt_metric(self.psnr_left),
            fmt_metric(self.ssim_left),
            fmt_metric(self.psnr_avg),
            fmt_metric(self.ssim_avg),
        ));
        out
    }
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}
