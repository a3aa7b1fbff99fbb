//! Training objectives. Every loss is a mean over its elements, evaluated in
//! `f64`; the `*_grad` variants also return the gradient with respect to the
//! prediction (or the discriminator scores).

mod color;
mod msssim;

pub use color::{ciede2000, pcl_loss, pcl_loss_grad, rgb_to_lab, srgb_to_lab, Dual3, Real, D65_WHITE};
pub use msssim::{gaussian_window, msssim, msssim_loss, msssim_loss_grad};

use serde::{Deserialize, Serialize};

use crate::config::{LossWeights, MsSsimConfig};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Guard inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

pub fn l1_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs())
        .sum();
    Ok(s / a.len() as f64)
}

pub fn l1_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<f64>)> {
    let v = l1_loss(pred, target)?;
    let n = pred.len() as f64;
    let g = Tensor::from_fn(pred.height(), pred.width(), pred.channels(), |y, x, c| {
        let d = pred.get(y, x, c).as_f64() - target.get(y, x, c).as_f64();
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    Ok((v, g))
}

#[inline]
fn neg_log(s: f64) -> f64 {
    -s.max(LOG_EPS).ln()
}

#[inline]
fn neg_log_grad(s: f64) -> f64 {
    if s > LOG_EPS {
        -1.0 / s
    } else {
        0.0
    }
}

/// Generator adversarial loss: mean of `-log D`.
pub fn adv_g_loss<T: Scalar>(scores: &Tensor<T>) -> f64 {
    let s: f64 = scores.data().iter().map(|v| neg_log(v.as_f64())).sum();
    s / scores.len() as f64
}

pub fn adv_g_loss_grad<T: Scalar>(scores: &Tensor<T>) -> (f64, Tensor<f64>) {
    let n = scores.len() as f64;
    let g = scores.cast::<f64>().map(|s| neg_log_grad(s) / n);
    (adv_g_loss(scores), g)
}

/// Discriminator loss: mean over sites of `-log D(real) - log(1 - D(fake))`.
pub fn adv_d_loss<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<f64> {
    real.ensure_same_shape(fake)?;
    let s: f64 = real
        .data()
        .iter()
        .zip(fake.data())
        .map(|(&r, &f)| neg_log(r.as_f64()) + neg_log(1.0 - f.as_f64()))
        .sum();
    Ok(s / real.len() as f64)
}

/// [`adv_d_loss`] with gradients for the real and fake score maps.
pub fn adv_d_loss_grad<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<(f64, Tensor<f64>, Tensor<f64>)> {
    let v = adv_d_loss(real, fake)?;
    let n = real.len() as f64;
    let dr = real.cast::<f64>().map(|r| neg_log_grad(r) / n);
    let df = fake.cast::<f64>().map(|f| -neg_log_grad(1.0 - f) / n);
    Ok((v, dr, df))
}

/// Weighted components of the stage-I objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage1Terms {
    pub l1: f64,
    pub ssim: f64,
    pub adv: f64,
    pub total: f64,
}

/// Weighted components of the stage-II objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage2Terms {
    pub l1: f64,
    pub pcl: f64,
    pub total: f64,
}

/// Stage-I objective: `w_r1·L1 + w_ssim·(1 − MS-SSIM) + w_adv·(−log D)`.
/// Components are reported unweighted; `total` carries the weights.
pub fn stage1_total<T: Scalar>(
    ihp: &Tensor<T>,
    ref8: &Tensor<T>,
    d_scores: &Tensor<T>,
    w: &LossWeights,
    ms: &MsSsimConfig,
) -> Result<Stage1Terms> {
    let l1 = l1_loss(ihp, ref8)?;
    let ssim = if w.w_ssim != 0.0 { msssim_loss(ihp, ref8, ms)? } else { 0.0 };
    let adv = adv_g_loss(d_scores);
    Ok(Stage1Terms {
        l1,
        ssim,
        adv,
        total: w.w_r1 * l1 + w.w_ssim * ssim + w.w_adv * adv,
    })
}

/// Gradients of [`stage1_total`]: `(terms, d/d ihp, d/d scores)`.
pub fn stage1_total_grad<T: Scalar>(
    ihp: &Tensor<T>,
    ref8: &Tensor<T>,
    d_scores: &Tensor<T>,
    w: &LossWeights,
    ms: &MsSsimConfig,
) -> Result<(Stage1Terms, Tensor<f64>, Tensor<f64>)> {
    let (l1, gl1) = l1_loss_grad(ihp, ref8)?;
    let mut grad = gl1.map(|v| v * w.w_r1);
    let ssim = if w.w_ssim != 0.0 {
        let (v, g) = msssim_loss_grad(ihp, ref8, ms)?;
        for (o, gi) in grad.data_mut().iter_mut().zip(g.data()) {
            *o += w.w_ssim * gi;
        }
        v
    } else {
        0.0
    };
    let (adv, gadv) = adv_g_loss_grad(d_scores);
    let gscores = gadv.map(|v| v * w.w_adv);
    let terms = Stage1Terms {
        l1,
        ssim,
        adv,
        total: w.w_r1 * l1 + w.w_ssim * ssim + w.w_adv * adv,
    };
    Ok((terms, grad, gscores))
}

/// Stage-II objective: `w_r2·L1 + w_pcl·PCL`.
pub fn stage2_total<T: Scalar>(ih: &Tensor<T>, ref16: &Tensor<T>, w: &LossWeights) -> Result<Stage2Terms> {
    let l1 = l1_loss(ih, ref16)?;
    let pcl = if w.w_pcl != 0.0 { pcl_loss(ih, ref16)? } else { 0.0 };
    Ok(Stage2Terms {
        l1,
        pcl,
        total: w.w_r2 * l1 + w.w_pcl * pcl,
    })
}

pub fn stage2_total_grad<T: Scalar>(
    ih: &Tensor<T>,
    ref16: &Tensor<T>,
    w: &LossWeights,
) -> Result<(Stage2Terms, Tensor<f64>)> {
    let (l1, gl1) = l1_loss_grad(ih, ref16)?;
    let mut grad = gl1.map(|v| v * w.w_r2);
    let pcl = if w.w_pcl != 0.0 {
        let (v, g) = pcl_loss_grad(ih, ref16)?;
        for (o, gi) in grad.data_mut().iter_mut().zip(g.data()) {
            *o += w.w_pcl * gi;
        }
        v
    } else {
        0.0
    };
    Ok((
        Stage2Terms {
            l1,
            pcl,
            total: w.w_r2 * l1 + w.w_pcl * pcl,
        },
        grad,
    ))
}
