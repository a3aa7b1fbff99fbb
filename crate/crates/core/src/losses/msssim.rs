//! Multi-scale structural similarity with an analytic gradient.
//!
//! Each channel is scored separately with a Gaussian-weighted, valid-mode
//! SSIM; scales are built by 2×2 average pooling. The per-channel value is
//! `Π_j cs_j^{w_j} · ssim_L^{w_L}` with negative terms clipped to zero, and
//! the image value is the mean over channels.

use crate::config::MsSsimConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn zeros(h: usize, w: usize) -> Self {
        Plane {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    fn channel<T: Scalar>(t: &Tensor<T>, c: usize) -> Self {
        let n = t.channels();
        Plane {
            h: t.height(),
            w: t.width(),
            data: t.data().iter().skip(c).step_by(n).map(|v| v.as_f64()).collect(),
        }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn pool2(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut out = Plane::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let s = self.data[2 * y * self.w + 2 * x]
                    + self.data[2 * y * self.w + 2 * x + 1]
                    + self.data[(2 * y + 1) * self.w + 2 * x]
                    + self.data[(2 * y + 1) * self.w + 2 * x + 1];
                out.data[y * w + x] = 0.25 * s;
            }
        }
        out
    }

    /// Adjoint of [`Plane::pool2`] onto an `h×w` plane.
    fn pool2_adjoint(&self, h: usize, w: usize) -> Plane {
        let mut out = Plane::zeros(h, w);
        for y in 0..self.h {
            for x in 0..self.w {
                let g = 0.25 * self.data[y * self.w + x];
                out.data[2 * y * w + 2 * x] += g;
                out.data[2 * y * w + 2 * x + 1] += g;
                out.data[(2 * y + 1) * w + 2 * x] += g;
                out.data[(2 * y + 1) * w + 2 * x + 1] += g;
            }
        }
        out
    }

    /// Separable valid-mode filtering with the 1-D kernel `g`.
    fn blur(&self, g: &[f64]) -> Plane {
        let k = g.len();
        let (oh, ow) = (self.h - k + 1, self.w - k + 1);
        let mut tmp = Plane::zeros(self.h, ow);
        for y in 0..self.h {
            let row = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp.data[y * ow + x] = g.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = Plane::zeros(oh, ow);
        for y in 0..oh {
            for (i, &gi) in g.iter().enumerate() {
                let src = &tmp.data[(y + i) * ow..(y + i + 1) * ow];
                for (o, s) in out.data[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                    *o += gi * s;
                }
            }
        }
        out
    }

    /// Adjoint of [`Plane::blur`] onto an `h×w` plane.
    fn blur_adjoint(&self, g: &[f64], h: usize, w: usize) -> Plane {
        let (oh, ow) = (self.h, self.w);
        let mut tmp = Plane::zeros(h, ow);
        for y in 0..oh {
            for (i, &gi) in g.iter().enumerate() {
                let src = &self.data[y * ow..(y + 1) * ow];
                for (t, s) in tmp.data[(y + i) * ow..(y + i + 1) * ow].iter_mut().zip(src) {
                    *t += gi * s;
                }
            }
        }
        let mut out = Plane::zeros(h, w);
        for y in 0..h {
            for x in 0..ow {
                let v = tmp.data[y * ow + x];
                for (i, &gi) in g.iter().enumerate() {
                    out.data[y * w + x + i] += gi * v;
                }
            }
        }
        out
    }
}

/// Normalized 1-D Gaussian of odd length `k`.
pub fn gaussian_window(k: usize, sigma: f64) -> Vec<f64> {
    let c = (k / 2) as f64;
    let g: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Window length used on an `h×w` scale: the configured size, shrunk to the
/// largest odd length that fits.
fn window_for(cfg: &MsSsimConfig, h: usize, w: usize) -> usize {
    let k = cfg.window.min(h).min(w);
    if k % 2 == 0 {
        k - 1
    } else {
        k
    }
}

struct ScaleStats {
    g: Vec<f64>,
    mx: Plane,
    my: Plane,
    a: Plane, // 2 σxy + C2
    b: Plane, // σx² + σy² + C2
    p: Plane, // 2 μx μy + C1
    q: Plane, // μx² + μy² + C1
    cs_mean: f64,
    ssim_mean: f64,
}

fn scale_stats(x: &Plane, y: &Plane, cfg: &MsSsimConfig) -> ScaleStats {
    let c1 = (cfg.k1 * 1.0).powi(2);
    let c2 = (cfg.k2 * 1.0).powi(2);
    let g = gaussian_window(window_for(cfg, x.h, x.w), cfg.sigma);
    let mx = x.blur(&g);
    let my = y.blur(&g);
    let sxx = x.zip(x, |a, b| a * b).blur(&g);
    let syy = y.zip(y, |a, b| a * b).blur(&g);
    let sxy = x.zip(y, |a, b| a * b).blur(&g);
    let n = mx.data.len();
    let mut a = Plane::zeros(mx.h, mx.w);
    let mut b = a.clone();
    let mut p = a.clone();
    let mut q = a.clone();
    let (mut cs_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..n {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = sxx.data[i] - ux * ux;
        let vy = syy.data[i] - uy * uy;
        let cxy = sxy.data[i] - ux * uy;
        a.data[i] = 2.0 * cxy + c2;
        b.data[i] = vx + vy + c2;
        p.data[i] = 2.0 * ux * uy + c1;
        q.data[i] = ux * ux + uy * uy + c1;
        let cs = a.data[i] / b.data[i];
        cs_sum += cs;
        ssim_sum += cs * p.data[i] / q.data[i];
    }
    ScaleStats {
        g,
        mx,
        my,
        a,
        b,
        p,
        q,
        cs_mean: cs_sum / n as f64,
        ssim_mean: ssim_sum / n as f64,
    }
}

fn check_inputs<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &MsSsimConfig) -> Result<()> {
    a.ensure_same_shape(b)?;
    let min = cfg.min_side();
    if a.height() < min || a.width() < min {
        return Err(Error::Argument(format!(
            "MS-SSIM with {} levels needs images of at least {min}x{min}, got {}x{}",
            cfg.levels,
            a.height(),
            a.width()
        )));
    }
    Ok(())
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut v = vec![base];
    for _ in 1..levels {
        let next = v.last().unwrap().pool2();
        v.push(next);
    }
    v
}

/// Per-scale terms (`cs` for all but the last, `ssim` at the last) and the
/// clipped weighted product.
fn combine(terms: &[f64], weights: &[f64]) -> f64 {
    terms
        .iter()
        .zip(weights)
        .map(|(&t, &w)| t.max(0.0).powf(w))
        .product()
}

fn channel_terms(stats: &[ScaleStats]) -> Vec<f64> {
    let last = stats.len() - 1;
    stats
        .iter()
        .enumerate()
        .map(|(j, s)| if j == last { s.ssim_mean } else { s.cs_mean })
        .collect()
}

pub fn msssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &MsSsimConfig) -> Result<f64> {
    check_inputs(a, b, cfg)?;
    let weights = cfg.weights();
    let mut total = 0.0;
    for c in 0..a.channels() {
        let xs = pyramid(Plane::channel(a, c), cfg.levels);
        let ys = pyramid(Plane::channel(b, c), cfg.levels);
        let stats: Vec<ScaleStats> = xs.iter().zip(&ys).map(|(x, y)| scale_stats(x, y, cfg)).collect();
        total += combine(&channel_terms(&stats), &weights);
    }
    Ok(total / a.channels() as f64)
}

/// `1 - msssim(a, b)`.
pub fn msssim_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, cfg: &MsSsimConfig) -> Result<f64> {
    Ok(1.0 - msssim(a, b, cfg)?)
}

/// [`msssim_loss`] and its gradient with respect to `pred`.
pub fn msssim_loss_grad<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &MsSsimConfig,
) -> Result<(f64, Tensor<f64>)> {
    check_inputs(pred, target, cfg)?;
    let weights = cfg.weights();
    let nc = pred.channels();
    let mut grad = Tensor::<f64>::zeros(pred.height(), pred.width(), nc);
    let mut total = 0.0;
    for c in 0..nc {
        let xs = pyramid(Plane::channel(pred, c), cfg.levels);
        let ys = pyramid(Plane::channel(target, c), cfg.levels);
        let stats: Vec<ScaleStats> = xs.iter().zip(&ys).map(|(x, y)| scale_stats(x, y, cfg)).collect();
        let terms = channel_terms(&stats);
        let value = combine(&terms, &weights);
        total += value;

        let last = stats.len() - 1;
        let mut carry: Option<Plane> = None;
        for j in (0..stats.len()).rev() {
            let t = terms[j];
            // d(value)/d(term_j), scaled for the channel mean and the loss sign
            let dterm = if t > 0.0 {
                let others: f64 = terms
                    .iter()
                    .zip(&weights)
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, (&v, &w))| v.max(0.0).powf(w))
                    .product();
                -weights[j] * t.powf(weights[j] - 1.0) * others / nc as f64
            } else {
                0.0
            };
            let s = &stats[j];
            let (x, y) = (&xs[j], &ys[j]);
            let n = s.mx.data.len() as f64;
            let mut dmu = Plane::zeros(s.mx.h, s.mx.w);
            let mut dsxx = dmu.clone();
            let mut dsxy = dmu.clone();
            if dterm != 0.0 {
                let d = dterm / n;
                for i in 0..s.mx.data.len() {
                    let (ux, uy) = (s.mx.data[i], s.my.data[i]);
                    let (a, b) = (s.a.data[i], s.b.data[i]);
                    let cs = a / b;
                    // cs partials; σx² = Sxx − μx², σxy = Sxy − μx μy
                    let dcs_dmu = (-2.0 * uy * b + 2.0 * ux * a) / (b * b);
                    let dcs_dsxx = -a / (b * b);
                    let dcs_dsxy = 2.0 / b;
                    if j == last {
                        let (p, q) = (s.p.data[i], s.q.data[i]);
                        let l = p / q;
                        let dl_dmu = (2.0 * uy * q - 2.0 * ux * p) / (q * q);
                        dmu.data[i] = d * (dl_dmu * cs + l * dcs_dmu);
                        dsxx.data[i] = d * l * dcs_dsxx;
                        dsxy.data[i] = d * l * dcs_dsxy;
                    } else {
                        dmu.data[i] = d * dcs_dmu;
                        dsxx.data[i] = d * dcs_dsxx;
                        dsxy.data[i] = d * dcs_dsxy;
                    }
                }
            }
            let gmu = dmu.blur_adjoint(&s.g, x.h, x.w);
            let gxx = dsxx.blur_adjoint(&s.g, x.h, x.w);
            let gxy = dsxy.blur_adjoint(&s.g, x.h, x.w);
            let mut dx = Plane::zeros(x.h, x.w);
            for i in 0..dx.data.len() {
                dx.data[i] = gmu.data[i] + 2.0 * x.data[i] * gxx.data[i] + y.data[i] * gxy.data[i];
            }
            if let Some(up) = carry.take() {
                let back = up.pool2_adjoint(x.h, x.w);
                for (d, b) in dx.data.iter_mut().zip(&back.data) {
                    *d += b;
                }
            }
            carry = Some(dx);
        }
        let dx = carry.expect("at least one level");
        for (i, v) in dx.data.iter().enumerate() {
            grad.data_mut()[i * nc + c] = *v;
        }
    }
    Ok((1.0 - total / nc as f64, grad))
}
