//! sRGB to CIELAB conversion, the CIEDE2000 color difference and the
//! perceptual color loss built on them.
//!
//! The per-pixel math is written once over [`Real`], so the same code yields
//! plain values (`f64`) and exact first derivatives (`Dual3`).

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// D65 reference white for a white point normalized to `Y = 1`.
pub const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

/// Linear sRGB to XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Numbers the color formulas are evaluated over.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn powf(self, e: f64) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

/// Forward-mode dual number carrying three partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    pub fn seed(v: f64, i: usize) -> Self {
        let mut d = [0.0; 3];
        d[i] = 1.0;
        Dual3 { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        Dual3 {
            v,
            d: self.d.map(|x| x * dv),
        }
    }
}

impl Add for Dual3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual3 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual3 {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; 3];
        for (i, di) in d.iter_mut().enumerate() {
            *di = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual3 { v: self.v * o.v, d }
    }
}

impl Div for Dual3 {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut d = [0.0; 3];
        for (i, di) in d.iter_mut().enumerate() {
            *di = (self.d[i] - v * o.d[i]) * inv;
        }
        Dual3 { v, d }
    }
}

impl Neg for Dual3 {
    type Output = Self;
    fn neg(self) -> Self {
        Dual3 {
            v: -self.v,
            d: self.d.map(|x| -x),
        }
    }
}

impl Add<f64> for Dual3 {
    type Output = Self;
    fn add(self, o: f64) -> Self {
        Dual3 { v: self.v + o, d: self.d }
    }
}

impl Sub<f64> for Dual3 {
    type Output = Self;
    fn sub(self, o: f64) -> Self {
        Dual3 { v: self.v - o, d: self.d }
    }
}

impl Mul<f64> for Dual3 {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.chain(self.v * o, o)
    }
}

impl Div<f64> for Dual3 {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self.chain(self.v / o, 1.0 / o)
    }
}

impl Real for Dual3 {
    fn cst(v: f64) -> Self {
        Dual3 { v, d: [0.0; 3] }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        // zero is a kink of every root in the formula; use the zero subgradient
        self.chain(s, if s > 0.0 { 0.5 / s } else { 0.0 })
    }
    fn powf(self, e: f64) -> Self {
        let p = self.v.powf(e);
        let dp = if self.v > 0.0 { e * p / self.v } else { 0.0 };
        self.chain(p, dp)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = self.v * self.v + x.v * x.v;
        let v = self.v.atan2(x.v);
        if r2 == 0.0 {
            return Dual3 { v, d: [0.0; 3] };
        }
        let mut d = [0.0; 3];
        for (i, di) in d.iter_mut().enumerate() {
            *di = (x.v * self.d[i] - self.v * x.d[i]) / r2;
        }
        Dual3 { v, d }
    }
}

#[inline]
fn srgb_decode<R: Real>(c: R) -> R {
    if c.val() <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f<R: Real>(t: R) -> R {
    const DELTA: f64 = 6.0 / 29.0;
    if t.val() > DELTA * DELTA * DELTA {
        t.powf(1.0 / 3.0)
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB (gamma-encoded, `[0, 1]`) to CIELAB under D65. Inputs outside
/// `[0, 1]` are clamped first.
pub fn srgb_to_lab<R: Real>(rgb: [R; 3]) -> [R; 3] {
    let lin = rgb.map(|c| {
        if c.val() < 0.0 {
            R::cst(0.0)
        } else if c.val() > 1.0 {
            R::cst(1.0)
        } else {
            srgb_decode(c)
        }
    });
    let xyz: [R; 3] = std::array::from_fn(|i| {
        lin[0] * RGB_TO_XYZ[i][0] + lin[1] * RGB_TO_XYZ[i][1] + lin[2] * RGB_TO_XYZ[i][2]
    });
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    [fy * 116.0 - 16.0, (fx - fy) * 500.0, (fy - fz) * 200.0]
}

/// Per-pixel CIELAB conversion of an RGB image.
pub fn rgb_to_lab<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<f64>> {
    img.ensure_channels(3, "rgb_to_lab")?;
    let mut data = Vec::with_capacity(img.len());
    for px in img.data().chunks_exact(3) {
        data.extend(srgb_to_lab([px[0].as_f64(), px[1].as_f64(), px[2].as_f64()]));
    }
    Tensor::from_vec(img.height(), img.width(), 3, data)
}

/// Hue angle in degrees in `[0, 360)`, zero for the neutral axis.
#[inline]
fn hue_deg<R: Real>(b: R, a: R) -> R {
    if a.val() == 0.0 && b.val() == 0.0 {
        return R::cst(0.0);
    }
    let h = b.atan2(a) * (180.0 / std::f64::consts::PI);
    if h.val() < 0.0 {
        h + 360.0
    } else {
        h
    }
}

#[inline]
fn cos_deg<R: Real>(d: R) -> R {
    (d * (std::f64::consts::PI / 180.0)).cos()
}

#[inline]
fn sin_deg<R: Real>(d: R) -> R {
    (d * (std::f64::consts::PI / 180.0)).sin()
}

const POW25_7: f64 = 6_103_515_625.0;

/// CIEDE2000 color difference with `kL = kC = kH = 1`.
pub fn ciede2000<R: Real>(p: [R; 3], q: [R; 3]) -> R {
    let [l1, a1, b1] = p;
    let [l2, a2, b2] = q;
    let c1 = (a1 * a1 + b1 * b1).sqrt();
    let c2 = (a2 * a2 + b2 * b2).sqrt();
    let cbar7 = ((c1 + c2) * 0.5).powf(7.0);
    let g = (-(cbar7 / (cbar7 + POW25_7)).sqrt() + 1.0) * 0.5;
    let a1p = a1 * (g + 1.0);
    let a2p = a2 * (g + 1.0);
    let c1p = (a1p * a1p + b1 * b1).sqrt();
    let c2p = (a2p * a2p + b2 * b2).sqrt();
    let h1p = hue_deg(b1, a1p);
    let h2p = hue_deg(b2, a2p);

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let chroma_zero = c1p.val() * c2p.val() == 0.0;
    let dh_raw = h2p - h1p;
    let dhp = if chroma_zero {
        R::cst(0.0)
    } else if dh_raw.val().abs() <= 180.0 {
        dh_raw
    } else if dh_raw.val() > 180.0 {
        dh_raw - 360.0
    } else {
        dh_raw + 360.0
    };
    let dhh = (c1p * c2p).sqrt() * sin_deg(dhp * 0.5) * 2.0;

    let lbar = (l1 + l2) * 0.5;
    let cbarp = (c1p + c2p) * 0.5;
    let hsum = h1p + h2p;
    let hbar = if chroma_zero {
        hsum
    } else if (h1p - h2p).val().abs() <= 180.0 {
        hsum * 0.5
    } else if hsum.val() < 360.0 {
        (hsum + 360.0) * 0.5
    } else {
        (hsum - 360.0) * 0.5
    };

    let t = -cos_deg(hbar - 30.0) * 0.17 + 1.0 + cos_deg(hbar * 2.0) * 0.24 + cos_deg(hbar * 3.0 + 6.0) * 0.32
        - cos_deg(hbar * 4.0 - 63.0) * 0.20;
    let z = (hbar - 275.0) / 25.0;
    let dtheta = (-(z * z)).exp() * 30.0;
    let cbarp7 = cbarp.powf(7.0);
    let rc = (cbarp7 / (cbarp7 + POW25_7)).sqrt() * 2.0;
    let lm = (lbar - 50.0) * (lbar - 50.0);
    let sl = lm * 0.015 / (lm + 20.0).sqrt() + 1.0;
    let sc = cbarp * 0.045 + 1.0;
    let sh = cbarp * t * 0.015 + 1.0;
    let rt = -sin_deg(dtheta * 2.0) * rc;

    let tl = dl / sl;
    let tc = dc / sc;
    let th = dhh / sh;
    (tl * tl + tc * tc + th * th + rt * tc * th).sqrt()
}

/// Mean CIEDE2000 difference between two RGB images.
pub fn pcl_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.ensure_channels(3, "pcl_loss")?;
    a.ensure_same_shape(b)?;
    let mut sum = 0.0;
    for (pa, pb) in a.data().chunks_exact(3).zip(b.data().chunks_exact(3)) {
        let la = srgb_to_lab([pa[0].as_f64(), pa[1].as_f64(), pa[2].as_f64()]);
        let lb = srgb_to_lab([pb[0].as_f64(), pb[1].as_f64(), pb[2].as_f64()]);
        sum += ciede2000(la, lb);
    }
    Ok(sum / a.pixels() as f64)
}

/// [`pcl_loss`] and its gradient with respect to `pred`.
pub fn pcl_loss_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<f64>)> {
    pred.ensure_channels(3, "pcl_loss")?;
    pred.ensure_same_shape(target)?;
    let n = pred.pixels() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (pa, pb) in pred.data().chunks_exact(3).zip(target.data().chunks_exact(3)) {
        let rgb: [Dual3; 3] = std::array::from_fn(|i| Dual3::seed(pa[i].as_f64(), i));
        let lb = srgb_to_lab([pb[0].as_f64(), pb[1].as_f64(), pb[2].as_f64()]).map(Dual3::cst);
        let de = ciede2000(srgb_to_lab(rgb), lb);
        sum += de.v;
        grad.extend(de.d.map(|g| g / n));
    }
    let grad = Tensor::from_vec(pred.height(), pred.width(), 3, grad)?;
    Ok((sum / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn white_black_and_gray() {
        let w = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-3 && w[1].abs() < 1e-3 && w[2].abs() < 1e-3, "{w:?}");
        let k = srgb_to_lab([0.0, 0.0, 0.0]);
        assert_eq!(k[0], 0.0);
        // mid-gray: Y = ((0.5 + 0.055) / 1.055)^2.4, L = 116 Y^(1/3) - 16
        let y: f64 = ((0.5 + 0.055) / 1.055f64).powf(2.4);
        let expect = 116.0 * y.cbrt() - 16.0;
        let g = srgb_to_lab([0.5, 0.5, 0.5]);
        assert!((g[0] - expect).abs() < 1e-4 && (g[0] - 53.39).abs() < 0.01);
        assert!(g[1].abs() < 1e-2 && g[2].abs() < 1e-2);
    }

    #[test]
    fn identical_colors_have_zero_difference() {
        let p = [50.0, 20.0, -30.0];
        assert_eq!(ciede2000(p, p), 0.0);
    }

    #[test]
    fn constant_images_give_single_pair_difference() {
        let a = Tensor::filled(3, 4, 3, 0.2f64);
        let mut b = Tensor::filled(3, 4, 3, 0.0f64);
        for px in b.data_mut().chunks_exact_mut(3) {
            px.copy_from_slice(&[0.7, 0.1, 0.4]);
        }
        let direct = ciede2000(srgb_to_lab([0.2, 0.2, 0.2]), srgb_to_lab([0.7, 0.1, 0.4]));
        assert!((pcl_loss(&a, &b).unwrap() - direct).abs() < 1e-12);
        assert_eq!(pcl_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn dual_gradient_matches_finite_differences() {
        let pred = Tensor::from_vec(1, 3, 3, vec![0.3, 0.6, 0.2, 0.01, 0.02, 0.9, 0.5, 0.52, 0.48]).unwrap();
        let target = Tensor::from_vec(1, 3, 3, vec![0.35, 0.5, 0.25, 0.05, 0.0, 0.8, 0.45, 0.5, 0.5]).unwrap();
        let (v, g) = pcl_loss_grad(&pred, &target).unwrap();
        assert!((v - pcl_loss(&pred, &target).unwrap()).abs() < 1e-12);
        let eps = 1e-6;
        for i in 0..pred.len() {
            let mut p = pred.clone();
            p.data_mut()[i] += eps;
            let mut m = pred.clone();
            m.data_mut()[i] -= eps;
            let fd = (pcl_loss(&p, &target).unwrap() - pcl_loss(&m, &target).unwrap()) / (2.0 * eps);
            assert!((fd - g.data()[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn gradient_at_identity_is_finite() {
        let a = Tensor::filled(2, 2, 3, 0.5f64);
        let (v, g) = pcl_loss_grad(&a, &a).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.all_finite());
    }

    proptest! {
        #[test]
        fn ciede2000_is_symmetric(l1 in 0.0f64..100.0, a1 in -100.0f64..100.0, b1 in -100.0f64..100.0,
                                  l2 in 0.0f64..100.0, a2 in -100.0f64..100.0, b2 in -100.0f64..100.0) {
            let d1 = ciede2000([l1, a1, b1], [l2, a2, b2]);
            let d2 = ciede2000([l2, a2, b2], [l1, a1, b1]);
            prop_assert!(d1 >= 0.0);
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn lightness_in_range(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let lab = srgb_to_lab([r, g, b]);
            prop_assert!(lab[0] >= -1e-9 && lab[0] <= 100.0 + 1e-3);
        }
    }
}
