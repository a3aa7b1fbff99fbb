//! Convolution kernels with hand-written backward passes.
//!
//! Two execution paths exist:
//!
//! * 3×3 / stride 1 / padding 1 convolutions run on [`PaddedMap`] buffers. The
//!   input is stored with a one-pixel zero border, so every kernel tap is a
//!   constant offset into the flattened buffer and the convolution becomes
//!   nine GEMMs over the same row range. Outputs are computed for the border
//!   columns too and then discarded; that is cheaper than building an im2col
//!   matrix and keeps memory flat for full-frame inference.
//! * Arbitrary-stride convolutions (the discriminator) use im2col.
//!
//! Weights are laid out as `[ky][kx][cin][cout]`, so each tap is a contiguous
//! `cin×cout` row-major block and the whole kernel reshapes to a
//! `(k·k·cin)×cout` matrix matching the im2col column order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A 2-D convolution's learnable state.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T = f32> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        Conv2d {
            cin,
            cout,
            k,
            weight: vec![T::zero(); k * k * cin * cout],
            bias: vec![T::zero(); cout],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init<R: Rng>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        let mut conv = Self::zeros(cin, cout, k);
        let bound = INIT_GAIN / ((k * k * cin) as f64).sqrt();
        for w in conv.weight.iter_mut() {
            *w = T::from_f64_lossy(rng.random_range(-bound..bound));
        }
        conv
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    pub fn tap(&self, ky: usize, kx: usize) -> &[T] {
        let n = self.cin * self.cout;
        let o = (ky * self.k + kx) * n;
        &self.weight[o..o + n]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cin, self.cout, self.k)
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            cin: self.cin,
            cout: self.cout,
            k: self.k,
            weight: self.weight.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
            bias: self.bias.iter().map(|&v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

/// Scale of the fan-in uniform initializer (matches the common framework default).
pub const INIT_GAIN: f64 = 1.0;

/// Which branch arrangement an attention block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// `RDB(x) + SAB(x)`
    #[default]
    Parallel,
    /// `SAB(RDB(x))`
    Sequential,
}

/// Feature map with a one-pixel zero border: `(h+2)×(w+2)×c`.
#[derive(Clone, Debug)]
pub struct PaddedMap<T = f32> {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> PaddedMap<T> {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        PaddedMap {
            h,
            w,
            c,
            data: vec![T::zero(); (h + 2) * (w + 2) * c],
        }
    }

    /// Border-padded copy of `t` written into channels `[0, t.c)` of a buffer with
    /// `capacity` channels.
    pub fn from_tensor(t: &Tensor<T>, capacity: usize) -> Self {
        let mut p = Self::zeros(t.height(), t.width(), capacity);
        p.write_channels(t, 0);
        p
    }

    #[inline]
    fn pw(&self) -> usize {
        self.w + 2
    }

    /// First flat pixel index of the interior row range used by 3×3 taps.
    #[inline]
    fn q0(&self) -> usize {
        self.pw() + 1
    }

    /// Number of flattened pixels from the first to the last interior pixel.
    #[inline]
    fn span(&self) -> usize {
        (self.h - 1) * self.pw() + self.w
    }

    pub fn write_channels(&mut self, t: &Tensor<T>, c0: usize) {
        let (h, w, tc) = t.shape();
        debug_assert!(h == self.h && w == self.w && c0 + tc <= self.c);
        let pw = self.pw();
        let src = t.data();
        for y in 0..h {
            for x in 0..w {
                let d = ((y + 1) * pw + x + 1) * self.c + c0;
                let s = (y * w + x) * tc;
                self.data[d..d + tc].copy_from_slice(&src[s..s + tc]);
            }
        }
    }

    pub fn read_channels(&self, c0: usize, n: usize) -> Tensor<T> {
        let pw = self.pw();
        let mut out = Vec::with_capacity(self.h * self.w * n);
        for y in 0..self.h {
            for x in 0..self.w {
                let s = ((y + 1) * pw + x + 1) * self.c + c0;
                out.extend_from_slice(&self.data[s..s + n]);
            }
        }
        Tensor::from_vec(self.h, self.w, n, out).expect("interior shape")
    }

    #[inline]
    pub fn interior(&self, y: usize, x: usize) -> &[T] {
        let s = ((y + 1) * self.pw() + x + 1) * self.c;
        &self.data[s..s + self.c]
    }
}

/// Spread an `h×w×n` tensor over the flattened span of a padded layout, leaving
/// the border columns zero.
fn spread_over_span<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    let (h, w, n) = t.shape();
    let pw = w + 2;
    let span = (h - 1) * pw + w;
    let mut full = vec![T::zero(); span * n];
    let src = t.data();
    for y in 0..h {
        let d = y * pw * n;
        let s = y * w * n;
        full[d..d + w * n].copy_from_slice(&src[s..s + w * n]);
    }
    full
}

/// Gather the interior pixels of a span buffer back into an `h×w×n` tensor, adding `bias`.
fn gather_from_span<T: Scalar>(full: &[T], h: usize, w: usize, n: usize, bias: &[T]) -> Tensor<T> {
    let pw = w + 2;
    let mut out = Vec::with_capacity(h * w * n);
    for y in 0..h {
        for x in 0..w {
            let s = (y * pw + x) * n;
            out.extend(full[s..s + n].iter().zip(bias).map(|(&v, &b)| v + b));
        }
    }
    Tensor::from_vec(h, w, n, out).expect("span shape")
}

/// 3×3 stride-1 padding-1 convolution reading channels `[0, conv.cin)` of `src`.
/// Returns the pre-activation output (bias included).
pub fn conv3x3_forward<T: Scalar>(src: &PaddedMap<T>, conv: &Conv2d<T>) -> Tensor<T> {
    assert_eq!(conv.k, 3);
    assert!(conv.cin <= src.c);
    let (pw, q0, span, cs) = (src.pw() as isize, src.q0() as isize, src.span(), src.c);
    let mut full = vec![T::zero(); span * conv.cout];
    for ky in 0..3 {
        for kx in 0..3 {
            let start = q0 + (ky as isize - 1) * pw + (kx as isize - 1);
            let tap = conv.tap(ky, kx);
            let beta = if ky == 0 && kx == 0 { T::zero() } else { T::one() };
            // SAFETY: start ≥ 0 and start + span ≤ (h+2)(w+2) by construction of the padded layout.
            unsafe {
                T::gemm(
                    span,
                    conv.cin,
                    conv.cout,
                    T::one(),
                    src.data.as_ptr().offset(start * cs as isize),
                    cs as isize,
                    1,
                    tap.as_ptr(),
                    conv.cout as isize,
                    1,
                    beta,
                    full.as_mut_ptr(),
                    conv.cout as isize,
                    1,
                );
            }
        }
    }
    gather_from_span(&full, src.h, src.w, conv.cout, &conv.bias)
}

/// Backward of [`conv3x3_forward`]. `dout` is the gradient of the pre-activation.
/// Weight/bias gradients accumulate into `grad`; the input gradient accumulates
/// into channels `[0, conv.cin)` of `dsrc` when given.
pub fn conv3x3_backward<T: Scalar>(
    src: &PaddedMap<T>,
    conv: &Conv2d<T>,
    dout: &Tensor<T>,
    grad: &mut Conv2d<T>,
    dsrc: Option<&mut PaddedMap<T>>,
) {
    let (pw, q0, span, cs) = (src.pw() as isize, src.q0() as isize, src.span(), src.c);
    let dfull = spread_over_span(dout);
    accumulate_bias(dout, &mut grad.bias);
    let cout = conv.cout;
    for ky in 0..3 {
        for kx in 0..3 {
            let start = q0 + (ky as isize - 1) * pw + (kx as isize - 1);
            let n = conv.cin * cout;
            let o = (ky * 3 + kx) * n;
            // dW_tap += A_tapᵀ · dfull
            unsafe {
                T::gemm(
                    conv.cin,
                    span,
                    cout,
                    T::one(),
                    src.data.as_ptr().offset(start * cs as isize),
                    1,
                    cs as isize,
                    dfull.as_ptr(),
                    cout as isize,
                    1,
                    T::one(),
                    grad.weight[o..o + n].as_mut_ptr(),
                    cout as isize,
                    1,
                );
            }
        }
    }
    if let Some(dsrc) = dsrc {
        assert_eq!((dsrc.h, dsrc.w), (src.h, src.w));
        let dcs = dsrc.c as isize;
        for ky in 0..3 {
            for kx in 0..3 {
                let start = q0 + (ky as isize - 1) * pw + (kx as isize - 1);
                let tap = conv.tap(ky, kx);
                // dsrc[start..] += dfull · W_tapᵀ
                unsafe {
                    T::gemm(
                        span,
                        cout,
                        conv.cin,
                        T::one(),
                        dfull.as_ptr(),
                        cout as isize,
                        1,
                        tap.as_ptr(),
                        1,
                        cout as isize,
                        T::one(),
                        dsrc.data.as_mut_ptr().offset(start * dcs),
                        dcs,
                        1,
                    );
                }
            }
        }
    }
}

/// 1×1 convolution over the interior of a padded buffer (all `conv.cin` leading channels).
pub fn conv1x1_forward_padded<T: Scalar>(src: &PaddedMap<T>, conv: &Conv2d<T>) -> Tensor<T> {
    assert_eq!(conv.k, 1);
    let (q0, span, cs) = (src.q0(), src.span(), src.c);
    let mut full = vec![T::zero(); span * conv.cout];
    unsafe {
        T::gemm(
            span,
            conv.cin,
            conv.cout,
            T::one(),
            src.data.as_ptr().add(q0 * cs),
            cs as isize,
            1,
            conv.weight.as_ptr(),
            conv.cout as isize,
            1,
            T::zero(),
            full.as_mut_ptr(),
            conv.cout as isize,
            1,
        );
    }
    gather_from_span(&full, src.h, src.w, conv.cout, &conv.bias)
}

pub fn conv1x1_backward_padded<T: Scalar>(
    src: &PaddedMap<T>,
    conv: &Conv2d<T>,
    dout: &Tensor<T>,
    grad: &mut Conv2d<T>,
    dsrc: &mut PaddedMap<T>,
) {
    let (q0, span, cs) = (src.q0(), src.span(), src.c);
    let dfull = spread_over_span(dout);
    accumulate_bias(dout, &mut grad.bias);
    let cout = conv.cout;
    unsafe {
        T::gemm(
            conv.cin,
            span,
            cout,
            T::one(),
            src.data.as_ptr().add(q0 * cs),
            1,
            cs as isize,
            dfull.as_ptr(),
            cout as isize,
            1,
            T::one(),
            grad.weight.as_mut_ptr(),
            cout as isize,
            1,
        );
        T::gemm(
            span,
            cout,
            conv.cin,
            T::one(),
            dfull.as_ptr(),
            cout as isize,
            1,
            conv.weight.as_ptr(),
            1,
            cout as isize,
            T::one(),
            dsrc.data.as_mut_ptr().add(q0 * dsrc.c),
            dsrc.c as isize,
            1,
        );
    }
}

fn accumulate_bias<T: Scalar>(dout: &Tensor<T>, bias: &mut [T]) {
    let n = dout.channels();
    for px in dout.data().chunks_exact(n) {
        for (b, &g) in bias.iter_mut().zip(px) {
            *b = *b + g;
        }
    }
}

#[inline]
fn out_dim(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

fn im2col<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> (Vec<T>, usize, usize) {
    let (h, w, c) = x.shape();
    let (ho, wo) = (out_dim(h, k, stride, pad), out_dim(w, k, stride, pad));
    let row = k * k * c;
    let mut cols = vec![T::zero(); ho * wo * row];
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * row;
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let d = base + (ky * k + kx) * c;
                    cols[d..d + c].copy_from_slice(x.pixel(iy as usize, ix as usize));
                }
            }
        }
    }
    (cols, ho, wo)
}

/// General strided convolution with zero padding `k/2`, via im2col.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, conv: &Conv2d<T>, stride: usize) -> Result<Tensor<T>> {
    x.ensure_channels(conv.cin, "convolution")?;
    let pad = conv.k / 2;
    let (cols, ho, wo) = im2col(x, conv.k, stride, pad);
    let rows = ho * wo;
    let kk = conv.k * conv.k * conv.cin;
    let mut out = vec![T::zero(); rows * conv.cout];
    unsafe {
        T::gemm(
            rows,
            kk,
            conv.cout,
            T::one(),
            cols.as_ptr(),
            kk as isize,
            1,
            conv.weight.as_ptr(),
            conv.cout as isize,
            1,
            T::zero(),
            out.as_mut_ptr(),
            conv.cout as isize,
            1,
        );
    }
    for px in out.chunks_exact_mut(conv.cout) {
        for (v, &b) in px.iter_mut().zip(&conv.bias) {
            *v = *v + b;
        }
    }
    Tensor::from_vec(ho, wo, conv.cout, out)
}

/// Backward of [`conv_forward`]; returns the input gradient.
pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    conv: &Conv2d<T>,
    stride: usize,
    dout: &Tensor<T>,
    grad: &mut Conv2d<T>,
) -> Tensor<T> {
    let (h, w, c) = x.shape();
    let k = conv.k;
    let pad = k / 2;
    let (cols, ho, wo) = im2col(x, k, stride, pad);
    debug_assert_eq!((ho, wo, conv.cout), dout.shape());
    let rows = ho * wo;
    let kk = k * k * c;
    accumulate_bias(dout, &mut grad.bias);
    let mut dcols = vec![T::zero(); rows * kk];
    unsafe {
        T::gemm(
            kk,
            rows,
            conv.cout,
            T::one(),
            cols.as_ptr(),
            1,
            kk as isize,
            dout.data().as_ptr(),
            conv.cout as isize,
            1,
            T::one(),
            grad.weight.as_mut_ptr(),
            conv.cout as isize,
            1,
        );
        T::gemm(
            rows,
            conv.cout,
            kk,
            T::one(),
            dout.data().as_ptr(),
            conv.cout as isize,
            1,
            conv.weight.as_ptr(),
            1,
            conv.cout as isize,
            T::zero(),
            dcols.as_mut_ptr(),
            kk as isize,
            1,
        );
    }
    let mut dx = Tensor::zeros(h, w, c);
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * kk;
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let s = base + (ky * k + kx) * c;
                    let d = (iy as usize * w + ix as usize) * c;
                    let dst = &mut dx.data_mut()[d..d + c];
                    for (a, &g) in dst.iter_mut().zip(&dcols[s..s + c]) {
                        *a = *a + g;
                    }
                }
            }
        }
    }
    dx
}

/// Direct same-padded convolution for tiny channel counts (spatial attention).
pub fn small_conv_forward<T: Scalar>(x: &Tensor<T>, conv: &Conv2d<T>) -> Result<Tensor<T>> {
    x.ensure_channels(conv.cin, "small convolution")?;
    let (h, w, cin) = x.shape();
    let (k, cout) = (conv.k, conv.cout);
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(h, w, cout);
    for y in 0..h {
        for xx in 0..w {
            for co in 0..cout {
                let mut acc = conv.bias[co];
                for ky in 0..k {
                    let iy = y as isize + ky as isize - r;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = xx as isize + kx as isize - r;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let px = x.pixel(iy as usize, ix as usize);
                        let tap = conv.tap(ky, kx);
                        for ci in 0..cin {
                            acc = acc + px[ci] * tap[ci * cout + co];
                        }
                    }
                }
                out.set(y, xx, co, acc);
            }
        }
    }
    Ok(out)
}

pub fn small_conv_backward<T: Scalar>(
    x: &Tensor<T>,
    conv: &Conv2d<T>,
    dout: &Tensor<T>,
    grad: &mut Conv2d<T>,
) -> Tensor<T> {
    let (h, w, cin) = x.shape();
    let (k, cout) = (conv.k, conv.cout);
    let r = (k / 2) as isize;
    let mut dx = Tensor::zeros(h, w, cin);
    accumulate_bias(dout, &mut grad.bias);
    for y in 0..h {
        for xx in 0..w {
            for co in 0..cout {
                let g = dout.get(y, xx, co);
                if g == T::zero() {
                    continue;
                }
                for ky in 0..k {
                    let iy = y as isize + ky as isize - r;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = xx as isize + kx as isize - r;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let o = (ky * k + kx) * cin * cout;
                        for ci in 0..cin {
                            let xi = x.get(iy as usize, ix as usize, ci);
                            let wi = o + ci * cout + co;
                            grad.weight[wi] = grad.weight[wi] + g * xi;
                            let cur = dx.get(iy as usize, ix as usize, ci);
                            dx.set(iy as usize, ix as usize, ci, cur + g * conv.weight[wi]);
                        }
                    }
                }
            }
        }
    }
    dx
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

#[inline]
pub fn swish<T: Scalar>(v: T) -> T {
    v * sigmoid(v)
}

#[inline]
pub fn swish_grad<T: Scalar>(v: T) -> T {
    let s = sigmoid(v);
    s + v * s * (T::one() - s)
}

pub(crate) fn check_min_size(h: usize, w: usize, min: usize, what: &str) -> Result<()> {
    if h < min || w < min {
        return Err(Error::Argument(format!(
            "{what} requires at least {min}x{min} input, got {h}x{w}"
        )));
    }
    Ok(())
}
