//! Residual dense block, spatial attention and their combination.

use rand::Rng;

use crate::config::RdabConfig;
use crate::error::Result;
use crate::nn::{
    conv1x1_backward_padded, conv1x1_forward_padded, conv3x3_backward, conv3x3_forward, relu,
    sigmoid, small_conv_backward, small_conv_forward, Conv2d, PaddedMap, Topology,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct RdbParams<T = f32> {
    /// Dense layer `i` maps `base + i·growth` channels to `growth`.
    pub layers: Vec<Conv2d<T>>,
    /// 1×1 fusion from the full concatenation back to `base` channels.
    pub fusion: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SabParams<T = f32> {
    /// `k×k` conv from the (mean, max) pooled pair to one attention logit.
    pub conv: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdabParams<T = f32> {
    pub rdb: RdbParams<T>,
    pub sab: SabParams<T>,
}

impl<T: Scalar> RdbParams<T> {
    pub fn zeros(cfg: &RdabConfig) -> Self {
        let layers = (0..cfg.dense_layers)
            .map(|i| Conv2d::zeros(cfg.base_channels + i * cfg.growth, cfg.growth, 3))
            .collect();
        RdbParams {
            layers,
            fusion: Conv2d::zeros(cfg.concat_channels(), cfg.base_channels, 1),
        }
    }

    pub fn init<R: Rng>(cfg: &RdabConfig, rng: &mut R) -> Self {
        let layers = (0..cfg.dense_layers)
            .map(|i| Conv2d::init(cfg.base_channels + i * cfg.growth, cfg.growth, 3, rng))
            .collect();
        RdbParams {
            layers,
            fusion: Conv2d::init(cfg.concat_channels(), cfg.base_channels, 1, rng),
        }
    }

    pub fn base_channels(&self) -> usize {
        self.fusion.cout
    }

    pub fn concat_channels(&self) -> usize {
        self.fusion.cin
    }
}

impl<T: Scalar> SabParams<T> {
    pub fn zeros(cfg: &RdabConfig) -> Self {
        SabParams {
            conv: Conv2d::zeros(2, 1, cfg.attention_kernel),
        }
    }

    pub fn init<R: Rng>(cfg: &RdabConfig, rng: &mut R) -> Self {
        SabParams {
            conv: Conv2d::init(2, 1, cfg.attention_kernel, rng),
        }
    }
}

impl<T: Scalar> RdabParams<T> {
    pub fn zeros(cfg: &RdabConfig) -> Self {
        RdabParams {
            rdb: RdbParams::zeros(cfg),
            sab: SabParams::zeros(cfg),
        }
    }

    pub fn init<R: Rng>(cfg: &RdabConfig, rng: &mut R) -> Self {
        RdabParams {
            rdb: RdbParams::init(cfg, rng),
            sab: SabParams::init(cfg, rng),
        }
    }
}

pub struct RdbCache<T> {
    /// Padded dense concatenation `[x, y_0, …, y_{L-1}]`.
    cat: PaddedMap<T>,
}

pub fn rdb_forward_cached<T: Scalar>(x: &Tensor<T>, p: &RdbParams<T>) -> Result<(Tensor<T>, RdbCache<T>)> {
    let base = p.base_channels();
    x.ensure_channels(base, "residual dense block")?;
    let mut cat = PaddedMap::from_tensor(x, p.concat_channels());
    let mut c0 = base;
    for layer in &p.layers {
        let y = conv3x3_forward(&cat, layer).map(relu);
        cat.write_channels(&y, c0);
        c0 += layer.cout;
    }
    let mut out = conv1x1_forward_padded(&cat, &p.fusion);
    out.add_assign(x)?;
    Ok((out, RdbCache { cat }))
}

pub fn rdb_forward<T: Scalar>(x: &Tensor<T>, p: &RdbParams<T>) -> Result<Tensor<T>> {
    rdb_forward_cached(x, p).map(|(out, _)| out)
}

pub fn rdb_backward<T: Scalar>(
    cache: &RdbCache<T>,
    p: &RdbParams<T>,
    dy: &Tensor<T>,
    grad: &mut RdbParams<T>,
) -> Tensor<T> {
    let cat = &cache.cat;
    let base = p.base_channels();
    let mut dcat = PaddedMap::zeros(cat.h, cat.w, cat.c);
    conv1x1_backward_padded(cat, &p.fusion, dy, &mut grad.fusion, &mut dcat);
    let mut c0 = p.concat_channels();
    for (layer, g) in p.layers.iter().zip(grad.layers.iter_mut()).rev() {
        c0 -= layer.cout;
        let n = layer.cout;
        // ReLU mask recovered from the stored activations.
        let mut dpre = Tensor::zeros(cat.h, cat.w, n);
        for y in 0..cat.h {
            for x in 0..cat.w {
                let act = &cat.interior(y, x)[c0..c0 + n];
                let dact = &dcat.interior(y, x)[c0..c0 + n];
                for ch in 0..n {
                    if act[ch] > T::zero() {
                        dpre.set(y, x, ch, dact[ch]);
                    }
                }
            }
        }
        conv3x3_backward(cat, layer, &dpre, g, Some(&mut dcat));
    }
    let mut dx = dcat.read_channels(0, base);
    dx.add_assign(dy).expect("same shape");
    dx
}

pub struct SabCache<T> {
    x: Tensor<T>,
    pooled: Tensor<T>,
    argmax: Vec<u32>,
    attention: Vec<T>,
}

/// Channel-wise (mean, max) pooling; returns the pooled map and the arg-max channel per pixel.
fn channel_pool<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (h, w, c) = x.shape();
    let inv = T::one() / T::from_f64_lossy(c as f64);
    let mut pooled = Vec::with_capacity(h * w * 2);
    let mut argmax = Vec::with_capacity(h * w);
    for px in x.data().chunks_exact(c) {
        let mut sum = T::zero();
        let mut best = px[0];
        let mut best_i = 0u32;
        for (i, &v) in px.iter().enumerate() {
            sum = sum + v;
            if v > best {
                best = v;
                best_i = i as u32;
            }
        }
        pooled.push(sum * inv);
        pooled.push(best);
        argmax.push(best_i);
    }
    (Tensor::from_vec(h, w, 2, pooled).expect("pool shape"), argmax)
}

fn attention_map<T: Scalar>(x: &Tensor<T>, p: &SabParams<T>) -> Result<(Vec<T>, Tensor<T>, Vec<u32>)> {
    let (pooled, argmax) = channel_pool(x);
    let logits = small_conv_forward(&pooled, &p.conv)?;
    Ok((logits.data().iter().map(|&v| sigmoid(v)).collect(), pooled, argmax))
}

pub fn sab_forward_cached<T: Scalar>(x: &Tensor<T>, p: &SabParams<T>) -> Result<(Tensor<T>, SabCache<T>)> {
    let (attention, pooled, argmax) = attention_map(x, p)?;
    let mut out = x.clone();
    scale_pixels(&mut out, &attention);
    Ok((
        out,
        SabCache {
            x: x.clone(),
            pooled,
            argmax,
            attention,
        },
    ))
}

pub fn sab_forward<T: Scalar>(x: &Tensor<T>, p: &SabParams<T>) -> Result<Tensor<T>> {
    let mut out = x.clone();
    let (attention, _, _) = attention_map(x, p)?;
    scale_pixels(&mut out, &attention);
    Ok(out)
}

fn scale_pixels<T: Scalar>(x: &mut Tensor<T>, attention: &[T]) {
    let c = x.channels();
    for (px, &a) in x.data_mut().chunks_exact_mut(c).zip(attention) {
        for v in px {
            *v = *v * a;
        }
    }
}

pub fn sab_backward<T: Scalar>(
    cache: &SabCache<T>,
    p: &SabParams<T>,
    dy: &Tensor<T>,
    grad: &mut SabParams<T>,
) -> Tensor<T> {
    let x = &cache.x;
    let (h, w, c) = x.shape();
    let mut dx = Tensor::zeros(h, w, c);
    let mut dlogit = Tensor::zeros(h, w, 1);
    for (i, ((px, dpx), dxp)) in x
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dx.data_mut().chunks_exact_mut(c))
        .enumerate()
    {
        let a = cache.attention[i];
        let mut da = T::zero();
        for ch in 0..c {
            da = da + dpx[ch] * px[ch];
            dxp[ch] = dpx[ch] * a;
        }
        dlogit.data_mut()[i] = da * a * (T::one() - a);
    }
    let dpooled = small_conv_backward(&cache.pooled, &p.conv, &dlogit, &mut grad.conv);
    let inv = T::one() / T::from_f64_lossy(c as f64);
    for (i, dxp) in dx.data_mut().chunks_exact_mut(c).enumerate() {
        let dmean = dpooled.data()[2 * i] * inv;
        for v in dxp.iter_mut() {
            *v = *v + dmean;
        }
        let j = cache.argmax[i] as usize;
        dxp[j] = dxp[j] + dpooled.data()[2 * i + 1];
    }
    dx
}

pub enum RdabCache<T> {
    Parallel(RdbCache<T>, SabCache<T>),
    Sequential(RdbCache<T>, SabCache<T>),
}

pub fn rdab_forward_cached<T: Scalar>(
    x: &Tensor<T>,
    p: &RdabParams<T>,
    topology: Topology,
) -> Result<(Tensor<T>, RdabCache<T>)> {
    match topology {
        Topology::Parallel => {
            let (mut r, rc) = rdb_forward_cached(x, &p.rdb)?;
            let (s, sc) = sab_forward_cached(x, &p.sab)?;
            r.add_assign(&s)?;
            Ok((r, RdabCache::Parallel(rc, sc)))
        }
        Topology::Sequential => {
            let (r, rc) = rdb_forward_cached(x, &p.rdb)?;
            let (s, sc) = sab_forward_cached(&r, &p.sab)?;
            Ok((s, RdabCache::Sequential(rc, sc)))
        }
    }
}

/// `X' = R(X) + S(X)` (or `S(R(X))` with the sequential topology).
/// Keeps at most one block-sized buffer besides the dense concatenation.
pub fn rdab_forward<T: Scalar>(x: &Tensor<T>, p: &RdabParams<T>, topology: Topology) -> Result<Tensor<T>> {
    let mut r = rdb_forward(x, &p.rdb)?;
    match topology {
        Topology::Parallel => {
            let (attention, _, _) = attention_map(x, &p.sab)?;
            let c = x.channels();
            for ((rp, xp), &a) in r.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)).zip(&attention) {
                for (rv, &xv) in rp.iter_mut().zip(xp) {
                    *rv = *rv + xv * a;
                }
            }
        }
        Topology::Sequential => {
            let (attention, _, _) = attention_map(&r, &p.sab)?;
            scale_pixels(&mut r, &attention);
        }
    }
    Ok(r)
}

pub fn rdab_backward<T: Scalar>(
    cache: &RdabCache<T>,
    p: &RdabParams<T>,
    dy: &Tensor<T>,
    grad: &mut RdabParams<T>,
) -> Tensor<T> {
    match cache {
        RdabCache::Parallel(rc, sc) => {
            let mut dx = rdb_backward(rc, &p.rdb, dy, &mut grad.rdb);
            let ds = sab_backward(sc, &p.sab, dy, &mut grad.sab);
            dx.add_assign(&ds).expect("same shape");
            dx
        }
        RdabCache::Sequential(rc, sc) => {
            let dr = sab_backward(sc, &p.sab, dy, &mut grad.sab);
            rdb_backward(rc, &p.rdb, &dr, &mut grad.rdb)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> RdabConfig {
        RdabConfig {
            dense_layers: 2,
            growth: 3,
            base_channels: 4,
            attention_kernel: 3,
        }
    }

    fn random(h: usize, w: usize, c: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_rdb_is_identity() {
        let cfg = RdabConfig::default();
        let p = RdbParams::<f64>::zeros(&cfg);
        for &(h, w) in &[(7, 7), (8, 8), (33, 5)] {
            let x = random(h, w, 64, 1);
            let y = rdb_forward(&x, &p).unwrap();
            assert_eq!(y.shape(), (h, w, 64));
            assert_eq!(y, x);
        }
    }

    #[test]
    fn rdb_channel_mismatch_is_shape_error() {
        let p = RdbParams::<f64>::zeros(&RdabConfig::default());
        let x = random(4, 4, 32, 1);
        assert!(matches!(rdb_forward(&x, &p), Err(Error::Shape(_))));
    }

    /// Single pixel, one dense layer of growth 1 and two base channels, worked by hand.
    #[test]
    fn rdb_matches_hand_arithmetic() {
        let cfg = RdabConfig {
            dense_layers: 1,
            growth: 1,
            base_channels: 2,
            attention_kernel: 3,
        };
        let mut p = RdbParams::<f64>::zeros(&cfg);
        // Only the centre tap sees real data on a 1×1 input.
        let centre = 4 * 2;
        p.layers[0].weight[centre] = 0.5;
        p.layers[0].weight[centre + 1] = -0.25;
        p.layers[0].bias[0] = 0.1;
        // fusion: 3 -> 2, weight[ci * 2 + co]
        p.fusion.weight = vec![1.0, 0.0, 0.0, 2.0, 3.0, -1.0];
        p.fusion.bias = vec![0.01, -0.02];
        let x = Tensor::from_vec(1, 1, 2, vec![0.8, 0.4]).unwrap();
        let y = rdb_forward(&x, &p).unwrap();
        let d = (0.5f64 * 0.8 - 0.25 * 0.4 + 0.1).max(0.0);
        let f0 = 0.8 * 1.0 + 0.4 * 0.0 + d * 3.0 + 0.01;
        let f1 = 0.8 * 0.0 + 0.4 * 2.0 + d * -1.0 - 0.02;
        assert!((y.data()[0] - (f0 + 0.8)).abs() < 1e-12);
        assert!((y.data()[1] - (f1 + 0.4)).abs() < 1e-12);
    }

    #[test]
    fn zero_sab_halves_input() {
        let p = SabParams::<f64>::zeros(&RdabConfig::default());
        let x = random(5, 6, 64, 2);
        let y = sab_forward(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn saturated_sab_passes_input() {
        let mut p = SabParams::<f64>::zeros(&RdabConfig::default());
        p.conv.bias[0] = 20.0;
        let x = random(5, 6, 64, 3);
        let y = sab_forward(&x, &p).unwrap();
        // 1 - sigmoid(20) ≈ 2.06e-9
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn sab_constant_input_gives_uniform_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = SabParams::<f64>::init(&RdabConfig::default(), &mut rng);
        let x = Tensor::filled(9, 9, 64, 0.3);
        let (_, cache) = sab_forward_cached(&x, &p).unwrap();
        for px in cache.pooled.data().chunks_exact(2) {
            assert!((px[0] - px[1]).abs() < 1e-15);
        }
        // interior pixels (no border influence) share one attention value
        let y = sab_forward(&x, &p).unwrap();
        let v = y.get(4, 4, 0);
        for yy in 3..6 {
            for xx in 3..6 {
                for ch in 0..64 {
                    assert!((y.get(yy, xx, ch) - v).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn zero_rdab_gives_one_and_a_half_x() {
        let p = RdabParams::<f64>::zeros(&RdabConfig::default());
        let x = random(17, 23, 64, 5);
        let y = rdab_forward(&x, &p, Topology::Parallel).unwrap();
        assert_eq!(y.shape(), (17, 23, 64));
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - 1.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn rdab_minus_attention_is_rdb() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small_cfg();
        let p = RdabParams::<f64>::init(&cfg, &mut rng);
        let x = random(6, 7, 4, 7);
        let full = rdab_forward(&x, &p, Topology::Parallel).unwrap();
        let s = sab_forward(&x, &p.sab).unwrap();
        let r = rdb_forward(&x, &p.rdb).unwrap();
        for i in 0..full.len() {
            assert!((full.data()[i] - s.data()[i] - r.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn cached_and_lean_forwards_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = RdabParams::<f64>::init(&small_cfg(), &mut rng);
        let x = random(5, 9, 4, 13);
        for topology in [Topology::Parallel, Topology::Sequential] {
            let (cached, _) = rdab_forward_cached(&x, &p, topology).unwrap();
            assert_eq!(cached.data(), rdab_forward(&x, &p, topology).unwrap().data(), "{topology:?}");
        }
    }

    #[test]
    fn attention_never_amplifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = SabParams::<f64>::init(&RdabConfig::default(), &mut rng);
        let x = random(8, 8, 64, 9);
        let y = sab_forward(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!(a.abs() <= b.abs());
        }
    }

    fn fd_check(topology: Topology) {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = small_cfg();
        let p = RdabParams::<f64>::init(&cfg, &mut rng);
        let x = random(5, 4, 4, 11);
        let (_, cache) = rdab_forward_cached(&x, &p, topology).unwrap();
        let probe = random(5, 4, 4, 12);
        let readout = |o: &Tensor<f64>| -> f64 { o.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum() };
        let mut grad = RdabParams::zeros(&cfg);
        let dx = rdab_backward(&cache, &p, &probe, &mut grad);
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (readout(&rdab_forward(&xp, &p, topology).unwrap())
                - readout(&rdab_forward(&xm, &p, topology).unwrap()))
                / (2.0 * eps);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "dx[{i}] {fd} vs {}", dx.data()[i]);
        }
        // attention conv and one dense layer
        for i in 0..p.sab.conv.weight.len() {
            let mut pp = p.clone();
            pp.sab.conv.weight[i] += eps;
            let mut pm = p.clone();
            pm.sab.conv.weight[i] -= eps;
            let fd = (readout(&rdab_forward(&x, &pp, topology).unwrap())
                - readout(&rdab_forward(&x, &pm, topology).unwrap()))
                / (2.0 * eps);
            assert!((fd - grad.sab.conv.weight[i]).abs() < 1e-6);
        }
        for i in (0..p.rdb.layers[1].weight.len()).step_by(7) {
            let mut pp = p.clone();
            pp.rdb.layers[1].weight[i] += eps;
            let mut pm = p.clone();
            pm.rdb.layers[1].weight[i] -= eps;
            let fd = (readout(&rdab_forward(&x, &pp, topology).unwrap())
                - readout(&rdab_forward(&x, &pm, topology).unwrap()))
                / (2.0 * eps);
            assert!((fd - grad.rdb.layers[1].weight[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn parallel_rdab_backward_matches_finite_differences() {
        fd_check(Topology::Parallel);
    }

    #[test]
    fn sequential_rdab_backward_matches_finite_differences() {
        fd_check(Topology::Sequential);
    }
}
