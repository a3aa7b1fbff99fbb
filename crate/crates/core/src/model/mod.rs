//! The two-stage generator and its conditional discriminator.
//!
//! Both stages share one layout: a 3×3 input conv (3→64, ReLU), a chain of
//! residual dense attention blocks and a 3×3 output conv (64→3) whose result
//! is clamped to `[0, 1]`. Stage-I maps the normalized LDR input to an
//! enhanced 8-bit-range image, stage-II maps that to the normalized 16-bit
//! output.
//!
//! Every forward function has a `*_cached` twin that also returns what the
//! matching backward function needs. Gradients accumulate into a parameter
//! container of the same type (see [`ParamSet::zeros_like`]).

mod blocks;
mod discriminator;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use blocks::{
    rdab_backward, rdab_forward, rdab_forward_cached, rdb_backward, rdb_forward, rdb_forward_cached,
    sab_backward, sab_forward, sab_forward_cached, RdabCache, RdabParams, RdbCache, RdbParams,
    SabCache, SabParams,
};
pub use discriminator::{
    discriminator_backward, discriminator_forward, discriminator_forward_cached, DiscriminatorCache,
    DiscriminatorParams, DISC_CHANNELS, DISC_MIN_SIDE,
};

use crate::config::{ModelConfig, StageConfig};
use crate::error::Result;
use crate::nn::{check_min_size, conv3x3_backward, conv3x3_forward, relu, Conv2d, PaddedMap, Topology};
use crate::tensor::{Scalar, Tensor};

/// Image channels entering and leaving every stage.
pub const IMAGE_CHANNELS: usize = 3;

/// A named collection of convolutions; the unit the optimizer and checkpoints work on.
pub trait ParamSet<T: Scalar>: Clone {
    fn convs(&self) -> Vec<(String, &Conv2d<T>)>;
    fn convs_mut(&mut self) -> Vec<(String, &mut Conv2d<T>)>;

    fn param_count(&self) -> usize {
        self.convs().iter().map(|(_, c)| c.param_count()).sum()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, c) in z.convs_mut() {
            c.weight.iter_mut().for_each(|v| *v = T::zero());
            c.bias.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Flat `(name, values)` list: `<conv>.weight`, `<conv>.bias` in a fixed order.
    fn arrays(&self) -> Vec<(String, &[T])> {
        self.convs()
            .into_iter()
            .flat_map(|(n, c)| {
                [
                    (format!("{n}.weight"), c.weight.as_slice()),
                    (format!("{n}.bias"), c.bias.as_slice()),
                ]
            })
            .collect()
    }

    fn arrays_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        self.convs_mut()
            .into_iter()
            .flat_map(|(n, c)| [(format!("{n}.weight"), &mut c.weight), (format!("{n}.bias"), &mut c.bias)])
            .collect()
    }

    fn all_finite(&self) -> bool {
        self.arrays().iter().all(|(_, a)| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams<T = f32> {
    pub topology: Topology,
    pub input: Conv2d<T>,
    pub blocks: Vec<RdabParams<T>>,
    pub output: Conv2d<T>,
}

impl<T: Scalar> StageParams<T> {
    pub fn zeros(cfg: &StageConfig, topology: Topology) -> Self {
        let base = cfg.rdab.base_channels;
        StageParams {
            topology,
            input: Conv2d::zeros(IMAGE_CHANNELS, base, 3),
            blocks: (0..cfg.n_rdab).map(|_| RdabParams::zeros(&cfg.rdab)).collect(),
            output: Conv2d::zeros(base, IMAGE_CHANNELS, 3),
        }
    }

    pub fn init(cfg: &StageConfig, topology: Topology, rng: &mut ChaCha8Rng) -> Self {
        let base = cfg.rdab.base_channels;
        let input = Conv2d::init(IMAGE_CHANNELS, base, 3, rng);
        let blocks = (0..cfg.n_rdab).map(|_| RdabParams::init(&cfg.rdab, rng)).collect();
        let output = Conv2d::init(base, IMAGE_CHANNELS, 3, rng);
        StageParams {
            topology,
            input,
            blocks,
            output,
        }
    }

    pub(crate) fn push_convs<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Conv2d<T>)>) {
        out.push((format!("{prefix}.input"), &self.input));
        for (i, b) in self.blocks.iter().enumerate() {
            for (j, l) in b.rdb.layers.iter().enumerate() {
                out.push((format!("{prefix}.rdab{i}.rdb.dense{j}"), l));
            }
            out.push((format!("{prefix}.rdab{i}.rdb.fusion"), &b.rdb.fusion));
            out.push((format!("{prefix}.rdab{i}.sab.conv"), &b.sab.conv));
        }
        out.push((format!("{prefix}.output"), &self.output));
    }

    pub(crate) fn push_convs_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Conv2d<T>)>) {
        out.push((format!("{prefix}.input"), &mut self.input));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (j, l) in b.rdb.layers.iter_mut().enumerate() {
                out.push((format!("{prefix}.rdab{i}.rdb.dense{j}"), l));
            }
            out.push((format!("{prefix}.rdab{i}.rdb.fusion"), &mut b.rdb.fusion));
            out.push((format!("{prefix}.rdab{i}.sab.conv"), &mut b.sab.conv));
        }
        out.push((format!("{prefix}.output"), &mut self.output));
    }

    pub fn cast<U: Scalar>(&self) -> StageParams<U> {
        let conv = |c: &Conv2d<T>| c.cast::<U>();
        StageParams {
            topology: self.topology,
            input: conv(&self.input),
            blocks: self
                .blocks
                .iter()
                .map(|b| RdabParams {
                    rdb: RdbParams {
                        layers: b.rdb.layers.iter().map(conv).collect(),
                        fusion: conv(&b.rdb.fusion),
                    },
                    sab: SabParams { conv: conv(&b.sab.conv) },
                })
                .collect(),
            output: conv(&self.output),
        }
    }
}

impl<T: Scalar> ParamSet<T> for StageParams<T> {
    fn convs(&self) -> Vec<(String, &Conv2d<T>)> {
        let mut v = Vec::new();
        self.push_convs("stage", &mut v);
        v
    }

    fn convs_mut(&mut self) -> Vec<(String, &mut Conv2d<T>)> {
        let mut v = Vec::new();
        self.push_convs_mut("stage", &mut v);
        v
    }
}

pub struct StageCache<T> {
    input: PaddedMap<T>,
    features: Tensor<T>,
    blocks: Vec<RdabCache<T>>,
    last: PaddedMap<T>,
    pre: Tensor<T>,
}

/// Minimum spatial side accepted by a generator stage.
pub const STAGE_MIN_SIDE: usize = 1;

pub fn stage_forward_cached<T: Scalar>(x: &Tensor<T>, p: &StageParams<T>) -> Result<(Tensor<T>, StageCache<T>)> {
    x.ensure_channels(IMAGE_CHANNELS, "generator stage")?;
    x.ensure_finite("generator stage input")?;
    check_min_size(x.height(), x.width(), STAGE_MIN_SIDE, "generator stage")?;
    let input = PaddedMap::from_tensor(x, IMAGE_CHANNELS);
    let features = conv3x3_forward(&input, &p.input).map(relu);
    let mut blocks = Vec::with_capacity(p.blocks.len());
    let mut cur = features.clone();
    for b in &p.blocks {
        let (next, cache) = rdab_forward_cached(&cur, b, p.topology)?;
        blocks.push(cache);
        cur = next;
    }
    let last = PaddedMap::from_tensor(&cur, cur.channels());
    drop(cur);
    let pre = conv3x3_forward(&last, &p.output);
    let out = pre.map(|v| v.max(T::zero()).min(T::one()));
    Ok((
        out,
        StageCache {
            input,
            features,
            blocks,
            last,
            pre,
        },
    ))
}

/// Forward pass that keeps no intermediate state (inference).
pub fn stage_forward<T: Scalar>(x: &Tensor<T>, p: &StageParams<T>) -> Result<Tensor<T>> {
    x.ensure_channels(IMAGE_CHANNELS, "generator stage")?;
    x.ensure_finite("generator stage input")?;
    check_min_size(x.height(), x.width(), STAGE_MIN_SIDE, "generator stage")?;
    let input = PaddedMap::from_tensor(x, IMAGE_CHANNELS);
    let mut cur = conv3x3_forward(&input, &p.input).map(relu);
    drop(input);
    for b in &p.blocks {
        cur = rdab_forward(&cur, b, p.topology)?;
    }
    let last = PaddedMap::from_tensor(&cur, cur.channels());
    drop(cur);
    let pre = conv3x3_forward(&last, &p.output);
    Ok(pre.map(|v| v.max(T::zero()).min(T::one())))
}

/// Accumulates parameter gradients into `grad`; returns the gradient w.r.t. the stage input.
pub fn stage_backward<T: Scalar>(
    cache: &StageCache<T>,
    p: &StageParams<T>,
    dout: &Tensor<T>,
    grad: &mut StageParams<T>,
) -> Tensor<T> {
    let dpre = cache
        .pre
        .zip_map(dout, |z, g| if z >= T::zero() && z <= T::one() { g } else { T::zero() })
        .expect("output shape");
    let mut dlast = PaddedMap::zeros(cache.last.h, cache.last.w, cache.last.c);
    conv3x3_backward(&cache.last, &p.output, &dpre, &mut grad.output, Some(&mut dlast));
    let mut d = dlast.read_channels(0, cache.last.c);
    for ((b, c), g) in p.blocks.iter().zip(&cache.blocks).zip(grad.blocks.iter_mut()).rev() {
        d = rdab_backward(c, b, &d, g);
    }
    let dfeat = cache
        .features
        .zip_map(&d, |a, g| if a > T::zero() { g } else { T::zero() })
        .expect("feature shape");
    let mut dinput = PaddedMap::zeros(cache.input.h, cache.input.w, IMAGE_CHANNELS);
    conv3x3_backward(&cache.input, &p.input, &dfeat, &mut grad.input, Some(&mut dinput));
    dinput.read_channels(0, IMAGE_CHANNELS)
}

/// Both generator stages.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T = f32> {
    pub stage1: StageParams<T>,
    pub stage2: StageParams<T>,
}

impl<T: Scalar> ParamSet<T> for GeneratorParams<T> {
    fn convs(&self) -> Vec<(String, &Conv2d<T>)> {
        let mut v = Vec::new();
        self.stage1.push_convs("stage1", &mut v);
        self.stage2.push_convs("stage2", &mut v);
        v
    }

    fn convs_mut(&mut self) -> Vec<(String, &mut Conv2d<T>)> {
        let mut v = Vec::new();
        self.stage1.push_convs_mut("stage1", &mut v);
        self.stage2.push_convs_mut("stage2", &mut v);
        v
    }
}

impl<T: Scalar> GeneratorParams<T> {
    /// Precision conversion (exact when widening).
    pub fn cast<U: Scalar>(&self) -> GeneratorParams<U> {
        GeneratorParams {
            stage1: self.stage1.cast(),
            stage2: self.stage2.cast(),
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        GeneratorParams {
            stage1: StageParams::zeros(&cfg.stage1, cfg.topology),
            stage2: StageParams::zeros(&cfg.stage2, cfg.topology),
        }
    }
}

pub struct GeneratorCache<T> {
    pub stage1: StageCache<T>,
    pub stage2: StageCache<T>,
}

/// Stage-I enhancement of a normalized LDR image.
pub fn stage1_forward<T: Scalar>(ldr_norm: &Tensor<T>, params: &GeneratorParams<T>) -> Result<Tensor<T>> {
    stage_forward(ldr_norm, &params.stage1)
}

/// Stage-II tone mapping / bit expansion of a stage-I output.
pub fn stage2_forward<T: Scalar>(ihp: &Tensor<T>, params: &GeneratorParams<T>) -> Result<Tensor<T>> {
    stage_forward(ihp, &params.stage2)
}

/// Returns `(I_H', I_H)`: the stage-I output and the final normalized HDR output.
pub fn generator_forward<T: Scalar>(
    ldr_norm: &Tensor<T>,
    params: &GeneratorParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let ihp = stage1_forward(ldr_norm, params)?;
    let ih = stage2_forward(&ihp, params)?;
    Ok((ihp, ih))
}

pub fn generator_forward_cached<T: Scalar>(
    ldr_norm: &Tensor<T>,
    params: &GeneratorParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, GeneratorCache<T>)> {
    let (ihp, c1) = stage_forward_cached(ldr_norm, &params.stage1)?;
    let (ih, c2) = stage_forward_cached(&ihp, &params.stage2)?;
    Ok((ihp, ih, GeneratorCache { stage1: c1, stage2: c2 }))
}

/// Backward through both stages. `d_ih` flows through stage-II into stage-I
/// unless `detach_stage1` is set, in which case stage-I only sees `d_ihp`.
/// Returns the gradient w.r.t. the LDR input.
pub fn generator_backward<T: Scalar>(
    cache: &GeneratorCache<T>,
    params: &GeneratorParams<T>,
    d_ihp: &Tensor<T>,
    d_ih: &Tensor<T>,
    grad: &mut GeneratorParams<T>,
    detach_stage1: bool,
) -> Tensor<T> {
    let through = stage_backward(&cache.stage2, &params.stage2, d_ih, &mut grad.stage2);
    let mut d1 = d_ihp.clone();
    if !detach_stage1 {
        d1.add_assign(&through).expect("stage shapes");
    }
    stage_backward(&cache.stage1, &params.stage1, &d1, &mut grad.stage1)
}

/// Parameter counts of a two-stage generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParamCount {
    pub stage1: usize,
    pub stage2: usize,
    pub total: usize,
}

pub fn count_params<T: Scalar>(params: &GeneratorParams<T>) -> ParamCount {
    let stage1 = params.stage1.param_count();
    let stage2 = params.stage2.param_count();
    ParamCount {
        stage1,
        stage2,
        total: stage1 + stage2,
    }
}

/// Parameter counts implied by a configuration, without allocating weights.
pub fn count_params_for(cfg: &ModelConfig) -> ParamCount {
    let stage = |s: &StageConfig| {
        let r = &s.rdab;
        let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
        let dense: usize = (0..r.dense_layers)
            .map(|i| conv(r.base_channels + i * r.growth, r.growth, 3))
            .sum();
        let block = dense
            + conv(r.concat_channels(), r.base_channels, 1)
            + conv(2, 1, r.attention_kernel);
        conv(IMAGE_CHANNELS, r.base_channels, 3) + s.n_rdab * block + conv(r.base_channels, IMAGE_CHANNELS, 3)
    };
    let (stage1, stage2) = (stage(&cfg.stage1), stage(&cfg.stage2));
    ParamCount {
        stage1,
        stage2,
        total: stage1 + stage2,
    }
}

/// Deterministic initialization of both networks. Generator and discriminator
/// draw from independent ChaCha streams of the same seed.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(GeneratorParams<T>, DiscriminatorParams<T>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let stage1 = StageParams::init(&cfg.stage1, cfg.topology, &mut rng);
    let stage2 = StageParams::init(&cfg.stage2, cfg.topology, &mut rng);
    let mut drng = ChaCha8Rng::seed_from_u64(seed);
    drng.set_stream(2);
    let disc = DiscriminatorParams::init(&mut drng);
    Ok((GeneratorParams { stage1, stage2 }, disc))
}

/// Initialize a single stage (ablation variants).
pub fn init_stage<T: Scalar>(cfg: &StageConfig, topology: Topology, seed: u64) -> Result<StageParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Ok(StageParams::init(cfg, topology, &mut rng))
}
