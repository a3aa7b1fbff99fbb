//! Adversarial training of the two-stage generator.
//!
//! A step first updates the discriminator on (reference, stage-I output)
//! pairs, then the generator on the summed stage objectives, each with its
//! own Adam state. Per-sample gradients are averaged over the batch.

mod adam;
mod checkpoint;
mod run;

pub use adam::{adam_step, clip_grad_norm, grad_norm, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use run::{
    evaluate_generator, infer, load_samples, planned_steps, predict_tiled, run_ablation, shuffled_order, train_loop,
    train_samples, TrainOutcome, FINAL_CHECKPOINT, LOG_FILE,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, Conditioning, Schedule, TrainConfig};
use crate::datagen::PatchTriplet;
use crate::error::{Error, Result};
use crate::imgio::{normalize16, normalize8};
use crate::losses::{adv_d_loss_grad, stage1_total_grad, stage2_total_grad, Stage1Terms, Stage2Terms};
use crate::model::{
    discriminator_backward, discriminator_forward_cached, generator_backward, generator_forward_cached,
    init_params, init_stage, stage_backward, stage_forward, stage_forward_cached, DiscriminatorParams,
    GeneratorCache, GeneratorParams, ParamSet, StageCache, StageParams,
};
use crate::nn::Conv2d;
use crate::tensor::{Scalar, Tensor};

/// The trainable generator: the full two-stage network or, for ablations, a
/// single stage mapping LDR straight to the 16-bit target.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator<T = f32> {
    TwoStage(GeneratorParams<T>),
    Single(StageParams<T>),
}

impl<T: Scalar> ParamSet<T> for Generator<T> {
    fn convs(&self) -> Vec<(String, &Conv2d<T>)> {
        match self {
            Generator::TwoStage(g) => g.convs(),
            Generator::Single(s) => s.convs(),
        }
    }

    fn convs_mut(&mut self) -> Vec<(String, &mut Conv2d<T>)> {
        match self {
            Generator::TwoStage(g) => g.convs_mut(),
            Generator::Single(s) => s.convs_mut(),
        }
    }
}

impl<T: Scalar> Generator<T> {
    /// Fresh weights for the configured model and ablation mode.
    pub fn init(cfg: &TrainConfig) -> Result<(Self, DiscriminatorParams<T>)> {
        let (gen, disc) = init_params::<T>(&cfg.model, cfg.seed)?;
        let gen = match cfg.ablation {
            Ablation::None => Generator::TwoStage(gen),
            Ablation::Stage1Only => Generator::Single(init_stage(&cfg.model.stage1, cfg.model.topology, cfg.seed)?),
            Ablation::Stage2Only => Generator::Single(init_stage(&cfg.model.stage2, cfg.model.topology, cfg.seed)?),
        };
        Ok((gen, disc))
    }

    /// All-zero container with the configured layout (checkpoint loading).
    pub fn zeros(cfg: &TrainConfig) -> Self {
        match cfg.ablation {
            Ablation::None => Generator::TwoStage(GeneratorParams::zeros(&cfg.model)),
            Ablation::Stage1Only => Generator::Single(StageParams::zeros(&cfg.model.stage1, cfg.model.topology)),
            Ablation::Stage2Only => Generator::Single(StageParams::zeros(&cfg.model.stage2, cfg.model.topology)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Generator::TwoStage(_) => "two_stage",
            Generator::Single(_) => "single_stage",
        }
    }

    /// Normalized LDR in, normalized HDR out.
    pub fn predict(&self, ldr_norm: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Generator::TwoStage(g) => {
                let ihp = stage_forward(ldr_norm, &g.stage1)?;
                stage_forward(&ihp, &g.stage2)
            }
            Generator::Single(s) => stage_forward(ldr_norm, s),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        match self {
            Generator::TwoStage(g) => Generator::TwoStage(g.cast()),
            Generator::Single(s) => Generator::Single(s.cast()),
        }
    }
}

/// One training sample in the normalized domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T: Scalar = f32> {
    pub id: String,
    pub ldr: Tensor<T>,
    pub ref8: Tensor<T>,
    pub ref16: Tensor<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn from_triplet(t: &PatchTriplet) -> Self {
        Sample {
            id: t.source_id.clone(),
            ldr: normalize8(&t.ldr),
            ref8: normalize8(&t.ref8),
            ref16: normalize16(&t.ref16),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            id: self.id.clone(),
            ldr: self.ldr.cast(),
            ref8: self.ref8.cast(),
            ref16: self.ref16.cast(),
        }
    }

    fn condition(&self, c: Conditioning) -> &Tensor<T> {
        match c {
            Conditioning::Reference => &self.ref8,
            Conditioning::Ldr => &self.ldr,
        }
    }
}

/// Which objectives drive a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Both stage objectives, gradients through both stages.
    Joint,
    /// Stage-I objective only; stage-II untouched.
    Stage1,
    /// Stage-II objective only, on a frozen stage-I output.
    Stage2,
    /// Ablation: one stage supervised with the stage-II objective.
    Single,
}

impl Phase {
    /// Phase of step `step` (0-based) in a run of `planned` steps.
    pub fn for_step(cfg: &TrainConfig, step: usize, planned: usize) -> Phase {
        if cfg.ablation != Ablation::None {
            return Phase::Single;
        }
        match cfg.schedule {
            Schedule::Joint => Phase::Joint,
            Schedule::Sequential if step < planned.div_ceil(2) => Phase::Stage1,
            Schedule::Sequential => Phase::Stage2,
        }
    }

    fn uses_discriminator(self) -> bool {
        matches!(self, Phase::Joint | Phase::Stage1)
    }

    /// Parameter arrays the generator update must leave alone.
    fn frozen(self, name: &str) -> bool {
        match self {
            Phase::Stage1 => name.starts_with("stage2."),
            Phase::Stage2 => name.starts_with("stage1."),
            Phase::Joint | Phase::Single => false,
        }
    }
}

/// Generator objective of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenLoss {
    pub stage1: Option<Stage1Terms>,
    pub stage2: Option<Stage2Terms>,
    pub total: f64,
}

enum ForwardCache<T> {
    Full(GeneratorCache<T>),
    Stage1(StageCache<T>),
    Stage2(StageCache<T>),
    Single(StageCache<T>),
}

struct Forward<T> {
    ihp: Option<Tensor<T>>,
    ih: Option<Tensor<T>>,
    cache: ForwardCache<T>,
}

fn forward<T: Scalar>(gen: &Generator<T>, ldr: &Tensor<T>, phase: Phase) -> Result<Forward<T>> {
    match (gen, phase) {
        (Generator::TwoStage(g), Phase::Joint) => {
            let (ihp, ih, c) = generator_forward_cached(ldr, g)?;
            Ok(Forward {
                ihp: Some(ihp),
                ih: Some(ih),
                cache: ForwardCache::Full(c),
            })
        }
        (Generator::TwoStage(g), Phase::Stage1) => {
            let (ihp, c) = stage_forward_cached(ldr, &g.stage1)?;
            Ok(Forward {
                ihp: Some(ihp),
                ih: None,
                cache: ForwardCache::Stage1(c),
            })
        }
        (Generator::TwoStage(g), Phase::Stage2) => {
            let ihp = stage_forward(ldr, &g.stage1)?;
            let (ih, c) = stage_forward_cached(&ihp, &g.stage2)?;
            Ok(Forward {
                ihp: Some(ihp),
                ih: Some(ih),
                cache: ForwardCache::Stage2(c),
            })
        }
        (Generator::Single(s), Phase::Single) => {
            let (ih, c) = stage_forward_cached(ldr, s)?;
            Ok(Forward {
                ihp: None,
                ih: Some(ih),
                cache: ForwardCache::Single(c),
            })
        }
        (g, p) => Err(Error::Training {
            component: "trainer".into(),
            message: format!("phase {p:?} does not apply to a {} generator", g.kind()),
        }),
    }
}

fn to_t<T: Scalar>(t: &Tensor<f64>) -> Tensor<T> {
    t.cast()
}

/// Evaluates the generator objective for one sample and, when `grad` is
/// given, accumulates `scale ×` its parameter gradient there.
///
/// Without a discriminator the adversarial term sees a constant score of 1.
fn objective_from<T: Scalar>(
    gen: &Generator<T>,
    fwd: &Forward<T>,
    disc: Option<&DiscriminatorParams<T>>,
    sample: &Sample<T>,
    cfg: &TrainConfig,
    grad: Option<(&mut Generator<T>, f64)>,
) -> Result<GenLoss> {
    let w = &cfg.weights;
    let mut loss = GenLoss::default();
    let mut d_ihp: Option<Tensor<f64>> = None;
    let mut d_ih: Option<Tensor<f64>> = None;

    let stage1_active = matches!(fwd.cache, ForwardCache::Full(_) | ForwardCache::Stage1(_));
    if stage1_active {
        let ihp = fwd.ihp.as_ref().expect("stage-I output");
        let cond = sample.condition(cfg.model.conditioning);
        let (scores, dcache) = match disc {
            Some(d) => {
                let (s, c) = discriminator_forward_cached(ihp, cond, d)?;
                (s, Some(c))
            }
            None => (Tensor::filled(1, 1, 1, T::one()), None),
        };
        let (terms, g_img, g_scores) = stage1_total_grad(ihp, &sample.ref8, &scores, w, &cfg.msssim)?;
        let mut g = g_img;
        if let (Some(d), Some(c)) = (disc, dcache.as_ref()) {
            let through = discriminator_backward(c, d, &to_t(&g_scores), None);
            for (a, b) in g.data_mut().iter_mut().zip(through.data()) {
                *a += b.as_f64();
            }
        }
        loss.stage1 = Some(terms);
        loss.total += terms.total;
        d_ihp = Some(g);
    }
    if let Some(ih) = fwd.ih.as_ref() {
        let (terms, g) = stage2_total_grad(ih, &sample.ref16, w)?;
        loss.stage2 = Some(terms);
        loss.total += terms.total;
        d_ih = Some(g);
    }
    if !loss.total.is_finite() {
        return Err(Error::Training {
            component: "generator loss".into(),
            message: format!("non-finite objective {loss:?} on sample {}", sample.id),
        });
    }

    let Some((grad, scale)) = grad else {
        return Ok(loss);
    };
    let scaled = |t: Option<Tensor<f64>>| -> Option<Tensor<T>> { t.map(|t| t.map(|v| v * scale).cast()) };
    let (d_ihp, d_ih) = (scaled(d_ihp), scaled(d_ih));
    match (&fwd.cache, gen, grad) {
        (ForwardCache::Full(c), Generator::TwoStage(p), Generator::TwoStage(gr)) => {
            generator_backward(c, p, &d_ihp.unwrap(), &d_ih.unwrap(), gr, false);
        }
        (ForwardCache::Stage1(c), Generator::TwoStage(p), Generator::TwoStage(gr)) => {
            stage_backward(c, &p.stage1, &d_ihp.unwrap(), &mut gr.stage1);
        }
        (ForwardCache::Stage2(c), Generator::TwoStage(p), Generator::TwoStage(gr)) => {
            stage_backward(c, &p.stage2, &d_ih.unwrap(), &mut gr.stage2);
        }
        (ForwardCache::Single(c), Generator::Single(p), Generator::Single(gr)) => {
            stage_backward(c, p, &d_ih.unwrap(), gr);
        }
        _ => unreachable!("gradient container matches the generator"),
    }
    Ok(loss)
}

/// Generator objective for one sample; with `grad`, also accumulates the
/// parameter gradient scaled by `scale`.
pub fn generator_objective<T: Scalar>(
    gen: &Generator<T>,
    disc: Option<&DiscriminatorParams<T>>,
    sample: &Sample<T>,
    cfg: &TrainConfig,
    phase: Phase,
    grad: Option<(&mut Generator<T>, f64)>,
) -> Result<GenLoss> {
    let fwd = forward(gen, &sample.ldr, phase)?;
    objective_from(gen, &fwd, disc, sample, cfg, grad)
}

/// Discriminator loss of one (real, fake) pair, accumulating `scale ×` its
/// gradient into `grad` when given.
pub fn discriminator_objective<T: Scalar>(
    disc: &DiscriminatorParams<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    condition: &Tensor<T>,
    grad: Option<(&mut DiscriminatorParams<T>, f64)>,
) -> Result<f64> {
    let (rs, rc) = discriminator_forward_cached(real, condition, disc)?;
    let (fs, fc) = discriminator_forward_cached(fake, condition, disc)?;
    let (loss, dr, df) = adv_d_loss_grad(&rs, &fs)?;
    if !loss.is_finite() {
        return Err(Error::Training {
            component: "discriminator loss".into(),
            message: format!("non-finite value {loss}"),
        });
    }
    if let Some((g, scale)) = grad {
        discriminator_backward(&rc, disc, &dr.map(|v| v * scale).cast(), Some(g));
        discriminator_backward(&fc, disc, &df.map(|v| v * scale).cast(), Some(g));
    }
    Ok(loss)
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub gen: Generator<f32>,
    pub disc: DiscriminatorParams<f32>,
    pub adam_g: AdamState<f32>,
    pub adam_d: AdamState<f32>,
    /// Completed steps.
    pub step: usize,
    /// Step budget of the run (fixes the sequential phase boundary).
    pub planned_steps: usize,
    pub history: Vec<StepRecord>,
}

/// Records kept in the checkpoint's loss tail.
pub const HISTORY_TAIL: usize = 100;

impl TrainState {
    pub fn new(cfg: &TrainConfig, planned_steps: usize) -> Result<Self> {
        cfg.validate()?;
        let (gen, disc) = Generator::init(cfg)?;
        Ok(TrainState {
            adam_g: AdamState::new(&gen),
            adam_d: AdamState::new(&disc),
            gen,
            disc,
            step: 0,
            planned_steps,
            history: Vec::new(),
        })
    }

    pub fn phase(&self, cfg: &TrainConfig) -> Phase {
        Phase::for_step(cfg, self.step, self.planned_steps)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub batch: usize,
    pub d_loss: Option<f64>,
    pub stage1: Option<Stage1Terms>,
    pub stage2: Option<Stage2Terms>,
    pub total: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

fn mean_terms1(v: &[Stage1Terms]) -> Stage1Terms {
    let n = v.len() as f64;
    Stage1Terms {
        l1: v.iter().map(|t| t.l1).sum::<f64>() / n,
        ssim: v.iter().map(|t| t.ssim).sum::<f64>() / n,
        adv: v.iter().map(|t| t.adv).sum::<f64>() / n,
        total: v.iter().map(|t| t.total).sum::<f64>() / n,
    }
}

fn mean_terms2(v: &[Stage2Terms]) -> Stage2Terms {
    let n = v.len() as f64;
    Stage2Terms {
        l1: v.iter().map(|t| t.l1).sum::<f64>() / n,
        pcl: v.iter().map(|t| t.pcl).sum::<f64>() / n,
        total: v.iter().map(|t| t.total).sum::<f64>() / n,
    }
}

/// One optimization step on `batch`: a discriminator update (when the phase
/// involves stage-I and updates are enabled) followed by a generator update.
pub fn train_step(batch: &[Sample<f32>], state: &mut TrainState, cfg: &TrainConfig, epoch: usize) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let start = Instant::now();
    let phase = state.phase(cfg);
    let hp = AdamHyper {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    };
    let scale = 1.0 / batch.len() as f64;
    let forwards = batch
        .iter()
        .map(|s| forward(&state.gen, &s.ldr, phase))
        .collect::<Result<Vec<_>>>()?;

    let mut d_loss = None;
    if phase.uses_discriminator() && cfg.discriminator_updates {
        let mut dgrad = state.disc.zeros_like();
        let mut sum = 0.0;
        for (s, f) in batch.iter().zip(&forwards) {
            let fake = f.ihp.as_ref().expect("stage-I output");
            sum += discriminator_objective(
                &state.disc,
                &s.ref8,
                fake,
                s.condition(cfg.model.conditioning),
                Some((&mut dgrad, scale)),
            )?;
        }
        if let Some(c) = cfg.grad_clip {
            clip_grad_norm(&mut dgrad, c);
        }
        adam_step(&mut state.disc, &dgrad, &mut state.adam_d, &hp, |_| false)?;
        d_loss = Some(sum * scale);
    }

    let disc = phase.uses_discriminator().then_some(&state.disc);
    let mut ggrad = state.gen.zeros_like();
    let mut losses = Vec::with_capacity(batch.len());
    for (s, f) in batch.iter().zip(&forwards) {
        losses.push(objective_from(&state.gen, f, disc, s, cfg, Some((&mut ggrad, scale)))?);
    }
    drop(forwards);
    let norm = match cfg.grad_clip {
        Some(c) => clip_grad_norm(&mut ggrad, c),
        None => grad_norm(&ggrad),
    };
    adam_step(&mut state.gen, &ggrad, &mut state.adam_g, &hp, |n| phase.frozen(n))?;

    let s1: Vec<Stage1Terms> = losses.iter().filter_map(|l| l.stage1).collect();
    let s2: Vec<Stage2Terms> = losses.iter().filter_map(|l| l.stage2).collect();
    let record = StepRecord {
        step: state.step,
        epoch,
        phase,
        batch: batch.len(),
        d_loss,
        stage1: (!s1.is_empty()).then(|| mean_terms1(&s1)),
        stage2: (!s2.is_empty()).then(|| mean_terms2(&s2)),
        total: losses.iter().map(|l| l.total).sum::<f64>() * scale,
        grad_norm: norm,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    state.step += 1;
    state.history.push(record.clone());
    if state.history.len() > HISTORY_TAIL {
        state.history.remove(0);
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MsSsimConfig;
    use crate::config::StageConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reduced network so the step-level tests stay fast.
    pub(crate) fn small_config() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        for s in [&mut cfg.model.stage1, &mut cfg.model.stage2] {
            *s = StageConfig::with_blocks(1);
            s.rdab.dense_layers = 2;
            s.rdab.growth = 8;
            s.rdab.base_channels = 8;
        }
        cfg.msssim = MsSsimConfig {
            levels: 2,
            ..MsSsimConfig::default()
        };
        cfg.patch_size = 16;
        cfg.batch_size = 2;
        cfg
    }

    pub(crate) fn random_sample(side: usize, seed: u64) -> Sample<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ref16 = Tensor::from_fn(side, side, 3, |_, _, _| rng.random_range(0.05f32..0.9));
        let ref8 = ref16.map(|v| (v * 1.1).min(1.0));
        let ldr = ref16.map(|v| v.powf(1.0 / 2.2));
        Sample {
            id: format!("s{seed}"),
            ldr,
            ref8,
            ref16,
        }
    }

    fn hash(p: &impl ParamSet<f32>) -> Vec<u32> {
        p.arrays().iter().flat_map(|(_, a)| a.iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn updates_are_separated() {
        let cfg = small_config();
        let mut state = TrainState::new(&cfg, 10).unwrap();
        let batch = vec![random_sample(16, 1), random_sample(16, 2)];
        let g0 = hash(&state.gen);
        let d0 = hash(&state.disc);
        // discriminator step alone
        let mut dgrad = state.disc.zeros_like();
        let fwd = forward(&state.gen, &batch[0].ldr, Phase::Joint).unwrap();
        discriminator_objective(&state.disc, &batch[0].ref8, fwd.ihp.as_ref().unwrap(), &batch[0].ref8, Some((&mut dgrad, 1.0)))
            .unwrap();
        let hp = AdamHyper {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        };
        adam_step(&mut state.disc, &dgrad, &mut state.adam_d, &hp, |_| false).unwrap();
        assert_eq!(hash(&state.gen), g0);
        assert_ne!(hash(&state.disc), d0);
        // generator step alone
        let d1 = hash(&state.disc);
        let mut ggrad = state.gen.zeros_like();
        generator_objective(&state.gen, Some(&state.disc), &batch[0], &cfg, Phase::Joint, Some((&mut ggrad, 1.0))).unwrap();
        adam_step(&mut state.gen, &ggrad, &mut state.adam_g, &hp, |_| false).unwrap();
        assert_eq!(hash(&state.disc), d1);
        assert_ne!(hash(&state.gen), g0);
    }

    #[test]
    fn stage2_supervision_reaches_stage1_when_joint() {
        let mut cfg = small_config();
        cfg.weights.w_r1 = 0.0;
        cfg.weights.w_ssim = 0.0;
        cfg.weights.w_adv = 0.0;
        let (gen, disc) = Generator::<f32>::init(&cfg).unwrap();
        let mut g = gen.zeros_like();
        generator_objective(&gen, Some(&disc), &random_sample(16, 3), &cfg, Phase::Joint, Some((&mut g, 1.0))).unwrap();
        let Generator::TwoStage(g) = g else { unreachable!() };
        assert!(grad_norm(&g.stage1) > 0.0);
    }

    #[test]
    fn sequential_phase_two_freezes_stage1() {
        let mut cfg = small_config();
        cfg.schedule = Schedule::Sequential;
        let mut state = TrainState::new(&cfg, 2).unwrap();
        let batch = vec![random_sample(16, 4)];
        train_step(&batch, &mut state, &cfg, 0).unwrap();
        let Generator::TwoStage(before) = state.gen.clone() else { unreachable!() };
        let rec = train_step(&batch, &mut state, &cfg, 0).unwrap();
        assert_eq!(rec.phase, Phase::Stage2);
        let Generator::TwoStage(after) = &state.gen else { unreachable!() };
        assert_eq!(hash(&before.stage1), hash(&after.stage1));
        assert_ne!(hash(&before.stage2), hash(&after.stage2));
    }

    #[test]
    fn sequential_phase_one_leaves_stage2() {
        let mut cfg = small_config();
        cfg.schedule = Schedule::Sequential;
        let mut state = TrainState::new(&cfg, 4).unwrap();
        let Generator::TwoStage(before) = state.gen.clone() else { unreachable!() };
        let rec = train_step(&[random_sample(16, 5)], &mut state, &cfg, 0).unwrap();
        assert_eq!(rec.phase, Phase::Stage1);
        assert!(rec.stage2.is_none());
        let Generator::TwoStage(after) = &state.gen else { unreachable!() };
        assert_eq!(hash(&before.stage2), hash(&after.stage2));
    }

    #[test]
    fn steps_are_deterministic() {
        let cfg = small_config();
        let batch = vec![random_sample(16, 6), random_sample(16, 7)];
        let run = || {
            let mut s = TrainState::new(&cfg, 3).unwrap();
            let r: Vec<f64> = (0..3).map(|_| train_step(&batch, &mut s, &cfg, 0).unwrap().total).collect();
            (r, hash(&s.gen), hash(&s.disc))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn ablation_generator_is_one_stage() {
        let mut cfg = small_config();
        cfg.ablation = Ablation::Stage1Only;
        let mut state = TrainState::new(&cfg, 1).unwrap();
        assert_eq!(state.gen.kind(), "single_stage");
        let rec = train_step(&[random_sample(16, 8)], &mut state, &cfg, 0).unwrap();
        assert_eq!(rec.phase, Phase::Single);
        assert!(rec.d_loss.is_none() && rec.stage1.is_none());
    }
}
