//! Epoch loop, logging, checkpoint cadence, inference and ablation runs.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::{train_step, Generator, Sample, StepRecord, TrainState};
use crate::config::{Ablation, MuPsnrConfig, TrainConfig};
use crate::datagen::{load_triplets, PatchTriplet};
use crate::error::{Error, Result};
use crate::imgio::{denormalize16, normalize8, HdrImage, LdrImage};
use crate::metrics::{evaluate_pair, AblationReport, MetricReport};
use crate::tensor::{Scalar, Tensor};

/// Per-step JSON lines written into the output directory.
pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Result of [`train_loop`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub final_checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

pub fn load_samples(dir: &Path) -> Result<Vec<Sample<f32>>> {
    let triplets = load_triplets(dir)?;
    if triplets.is_empty() {
        return Err(Error::Argument(format!("no training triplets under {}", dir.display())));
    }
    Ok(triplets.iter().map(Sample::from_triplet).collect())
}

/// Sample order of `epoch`, reproducible from the seed alone.
pub fn shuffled_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000 ^ epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn batches_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Step budget: `max_steps` if set, otherwise whole epochs.
pub fn planned_steps(cfg: &TrainConfig, n: usize) -> usize {
    cfg.max_steps.unwrap_or(cfg.epochs * batches_per_epoch(n, cfg.batch_size))
}

/// Runs training over `samples` from `state` until the planned step count or
/// until `stop` returns true. With `out_dir`, appends every step to the log
/// and writes periodic and final checkpoints.
pub fn train_samples(
    cfg: &TrainConfig,
    samples: &[Sample<f32>],
    state: &mut TrainState,
    out_dir: Option<&Path>,
    mut stop: impl FnMut(&StepRecord, &TrainState) -> bool,
) -> Result<Option<PathBuf>> {
    if samples.is_empty() {
        return Err(Error::Argument("no training samples".into()));
    }
    let per_epoch = batches_per_epoch(samples.len(), cfg.batch_size);
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, f))
        }
        None => None,
    };
    let mut order = Vec::new();
    let mut order_epoch = usize::MAX;
    while state.step < state.planned_steps {
        let epoch = state.step / per_epoch;
        let b = state.step % per_epoch;
        if epoch != order_epoch {
            order = shuffled_order(samples.len(), cfg.seed, epoch);
            order_epoch = epoch;
        }
        let end = ((b + 1) * cfg.batch_size).min(samples.len());
        let batch: Vec<Sample<f32>> = order[b * cfg.batch_size..end].iter().map(|&i| samples[i].clone()).collect();
        let record = train_step(&batch, state, cfg, epoch)?;
        if let Some((path, f)) = log.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("step_{:06}.ckpt", state.step)), cfg, state, epoch)?;
            }
        }
        if stop(&record, state) {
            break;
        }
    }
    match out_dir {
        Some(dir) => {
            let path = dir.join(FINAL_CHECKPOINT);
            let epoch = state.step.saturating_sub(1) / per_epoch;
            save_checkpoint(&path, cfg, state, epoch)?;
            Ok(Some(path))
        }
        None => Ok(None),
    }
}

/// Trains on the dataset under `dataset_dir`, writing the log and
/// checkpoints to `out_dir`. With `resume`, continues from that checkpoint
/// (its stored configuration must match `cfg` apart from `max_steps` and
/// `epochs`, which may extend the run).
pub fn train_loop(cfg: &TrainConfig, dataset_dir: &Path, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = load_samples(dataset_dir)?;
    let planned = planned_steps(cfg, samples.len());
    let mut state = match resume {
        Some(path) => {
            let (ck, _) = load_checkpoint(path)?;
            let mut stored = ck.config.clone();
            stored.max_steps = cfg.max_steps;
            stored.epochs = cfg.epochs;
            if &stored != cfg {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            let mut state = ck.state;
            state.planned_steps = planned;
            state
        }
        None => TrainState::new(cfg, planned)?,
    };
    let final_checkpoint = train_samples(cfg, &samples, &mut state, Some(out_dir), |_, _| false)?;
    Ok(TrainOutcome {
        state,
        final_checkpoint,
        log: Some(out_dir.join(LOG_FILE)),
    })
}

impl<T: Scalar> Generator<T> {
    /// Distance in pixels beyond which input cannot affect an output pixel.
    pub fn receptive_radius(&self) -> usize {
        let stage = |s: &crate::model::StageParams<T>| -> usize {
            let blocks: usize = s
                .blocks
                .iter()
                .map(|b| {
                    let dense = b.rdb.layers.iter().map(|c| c.k / 2).sum::<usize>() + b.rdb.fusion.k / 2;
                    let att = b.sab.conv.k / 2;
                    match s.topology {
                        crate::nn::Topology::Parallel => dense.max(att),
                        crate::nn::Topology::Sequential => dense + att,
                    }
                })
                .sum();
            s.input.k / 2 + blocks + s.output.k / 2
        };
        match self {
            Generator::TwoStage(g) => stage(&g.stage1) + stage(&g.stage2),
            Generator::Single(s) => stage(s),
        }
    }
}

/// Runs the generator over `x` in overlapping tiles. Each tile carries a halo
/// of the receptive radius, so the stitched result equals a whole-frame pass
/// up to floating-point summation order.
pub fn predict_tiled<T: Scalar>(gen: &Generator<T>, x: &Tensor<T>, tile: usize) -> Result<Tensor<T>> {
    if tile == 0 {
        return Err(Error::Argument("tile size must be positive".into()));
    }
    let (h, w, c) = x.shape();
    if h <= tile && w <= tile {
        return gen.predict(x);
    }
    let halo = gen.receptive_radius();
    let mut out = Tensor::zeros(h, w, c);
    for y0 in (0..h).step_by(tile) {
        for x0 in (0..w).step_by(tile) {
            let (th, tw) = (tile.min(h - y0), tile.min(w - x0));
            let (ey0, ex0) = (y0.saturating_sub(halo), x0.saturating_sub(halo));
            let (ey1, ex1) = ((y0 + th + halo).min(h), (x0 + tw + halo).min(w));
            let patch = x.crop(ey0, ex0, ey1 - ey0, ex1 - ex0)?;
            let pred = gen.predict(&patch)?;
            for yy in 0..th {
                for xx in 0..tw {
                    for ch in 0..c {
                        out.set(y0 + yy, x0 + xx, ch, pred.get(y0 - ey0 + yy, x0 - ex0 + xx, ch));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// 8-bit LDR in, 16-bit HDR out. `tile` bounds memory on large frames;
/// `None` runs the whole frame at once.
pub fn infer(gen: &Generator<f32>, ldr: &LdrImage, tile: Option<usize>) -> Result<HdrImage> {
    let x: Tensor<f32> = normalize8(ldr);
    let y = match tile {
        Some(t) => predict_tiled(gen, &x, t)?,
        None => gen.predict(&x)?,
    };
    denormalize16(&y)
}

/// Metrics of `gen` on `(ldr, ref16)` pairs taken from triplets.
pub fn evaluate_generator(gen: &Generator<f32>, pairs: &[PatchTriplet], mu: &MuPsnrConfig) -> Result<MetricReport> {
    let per_image = pairs
        .iter()
        .map(|t| evaluate_pair(&t.source_id, &infer(gen, &t.ldr, None)?, &t.ref16, mu))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_images(per_image)
}

/// Trains the stage-I-only, stage-II-only and two-stage variants under one
/// budget and reports each on `eval`.
pub fn run_ablation(
    cfg: &TrainConfig,
    train: &[Sample<f32>],
    eval: &[PatchTriplet],
    mu: &MuPsnrConfig,
) -> Result<AblationReport> {
    let variants = [Ablation::Stage1Only, Ablation::Stage2Only, Ablation::None];
    let mut rows = Vec::with_capacity(variants.len());
    for (label, ablation) in AblationReport::LABELS.iter().zip(variants) {
        let mut c = cfg.clone();
        c.ablation = ablation;
        c.validate()?;
        let mut state = TrainState::new(&c, planned_steps(&c, train.len()))?;
        train_samples(&c, train, &mut state, None, |_, _| false)?;
        rows.push((label.to_string(), evaluate_generator(&state.gen, eval, mu)?));
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{random_sample, small_config};
    use super::*;

    #[test]
    fn order_is_a_seeded_permutation() {
        let a = shuffled_order(20, 3, 0);
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
        assert_eq!(a, shuffled_order(20, 3, 0));
        assert_ne!(a, shuffled_order(20, 3, 1));
    }

    #[test]
    fn tiled_prediction_matches_whole_frame() {
        let cfg = small_config();
        let (gen, _) = Generator::<f64>::init(&cfg).unwrap();
        let x = random_sample(37, 9).ldr.cast::<f64>();
        let whole = gen.predict(&x).unwrap();
        let tiled = predict_tiled(&gen, &x, 10).unwrap();
        let err = whole
            .data()
            .iter()
            .zip(tiled.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn loop_logs_every_step_and_resumes() {
        let mut cfg = small_config();
        cfg.max_steps = Some(3);
        cfg.checkpoint_every = 2;
        let samples: Vec<_> = (0..3).map(|i| random_sample(16, i)).collect();
        let dir = tempfile::tempdir().unwrap();
        let mut state = TrainState::new(&cfg, 3).unwrap();
        let fin = train_samples(&cfg, &samples, &mut state, Some(dir.path()), |_, _| false)
            .unwrap()
            .unwrap();
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 3);
        assert!(dir.path().join("step_000002.ckpt").exists());
        assert_eq!(load_checkpoint(&fin).unwrap().0.state, state);

        // two steps, checkpoint, one more step equals three straight steps
        let mut resumed = load_checkpoint(&dir.path().join("step_000002.ckpt")).unwrap().0.state;
        train_samples(&cfg, &samples, &mut resumed, None, |_, _| false).unwrap();
        assert_eq!(resumed.gen, state.gen);
        assert_eq!(resumed.disc, state.disc);
    }
}
