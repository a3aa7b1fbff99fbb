use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ldr2hdr_core::config::{
    MuPsnrConfig, TrainConfig, REFERENCE_PARAMS_STAGE1, REFERENCE_PARAMS_STAGE2, REFERENCE_PARAMS_TOTAL,
};
use ldr2hdr_core::datagen::{build_dataset, build_synthetic_dataset, load_triplets, DatasetManifest, SyntheticSpec};
use ldr2hdr_core::imgio::{load_hdr16, load_ldr, save_hdr16, save_ldr, visualize as render};
use ldr2hdr_core::metrics::{evaluate_pair, MetricReport};
use ldr2hdr_core::model::count_params_for;
use ldr2hdr_core::trainer::{self, load_checkpoint, load_samples, Generator};
use ldr2hdr_core::{Error, Result};

use crate::pairs::PairsManifest;

/// Outcome of one subcommand.
#[derive(Debug)]
pub struct CommandResult {
    pub exit_code: u8,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl CommandResult {
    fn ok(summary: impl Into<String>, artifacts: Vec<PathBuf>) -> Self {
        CommandResult {
            exit_code: 0,
            summary: summary.into(),
            artifacts,
        }
    }

    pub fn failure(e: &Error) -> Self {
        CommandResult {
            exit_code: if e.is_usage() { 2 } else { 1 },
            summary: e.to_string(),
            artifacts: Vec::new(),
        }
    }
}

/// Missing inputs are a usage problem, not an I/O failure.
fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} not found: {}", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Argument(format!("{what} not found: {}", path.display())))
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            require_file(p, "config")?;
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            TrainConfig::from_toml_str(&text).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                other => other,
            })
        }
        None => Ok(TrainConfig::default()),
    }
}

fn load_generator(checkpoint: &Path) -> Result<Generator<f32>> {
    require_file(checkpoint, "checkpoint")?;
    Ok(load_checkpoint(checkpoint)?.0.state.gen)
}

fn with_suffix(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub fn dataset_from_manifest(manifest: &Path, out: &Path) -> Result<CommandResult> {
    require_file(manifest, "manifest")?;
    let m = DatasetManifest::load(manifest)?;
    let summary = build_dataset(&m, out)?;
    Ok(CommandResult::ok(
        format!("{} triplets written to {} ({} scenes skipped)", summary.triplet_count, out.display(), summary.skipped.len()),
        summary.written,
    ))
}

pub fn dataset_synthetic(
    n_scenes: usize,
    patches: usize,
    seed: u64,
    patch_size: Option<usize>,
    noise: Option<f64>,
    out: &Path,
) -> Result<CommandResult> {
    if n_scenes == 0 || patches == 0 {
        return Err(Error::Argument("--synthetic and --patches must be positive".into()));
    }
    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_scenes,
        patches_per_scene: patches,
        seed,
        patch_size: patch_size.unwrap_or(defaults.patch_size),
        noise_sigma: noise.unwrap_or(defaults.noise_sigma),
        ..defaults
    };
    let summary = build_synthetic_dataset(&spec, out)?;
    Ok(CommandResult::ok(
        format!("{} triplets written to {}", summary.triplet_count, out.display()),
        summary.written,
    ))
}

pub fn train(
    config: Option<&Path>,
    dataset: &Path,
    out: &Path,
    resume: Option<&Path>,
    max_steps: Option<usize>,
) -> Result<CommandResult> {
    let mut cfg = load_config(config)?;
    if max_steps.is_some() {
        cfg.max_steps = max_steps;
    }
    require_dir(dataset, "dataset directory")?;
    if let Some(r) = resume {
        require_file(r, "checkpoint")?;
    }
    let start = Instant::now();
    let outcome = trainer::train_loop(&cfg, dataset, out, resume)?;
    let last = outcome.state.history.last();
    let mut artifacts: Vec<PathBuf> = outcome.log.into_iter().collect();
    artifacts.extend(outcome.final_checkpoint);
    Ok(CommandResult::ok(
        format!(
            "trained to step {} in {:.1} s, last loss {}",
            outcome.state.step,
            start.elapsed().as_secs_f64(),
            last.map_or("n/a".to_string(), |r| format!("{:.6}", r.total))
        ),
        artifacts,
    ))
}

pub fn infer(checkpoint: &Path, input: &Path, output: &Path, tile: Option<usize>) -> Result<CommandResult> {
    let gen = load_generator(checkpoint)?;
    require_file(input, "input image")?;
    let ldr = load_ldr(input)?;
    let start = Instant::now();
    let hdr = trainer::infer(&gen, &ldr, tile)?;
    let secs = start.elapsed().as_secs_f64();
    save_hdr16(&hdr, output)?;
    Ok(CommandResult::ok(
        format!("{}x{} reconstructed in {secs:.3} s", hdr.width(), hdr.height()),
        vec![output.to_path_buf()],
    ))
}

pub fn eval(checkpoint: Option<&Path>, pairs: &Path, report: &Path) -> Result<CommandResult> {
    require_file(pairs, "pairs manifest")?;
    let manifest = PairsManifest::load(pairs)?;
    let gen = match (checkpoint, manifest.needs_model()) {
        (Some(c), _) => Some(load_generator(c)?),
        (None, true) => return Err(Error::Argument("pairs with ldr inputs need --checkpoint".into())),
        (None, false) => None,
    };
    let mu = MuPsnrConfig::default();
    let mut per_image = Vec::with_capacity(manifest.pairs.len());
    for p in &manifest.pairs {
        let gt = load_hdr16(&p.hdr16)?;
        let pred = match (&p.ldr, &p.pred, &gen) {
            (Some(l), _, Some(g)) => trainer::infer(g, &load_ldr(l)?, None)?,
            (_, Some(pr), _) => load_hdr16(pr)?,
            _ => unreachable!("manifest validation guarantees one source"),
        };
        per_image.push(evaluate_pair(&p.id, &pred, &gt, &mu)?);
    }
    let rep = MetricReport::from_images(per_image)?;
    let table = with_suffix(report, "txt");
    write_text(report, &rep.to_jsonl())?;
    write_text(&table, &rep.to_table())?;
    Ok(CommandResult::ok(
        format!(
            "mean PSNR {:.4} dB, mean mu-PSNR {:.4} dB over {} pairs",
            rep.mean_psnr, rep.mean_mu_psnr, rep.count
        ),
        vec![report.to_path_buf(), table],
    ))
}

pub fn visualize(input: &Path, output: &Path, percentile: f64) -> Result<CommandResult> {
    require_file(input, "input image")?;
    let img = load_hdr16(input)?;
    save_ldr(&render(&img, percentile)?, output)?;
    Ok(CommandResult::ok(
        format!("visualized {} at percentile {percentile}", input.display()),
        vec![output.to_path_buf()],
    ))
}

fn deviation(count: usize, reference: usize) -> f64 {
    (count as f64 - reference as f64) / reference as f64 * 100.0
}

pub fn params_report(config: Option<&Path>) -> Result<CommandResult> {
    let cfg = load_config(config)?;
    let c = count_params_for(&cfg.model);
    let mut s = format!("{:<9} {:>10} {:>10} {:>9}\n", "part", "params", "reference", "deviation");
    for (name, n, r) in [
        ("stage-I", c.stage1, REFERENCE_PARAMS_STAGE1),
        ("stage-II", c.stage2, REFERENCE_PARAMS_STAGE2),
        ("total", c.total, REFERENCE_PARAMS_TOTAL),
    ] {
        s.push_str(&format!("{name:<9} {n:>10} {r:>10} {:>+8.2}%\n", deviation(n, r)));
    }
    Ok(CommandResult::ok(s.trim_end().to_string(), Vec::new()))
}

pub fn ablation(
    config: Option<&Path>,
    train_dir: &Path,
    eval_dir: &Path,
    report: &Path,
    max_steps: Option<usize>,
) -> Result<CommandResult> {
    let mut cfg = load_config(config)?;
    if max_steps.is_some() {
        cfg.max_steps = max_steps;
    }
    require_dir(train_dir, "training dataset")?;
    require_dir(eval_dir, "evaluation dataset")?;
    let train = load_samples(train_dir)?;
    let eval = load_triplets(eval_dir)?;
    if eval.is_empty() {
        return Err(Error::Argument(format!("no evaluation triplets under {}", eval_dir.display())));
    }
    let rep = trainer::run_ablation(&cfg, &train, &eval, &MuPsnrConfig::default())?;
    let table = rep.to_table();
    write_text(report, &table)?;
    Ok(CommandResult::ok(table.trim_end().to_string(), vec![report.to_path_buf()]))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
