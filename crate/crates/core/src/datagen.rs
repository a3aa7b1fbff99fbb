//! Synthetic HDR scenes, simulated LDR captures, and supervised patch
//! triplets written to disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{validate_percentile, DEFAULT_CLIP_PERCENTILE, DEFAULT_PATCH_SIZE};
use crate::error::{Error, Result};
use crate::imgio::{self, clip_normalize_ref8, HdrImage, LdrImage, HDR_MAX};

/// Smallest side [`synth_hdr_scene`] accepts.
pub const MIN_SCENE_SIDE: usize = 32;

/// Exposure multipliers sampled per synthetic triplet.
pub const EXPOSURES: [f64; 3] = [0.5, 1.0, 2.0];

/// Procedural HDR scene: a dim gradient background, textured objects, a
/// bright sky band and point lights. Normalized so the brightest value is
/// exactly 65535.
pub fn synth_hdr_scene(width: usize, height: usize, seed: u64) -> Result<HdrImage> {
    if width < MIN_SCENE_SIDE || height < MIN_SCENE_SIDE {
        return Err(Error::Argument(format!(
            "scene must be at least {MIN_SCENE_SIDE}x{MIN_SCENE_SIDE}, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let mut img = vec![0.0f64; width * height * 3];

    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
    let (g0, g1) = (rng.random_range(0.01..0.05), rng.random_range(0.05..0.2));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    for y in 0..height {
        for x in 0..width {
            let t = 0.5 + 0.5 * ((x as f64 / w - 0.5) * angle.cos() + (y as f64 / h - 0.5) * angle.sin());
            for c in 0..3 {
                img[(y * width + x) * 3 + c] = (g0 + (g1 - g0) * t) * tint[c];
            }
        }
    }

    let objects = rng.random_range(3..7);
    for _ in 0..objects {
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let rx = rng.random_range(0.08..0.3) * w;
        let ry = rng.random_range(0.08..0.3) * h;
        let ellipse = rng.random_bool(0.5);
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.03..0.6));
        let freq = rng.random_range(0.05..0.4);
        let amp = rng.random_range(0.0..0.3);
        for y in 0..height {
            for x in 0..width {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    let tex = 1.0 + amp * (freq * x as f64).sin() * (freq * 0.7 * y as f64).cos();
                    for c in 0..3 {
                        img[(y * width + x) * 3 + c] = color[c] * tex;
                    }
                }
            }
        }
    }

    let sky = (rng.random_range(0.12..0.3) * h) as usize;
    let sky_level = rng.random_range(0.75..1.0);
    let sky_tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.85..1.0));
    for y in 0..sky {
        let fade = 1.0 - 0.2 * y as f64 / sky.max(1) as f64;
        for x in 0..width {
            for c in 0..3 {
                img[(y * width + x) * 3 + c] = sky_level * fade * sky_tint[c];
            }
        }
    }

    let lights = rng.random_range(1..4);
    for _ in 0..lights {
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let r = rng.random_range(0.05..0.14) * w.min(h);
        for y in 0..height {
            for x in 0..width {
                let d2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (r * r);
                let v = 1.2 * (-0.5 * d2).exp();
                for c in 0..3 {
                    let px = &mut img[(y * width + x) * 3 + c];
                    *px = (*px + v).min(1.0);
                }
            }
        }
    }

    let max = img.iter().cloned().fold(0.0f64, f64::max);
    let pixels = img
        .iter()
        .map(|&v| imgio::quantize(v / max, HDR_MAX as f64) as u16)
        .collect();
    HdrImage::new(height, width, pixels)
}

/// Simulated capture settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub exposure_scale: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            exposure_scale: 1.0,
            gamma: 2.2,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_scale > 0.0 && self.exposure_scale.is_finite()) {
            return Err(Error::Argument("exposure_scale must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Argument("gamma must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Argument("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Exposure, clipping, a power-law response and Gaussian read noise, then
/// 8-bit quantization.
pub fn degrade_to_ldr(hdr: &HdrImage, params: &DegradationParams) -> Result<LdrImage> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.noise_sigma).expect("validated sigma");
    let inv_gamma = 1.0 / params.gamma;
    let pixels = hdr
        .pixels()
        .iter()
        .map(|&v| {
            let x = (params.exposure_scale * v as f64 / HDR_MAX as f64).clamp(0.0, 1.0);
            let mut x = x.powf(inv_gamma);
            if params.noise_sigma > 0.0 {
                x = (x + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            imgio::quantize(x, 255.0) as u8
        })
        .collect();
    LdrImage::new(hdr.height(), hdr.width(), pixels)
}

/// One supervised sample: co-located crops of the LDR input and both references.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTriplet {
    pub ldr: LdrImage,
    pub ref8: LdrImage,
    pub ref16: HdrImage,
    pub source_id: String,
    pub offset: (usize, usize),
}

/// `count` random co-located crops. `ref8` is cut from the whole-image
/// normalization so every patch of a scene shares one clipping point.
pub fn extract_patch_triplets(
    ldr: &LdrImage,
    hdr16: &HdrImage,
    count: usize,
    size: usize,
    seed: u64,
    source_id: &str,
    percentile: f64,
) -> Result<Vec<PatchTriplet>> {
    if !ldr.same_size(hdr16) {
        return Err(Error::Shape(format!(
            "LDR is {}x{}, HDR is {}x{}",
            ldr.height(),
            ldr.width(),
            hdr16.height(),
            hdr16.width()
        )));
    }
    if size == 0 || size > ldr.height().min(ldr.width()) {
        return Err(Error::Argument(format!(
            "patch size {size} does not fit a {}x{} image",
            ldr.height(),
            ldr.width()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let ref8_full = clip_normalize_ref8(hdr16, percentile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let y = rng.random_range(0..=ldr.height() - size);
            let x = rng.random_range(0..=ldr.width() - size);
            Ok(PatchTriplet {
                ldr: ldr.crop(y, x, size, size)?,
                ref8: ref8_full.crop(y, x, size, size)?,
                ref16: hdr16.crop(y, x, size, size)?,
                source_id: source_id.to_string(),
                offset: (y, x),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub ldr: PathBuf,
    pub hdr16: PathBuf,
    pub scene_id: String,
}

fn default_patch_size() -> usize {
    DEFAULT_PATCH_SIZE
}

fn default_patches() -> usize {
    8
}

fn default_percentile() -> f64 {
    DEFAULT_CLIP_PERCENTILE
}

/// Scene list plus extraction settings. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_patches")]
    pub patches_per_scene: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 16 {
            return Err(Error::Config(format!("patch_size must be >= 16, got {}", self.patch_size)));
        }
        validate_percentile(self.percentile)?;
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if e.scene_id.is_empty() || e.scene_id.contains(['/', '\\']) || e.scene_id.starts_with('.') {
                return Err(Error::Config(format!("invalid scene_id {:?}", e.scene_id)));
            }
            if !seen.insert(&e.scene_id) {
                return Err(Error::Config(format!("duplicate scene_id {:?}", e.scene_id)));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut m: DatasetManifest = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for e in &mut m.entries {
            if e.ldr.is_relative() {
                e.ldr = base.join(&e.ldr);
            }
            if e.hdr16.is_relative() {
                e.hdr16 = base.join(&e.hdr16);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub triplet_count: usize,
    /// `(scene_id, reason)` for every scene that could not be used.
    pub skipped: Vec<(String, String)>,
    pub written: Vec<PathBuf>,
}

fn triplet_paths(out_dir: &Path, scene: &str, index: usize) -> [PathBuf; 3] {
    let d = out_dir.join(scene);
    [
        d.join(format!("{index}_ldr.png")),
        d.join(format!("{index}_ref8.png")),
        d.join(format!("{index}_ref16.png")),
    ]
}

fn write_triplets(out_dir: &Path, scene: &str, triplets: &[PatchTriplet], summary: &mut DatasetSummary) -> Result<()> {
    let dir = out_dir.join(scene);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (i, t) in triplets.iter().enumerate() {
        let [pl, p8, p16] = triplet_paths(out_dir, scene, i);
        imgio::save_ldr(&t.ldr, &pl)?;
        imgio::save_ldr(&t.ref8, &p8)?;
        imgio::save_hdr16(&t.ref16, &p16)?;
        summary.written.extend([pl, p8, p16]);
    }
    summary.triplet_count += triplets.len();
    Ok(())
}

const SKIP_REPORT: &str = "skipped.txt";

fn finish(out_dir: &Path, mut summary: DatasetSummary) -> Result<DatasetSummary> {
    if !summary.skipped.is_empty() {
        let path = out_dir.join(SKIP_REPORT);
        let text: String = summary
            .skipped
            .iter()
            .map(|(id, why)| format!("{id}\t{why}\n"))
            .collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        summary.written.push(path);
    }
    Ok(summary)
}

/// Cuts `patches_per_scene` triplets from every manifest entry into
/// `out_dir/{scene_id}/`. Scenes that fail to load are skipped and listed in
/// `out_dir/skipped.txt`.
pub fn build_dataset(manifest: &DatasetManifest, out_dir: &Path) -> Result<DatasetSummary> {
    manifest.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut summary = DatasetSummary::default();
    for (index, entry) in manifest.entries.iter().enumerate() {
        let loaded = imgio::load_ldr(&entry.ldr).and_then(|ldr| {
            let hdr = imgio::load_hdr16(&entry.hdr16)?;
            extract_patch_triplets(
                &ldr,
                &hdr,
                manifest.patches_per_scene,
                manifest.patch_size,
                manifest.seed ^ index as u64,
                &entry.scene_id,
                manifest.percentile,
            )
        });
        match loaded {
            Ok(triplets) => write_triplets(out_dir, &entry.scene_id, &triplets, &mut summary)?,
            Err(e) if e.is_usage() || matches!(e, Error::Io { .. }) => {
                summary.skipped.push((entry.scene_id.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    finish(out_dir, summary)
}

/// Settings for a fully synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_scenes: usize,
    pub width: usize,
    pub height: usize,
    pub patches_per_scene: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub exposures: Vec<f64>,
    pub percentile: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_scenes: 4,
            width: 192,
            height: 160,
            patches_per_scene: 8,
            patch_size: DEFAULT_PATCH_SIZE,
            seed: 0,
            gamma: 2.2,
            noise_sigma: 0.01,
            exposures: EXPOSURES.to_vec(),
            percentile: DEFAULT_CLIP_PERCENTILE,
        }
    }
}

/// Triplets of one synthetic scene, each with an exposure drawn from
/// `spec.exposures`.
pub fn synthetic_scene_triplets(spec: &SyntheticSpec, index: usize) -> Result<Vec<PatchTriplet>> {
    if spec.exposures.is_empty() {
        return Err(Error::Argument("at least one exposure is required".into()));
    }
    let seed = spec.seed ^ index as u64;
    let scene_id = format!("scene{index:04}");
    let hdr = synth_hdr_scene(spec.width, spec.height, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut captures: BTreeMap<usize, LdrImage> = BTreeMap::new();
    let mut out = Vec::with_capacity(spec.patches_per_scene);
    for i in 0..spec.patches_per_scene {
        let e = rng.random_range(0..spec.exposures.len());
        if !captures.contains_key(&e) {
            let params = DegradationParams {
                exposure_scale: spec.exposures[e],
                gamma: spec.gamma,
                noise_sigma: spec.noise_sigma,
                seed: seed.wrapping_mul(31).wrapping_add(e as u64),
            };
            captures.insert(e, degrade_to_ldr(&hdr, &params)?);
        }
        let patch_seed = rng.random::<u64>() ^ i as u64;
        let mut t = extract_patch_triplets(
            &captures[&e],
            &hdr,
            1,
            spec.patch_size,
            patch_seed,
            &scene_id,
            spec.percentile,
        )?;
        out.append(&mut t);
    }
    Ok(out)
}

pub fn build_synthetic_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetSummary> {
    if spec.patch_size < 16 {
        return Err(Error::Argument(format!("patch_size must be >= 16, got {}", spec.patch_size)));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut summary = DatasetSummary::default();
    for index in 0..spec.n_scenes {
        let triplets = synthetic_scene_triplets(spec, index)?;
        write_triplets(out_dir, &format!("scene{index:04}"), &triplets, &mut summary)?;
    }
    finish(out_dir, summary)
}

/// Reads every triplet under `dir`, ordered by scene then index.
pub fn load_triplets(dir: &Path) -> Result<Vec<PatchTriplet>> {
    let mut scenes: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    scenes.sort();
    let mut out = Vec::new();
    for scene in scenes {
        let id = scene.file_name().unwrap().to_string_lossy().to_string();
        let mut indices: Vec<usize> = fs::read_dir(&scene)
            .map_err(|e| Error::io(&scene, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().to_string();
                name.strip_suffix("_ldr.png")?.parse().ok()
            })
            .collect();
        indices.sort_unstable();
        for i in indices {
            let [pl, p8, p16] = triplet_paths(dir, &id, i);
            let t = PatchTriplet {
                ldr: imgio::load_ldr(&pl)?,
                ref8: imgio::load_ldr(&p8)?,
                ref16: imgio::load_hdr16(&p16)?,
                source_id: format!("{id}/{i}"),
                offset: (0, 0),
            };
            if !(t.ldr.same_size(&t.ref8) && t.ldr.same_size(&t.ref16)) {
                return Err(Error::format(&pl, "triplet members differ in size"));
            }
            out.push(t);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scenes_are_deterministic_and_seeded() {
        let a = synth_hdr_scene(64, 64, 1).unwrap();
        assert_eq!(a, synth_hdr_scene(64, 64, 1).unwrap());
        assert_ne!(a, synth_hdr_scene(64, 64, 2).unwrap());
        assert!(synth_hdr_scene(31, 64, 1).is_err());
    }

    #[test]
    fn scenes_reach_highlights() {
        for seed in 0..100 {
            let s = synth_hdr_scene(48, 40, seed).unwrap();
            let max = *s.pixels().iter().max().unwrap();
            assert!(max as f64 >= 0.9 * 65535.0, "seed {seed}: {max}");
            let dark = s.pixels().iter().filter(|&&v| v < 6554).count();
            assert!(dark > 0, "seed {seed} has no dark region");
        }
    }

    #[test]
    fn degradation_examples() {
        let p = DegradationParams {
            exposure_scale: 1.0,
            gamma: 1.0,
            noise_sigma: 0.0,
            seed: 0,
        };
        let white = degrade_to_ldr(&HdrImage::filled(2, 2, 65535), &p).unwrap();
        assert!(white.pixels().iter().all(|&v| v == 255));
        let clipped = degrade_to_ldr(
            &HdrImage::filled(2, 2, 32768),
            &DegradationParams { exposure_scale: 4.0, ..p },
        )
        .unwrap();
        assert!(clipped.pixels().iter().all(|&v| v == 255));
        let g = degrade_to_ldr(&HdrImage::filled(1, 1, 16384), &DegradationParams { gamma: 2.2, ..p }).unwrap();
        let x = 16384.0 / 65535.0f64;
        let expect = (255.0 * x.powf(1.0 / 2.2) + 0.5).floor() as u8;
        assert_eq!(g.pixels()[0], expect);
        assert!(degrade_to_ldr(&white_hdr(), &DegradationParams { gamma: 0.0, ..p }).is_err());
    }

    fn white_hdr() -> HdrImage {
        HdrImage::filled(1, 1, 65535)
    }

    #[test]
    fn patch_extraction_contracts() {
        let hdr = synth_hdr_scene(40, 36, 3).unwrap();
        let ldr = degrade_to_ldr(&hdr, &DegradationParams::default()).unwrap();
        assert!(extract_patch_triplets(&ldr, &hdr, 0, 16, 0, "s", 0.99).unwrap().is_empty());
        let a = extract_patch_triplets(&ldr, &hdr, 7, 16, 5, "s", 0.99).unwrap();
        let b = extract_patch_triplets(&ldr, &hdr, 7, 16, 5, "s", 0.99).unwrap();
        assert_eq!(a, b);
        let full = clip_normalize_ref8(&hdr, 0.99).unwrap();
        for t in &a {
            let (y, x) = t.offset;
            assert_eq!(t.ldr, ldr.crop(y, x, 16, 16).unwrap());
            assert_eq!(t.ref8, full.crop(y, x, 16, 16).unwrap());
            assert_eq!(t.ref16, hdr.crop(y, x, 16, 16).unwrap());
        }
        assert!(extract_patch_triplets(&ldr, &hdr, 1, 37, 0, "s", 0.99).is_err());

        let sq = synth_hdr_scene(32, 32, 4).unwrap();
        let sq_ldr = degrade_to_ldr(&sq, &DegradationParams::default()).unwrap();
        let forced = extract_patch_triplets(&sq_ldr, &sq, 3, 32, 9, "s", 0.99).unwrap();
        assert!(forced.iter().all(|t| t.offset == (0, 0) && *t == forced[0]));
    }

    #[test]
    fn synthetic_corpus_saturates_enough() {
        let spec = SyntheticSpec {
            n_scenes: 6,
            width: 96,
            height: 80,
            patches_per_scene: 6,
            patch_size: 48,
            ..SyntheticSpec::default()
        };
        let (mut sat, mut total) = (0usize, 0usize);
        for i in 0..spec.n_scenes {
            for t in synthetic_scene_triplets(&spec, i).unwrap() {
                sat += t.ldr.pixels().iter().filter(|&&v| v == 255).count();
                total += t.ldr.pixels().len();
            }
        }
        let frac = sat as f64 / total as f64;
        assert!(frac >= 0.05, "saturated fraction {frac}");
    }

    #[test]
    fn manifest_build_with_missing_scene() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        fs::create_dir_all(&src).unwrap();
        let hdr = synth_hdr_scene(40, 40, 1).unwrap();
        let ldr = degrade_to_ldr(&hdr, &DegradationParams::default()).unwrap();
        imgio::save_ldr(&ldr, src.join("a_ldr.png")).unwrap();
        imgio::save_hdr16(&hdr, src.join("a_hdr.png")).unwrap();
        let text = r#"
            patch_size = 16
            patches_per_scene = 3
            seed = 4
            [[entries]]
            ldr = "src/a_ldr.png"
            hdr16 = "src/a_hdr.png"
            scene_id = "a"
            [[entries]]
            ldr = "src/missing.png"
            hdr16 = "src/a_hdr.png"
            scene_id = "b"
        "#;
        let m = DatasetManifest::from_toml_str(text, dir.path()).unwrap();
        let out = dir.path().join("out");
        let s = build_dataset(&m, &out).unwrap();
        assert_eq!(s.triplet_count, 3);
        assert_eq!(s.skipped.len(), 1);
        assert_eq!(s.skipped[0].0, "b");
        assert!(out.join("a/2_ref16.png").exists());
        assert!(out.join(SKIP_REPORT).exists());
        let loaded = load_triplets(&out).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded[1].source_id, "a/1");
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let err = DatasetManifest::from_toml_str("patch_sise = 32\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("patch_sise"), "{err}");
    }

    #[test]
    fn synthetic_build_is_byte_identical() {
        let spec = SyntheticSpec {
            n_scenes: 2,
            width: 48,
            height: 40,
            patches_per_scene: 3,
            patch_size: 32,
            seed: 11,
            ..SyntheticSpec::default()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let s1 = build_synthetic_dataset(&spec, d1.path()).unwrap();
        build_synthetic_dataset(&spec, d2.path()).unwrap();
        assert_eq!(s1.triplet_count, 6);
        for p in &s1.written {
            let rel = p.strip_prefix(d1.path()).unwrap();
            assert_eq!(fs::read(p).unwrap(), fs::read(d2.path().join(rel)).unwrap());
        }
    }

    proptest! {
        #[test]
        fn noiseless_degradation_is_monotone(a in any::<u16>(), b in any::<u16>(),
                                             e in 0.1f64..4.0, g in 0.5f64..3.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = DegradationParams { exposure_scale: e, gamma: g, noise_sigma: 0.0, seed: 0 };
            let img = HdrImage::new(1, 2, vec![lo, lo, lo, hi, hi, hi]).unwrap();
            let out = degrade_to_ldr(&img, &p).unwrap();
            prop_assert!(out.pixels()[0] <= out.pixels()[3]);
        }
    }
}
