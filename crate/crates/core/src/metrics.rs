//! PSNR and μ-law PSNR on 16-bit images, and batch evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::MuPsnrConfig;
use crate::error::{Error, Result};
use crate::imgio::{hdr_quantile, HdrImage, HDR_MAX};

/// Version of the per-image record schema written by [`MetricReport::to_jsonl`].
pub const METRIC_SCHEMA_VERSION: u32 = 1;

fn check_pair(pred: &HdrImage, gt: &HdrImage) -> Result<()> {
    if !pred.same_size(gt) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

fn db(peak: f64, mse: f64, cap_db: f64) -> f64 {
    if mse == 0.0 {
        return cap_db;
    }
    (10.0 * (peak * peak / mse).log10()).min(cap_db)
}

/// `10·log10(peak² / MSE)` over all channels, capped at `cap_db`.
pub fn psnr_with(pred: &HdrImage, gt: &HdrImage, peak: f64, cap_db: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let sse: f64 = pred
        .pixels()
        .iter()
        .zip(gt.pixels())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(db(peak, sse / pred.pixels().len() as f64, cap_db))
}

/// PSNR with peak 65535 and the default 100 dB cap.
pub fn psnr(pred: &HdrImage, gt: &HdrImage) -> Result<f64> {
    psnr_with(pred, gt, HDR_MAX as f64, MuPsnrConfig::default().cap_db)
}

/// `log(1 + μx) / log(1 + μ)`.
pub fn mu_law(x: f64, mu: f64) -> f64 {
    (mu * x).ln_1p() / mu.ln_1p()
}

pub fn mu_law_inverse(y: f64, mu: f64) -> f64 {
    (y * mu.ln_1p()).exp_m1() / mu
}

/// Scale → `tanh` → μ-law applied to one value.
#[inline]
pub fn mu_tonemap(v: f64, p: f64, mu: f64) -> f64 {
    mu_law((v / p).tanh(), mu)
}

/// μ-PSNR: both images divided by the ground-truth percentile value,
/// compressed with `tanh` then μ-law, compared at peak 1.
pub fn mu_psnr(pred: &HdrImage, gt: &HdrImage, cfg: &MuPsnrConfig) -> Result<f64> {
    check_pair(pred, gt)?;
    cfg.validate()?;
    let p = hdr_quantile(gt, cfg.percentile);
    if p <= 0.0 {
        return Err(Error::Degenerate(format!(
            "ground-truth {} quantile is zero",
            cfg.percentile
        )));
    }
    let sse: f64 = pred
        .pixels()
        .iter()
        .zip(gt.pixels())
        .map(|(&a, &b)| {
            let d = mu_tonemap(a as f64, p, cfg.mu) - mu_tonemap(b as f64, p, cfg.mu);
            d * d
        })
        .sum();
    Ok(db(1.0, sse / pred.pixels().len() as f64, cfg.cap_db))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: f64,
    pub mu_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_mu_psnr: f64,
    pub count: usize,
}

#[derive(Serialize, Deserialize)]
struct Record<'a> {
    schema: u32,
    id: &'a str,
    psnr: f64,
    mu_psnr: f64,
}

impl MetricReport {
    pub fn from_images(mut per_image: Vec<ImageMetrics>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Argument("no image pairs to evaluate".into()));
        }
        per_image.sort_by(|a, b| a.id.cmp(&b.id));
        let n = per_image.len() as f64;
        let mean_psnr = per_image.iter().map(|m| m.psnr).sum::<f64>() / n;
        let mean_mu_psnr = per_image.iter().map(|m| m.mu_psnr).sum::<f64>() / n;
        Ok(MetricReport {
            count: per_image.len(),
            per_image,
            mean_psnr,
            mean_mu_psnr,
        })
    }

    /// One JSON object per image: `{"schema", "id", "psnr", "mu_psnr"}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.per_image {
            let rec = Record {
                schema: METRIC_SCHEMA_VERSION,
                id: &m.id,
                psnr: m.psnr,
                mu_psnr: m.mu_psnr,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses records written by [`MetricReport::to_jsonl`].
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut per_image = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| Error::Argument(format!("metric record line {}: {e}", i + 1)))?;
            if rec.schema != METRIC_SCHEMA_VERSION {
                return Err(Error::Argument(format!(
                    "metric record line {}: schema {} (expected {METRIC_SCHEMA_VERSION})",
                    i + 1,
                    rec.schema
                )));
            }
            per_image.push(ImageMetrics {
                id: rec.id.to_string(),
                psnr: rec.psnr,
                mu_psnr: rec.mu_psnr,
            });
        }
        Self::from_images(per_image)
    }

    pub fn to_table(&self) -> String {
        let width = self.per_image.iter().map(|m| m.id.len()).max().unwrap_or(2).max(4);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>10}  {:>10}", "id", "PSNR", "mu-PSNR");
        for m in &self.per_image {
            let _ = writeln!(s, "{:<width$}  {:>10.4}  {:>10.4}", m.id, m.psnr, m.mu_psnr);
        }
        let _ = writeln!(s, "{:<width$}  {:>10.4}  {:>10.4}", "mean", self.mean_psnr, self.mean_mu_psnr);
        s
    }
}

pub fn evaluate_pair(id: &str, pred: &HdrImage, gt: &HdrImage, cfg: &MuPsnrConfig) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        id: id.to_string(),
        psnr: psnr_with(pred, gt, HDR_MAX as f64, cfg.cap_db)?,
        mu_psnr: mu_psnr(pred, gt, cfg)?,
    })
}

/// Scores every `(id, prediction, ground truth)` triple; the report is
/// sorted by id.
pub fn evaluate_pairs(pairs: &[(String, HdrImage, HdrImage)], cfg: &MuPsnrConfig) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("no image pairs to evaluate".into()));
    }
    let per_image = pairs
        .iter()
        .map(|(id, p, g)| evaluate_pair(id, p, g, cfg))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_images(per_image)
}

/// Ablation summary: one labeled row per model variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<(String, MetricReport)>,
}

impl AblationReport {
    pub const LABELS: [&'static str; 3] = ["Stage-I", "Stage-II", "Stage I+II"];

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12}  {:>10}  {:>10}  {:>6}", "Method", "PSNR", "mu-PSNR", "images");
        for (label, r) in &self.rows {
            let _ = writeln!(
                s,
                "{:<12}  {:>10.2}  {:>10.2}  {:>6}",
                label, r.mean_psnr, r.mean_mu_psnr, r.count
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::Raster;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hdr(h: usize, w: usize, seed: u64) -> HdrImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HdrImage::from_fn(h, w, |_, _, _| rng.random_range(100..60000))
    }

    #[test]
    fn identical_images_hit_cap() {
        let a = random_hdr(4, 4, 1);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert_eq!(mu_psnr(&a, &a, &MuPsnrConfig::default()).unwrap(), 100.0);
    }

    #[test]
    fn uniform_tenth_error_is_twenty_db() {
        let a = HdrImage::filled(2, 2, 0);
        let b = HdrImage::filled(2, 2, 6553);
        // 6553.5 is not representable; use the generic peak form instead
        let v = psnr_with(&a, &b, 65530.0, 100.0).unwrap();
        assert!((v - 20.0).abs() < 1e-9);
    }

    #[test]
    fn mu_law_values() {
        assert_eq!(mu_law(0.0, 5000.0), 0.0);
        assert!((mu_law(1.0, 5000.0) - 1.0).abs() < 1e-15);
        assert!((mu_law(0.01, 5000.0) - 51f64.ln() / 5001f64.ln()).abs() < 1e-15);
        assert!((mu_law(0.01, 5000.0) - 0.46162).abs() < 1e-5);
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((mu_law_inverse(mu_law(x, 5000.0), 5000.0) - x).abs() < 1e-10);
        }
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = random_hdr(5, 6, 2);
        let b = random_hdr(5, 6, 3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn degenerate_ground_truth() {
        let z = HdrImage::filled(2, 2, 0);
        let a = random_hdr(2, 2, 4);
        assert!(matches!(mu_psnr(&a, &z, &MuPsnrConfig::default()), Err(Error::Degenerate(_))));
        assert!(matches!(psnr(&a, &random_hdr(2, 3, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn report_means_and_order() {
        let a = random_hdr(3, 3, 5);
        let b = random_hdr(3, 3, 6);
        let cfg = MuPsnrConfig::default();
        let pairs = vec![("b".to_string(), a.clone(), b.clone()), ("a".to_string(), a.clone(), a.clone())];
        let r = evaluate_pairs(&pairs, &cfg).unwrap();
        assert_eq!(r.count, 2);
        assert_eq!(r.per_image[0].id, "a");
        let expect = (100.0 + psnr(&a, &b).unwrap()) / 2.0;
        assert!((r.mean_psnr - expect).abs() < 1e-12);
        let back = MetricReport::from_jsonl(&r.to_jsonl()).unwrap();
        assert_eq!(back, r);
        assert!(evaluate_pairs(&[], &cfg).is_err());
        assert!(r.to_table().contains("mean"));
    }

    #[test]
    fn jsonl_rejects_other_schema() {
        let bad = r#"{"schema":9,"id":"x","psnr":1.0,"mu_psnr":2.0}"#;
        assert!(MetricReport::from_jsonl(bad).is_err());
    }

    #[test]
    fn mu_psnr_invariant_to_joint_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let gt_vals: Vec<u16> = (0..48).map(|_| rng.random_range(10..30000)).collect();
            let pred_vals: Vec<u16> = (0..48).map(|_| rng.random_range(10..30000)).collect();
            let gt = Raster::new(4, 4, gt_vals.clone()).unwrap();
            let pred = Raster::new(4, 4, pred_vals.clone()).unwrap();
            let base = mu_psnr(&pred, &gt, &MuPsnrConfig::default()).unwrap();
            let gt2 = Raster::new(4, 4, gt_vals.iter().map(|v| v * 2).collect()).unwrap();
            let pred2 = Raster::new(4, 4, pred_vals.iter().map(|v| v * 2).collect()).unwrap();
            let scaled = mu_psnr(&pred2, &gt2, &MuPsnrConfig::default()).unwrap();
            assert!((base - scaled).abs() < 1e-6);
        }
    }
}
