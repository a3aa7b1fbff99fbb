//! Evaluation manifest: a TOML list of `[[pairs]]`, each with an `id`, a
//! ground-truth `hdr16` path and either an `ldr` input (run through the
//! model) or a ready-made 16-bit `pred`. Relative paths resolve against the
//! manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use ldr2hdr_core::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub id: String,
    pub hdr16: PathBuf,
    pub ldr: Option<PathBuf>,
    pub pred: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsManifest {
    #[serde(default)]
    pub pairs: Vec<PairEntry>,
}

impl PairsManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut m: PairsManifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        if m.pairs.is_empty() {
            return Err(Error::Argument(format!("{} lists no pairs", path.display())));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut m.pairs {
            if p.ldr.is_some() == p.pred.is_some() {
                return Err(Error::Config(format!("pair {:?} needs exactly one of ldr or pred", p.id)));
            }
            for f in [Some(&mut p.hdr16), p.ldr.as_mut(), p.pred.as_mut()].into_iter().flatten() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        Ok(m)
    }

    pub fn needs_model(&self) -> bool {
        self.pairs.iter().any(|p| p.ldr.is_some())
    }
}
