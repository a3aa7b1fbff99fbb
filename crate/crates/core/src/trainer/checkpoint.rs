//! Binary checkpoints: a JSON header followed by raw little-endian arrays.
//!
//! Layout: `CHECKPOINT_MAGIC`, `u32` version, `u64` header length, header
//! bytes, payload. Every array is listed in the header with its byte offset
//! into the payload, so a reload is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Generator, StepRecord, TrainState};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{DiscriminatorParams, ParamSet};
use crate::nn::Conv2d;
use crate::tensor::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"L2HCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A training state together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    generator: String,
    config: String,
    step: usize,
    planned_steps: usize,
    epoch: usize,
    adam_g_step: u64,
    adam_d_step: u64,
    loss_tail: Vec<StepRecord>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

fn shape_of<T>(c: &Conv2d<T>, weight: bool) -> Vec<usize> {
    if weight {
        vec![c.k, c.k, c.cin, c.cout]
    } else {
        vec![c.cout]
    }
}

/// `(name, shape)` of every array of a parameter set, in `arrays()` order.
fn layout<P: ParamSet<f32>>(p: &P) -> Vec<(String, Vec<usize>)> {
    p.convs()
        .into_iter()
        .flat_map(|(n, c)| [(format!("{n}.weight"), shape_of(c, true)), (format!("{n}.bias"), shape_of(c, false))])
        .collect()
}

struct Writer {
    arrays: Vec<ArrayEntry>,
    payload: Vec<u8>,
}

impl Writer {
    fn push_set<P: ParamSet<f32>>(&mut self, prefix: &str, p: &P) {
        for ((name, shape), (_, values)) in layout(p).into_iter().zip(p.arrays()) {
            self.push(format!("{prefix}/{name}"), shape, values);
        }
    }

    fn push_moments<P: ParamSet<f32>>(&mut self, prefix: &str, p: &P, adam: &AdamState<f32>) {
        for (i, (name, shape)) in layout(p).into_iter().enumerate() {
            self.push(format!("{prefix}.m/{name}"), shape.clone(), &adam.m[i]);
            self.push(format!("{prefix}.v/{name}"), shape, &adam.v[i]);
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, values: &[f32]) {
        self.arrays.push(ArrayEntry {
            name,
            shape,
            dtype: f32::DTYPE.into(),
            offset: self.payload.len(),
            len: values.len(),
        });
        self.payload.extend(f32::to_le_bytes_vec(values));
    }
}

/// Writes `state` atomically (temporary file, then rename).
pub fn save_checkpoint(path: &Path, cfg: &TrainConfig, state: &TrainState, epoch: usize) -> Result<()> {
    let mut w = Writer {
        arrays: Vec::new(),
        payload: Vec::new(),
    };
    w.push_set("gen", &state.gen);
    w.push_set("disc", &state.disc);
    w.push_moments("adam_g", &state.gen, &state.adam_g);
    w.push_moments("adam_d", &state.disc, &state.adam_d);
    let header = Header {
        generator: state.gen.kind().into(),
        config: cfg.to_toml_string(),
        step: state.step,
        planned_steps: state.planned_steps,
        epoch,
        adam_g_step: state.adam_g.step,
        adam_d_step: state.adam_d.step,
        loss_tail: state.history.clone(),
        arrays: w.arrays,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header encoding: {e}")))?;

    let tmp = path.with_extension("ckpt.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(CHECKPOINT_MAGIC)?;
        f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(&header)?;
        f.write_all(&w.payload)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    arrays: Vec<ArrayEntry>,
    payload: &'a [u8],
}

impl Reader<'_> {
    fn take(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let e = self
            .arrays
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
        if e.shape != shape || e.dtype != f32::DTYPE {
            return Err(Error::Checkpoint(format!(
                "array {name}: stored {:?} {} but the configuration expects {shape:?} {}",
                e.shape,
                e.dtype,
                f32::DTYPE
            )));
        }
        let bytes = e.len * 4;
        let end = e.offset.checked_add(bytes).filter(|&end| end <= self.payload.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("array {name} runs past the end of the file")));
        };
        Ok(f32::from_le_bytes_slice(&self.payload[e.offset..end]))
    }

    fn fill_set<P: ParamSet<f32>>(&self, prefix: &str, p: &mut P) -> Result<()> {
        let layout = layout(p);
        for ((name, shape), (_, dst)) in layout.iter().zip(p.arrays_mut()) {
            *dst = self.take(&format!("{prefix}/{name}"), shape)?;
        }
        Ok(())
    }

    fn moments<P: ParamSet<f32>>(&self, prefix: &str, p: &P, step: u64) -> Result<AdamState<f32>> {
        let mut adam = AdamState::new(p);
        for (i, (name, shape)) in layout(p).iter().enumerate() {
            adam.m[i] = self.take(&format!("{prefix}.m/{name}"), shape)?;
            adam.v[i] = self.take(&format!("{prefix}.v/{name}"), shape)?;
        }
        adam.step = step;
        Ok(adam)
    }
}

/// Reads a checkpoint written by [`save_checkpoint`]. Returns the checkpoint
/// and the epoch it was taken in.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let hend = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..hend]).map_err(|e| bad(&format!("header: {e}")))?;
    let config = TrainConfig::from_toml_str(&header.config)?;

    let reader = Reader {
        arrays: header.arrays,
        payload: &bytes[hend..],
    };
    let mut gen = Generator::<f32>::zeros(&config);
    if gen.kind() != header.generator {
        return Err(bad(&format!("generator kind {} does not match the stored configuration", header.generator)));
    }
    let mut disc = DiscriminatorParams::<f32>::zeros();
    reader.fill_set("gen", &mut gen)?;
    reader.fill_set("disc", &mut disc)?;
    let adam_g = reader.moments("adam_g", &gen, header.adam_g_step)?;
    let adam_d = reader.moments("adam_d", &disc, header.adam_d_step)?;
    let state = TrainState {
        gen,
        disc,
        adam_g,
        adam_d,
        step: header.step,
        planned_steps: header.planned_steps,
        history: header.loss_tail,
    };
    Ok((Checkpoint { config, state }, header.epoch))
}

#[cfg(test)]
mod tests {
    use super::super::tests::{random_sample, small_config};
    use super::super::train_step;
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = small_config();
        let mut state = TrainState::new(&cfg, 5).unwrap();
        train_step(&[random_sample(16, 1)], &mut state, &cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save_checkpoint(&path, &cfg, &state, 0).unwrap();
        let (ck, epoch) = load_checkpoint(&path).unwrap();
        assert_eq!(epoch, 0);
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.state, state);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"nope").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let cfg = small_config();
        let state = TrainState::new(&cfg, 1).unwrap();
        save_checkpoint(&path, &cfg, &state, 0).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("past the end"), "{err}");
    }
}
