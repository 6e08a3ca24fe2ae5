use std::fs;
use std::io::Write;
use std::path::Path;

use super::network::Architecture;
use super::{Hyperparams, TrafficNet};
use crate::error::{Error, Result};
use crate::nn::{LrnParams, Tensor};

const MAGIC: &[u8; 8] = b"TGNETCK\0";
const VERSION: u32 = 1;

/// Bookkeeping stored next to the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMeta {
    pub epochs_completed: u64,
    pub final_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TrafficNet,
    pub hyperparams: Hyperparams,
    pub meta: TrainingMeta,
}

/// Serializes a checkpoint.
///
/// Layout (little-endian): magic, version `u32`, `num_classes u32`, ten
/// architecture sizes as `u32`, LRN constants, hyperparameters, training
/// metadata, tensor count `u32`, then per tensor `ndim u32`, dims as `u64`
/// and the values as `f64`.
pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let m = &ckpt.model;
    let a = &m.arch;
    let hp = &ckpt.hyperparams;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, m.num_classes as u32);
    for v in [
        a.input_len,
        a.conv1_filters,
        a.conv2_filters,
        a.kernel_width,
        a.pool_kernel,
        a.pool_stride,
        a.dense_units,
        a.lstm_steps,
        a.lstm_hidden,
        a.lstm_layers,
    ] {
        put_u32(&mut out, v as u32);
    }
    put_f64(&mut out, m.lrn.k);
    put_u32(&mut out, m.lrn.n as u32);
    put_f64(&mut out, m.lrn.alpha);
    put_f64(&mut out, m.lrn.beta);
    put_u64(&mut out, hp.epoch as u64);
    put_u64(&mut out, hp.batchsize as u64);
    for v in [hp.learn_rate, hp.dropout, hp.lambda_conv, hp.lambda_lstm] {
        put_f64(&mut out, v);
    }
    put_u64(&mut out, ckpt.meta.epochs_completed);
    put_f64(&mut out, ckpt.meta.final_loss);
    put_u64(&mut out, ckpt.meta.seed);
    let tensors = m.tensors();
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut out, t.ndim() as u32);
        for &d in t.shape() {
            put_u64(&mut out, d as u64);
        }
        for &v in t.data() {
            put_f64(&mut out, v);
        }
    }
    out
}

/// Parses a checkpoint; never returns a partially filled model.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let num_classes = r.u32()? as usize;
    let mut sizes = [0usize; 10];
    for s in &mut sizes {
        *s = r.u32()? as usize;
    }
    let arch = Architecture {
        input_len: sizes[0],
        conv1_filters: sizes[1],
        conv2_filters: sizes[2],
        kernel_width: sizes[3],
        pool_kernel: sizes[4],
        pool_stride: sizes[5],
        dense_units: sizes[6],
        lstm_steps: sizes[7],
        lstm_hidden: sizes[8],
        lstm_layers: sizes[9],
    };
    let lrn = LrnParams {
        k: r.f64()?,
        n: r.u32()? as usize,
        alpha: r.f64()?,
        beta: r.f64()?,
    };
    let hyperparams = Hyperparams {
        epoch: r.u64()? as usize,
        batchsize: r.u64()? as usize,
        learn_rate: r.f64()?,
        dropout: r.f64()?,
        lambda_conv: r.f64()?,
        lambda_lstm: r.f64()?,
    };
    let meta = TrainingMeta {
        epochs_completed: r.u64()?,
        final_loss: r.f64()?,
        seed: r.u64()?,
    };
    // Builds the shape skeleton; validates the architecture as a side effect.
    let mut model = TrafficNet::build_with(arch, lrn, num_classes, 0)
        .map_err(|e| Error::format(format!("checkpoint header invalid: {e}")))?;
    let count = r.u32()? as usize;
    let expected = model.tensors().len();
    if count != expected {
        return Err(Error::format(format!("checkpoint holds {count} tensors, architecture needs {expected}")));
    }
    for (i, slot) in model.tensors_mut().into_iter().enumerate() {
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        if shape != slot.shape() {
            return Err(Error::format(format!(
                "tensor {i} has shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        let raw = r.take(slot.len() * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        *slot = Tensor::from_vec(&shape, data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        hyperparams,
        meta,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&write_checkpoint(ckpt))?;
    Ok(())
}

/// Loads a checkpoint, optionally insisting on a class count.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_classes: Option<usize>) -> Result<Checkpoint> {
    let ckpt = read_checkpoint(&fs::read(path)?)?;
    if let Some(expected) = expected_classes {
        if ckpt.model.num_classes != expected {
            return Err(Error::ClassCountMismatch {
                expected,
                found: ckpt.model.num_classes,
            });
        }
    }
    Ok(ckpt)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(format!("checkpoint truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
