use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::PerceiverConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::hypernet::HypernetConfig;
use crate::nn::ParamSet;
use crate::numerics::AdamState;

const CK_MAGIC: &[u8; 8] = b"HSCK0001";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Encoder only (CTC pretraining output; the CTC head is discarded).
    Encoder,
    /// Encoder + hypernet + detector (+ optimizer state).
    Full,
}

/// Architecture description embedded in every checkpoint. Its canonical JSON
/// bytes are the config fingerprint; loading against different configs is
/// refused.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypernet: Option<HypernetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perceiver: Option<PerceiverConfig>,
}

impl CheckpointMeta {
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("meta serializes");
        crate::dataset::fnv1a64(json.as_bytes())
    }
}

/// Named float32 records plus training bookkeeping, stored as
/// magic | u32 meta_len | meta JSON | u64 fingerprint | u32 epoch |
/// f64 val_loss | u64 adam_step | u32 n_records | records | u32 CRC32.
/// Each record is u32 name_len | name | u32 ndim | u32 dims | f32 data.
/// Integers and floats little-endian. Round-trips bit-exactly.
#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub epoch: u32,
    pub val_loss: f64,
    pub adam_step: u64,
    pub records: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f32>)> {
        self.records.iter().find(|(n, _, _)| n == name)
    }

    pub fn push_params(&mut self, params: &ParamSet<f32>) {
        for (name, tensor) in params.iter() {
            self.records
                .push((name.clone(), tensor.shape().to_vec(), tensor.to_vec()));
        }
    }

    /// Attach optimizer moments for a parameter set, keyed by parameter name.
    pub fn push_adam(&mut self, params: &ParamSet<f32>, adam: &AdamState<f32>) {
        let (m, v) = adam.moments();
        for (i, (name, tensor)) in params.iter().enumerate() {
            self.records
                .push((format!("adam.m.{name}"), tensor.shape().to_vec(), m[i].clone()));
            self.records
                .push((format!("adam.v.{name}"), tensor.shape().to_vec(), v[i].clone()));
        }
        self.adam_step = adam.step_count();
    }

    /// Overwrite a live parameter set from the stored records. Every
    /// parameter must be present with a matching shape.
    pub fn load_into(&self, params: &ParamSet<f32>, path_for_errors: &Path) -> Result<()> {
        for (name, tensor) in params.iter() {
            let Some((_, shape, data)) = self.get(name) else {
                return Err(Error::format(
                    path_for_errors,
                    format!("checkpoint is missing parameter {name:?}"),
                ));
            };
            if shape.as_slice() != tensor.shape() {
                return Err(Error::format(
                    path_for_errors,
                    format!(
                        "parameter {name:?} has shape {shape:?}, model wants {:?}",
                        tensor.shape()
                    ),
                ));
            }
            tensor.write_data(|d| d.copy_from_slice(data));
        }
        Ok(())
    }

    /// Restore optimizer state for a parameter set, if the checkpoint has it.
    pub fn restore_adam(
        &self,
        params: &ParamSet<f32>,
        lr: f32,
        path_for_errors: &Path,
    ) -> Result<Option<AdamState<f32>>> {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, _) in params.iter() {
            match (self.get(&format!("adam.m.{name}")), self.get(&format!("adam.v.{name}"))) {
                (Some((_, _, md)), Some((_, _, vd))) => {
                    m.push(md.clone());
                    v.push(vd.clone());
                }
                _ => return Ok(None),
            }
        }
        let tensors = params.tensors();
        AdamState::from_parts(&tensors, lr, self.adam_step, m, v)
            .map(Some)
            .map_err(|e| Error::format(path_for_errors, e.to_string()))
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let meta_json = serde_json::to_string(&ck.meta).expect("meta serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(CK_MAGIC);
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_json.as_bytes());
    buf.extend_from_slice(&ck.meta.fingerprint().to_le_bytes());
    buf.extend_from_slice(&ck.epoch.to_le_bytes());
    buf.extend_from_slice(&ck.val_loss.to_le_bytes());
    buf.extend_from_slice(&ck.adam_step.to_le_bytes());
    buf.extend_from_slice(&(ck.records.len() as u32).to_le_bytes());
    for (name, shape, data) in &ck.records {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::format(path, "file too short for a checkpoint"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::format(
            path,
            format!("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"),
        ));
    }
    let mut cur = Cursor { bytes: body, pos: 0, path };
    if cur.take(8)? != CK_MAGIC {
        return Err(Error::format(path, "bad magic, want HSCK0001"));
    }
    let meta_len = cur.u32()? as usize;
    let meta_json = std::str::from_utf8(cur.take(meta_len)?)
        .map_err(|_| Error::format(path, "meta is not UTF-8"))?;
    let meta: CheckpointMeta =
        serde_json::from_str(meta_json).map_err(|e| Error::format(path, e.to_string()))?;
    let stored_fp = cur.u64()?;
    if stored_fp != meta.fingerprint() {
        return Err(Error::format(path, "config fingerprint does not match stored meta"));
    }
    let epoch = cur.u32()?;
    let val_loss = cur.f64()?;
    let adam_step = cur.u64()?;
    let n_records = cur.u32()? as usize;
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::format(path, "record name is not UTF-8"))?
            .to_string();
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4)?;
        let mut data = Vec::with_capacity(numel);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        records.push((name, shape, data));
    }
    if cur.pos != body.len() {
        return Err(Error::format(path, "trailing bytes after records"));
    }
    Ok(Checkpoint {
        meta,
        epoch,
        val_loss,
        adam_step,
        records,
    })
}

/// Expected-vs-found fingerprint gate used by loaders that already know the
/// configuration they want.
pub fn require_fingerprint(ck: &Checkpoint, expected: &CheckpointMeta, path: &Path) -> Result<()> {
    if ck.meta.fingerprint() != expected.fingerprint() {
        return Err(Error::format(
            path,
            format!(
                "checkpoint was built for a different configuration (stored {:#018x}, wanted {:#018x})",
                ck.meta.fingerprint(),
                expected.fingerprint()
            ),
        ));
    }
    Ok(())
}
