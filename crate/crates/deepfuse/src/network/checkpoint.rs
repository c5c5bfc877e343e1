//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4  b"DFCK"
//! version  4  u32, currently 1
//! merge    1  0 add, 1 mean, 2 max, 3 product, 4 concat
//! seed     8  u64 init seed
//! nlayers  1  u8, currently 5
//! per layer: kh u16, kw u16, cin u16, cout u16, activation u8 (0 relu, 1 linear)
//! flags    1  bit 0: training state present
//! params      f32 per parameter, layer by layer, kernel then bias
//! [train state: epochs_done u32, adam step u64, then m and v as f32 each]
//! crc      4  CRC-32 (IEEE) of everything before it
//! ```
//!
//! Parameters live on the f32 grid in memory, so a save/load round trip
//! reproduces the model bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::gradcore::{Activation, AdamState, ConvLayer, MergeMode};

use super::{ArchConfig, NetworkParams, LAYERS};

const MAGIC: &[u8; 4] = b"DFCK";
const VERSION: u32 = 1;

/// Optimizer and progress state carried alongside the parameters so that
/// interrupted training resumes bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_done: u32,
    pub adam: AdamState,
}

/// Size in bytes of the fixed part preceding the parameter payload.
pub fn header_len() -> usize {
    4 + 4 + 1 + 8 + 1 + LAYERS * 9 + 1
}

fn crc32(bytes: &[u8]) -> u32 {
    const TABLE: [u32; 256] = {
        let mut table = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            table[i] = c;
            i += 1;
        }
        table
    };
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = TABLE[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    !c
}

fn merge_code(mode: MergeMode) -> u8 {
    match mode {
        MergeMode::Add => 0,
        MergeMode::Mean => 1,
        MergeMode::Max => 2,
        MergeMode::Product => 3,
        MergeMode::Concat => 4,
    }
}

fn merge_from_code(code: u8) -> std::result::Result<MergeMode, CheckpointError> {
    Ok(match code {
        0 => MergeMode::Add,
        1 => MergeMode::Mean,
        2 => MergeMode::Max,
        3 => MergeMode::Product,
        4 => MergeMode::Concat,
        other => return Err(CheckpointError::Invalid(format!("merge code {other}"))),
    })
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes parameters (and optionally training state) to `path`.
pub fn save_checkpoint(
    params: &NetworkParams,
    path: impl AsRef<Path>,
    train_state: Option<&TrainState>,
) -> Result<()> {
    let mut buf = Vec::with_capacity(header_len() + 4 * params.param_count() + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(merge_code(params.arch().merge));
    buf.extend_from_slice(&params.arch().seed.to_le_bytes());
    buf.push(LAYERS as u8);
    for l in params.layers() {
        buf.extend_from_slice(&(l.kh as u16).to_le_bytes());
        buf.extend_from_slice(&(l.kw as u16).to_le_bytes());
        buf.extend_from_slice(&(l.cin as u16).to_le_bytes());
        buf.extend_from_slice(&(l.cout as u16).to_le_bytes());
        buf.push(match l.activation {
            Activation::ReLU => 0,
            Activation::Linear => 1,
        });
    }
    buf.push(u8::from(train_state.is_some()));
    for l in params.layers() {
        push_f32s(&mut buf, &l.kernel);
        push_f32s(&mut buf, &l.bias);
    }
    if let Some(ts) = train_state {
        if ts.adam.len() != params.param_count() {
            return Err(Error::config(format!(
                "training state covers {} parameters, model has {}",
                ts.adam.len(),
                params.param_count()
            )));
        }
        buf.extend_from_slice(&ts.epochs_done.to_le_bytes());
        buf.extend_from_slice(&ts.adam.step.to_le_bytes());
        push_f32s(&mut buf, &ts.adam.m);
        push_f32s(&mut buf, &ts.adam.v);
    }
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f64>, CheckpointError> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

/// Loads a checkpoint. The checksum covers the whole file, so truncation or
/// corruption is rejected before any model is constructed.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkParams, Option<TrainState>)> {
    let bytes = fs::read(path)?;
    let params = parse_checkpoint(&bytes)?;
    Ok(params)
}

fn parse_checkpoint(bytes: &[u8]) -> Result<(NetworkParams, Option<TrainState>)> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated { needed: 8, available: bytes.len() }.into());
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: VERSION }.into());
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated { needed: 12, available: bytes.len() }.into());
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed }.into());
    }

    let mut r = Reader { bytes: &bytes[..bytes.len() - 4], pos: 8 };
    let merge = merge_from_code(r.u8()?)?;
    let seed = r.u64()?;
    let nlayers = r.u8()? as usize;
    if nlayers != LAYERS {
        return Err(CheckpointError::Invalid(format!("expected {LAYERS} layers, found {nlayers}")).into());
    }
    let mut shapes = Vec::with_capacity(nlayers);
    for _ in 0..nlayers {
        let kh = r.u16()? as usize;
        let kw = r.u16()? as usize;
        let cin = r.u16()? as usize;
        let cout = r.u16()? as usize;
        let act = match r.u8()? {
            0 => Activation::ReLU,
            1 => Activation::Linear,
            other => {
                return Err(CheckpointError::Invalid(format!("activation code {other}")).into())
            }
        };
        shapes.push((kh, kw, cin, cout, act));
    }
    let has_state = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(CheckpointError::Invalid(format!("flag byte {other}")).into()),
    };

    let mut layers = Vec::with_capacity(nlayers);
    for &(kh, kw, cin, cout, act) in &shapes {
        let kernel = r.f32s(kh * kw * cin * cout)?;
        let bias = r.f32s(cout)?;
        layers.push(
            ConvLayer::new(kh, kw, cin, cout, kernel, bias, act)
                .map_err(|e| CheckpointError::Invalid(e.to_string()))?,
        );
    }

    let arch = ArchConfig {
        kernels: std::array::from_fn(|i| shapes[i].0),
        channels: std::array::from_fn(|i| shapes[i].3),
        merge,
        seed,
    };
    arch.validate().map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    for (i, &(_, kw, cin, _, act)) in shapes.iter().enumerate() {
        if kw != arch.kernels[i] || cin != arch.layer_cin(i) || act != arch.layer_activation(i) {
            return Err(CheckpointError::Invalid(format!("layer {i} shape disagrees with plan")).into());
        }
    }
    let params = NetworkParams::from_layers(arch, layers);

    let state = if has_state {
        let n = params.param_count();
        let epochs_done = r.u32()?;
        let step = r.u64()?;
        let m = r.f32s(n)?;
        let v = r.f32s(n)?;
        Some(TrainState { epochs_done, adam: AdamState { m, v, step } })
    } else {
        None
    };

    if r.pos != r.bytes.len() {
        return Err(CheckpointError::Invalid(format!(
            "{} trailing bytes after payload",
            r.bytes.len() - r.pos
        ))
        .into());
    }

    Ok((params, state))
}
