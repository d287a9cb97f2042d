//! Self-describing checkpoints: configuration snapshot, every named weight
//! tensor, the serialized prior coding tables (16-bit fixed-point
//! cumulative frequencies), the step counter and RNG seed, all behind a
//! trailing CRC32.

use std::fs;
use std::path::Path;

use candle_core::DType;
use hdjscc_core::config::ExperimentConfig;
use hdjscc_entropy::{CdfTable, TOTAL_FREQ};
use hdjscc_models::oblivious::SignalCompressor;
use hdjscc_models::FullModel;
use serde::{Deserialize, Serialize};

use crate::deploy::build_prior_tables;
use crate::{PipelineError, Result};

const MAGIC: &[u8; 4] = b"HDJC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `full` for the hybrid system, `oblivious` for the signal compressor.
    pub kind: String,
    pub config: ExperimentConfig,
    pub step: u64,
    pub base_seed: u64,
}

pub enum LoadedCheckpoint {
    Full {
        model: Box<FullModel>,
        meta: CheckpointMeta,
        prior_tables: Vec<CdfTable>,
    },
    Oblivious {
        compressor: Box<SignalCompressor>,
        meta: CheckpointMeta,
        prior_tables: Vec<CdfTable>,
    },
}

fn dtype_code(dtype: DType) -> Result<u8> {
    match dtype {
        DType::F32 => Ok(0),
        DType::F64 => Ok(1),
        other => Err(PipelineError::Checkpoint(format!(
            "unsupported checkpoint dtype {other:?}"
        ))),
    }
}

fn code_dtype(code: u8) -> Result<DType> {
    match code {
        0 => Ok(DType::F32),
        1 => Ok(DType::F64),
        other => Err(PipelineError::Checkpoint(format!(
            "unknown dtype code {other}"
        ))),
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
}

fn serialize(
    store: &hdjscc_models::ParamStore,
    meta: &CheckpointMeta,
    tables: &[CdfTable],
    dtype: DType,
) -> Result<Vec<u8>> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.put_u16(VERSION);
    w.buf.push(dtype_code(dtype)?);
    w.buf.push(if meta.kind == "oblivious" { 1 } else { 0 });
    let meta_text = toml::to_string(meta)
        .map_err(|e| PipelineError::Checkpoint(format!("serializing meta: {e}")))?;
    w.put_u32(meta_text.len() as u32);
    w.buf.extend_from_slice(meta_text.as_bytes());
    w.put_u64(meta.step);
    w.put_u64(meta.base_seed);

    let names = store.names().to_vec();
    w.put_u32(names.len() as u32);
    for name in &names {
        let var = store.get(name)?;
        let dims = var.dims().to_vec();
        w.put_u16(name.len() as u16);
        w.buf.extend_from_slice(name.as_bytes());
        w.buf.push(dims.len() as u8);
        for d in &dims {
            w.put_u32(*d as u32);
        }
        let values = store.read_f64(name)?;
        match dtype {
            DType::F32 => {
                for v in values {
                    w.buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            _ => {
                for v in values {
                    w.buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    w.put_u32(tables.len() as u32);
    for t in tables {
        w.buf.extend_from_slice(&(t.support_offset() as i32).to_be_bytes());
        w.put_u32(t.n_symbols() as u32);
        // Interior boundaries only; 0 and 65536 are implicit, so every
        // stored value fits 16 bits.
        for &c in &t.cum()[1..t.n_symbols()] {
            w.put_u16(c as u16);
        }
    }

    let crc = crc32fast::hash(&w.buf);
    w.put_u32(crc);
    Ok(w.buf)
}

pub fn save_full(model: &FullModel, step: u64, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "full".into(),
        config: model.cfg.clone(),
        step,
        base_seed: model.cfg.seed,
    };
    let tables = build_prior_tables(model)?;
    let bytes = serialize(&model.store, &meta, &tables, model.dtype())?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn save_oblivious(comp: &SignalCompressor, step: u64, path: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        kind: "oblivious".into(),
        config: comp.cfg.clone(),
        step,
        base_seed: comp.cfg.seed,
    };
    let snapshot = comp.prior.snapshot(&comp.store)?;
    let tables = snapshot.build_tables()?;
    let bytes = serialize(&comp.store, &meta, &tables, comp.store.dtype())?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(PipelineError::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 + 2 + 2 + 4 {
        return Err(PipelineError::Checkpoint("file too short".into()));
    }
    let crc_stored = u32::from_be_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if crc != crc_stored {
        return Err(PipelineError::Checkpoint(format!(
            "checksum {crc:#010x} != stored {crc_stored:#010x}"
        )));
    }
    let mut r = Reader {
        bytes: &bytes[..bytes.len() - 4],
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(PipelineError::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(PipelineError::Checkpoint(format!(
            "checkpoint version {version} unsupported (this build reads {VERSION})"
        )));
    }
    let dtype = code_dtype(r.u8()?)?;
    let _kind_code = r.u8()?;
    let meta_len = r.u32()? as usize;
    let meta_text = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|e| PipelineError::Checkpoint(format!("meta utf8: {e}")))?;
    let mut meta: CheckpointMeta = toml::from_str(meta_text)
        .map_err(|e| PipelineError::Checkpoint(format!("meta parse: {e}")))?;
    meta.step = r.u64()?;
    meta.base_seed = r.u64()?;

    enum Target {
        Full(Box<FullModel>),
        Oblivious(Box<SignalCompressor>),
    }
    let target = if meta.kind == "oblivious" {
        Target::Oblivious(Box::new(SignalCompressor::new(
            &meta.config,
            dtype,
            meta.base_seed,
        )?))
    } else {
        Target::Full(Box::new(FullModel::new(&meta.config, dtype, meta.base_seed)?))
    };
    let store = match &target {
        Target::Full(m) => &m.store,
        Target::Oblivious(c) => &c.store,
    };

    let n_tensors = r.u32()? as usize;
    let elem = dtype.size_in_bytes();
    for _ in 0..n_tensors {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| PipelineError::Checkpoint(format!("name utf8: {e}")))?
            .to_string();
        let ndim = r.u8()? as usize;
        let mut count = 1usize;
        for _ in 0..ndim {
            count *= r.u32()? as usize;
        }
        let raw = r.take(count * elem)?;
        let values: Vec<f64> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if !store.contains(&name) {
            return Err(PipelineError::Checkpoint(format!(
                "checkpoint tensor '{name}' has no counterpart in the configured model"
            )));
        }
        store.write_f64(&name, &values)?;
    }

    let n_tables = r.u32()? as usize;
    let mut prior_tables = Vec::with_capacity(n_tables);
    for _ in 0..n_tables {
        let offset = i64::from(r.i32()?);
        let n_sym = r.u32()? as usize;
        let mut cum = Vec::with_capacity(n_sym + 1);
        cum.push(0u32);
        for _ in 0..n_sym - 1 {
            cum.push(u32::from(r.u16()?));
        }
        cum.push(TOTAL_FREQ);
        prior_tables.push(CdfTable::new(cum, offset)?);
    }

    Ok(match target {
        Target::Full(model) => LoadedCheckpoint::Full {
            model,
            meta,
            prior_tables,
        },
        Target::Oblivious(compressor) => LoadedCheckpoint::Oblivious {
            compressor,
            meta,
            prior_tables,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use hdjscc_core::config::ExperimentConfig;

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_32();
        cfg.jscc.internal_channels = 8;
        cfg.jscc.n_residual_blocks = 1;
        cfg.compressor.internal_channels = 8;
        cfg.compressor.c_z = 6;
        cfg.compressor.c_v = 4;
        cfg
    }

    #[test]
    fn full_checkpoint_round_trips_bit_exactly() {
        let cfg = tiny_cfg();
        let model = FullModel::new(&cfg, DType::F32, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_full(&model, 123, &path).unwrap();
        match load(&path).unwrap() {
            LoadedCheckpoint::Full {
                model: loaded,
                meta,
                prior_tables,
            } => {
                assert_eq!(meta.step, 123);
                assert_eq!(meta.kind, "full");
                assert_eq!(meta.config, cfg);
                assert!(!prior_tables.is_empty());
                for name in model.store.names() {
                    assert_eq!(
                        model.store.read_f64(name).unwrap(),
                        loaded.store.read_f64(name).unwrap(),
                        "tensor {name} drifted"
                    );
                }
                let expect = build_prior_tables(&model).unwrap();
                assert_eq!(prior_tables, expect);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn corruption_and_version_mismatch_are_rejected() {
        let cfg = tiny_cfg();
        let model = FullModel::new(&cfg, DType::F32, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_full(&model, 0, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[100] ^= 0xFF;
        let bad = dir.path().join("bad.ckpt");
        fs::write(&bad, &bytes).unwrap();
        assert!(load(&bad).is_err());

        let mut bytes = fs::read(&path).unwrap();
        bytes[5] = 99; // version byte
        // Fix the CRC so only the version check can fire.
        let crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&crc.to_be_bytes());
        fs::write(&bad, &bytes).unwrap();
        let err = load(&bad).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn oblivious_checkpoint_round_trips() {
        let cfg = tiny_cfg();
        let comp = SignalCompressor::new(&cfg, DType::F32, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.ckpt");
        save_oblivious(&comp, 5, &path).unwrap();
        match load(&path).unwrap() {
            LoadedCheckpoint::Oblivious {
                compressor, meta, ..
            } => {
                assert_eq!(meta.kind, "oblivious");
                for name in comp.store.names() {
                    assert_eq!(
                        comp.store.read_f64(name).unwrap(),
                        compressor.store.read_f64(name).unwrap()
                    );
                }
            }
            _ => panic!("wrong kind"),
        }
    }
}
