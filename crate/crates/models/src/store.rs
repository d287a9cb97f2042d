//! Named parameter store with deterministic initialization.
//!
//! Every parameter is created from an RNG stream derived from the model
//! seed and the parameter name, so weights are reproducible regardless of
//! construction order, thread counts or platform.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use hdjscc_core::rng::{self, purpose};
use rand::Rng;

use crate::{ModelError, Result};

#[derive(Debug, Clone)]
pub enum Init {
    Const(f64),
    Uniform { lo: f64, hi: f64 },
    /// Torch-style Kaiming uniform over the given fan-in.
    KaimingUniform { fan_in: usize },
    Values(Vec<f64>),
}

pub struct ParamStore {
    device: Device,
    dtype: DType,
    seed: u64,
    names: Vec<String>,
    vars: HashMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            device: Device::Cpu,
            dtype,
            seed,
            names: Vec::new(),
            vars: HashMap::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Creates (or retrieves) a named parameter and hands back the tensor
    /// view that layers capture; optimizer steps through the [`Var`] update
    /// the same storage.
    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Uniform { lo, hi } => {
                let mut r = rng::stream(self.seed, purpose::INIT, &[rng::name_tag(name)]);
                (0..n).map(|_| r.gen_range(lo..hi)).collect()
            }
            Init::KaimingUniform { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt();
                let mut r = rng::stream(self.seed, purpose::INIT, &[rng::name_tag(name)]);
                (0..n).map(|_| r.gen_range(-bound..bound)).collect()
            }
            Init::Values(v) => {
                if v.len() != n {
                    return Err(ModelError::Shape(format!(
                        "init for '{name}' has {} values, shape {shape:?} needs {n}",
                        v.len()
                    )));
                }
                v
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.names.push(name.to_string());
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.vars
            .get(name)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// All parameters, in creation order.
    pub fn all_vars(&self) -> Vec<Var> {
        self.names.iter().map(|n| self.vars[n].clone()).collect()
    }

    /// Parameters whose names start with any of the prefixes.
    pub fn vars_with_prefix(&self, prefixes: &[&str]) -> Vec<Var> {
        self.names
            .iter()
            .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|n| self.vars[n].clone())
            .collect()
    }

    /// Parameters excluded by every prefix; the trainable set when some
    /// modules are frozen.
    pub fn vars_without_prefix(&self, prefixes: &[&str]) -> Vec<Var> {
        self.names
            .iter()
            .filter(|n| !prefixes.iter().any(|p| n.starts_with(p)))
            .map(|n| self.vars[n].clone())
            .collect()
    }

    pub fn names_with_prefix(&self, prefixes: &[&str]) -> Vec<String> {
        self.names
            .iter()
            .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
            .cloned()
            .collect()
    }

    pub fn param_count(&self, prefixes: &[&str]) -> usize {
        self.names
            .iter()
            .filter(|n| prefixes.is_empty() || prefixes.iter().any(|p| n.starts_with(p)))
            .map(|n| self.vars[n].elem_count())
            .sum()
    }

    pub fn read_f64(&self, name: &str) -> Result<Vec<f64>> {
        let v = self.get(name)?;
        Ok(v.as_tensor()
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?)
    }

    pub fn write_f64(&self, name: &str, values: &[f64]) -> Result<()> {
        let var = self.get(name)?;
        let shape = var.shape().clone();
        let t = Tensor::from_vec(values.to_vec(), shape.dims(), &self.device)?
            .to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    /// Copies every parameter under `prefix` from another store (bit-equal
    /// up to dtype conversion). Missing counterparts are an error.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefixes: &[&str]) -> Result<usize> {
        let mut copied = 0;
        for name in self.names_with_prefix(prefixes) {
            let src = other.read_f64(&name)?;
            self.write_f64(&name, &src)?;
            copied += 1;
        }
        Ok(copied)
    }

    /// Order-stable FNV hash of raw little-endian weight bytes under the
    /// given prefixes; used to verify freezing contracts.
    pub fn weights_hash(&self, prefixes: &[&str]) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for name in self.names_with_prefix(prefixes) {
            for v in self.read_f64(&name).expect("registered param") {
                for b in v.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01B3);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_name_not_per_order() {
        let mut a = ParamStore::new(DType::F32, 9);
        let ta1 = a
            .var("x.w", &[4, 3], Init::KaimingUniform { fan_in: 3 })
            .unwrap();
        let _ta2 = a.var("y.w", &[2], Init::Uniform { lo: -1.0, hi: 1.0 }).unwrap();

        let mut b = ParamStore::new(DType::F32, 9);
        let _tb2 = b.var("y.w", &[2], Init::Uniform { lo: -1.0, hi: 1.0 }).unwrap();
        let tb1 = b
            .var("x.w", &[4, 3], Init::KaimingUniform { fan_in: 3 })
            .unwrap();

        let va = ta1.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = tb1.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);

        let mut c = ParamStore::new(DType::F32, 10);
        let tc = c
            .var("x.w", &[4, 3], Init::KaimingUniform { fan_in: 3 })
            .unwrap();
        let vc = tc.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_ne!(va, vc);
    }

    #[test]
    fn prefix_selection_and_hashing() {
        let mut s = ParamStore::new(DType::F32, 1);
        s.var("f_s.conv.w", &[8], Init::Const(0.5)).unwrap();
        s.var("g_d.conv.w", &[8], Init::Const(0.25)).unwrap();
        s.var("prior.h0", &[4], Init::Const(1.0)).unwrap();
        assert_eq!(s.vars_with_prefix(&["f_s."]).len(), 1);
        assert_eq!(s.vars_without_prefix(&["f_s."]).len(), 2);
        let h0 = s.weights_hash(&["f_s."]);
        s.write_f64("g_d.conv.w", &[0.0; 8]).unwrap();
        assert_eq!(s.weights_hash(&["f_s."]), h0);
        s.write_f64("f_s.conv.w", &[0.0; 8]).unwrap();
        assert_ne!(s.weights_hash(&["f_s."]), h0);
    }

    #[test]
    fn copy_prefix_transfers_bits() {
        let mut a = ParamStore::new(DType::F32, 3);
        a.var("f_s.w", &[6], Init::Uniform { lo: -1.0, hi: 1.0 }).unwrap();
        let mut b = ParamStore::new(DType::F32, 4);
        b.var("f_s.w", &[6], Init::Uniform { lo: -1.0, hi: 1.0 }).unwrap();
        assert_ne!(a.read_f64("f_s.w").unwrap(), b.read_f64("f_s.w").unwrap());
        b.copy_prefix_from(&a, &["f_s."]).unwrap();
        assert_eq!(a.read_f64("f_s.w").unwrap(), b.read_f64("f_s.w").unwrap());
    }
}
