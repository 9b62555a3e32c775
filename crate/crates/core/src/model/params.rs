use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

/// Named trainable parameters with seeded initialization.
///
/// Tensors inserted before a model is built (pretrained weights or a loaded
/// checkpoint) are picked up by `get_or_init` instead of fresh values.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    preset: HashMap<String, Tensor>,
    rng: ChaCha8Rng,
    strict: bool,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            preset: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            strict: false,
            device: Device::Cpu,
        }
    }

    /// Store whose parameters must all come from `tensors`.
    pub fn from_tensors(tensors: HashMap<String, Tensor>) -> Self {
        let mut store = ParamStore::new(0);
        store.preset = tensors;
        store.strict = true;
        store
    }

    pub fn preset(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.preset.insert(name.into(), tensor);
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.as_tensor().clone());
        }
        let tensor = match self.preset.remove(name) {
            Some(t) => {
                if t.dims() != shape {
                    return Err(ModelError::Config(format!(
                        "parameter {name}: stored shape {:?}, expected {shape:?}",
                        t.dims()
                    )));
                }
                t.to_dtype(DType::F32)?
            }
            None if self.strict => {
                return Err(ModelError::Config(format!("parameter {name} missing from stored weights")))
            }
            None => self.fresh(shape, init)?,
        };
        let var = Var::from_tensor(&tensor)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(t)
    }

    fn fresh(&mut self, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
            }
            Init::Uniform(bound) => (0..n)
                .map(|_| self.rng.random_range(-bound..=bound) as f32)
                .collect(),
        };
        Ok(Tensor::from_vec(values, shape, &self.device)?)
    }

    /// Names of preset tensors no parameter asked for.
    pub fn unused_presets(&self) -> Vec<String> {
        let mut names: Vec<String> = self.preset.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Parameters whose name starts with `prefix`.
    pub fn group(&self, prefix: &str) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for (k, v) in &self.vars {
            if let Some(t) = snapshot.get(k) {
                v.set(t)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    pub fn load_tensors(path: &Path) -> Result<HashMap<String, Tensor>> {
        Ok(candle_core::safetensors::load(path, &Device::Cpu)?)
    }
}
