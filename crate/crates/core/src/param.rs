//! Named trainable parameters and non-trainable buffers of a model.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Mutex, MutexGuard};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// N(0, 2/fan_in)
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
    Constant(f32),
}

#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    tensor: Tensor,
    frozen: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn value(&self) -> &[f32] {
        self.tensor.data()
    }

    /// Replaces the value with a fresh tensor; any accumulated gradient is
    /// dropped.
    pub fn set_value(&mut self, data: Vec<f32>) -> Result<()> {
        self.tensor = if self.frozen {
            Tensor::new(self.tensor.shape(), data)?
        } else {
            Tensor::leaf(self.tensor.shape(), data)?
        };
        Ok(())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Frozen parameters take no part in autograd, so backward passes skip
    /// their gradients entirely.
    pub fn set_frozen(&mut self, frozen: bool) {
        if frozen != self.frozen {
            self.frozen = frozen;
            let data = self.tensor.to_vec();
            self.set_value(data).expect("same shape");
        }
    }
}

#[derive(Debug)]
pub struct Buffer {
    name: String,
    shape: Vec<usize>,
    data: Mutex<Vec<f32>>,
}

impl Buffer {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lock(&self) -> MutexGuard<'_, Vec<f32>> {
        self.data.lock().unwrap()
    }
}

/// Owns every parameter and buffer of one model, addressed by id from the
/// layers and by dotted name from training code and checkpoints.
#[derive(Debug)]
pub struct ParamStore {
    seed: u64,
    params: Vec<Parameter>,
    buffers: Vec<Buffer>,
    names: HashMap<String, Slot>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

/// FNV-1a over the name, mixed with the model seed, so a parameter's initial
/// value depends only on (seed, name) and not on construction order.
fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: Vec::new(),
            buffers: Vec::new(),
            names: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn claim(&mut self, name: &str, slot: Slot) -> Result<()> {
        if self.names.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        self.names.insert(name.to_string(), slot);
        Ok(())
    }

    pub fn add_param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::HeNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f32).sqrt();
                let dist = Normal::new(0.0f32, std).map_err(|e| Error::Config(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(v) => vec![v; n],
        };
        let tensor = Tensor::leaf(shape, data)?;
        self.claim(name, Slot::Param(self.params.len()))?;
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
            frozen: false,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: &str, shape: &[usize], fill: f32) -> Result<BufferId> {
        let n: usize = shape.iter().product();
        self.claim(name, Slot::Buffer(self.buffers.len()))?;
        self.buffers.push(Buffer {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: Mutex::new(vec![fill; n]),
        });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn buffer(&self, id: BufferId) -> &Buffer {
        &self.buffers[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        match self.names.get(name)? {
            Slot::Param(i) => Some(&self.params[*i]),
            Slot::Buffer(_) => None,
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        match self.names.get(name)? {
            Slot::Param(i) => Some(&mut self.params[*i]),
            Slot::Buffer(_) => None,
        }
    }

    pub fn get_buffer(&self, name: &str) -> Option<&Buffer> {
        match self.names.get(name)? {
            Slot::Buffer(i) => Some(&self.buffers[*i]),
            Slot::Param(_) => None,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = &Buffer> {
        self.buffers.iter()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Sets the frozen flag on every parameter whose name starts with
    /// `prefix`. Matching nothing is an error so a typo cannot silently
    /// freeze nothing.
    pub fn freeze_prefix(&mut self, prefix: &str, frozen: bool) -> Result<usize> {
        let mut hits = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.set_frozen(frozen);
            hits += 1;
        }
        if hits == 0 {
            return Err(Error::UnknownNamespace(prefix.to_string()));
        }
        Ok(hits)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.params.iter().any(|p| p.name.starts_with(prefix))
    }

    pub fn set_all_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.set_frozen(frozen);
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    /// Copies of all parameter values, keyed by name.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<f32>> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value().to_vec()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.add_param("a.weight", &[2], Init::Zeros).unwrap();
        assert!(s.add_param("a.weight", &[2], Init::Zeros).is_err());
        assert!(s.add_buffer("a.weight", &[2], 0.0).is_err());
    }

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let mut a = ParamStore::new(3);
        a.add_param("x", &[4], Init::Zeros).unwrap();
        let ida = a.add_param("conv.weight", &[8], Init::HeNormal { fan_in: 9 }).unwrap();
        let mut b = ParamStore::new(3);
        let idb = b.add_param("conv.weight", &[8], Init::HeNormal { fan_in: 9 }).unwrap();
        assert_eq!(a.param(ida).value(), b.param(idb).value());
        let mut c = ParamStore::new(4);
        let idc = c.add_param("conv.weight", &[8], Init::HeNormal { fan_in: 9 }).unwrap();
        assert_ne!(a.param(ida).value(), c.param(idc).value());
    }

    #[test]
    fn freeze_prefix_reports_unknown_namespace() {
        let mut s = ParamStore::new(0);
        s.add_param("encoder.a", &[1], Init::Zeros).unwrap();
        s.add_param("decoder.a", &[1], Init::Zeros).unwrap();
        assert_eq!(s.freeze_prefix("encoder.", true).unwrap(), 1);
        assert!(s.get("encoder.a").unwrap().frozen);
        assert!(!s.get("decoder.a").unwrap().frozen);
        assert!(matches!(s.freeze_prefix("encodr.", true), Err(Error::UnknownNamespace(_))));
    }
}
