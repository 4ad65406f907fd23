//! Named parameter storage.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// How a freshly registered parameter is initialised.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Normal(f64),
}

/// Parameters keyed by dotted name (`"ral.embed.weight"`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    seed: u64,
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            seed,
        }
    }

    /// Registers a trainable parameter. Each parameter draws from its own
    /// stream keyed by (seed, name), so initial values do not depend on
    /// registration order.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> &mut Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let value = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::FanIn(fan_in) => Tensor::uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), &mut rng),
            Init::Normal(std) => Tensor::randn(shape, std, &mut rng),
        };
        self.entries.insert(
            name.to_string(),
            Param {
                value,
                trainable: true,
            },
        );
        self
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) {
        self.entries.insert(name.to_string(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))
    }

    /// Overwrites an existing parameter's value; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.value_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape {
                what: format!("parameter {name}"),
                expected: format!("{:?}", slot.shape()),
                actual: format!("{:?}", value.shape()),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// SHA-256 over names, shapes and values of the parameters whose name
    /// starts with `prefix` (empty prefix: all).
    pub fn checksum(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.entries.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update(name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}
