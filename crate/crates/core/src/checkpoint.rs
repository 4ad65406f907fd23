//! Versioned binary checkpoints: named parameters, the memory bank and the
//! fingerprint of the model that produced them.
//!
//! Layout (little endian): magic `TVLMCKPT`, `u32` version, fingerprint,
//! `u32` parameter count, then per parameter its name, a trainable byte and
//! a tensor; then the bank cursor, fill count and entries; finally the
//! SHA-256 of everything before it. Strings are `u32` length plus UTF-8,
//! tensors are `u32` rank, `u64` dims and `f64` values.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::TimeVlm;
use crate::params::ParamStore;
use crate::ral::MemoryBank;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TVLMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub params: Vec<(String, Tensor, bool)>,
    pub bank: MemoryBank,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.ndim() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt checkpoint ({what})"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| corrupt(what))
    }
    fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let rank = self.u32(what)? as usize;
        if rank > 8 {
            return Err(corrupt(what));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(self.u64(what)?).map_err(|_| corrupt(what))?);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt(what))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| corrupt(what))?, what)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(&shape, data).map_err(|_| corrupt(what))
    }
}

impl Checkpoint {
    pub fn from_model(model: &TimeVlm) -> Self {
        Checkpoint {
            fingerprint: model.fingerprint(),
            params: model
                .store
                .iter()
                .map(|(n, p)| (n.clone(), p.value.clone(), p.trainable))
                .collect(),
            bank: model.bank.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.fingerprint);
        w.u32(self.params.len() as u32);
        for (name, t, trainable) in &self.params {
            w.str(name);
            w.0.push(u8::from(*trainable));
            w.tensor(t);
        }
        w.u64(self.bank.cursor() as u64);
        w.u64(self.bank.filled() as u64);
        w.tensor(self.bank.entries());
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 4 + 32 || &buf[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch; file is corrupt".into()));
        }
        let fingerprint = r.str("fingerprint")?;
        let count = r.u32("parameter count")?;
        let mut params = Vec::new();
        for _ in 0..count {
            let name = r.str("parameter name")?;
            let trainable = match r.u8("trainable flag")? {
                0 => false,
                1 => true,
                _ => return Err(corrupt("trainable flag")),
            };
            let t = r.tensor(&name)?;
            params.push((name, t, trainable));
        }
        let cursor = r.u64("bank cursor")? as usize;
        let filled = r.u64("bank fill")? as usize;
        let entries = r.tensor("bank entries")?;
        let bank = MemoryBank::from_parts(entries, cursor, filled)?;
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint {
            fingerprint,
            params,
            bank,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Loads the parameters and bank into `model`, refusing on any
    /// fingerprint, name or shape disagreement.
    pub fn restore(&self, model: &mut TimeVlm) -> Result<()> {
        let expected = model.fingerprint();
        if expected != self.fingerprint {
            return Err(Error::Fingerprint {
                expected,
                found: self.fingerprint.clone(),
            });
        }
        let have: Vec<&String> = model.store.names().collect();
        let got: Vec<&String> = self.params.iter().map(|(n, _, _)| n).collect();
        if have != got {
            return Err(Error::Checkpoint("parameter names differ from the model".into()));
        }
        let mut store: ParamStore = model.store.clone();
        for (name, t, _) in &self.params {
            store.set(name, t.clone())?;
        }
        if self.bank.entries().shape() != model.bank.entries().shape() {
            return Err(Error::Checkpoint("memory bank shape differs from the model".into()));
        }
        model.store = store;
        model.bank = self.bank.clone();
        Ok(())
    }
}
