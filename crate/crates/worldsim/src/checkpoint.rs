//! Binary checkpoint: `EYWK`, u32 version, u64 header length, JSON header with
//! the tensor table, then little-endian f32 arrays in table order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumState;
use crate::error::{Result, SimError};
use crate::model::{Model, ModelConfig};
use crate::optim::AdamWState;
use crate::params::ParamStore;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"EYWK";
pub const VERSION: u32 = 1;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    step: u64,
    adam_t: u64,
    seed: u64,
    model: ModelConfig,
    train: TrainConfig,
    curriculum: CurriculumState,
    tensors: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub opt: AdamWState,
    pub train: TrainConfig,
    pub curriculum: CurriculumState,
    pub seed: u64,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.curriculum.step
    }

    fn tables(&self) -> Vec<(String, &crate::params::ParamEntry)> {
        let p = self.model.params.entries().iter().map(|e| (e.name.clone(), e));
        let m = self.opt.m.entries().iter().map(|e| (format!("{M_PREFIX}{}", e.name), e));
        let v = self.opt.v.entries().iter().map(|e| (format!("{V_PREFIX}{}", e.name), e));
        p.chain(m).chain(v).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tables = self.tables();
        let header = Header {
            step: self.curriculum.step,
            adam_t: self.opt.t,
            seed: self.seed,
            model: self.model.config.clone(),
            train: self.train.clone(),
            curriculum: self.curriculum.clone(),
            tensors: tables.iter().map(|(n, e)| (n.clone(), e.shape.clone())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * 3 * self.model.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, e) in tables {
            for v in &e.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| SimError::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic; not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated".into()))?;
        if hlen > body.len() {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let mut data = &body[hlen..];
        let mut params = ParamStore::new();
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for (name, dims) in &header.tensors {
            let n: usize = dims.iter().product();
            if data.len() < 4 * n {
                return Err(bad(format!("truncated tensor {name}")));
            }
            let vals: Vec<f64> =
                data[..4 * n].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64).collect();
            data = &data[4 * n..];
            if let Some(base) = name.strip_prefix(M_PREFIX) {
                m.insert(base, dims.clone(), vals);
            } else if let Some(base) = name.strip_prefix(V_PREFIX) {
                v.insert(base, dims.clone(), vals);
            } else {
                params.insert(name, dims.clone(), vals);
            }
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        let fresh = Model::new(header.model.clone(), 0)?;
        let shapes = |s: &ParamStore| s.entries().iter().map(|e| (e.name.clone(), e.shape.clone())).collect::<Vec<_>>();
        if shapes(&fresh.params) != shapes(&params) || shapes(&params) != shapes(&m) || shapes(&params) != shapes(&v) {
            return Err(bad("tensor table does not match the model configuration".into()));
        }
        if !params.all_finite() {
            return Err(bad("non-finite parameter values".into()));
        }
        if header.curriculum.step != header.step {
            return Err(bad("step counter mismatch".into()));
        }
        Ok(Checkpoint {
            model: Model { config: header.model, params },
            opt: AdamWState { m, v, t: header.adam_t },
            train: header.train,
            curriculum: header.curriculum,
            seed: header.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let mut model = Model::new(ModelConfig::default(), 3).unwrap();
        model.params.round_to_f32();
        let opt = AdamWState::new(&model.params);
        Checkpoint { model, opt, train: TrainConfig::default(), curriculum: CurriculumState::default(), seed: 9 }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = small();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"EYWK");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_magic_and_truncation_rejected() {
        let mut bytes = small().to_bytes().unwrap();
        let short = bytes[..bytes.len() - 3].to_vec();
        assert!(matches!(Checkpoint::from_bytes(&short), Err(SimError::Checkpoint(_))));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(SimError::Checkpoint(_))));
    }
}
