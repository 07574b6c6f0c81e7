//! Checkpoint container: magic `QPCK0001`, u32 version, a u32
//! length-prefixed TOML header (model spec, scale, quantizers, history,
//! optimizer counters, seed), then u32 tensor count and per tensor a
//! length-prefixed name, u32 rank, u32 extents and f64 little-endian data.
//! Optimizer moments are stored as tensors `adam.m.<param>` / `adam.v.<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::EpochRecord;
use crate::datagen::format::{put_text, put_u32, Reader};
use crate::error::{Error, Result};
use crate::models::{build_model, Model, ModelSpec};
use crate::quant::{LayerQuant, QuantRegime};
use crate::rescale::ScaleSpec;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QPCK0001";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub optimizer: Option<Adam>,
    pub regime: Option<QuantRegime>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    regime: Option<QuantRegime>,
    spec: ModelSpec,
    scale: ScaleSpec,
    #[serde(default)]
    quantizers: BTreeMap<String, LayerQuant>,
    optimizer: Option<Adam>,
    #[serde(default)]
    history: Vec<EpochRecord>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_text(out, name);
    put_u32(out, shape.len() as u32);
    for &e in shape {
        put_u32(out, e as u32);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            seed: self.seed,
            regime: self.regime,
            spec: self.model.spec.clone(),
            scale: *self.model.scale(),
            quantizers: self.model.quantizers().clone(),
            optimizer: self.optimizer.clone(),
            history: self.history.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Usage(format!("checkpoint header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_text(&mut out, &text);
        let mut tensors: Vec<(String, Vec<usize>, &[f64])> =
            self.model.params().iter().map(|p| (p.name.clone(), p.shape.clone(), p.data.as_slice())).collect();
        if let Some(opt) = &self.optimizer {
            for (kind, map) in [("m", &opt.m), ("v", &opt.v)] {
                for (name, v) in map {
                    tensors.push((format!("adam.{kind}.{name}"), vec![v.len()], v.as_slice()));
                }
            }
        }
        put_u32(&mut out, tensors.len() as u32);
        for (name, shape, data) in tensors {
            put_tensor(&mut out, &name, &shape, data);
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader::new(buf);
        r.magic(CHECKPOINT_MAGIC)?;
        let at = r.offset();
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
        }
        let at = r.offset();
        let text = r.text("header")?;
        let header: Header = toml::from_str(&text).map_err(|e| Error::format(at, format!("bad checkpoint header: {e}")))?;
        let mut model = build_model(&header.spec, 0).map_err(|e| Error::format(at, format!("header describes an invalid model: {e}")))?;
        let mut optimizer = header.optimizer;
        let count = r.u32("tensor count")?;
        for _ in 0..count {
            let at = r.offset();
            let name = r.text("tensor name")?;
            let rank = r.u32("tensor rank")? as usize;
            if rank > 8 {
                return Err(Error::format(at, format!("tensor {name} has implausible rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor extent")? as usize);
            }
            let n: usize = shape.iter().product();
            let data = r.f64s(n, "tensor data")?;
            if let Some(rest) = name.strip_prefix("adam.") {
                let opt = optimizer.as_mut().ok_or_else(|| Error::format(at, "optimizer tensor without optimizer header"))?;
                let (kind, pname) = rest.split_once('.').ok_or_else(|| Error::format(at, format!("bad tensor name {name}")))?;
                match kind {
                    "m" => opt.m.insert(pname.to_string(), data),
                    "v" => opt.v.insert(pname.to_string(), data),
                    _ => return Err(Error::format(at, format!("bad tensor name {name}"))),
                };
            } else if model.param(&name).is_some() {
                if model.param(&name).unwrap().shape != shape {
                    return Err(Error::format(at, format!("tensor {name} has shape {shape:?}, model expects {:?}", model.param(&name).unwrap().shape)));
                }
                model.set_param(&name, data)?;
            } else if name.contains(".wq.") || name.contains(".aq.") {
                model.insert_param(name, shape, data);
            } else {
                return Err(Error::format(at, format!("unknown tensor {name}")));
            }
        }
        r.finish()?;
        model.set_quantizers(header.quantizers);
        let model = model.with_scale(header.scale).map_err(|e| Error::format(0, e.to_string()))?;
        Ok(Checkpoint { model, history: header.history, optimizer, regime: header.regime, seed: header.seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
