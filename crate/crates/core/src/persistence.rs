//! Versioned binary checkpoints with a JSON sidecar.
//!
//! All integers and floats are little-endian. The layout is specified byte by
//! byte in `docs/formats.md`.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{Model, ModelSpec, OptimizerState};

pub const MAGIC: &[u8; 8] = b"ODCONVCK";
pub const FORMAT_VERSION: u32 = 1;

/// A decoded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: u64,
    pub temperature: f64,
    pub optimizer: Option<OptimizerState>,
}

/// SHA-256 of the model's topology string, hex encoded.
pub fn topology_digest(model: &Model) -> String {
    hex::encode(digest_bytes(&model.topology()))
}

fn digest_bytes(topology: &str) -> [u8; 32] {
    Sha256::digest(topology.as_bytes()).into()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises a model plus optional optimizer state.
pub fn encode(model: &Model, epoch: u64, temperature: f64, optimizer: Option<&OptimizerState>) -> Vec<u8> {
    let topology = model.topology();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&digest_bytes(&topology));
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&temperature.to_le_bytes());
    out.extend_from_slice(&(topology.len() as u64).to_le_bytes());
    out.extend_from_slice(topology.as_bytes());

    let names = model.param_names();
    put_u32(&mut out, names.len());
    for (name, t) in names.iter().zip(model.params()) {
        put_record(&mut out, name, t);
    }
    match optimizer {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            for v in [s.learning_rate, s.momentum, s.weight_decay] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_u32(&mut out, s.velocity.len());
            for (i, v) in s.velocity.iter().enumerate() {
                put_record(&mut out, &format!("velocity{i}"), v);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("truncated while reading {what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice has length N"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array(what)?) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Format(format!("{what} does not fit in memory")))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let n = self.u32("record name length")?;
        let name = self.string(n, "record name")?;
        let rank = self.u32("record rank")?;
        let dims = (0..rank).map(|_| self.len("record dims")).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
            .ok_or_else(|| Error::Format(format!("record `{name}` has an impossible size {dims:?}")))?;
        let raw = self.take(count * 8, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::from_vec(&dims, data).map_err(|e| Error::Format(format!("record `{name}`: {e}")))?;
        Ok((name, t))
    }
}

/// Parses a checkpoint and rebuilds the model from the embedded spec.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.is_empty() {
        return Err(Error::Format("empty checkpoint".into()));
    }
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32("version")? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let stored: [u8; 32] = r.array("digest")?;
    let epoch = r.u64("epoch")?;
    let temperature = r.f64("temperature")?;
    let n = r.len("topology length")?;
    let topology = r.string(n, "topology")?;
    if digest_bytes(&topology) != stored {
        return Err(Error::Topology {
            expected: hex::encode(digest_bytes(&topology)),
            found: hex::encode(stored),
        });
    }
    let spec_json = topology
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("spec "))
        .ok_or_else(|| Error::Format("topology lacks a spec line".into()))?;
    let spec: ModelSpec =
        serde_json::from_str(spec_json).map_err(|e| Error::Format(format!("model spec: {e}")))?;
    let mut model = Model::new(spec, 0)?;
    if model.topology() != topology {
        return Err(Error::Topology {
            expected: topology_digest(&model),
            found: hex::encode(stored),
        });
    }

    let count = r.u32("parameter count")?;
    let names = model.param_names();
    if count != names.len() {
        return Err(Error::Format(format!("{count} parameter records, model has {}", names.len())));
    }
    for (expected, slot) in names.iter().zip(model.params_mut()) {
        let (name, t) = r.record()?;
        if &name != expected || t.dims() != slot.dims() {
            return Err(Error::Format(format!(
                "record `{name}` {:?} where `{expected}` {:?} was expected",
                t.dims(),
                slot.dims()
            )));
        }
        *slot = t;
    }

    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let mut s = OptimizerState::new(r.f64("lr")?, r.f64("momentum")?, r.f64("weight decay")?)
                .map_err(|e| Error::Format(format!("optimizer state: {e}")))?;
            let buffers = r.u32("velocity count")?;
            s.velocity = (0..buffers).map(|_| r.record().map(|(_, t)| t)).collect::<Result<_>>()?;
            Some(s)
        }
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        epoch,
        temperature,
        optimizer,
    })
}

/// Path of the JSON sidecar written next to `path`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Human-readable metadata mirroring the binary header.
pub fn sidecar(model: &Model, epoch: u64, temperature: f64, optimizer: Option<&OptimizerState>) -> serde_json::Value {
    let params: Vec<_> = model
        .param_names()
        .iter()
        .zip(model.params())
        .map(|(n, t)| json!({ "name": n, "dims": t.dims() }))
        .collect();
    json!({
        "format_version": FORMAT_VERSION,
        "digest": topology_digest(model),
        "epoch": epoch,
        "temperature": temperature,
        "spec": model.spec,
        "num_params": model.num_params(),
        "parameters": params,
        "optimizer": optimizer.map(|s| json!({
            "learning_rate": s.learning_rate,
            "momentum": s.momentum,
            "weight_decay": s.weight_decay,
            "buffers": s.velocity.len(),
        })),
    })
}

/// Writes the checkpoint to `path` and the sidecar to `path.json`.
pub fn save(
    path: &Path,
    model: &Model,
    epoch: u64,
    temperature: f64,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    fs::write(path, encode(model, epoch, temperature, optimizer))?;
    let meta = serde_json::to_string_pretty(&sidecar(model, epoch, temperature, optimizer))
        .expect("sidecar serialises");
    fs::write(sidecar_path(path), meta + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

/// Loads parameters into an existing model whose topology must match exactly.
pub fn load_into(path: &Path, model: &mut Model) -> Result<Checkpoint> {
    let ck = load(path)?;
    let (expected, found) = (topology_digest(model), topology_digest(&ck.model));
    if expected != found {
        return Err(Error::Topology { expected, found });
    }
    *model = ck.model.clone();
    Ok(ck)
}
