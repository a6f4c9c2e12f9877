//! CKPT container (little-endian):
//!
//! ```text
//! "CKPT" | version u32 | config length u32 | config (UTF-8 key = value text)
//! | count u32 | count × entry | moment count u32 | moment entries | step u64
//! entry: name length u32 | name | rank u32 | extents u32[rank] | f64 data
//! ```
//!
//! Moments are stored as entries named `m/<param>` and `v/<param>`.

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::CsaNet;
use crate::nn::{AdamState, ParamStore};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"CKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ParamStore,
    pub adam: AdamState,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_entry(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank());
    for &e in t.shape() {
        put_u32(out, e);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {left} left"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)?;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::format(at as u64, format!("{what} is not valid UTF-8")))
    }

    fn entry(&mut self) -> Result<(String, Tensor)> {
        let at = self.pos;
        let name = self.text("entry name")?;
        let rank = self.u32("rank")?;
        if rank == 0 || rank > 8 {
            return Err(Error::format(at as u64, format!("entry {name:?} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("extent")?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(at as u64, format!("entry {name:?} has bad shape {shape:?}")))?;
        let bytes = self.take(n.checked_mul(8).unwrap_or(usize::MAX), "tensor data")?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::format(at as u64, e.to_string()))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = self.config.to_text();
        put_u32(&mut out, cfg.len());
        out.extend_from_slice(cfg.as_bytes());
        put_u32(&mut out, self.params.len());
        for (name, t) in self.params.names().iter().zip(self.params.values()) {
            put_entry(&mut out, name, t);
        }
        put_u32(&mut out, self.adam.m.len() + self.adam.v.len());
        for (prefix, moments) in [("m/", &self.adam.m), ("v/", &self.adam.v)] {
            for (name, t) in self.params.names().iter().zip(moments) {
                put_entry(&mut out, &format!("{prefix}{name}"), t);
            }
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, expected \"CKPT\""));
        }
        let version = r.u32("version")?;
        if version as u32 != VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let cfg_at = r.pos;
        let config = RunConfig::parse(&r.text("config")?)
            .map_err(|e| Error::format(cfg_at as u64, e.to_string()))?;

        let mut params = ParamStore::new();
        let count = r.u32("parameter count")?;
        for _ in 0..count {
            let (name, t) = r.entry()?;
            params.insert(name, t);
        }

        let moments_at = r.pos;
        let n_moments = r.u32("moment count")?;
        if n_moments != 2 * count {
            return Err(Error::format(
                moments_at as u64,
                format!("{n_moments} moment entries for {count} parameters"),
            ));
        }
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for i in 0..n_moments {
            let at = r.pos;
            let (name, t) = r.entry()?;
            let (prefix, slot) = if i < count { ("m/", &mut m) } else { ("v/", &mut v) };
            let param = &params.names()[i % count];
            if name != format!("{prefix}{param}") || t.shape() != params.values()[i % count].shape() {
                return Err(Error::format(
                    at as u64,
                    format!("moment entry {name:?} does not match parameter {param:?}"),
                ));
            }
            slot.push(t);
        }
        let step = u64::from_le_bytes(r.take(8, "step counter")?.try_into().expect("8 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after step counter"));
        }
        Ok(Checkpoint {
            config,
            params,
            adam: AdamState { m, v, step },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Rebuilds the network described by the stored config and installs the
    /// stored weights, failing on any name or shape mismatch.
    pub fn restore(&self) -> Result<(CsaNet, ParamStore)> {
        let (net, mut store) = CsaNet::new(self.config.model(), self.config.seed)?;
        store
            .load_from(&self.params)
            .map_err(|e| Error::format(0, format!("checkpoint does not fit its config: {e}")))?;
        Ok((net, store))
    }

    /// Like [`Checkpoint::restore`], but first requires `requested` to
    /// describe the same network.
    pub fn restore_for(&self, requested: &RunConfig) -> Result<(CsaNet, ParamStore)> {
        self.config.check_compatible(requested)?;
        self.restore()
    }
}
