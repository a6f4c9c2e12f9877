//! SVOL container (little-endian):
//!
//! ```text
//! "SVOL" | version u32 = 1 | dtype u8 (0 = f32 image, 1 = u8 labels) | 3 reserved bytes
//! | D, H, W u32 | spacing z, y, x f32 | voxels, z-major then row-major
//! ```

use super::volume::{LabelVolume, Spacing, Volume};
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SVOL";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 3 + 12 + 12;

const DTYPE_IMAGE: u8 = 0;
const DTYPE_LABELS: u8 = 1;

/// Either payload an SVOL file can carry.
#[derive(Clone, Debug, PartialEq)]
pub enum SvolVolume {
    Image(Volume),
    Labels(LabelVolume),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn header(dtype: u8, dims: [usize; 3], spacing: Spacing, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype);
    out.extend_from_slice(&[0; 3]);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn encode(v: &SvolVolume) -> Vec<u8> {
    match v {
        SvolVolume::Image(img) => {
            let mut out = header(DTYPE_IMAGE, img.dims(), img.spacing(), img.data().len() * 4);
            for x in img.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
        SvolVolume::Labels(lbl) => {
            let mut out = header(DTYPE_LABELS, lbl.dims(), lbl.spacing(), lbl.data().len());
            out.extend_from_slice(lbl.data());
            out
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<SvolVolume> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"SVOL\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let dtype = r.take(1, "dtype")?[0];
    if dtype != DTYPE_IMAGE && dtype != DTYPE_LABELS {
        return Err(Error::format(8, format!("unknown dtype {dtype}")));
    }
    r.take(3, "reserved bytes")?;
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let pos = r.pos;
        *d = r.u32("dims")? as usize;
        if *d == 0 {
            return Err(Error::format(pos as u64, format!("dimension {i} is zero")));
        }
    }
    let mut spacing = [0f32; 3];
    for s in spacing.iter_mut() {
        let pos = r.pos;
        *s = r.f32("spacing")?;
        if !(*s > 0.0) || !s.is_finite() {
            return Err(Error::format(pos as u64, format!("spacing {s} must be positive")));
        }
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(12, "voxel count overflows"))?;
    let width = if dtype == DTYPE_IMAGE { 4 } else { 1 };
    let payload_at = r.pos as u64;
    let payload = r.take(n * width, "voxel data")?;
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes after voxel data", bytes.len() - r.pos),
        ));
    }
    let at = |e: Error| match e {
        Error::Input(msg) => Error::format(payload_at, msg),
        other => other,
    };
    Ok(if dtype == DTYPE_IMAGE {
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        SvolVolume::Image(Volume::new(dims, spacing, data).map_err(at)?)
    } else {
        SvolVolume::Labels(LabelVolume::new(dims, spacing, payload.to_vec()).map_err(at)?)
    })
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<SvolVolume> {
    decode(&fs::read(path)?)
}

pub fn write_volume(v: &SvolVolume, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(v))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    match read_volume(path)? {
        SvolVolume::Image(v) => Ok(v),
        SvolVolume::Labels(_) => Err(Error::format(
            8,
            format!("{} holds labels, expected an image", path.display()),
        )),
    }
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    match read_volume(path)? {
        SvolVolume::Labels(v) => Ok(v),
        SvolVolume::Image(_) => Err(Error::format(
            8,
            format!("{} holds an image, expected labels", path.display()),
        )),
    }
}
