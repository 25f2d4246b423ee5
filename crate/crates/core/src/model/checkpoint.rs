//! Binary container: `XCNT`, a `u32` format version, a length-prefixed JSON
//! header, then named `f64` little-endian blobs with their shapes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::Param;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XCNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub blobs: IndexMap<String, Param>,
}

fn take<'a>(buf: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn u32_at(buf: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4, what)?.try_into().unwrap()))
}

fn u64_at(buf: &mut &[u8], what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, 8, what)?.try_into().unwrap()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.blobs.len() as u64).to_le_bytes());
        for (name, p) in &self.blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut buf = bytes;
        if take(&mut buf, 4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32_at(&mut buf, "version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version} (expected {VERSION})")));
        }
        let hlen = u64_at(&mut buf, "header length")? as usize;
        let header = serde_json::from_slice(take(&mut buf, hlen, "header")?)?;
        let count = u64_at(&mut buf, "blob count")?;
        let mut blobs = IndexMap::new();
        for _ in 0..count {
            let nlen = u32_at(&mut buf, "name length")? as usize;
            let name = String::from_utf8(take(&mut buf, nlen, "name")?.to_vec())
                .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?;
            let ndim = u32_at(&mut buf, "rank")? as usize;
            let shape = (0..ndim)
                .map(|_| u64_at(&mut buf, "shape").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = take(&mut buf, n * 8, &name)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if blobs.insert(name.clone(), Param { shape, data }).is_some() {
                return Err(Error::Checkpoint(format!("duplicate blob {name}")));
            }
        }
        if !buf.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len())));
        }
        Ok(Checkpoint { header, blobs })
    }

    /// Writes atomically via a temporary file in the same directory.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Fields whose values differ between two JSON objects, as `key: a → b` lines.
pub fn json_field_diff(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
        return if a == b { vec![] } else { vec![format!("{a} → {b}")] };
    };
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.dedup();
    let mut seen = std::collections::HashSet::new();
    keys.into_iter()
        .filter(|k| seen.insert(*k))
        .filter_map(|k| {
            let (x, y) = (a.get(k), b.get(k));
            (x != y).then(|| {
                let show = |v: Option<&serde_json::Value>| v.map_or("(absent)".to_string(), |v| v.to_string());
                format!("{k}: {} → {}", show(x), show(y))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut blobs = IndexMap::new();
        blobs.insert(
            "a".to_string(),
            Param {
                shape: vec![2, 1],
                data: vec![f64::MIN_POSITIVE, -0.0],
            },
        );
        blobs.insert(
            "b.c".to_string(),
            Param {
                shape: vec![3],
                data: vec![1.0 / 3.0, 1e300, -2.5],
            },
        );
        let ck = Checkpoint {
            header: serde_json::json!({"step": 3}),
            blobs,
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.header, ck.header);
        for (x, y) in back.blobs.values().zip(ck.blobs.values()) {
            assert_eq!(x.shape, y.shape);
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&x.data), bits(&y.data));
        }
    }

    #[test]
    fn corrupt_input_rejected() {
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let ck = Checkpoint {
            header: serde_json::json!({}),
            blobs: IndexMap::new(),
        };
        let mut bytes = ck.to_bytes().unwrap();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        bytes.truncate(10);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn diff_lists_changed_fields() {
        let a = serde_json::json!({"H": 4, "B": 1});
        let b = serde_json::json!({"H": 8, "B": 1, "k": 3});
        assert_eq!(json_field_diff(&a, &b), vec!["H: 4 → 8", "k: (absent) → 3"]);
    }
}
