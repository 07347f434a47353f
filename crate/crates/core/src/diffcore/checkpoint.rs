//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "HIPPOCKP"
//! version      u32
//! rng_seed     u64
//! header_len   u32      followed by `header_len` bytes of UTF-8 JSON (arch descriptors)
//! n_entries    u32
//! per entry:
//!   name_len   u32, name bytes (UTF-8)
//!   ndim       u32, ndim x u64 dims
//!   values     prod(dims) x f64 (raw IEEE-754 bits)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::{Layout, ParamVector, SegmentSpec};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HIPPOCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub rng_seed: u64,
    /// Architecture descriptors, free-form JSON.
    pub header: serde_json::Value,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new(rng_seed: u64, header: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            rng_seed,
            header,
            entries: Vec::new(),
        }
    }

    /// Appends every segment of `params` as `{prefix}{segment}`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamVector) {
        for seg in params.layout().segments() {
            let range = params.layout().range(&seg.name).expect("segment from own layout");
            self.entries.push(Entry {
                name: format!("{prefix}{}", seg.name),
                shape: seg.shape.clone(),
                values: params.values()[range].to_vec(),
            });
        }
    }

    pub fn push_raw(&mut self, name: &str, values: &[f64]) {
        self.entries.push(Entry {
            name: name.to_string(),
            shape: vec![values.len()],
            values: values.to_vec(),
        });
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Rebuilds a parameter vector of the given layout from entries named
    /// `{prefix}{segment}`.
    pub fn params(&self, prefix: &str, layout: &Layout) -> Result<ParamVector> {
        let mut values = Vec::with_capacity(layout.total());
        for seg in layout.segments() {
            let name = format!("{prefix}{}", seg.name);
            let e = self
                .entry(&name)
                .ok_or_else(|| Error::Format(format!("missing entry `{name}`")))?;
            if e.shape != seg.shape {
                return Err(Error::Format(format!(
                    "entry `{name}` has shape {:?}, expected {:?}",
                    e.shape, seg.shape
                )));
            }
            values.extend_from_slice(&e.values);
        }
        ParamVector::from_values(layout.clone(), values)
    }

    /// Layout of all entries under `prefix`, with the prefix stripped.
    pub fn layout_of(&self, prefix: &str) -> Result<Layout> {
        Layout::new(
            self.entries
                .iter()
                .filter_map(|e| {
                    e.name
                        .strip_prefix(prefix)
                        .map(|n| SegmentSpec::new(n, e.shape.clone()))
                })
                .collect(),
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&self.format_version.to_le_bytes())?;
        w.write_all(&self.rng_seed.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let expected: usize = e.shape.iter().product();
            if expected != e.values.len() {
                return Err(Error::Format(format!(
                    "entry `{}` holds {} values for shape {:?}",
                    e.name,
                    e.values.len(),
                    e.shape
                )));
            }
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
            for &d in &e.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &e.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let format_version = read_u32(&mut r)?;
        if format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {format_version}")));
        }
        let rng_seed = read_u64(&mut r)?;
        let hlen = read_u32(&mut r)? as usize;
        let mut hbuf = vec![0u8; hlen];
        r.read_exact(&mut hbuf)?;
        let header = serde_json::from_slice(&hbuf).map_err(|e| Error::Format(e.to_string()))?;
        let n = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let nlen = read_u32(&mut r)? as usize;
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf)?;
            let name = String::from_utf8(nbuf).map_err(|e| Error::Format(e.to_string()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let mut values = Vec::with_capacity(count);
            let mut b = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            entries.push(Entry { name, shape, values });
        }
        Ok(Self {
            format_version,
            rng_seed,
            header,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            vals in proptest::collection::vec(proptest::num::f64::ANY, 1..40),
            seed in any::<u64>(),
        ) {
            let mut ck = Checkpoint::new(seed, serde_json::json!({"arch": [1, 2, 3]}));
            ck.push_raw("a/b", &vals);
            ck.push_raw("c", &vals[..vals.len() / 2]);
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.rng_seed, seed);
            prop_assert_eq!(&back.header, &ck.header);
            for (a, b) in back.entries.iter().zip(&ck.entries) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                let ab: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(Checkpoint::read_from(&b"NOTACKPT\x01\x00\x00\x00"[..]).is_err());
        let mut buf = Vec::new();
        Checkpoint::new(0, serde_json::Value::Null).write_to(&mut buf).unwrap();
        buf[8] = 9;
        assert!(matches!(Checkpoint::read_from(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn params_roundtrip_through_layout() {
        let layout = Layout::new(vec![SegmentSpec::new("w", vec![2, 2]), SegmentSpec::new("b", vec![2])]).unwrap();
        let p = ParamVector::from_values(layout.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut ck = Checkpoint::new(1, serde_json::Value::Null);
        ck.push_params("net/", &p);
        assert_eq!(ck.layout_of("net/").unwrap(), layout);
        assert_eq!(ck.params("net/", &layout).unwrap(), p);
        let wrong = Layout::new(vec![SegmentSpec::new("w", vec![4])]).unwrap();
        assert!(ck.params("net/", &wrong).is_err());
    }
}
