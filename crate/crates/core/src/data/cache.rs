//! Binary cache for processed domain pairs.
//!
//! ```text
//! magic    8 bytes  "SGDATA\0\0"
//! version  u32 LE   CACHE_VERSION
//! hlen     u64 LE   length of the JSON header
//! header   hlen     {"meta": DomainMeta, "sections": [{"name", "len", "classes", "labeled"}]}
//! payload           per section: len * H * W * C image bytes, then len u32 LE labels if labeled
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DomainMeta, DomainPair, ImageSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SGDATA\0\0";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Section {
    name: String,
    len: usize,
    classes: usize,
    labeled: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: DomainMeta,
    sections: Vec<Section>,
}

fn sections(pair: &DomainPair) -> Vec<(&'static str, &Dataset)> {
    let mut v = vec![("source", &pair.source), ("target", &pair.target), ("target_val", &pair.target_val)];
    if let Some(sv) = &pair.source_val {
        v.push(("source_val", sv));
    }
    v
}

pub fn encode_pair(pair: &DomainPair) -> Result<Vec<u8>> {
    let header = Header {
        meta: pair.meta.clone(),
        sections: sections(pair)
            .into_iter()
            .map(|(name, d)| Section {
                name: name.into(),
                len: d.len(),
                classes: d.classes,
                labeled: d.labels.is_some(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::contract(format!("cache header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, d) in sections(pair) {
        out.extend_from_slice(d.images.bytes());
        if let Some(labels) = &d.labels {
            for &l in labels {
                out.extend_from_slice(&(l as u32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pair(bytes: &[u8], path: &Path) -> Result<DomainPair> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a dataset cache (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(bad(format!("cache version {version}, expected {CACHE_VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
    let mut rest = &body[hlen..];
    let mut take = |n: usize| -> Result<&[u8]> {
        if rest.len() < n {
            return Err(bad("truncated payload".into()));
        }
        let (a, b) = rest.split_at(n);
        rest = b;
        Ok(a)
    };
    let shape = header.meta.shape;
    let mut found = std::collections::HashMap::new();
    for s in header.sections {
        let images = ImageSet::new(take(s.len * shape.pixels())?.to_vec(), s.len, shape)?;
        let d = if s.labeled {
            let labels = take(4 * s.len)?
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
                .collect();
            Dataset::labeled(images, labels, s.classes)?
        } else {
            Dataset::unlabeled(images, s.classes)
        };
        found.insert(s.name, d);
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes".into()));
    }
    let mut get = |name: &str| found.remove(name).ok_or_else(|| bad(format!("missing section {name}")));
    let pair = DomainPair {
        source: get("source")?,
        target: get("target")?,
        target_val: get("target_val")?,
        source_val: found.remove("source_val"),
        meta: header.meta,
    };
    pair.validate()?;
    Ok(pair)
}

pub fn save_pair(pair: &DomainPair, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pair(pair)?).map_err(|e| Error::io(path, e))
}

pub fn load_pair(path: &Path) -> Result<DomainPair> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pair(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{synthetic_pair, SyntheticConfig};

    #[test]
    fn roundtrip() {
        let cfg = SyntheticConfig { source_samples: 12, target_samples: 8, size: 8, ..Default::default() };
        let pair = synthetic_pair(&cfg, 4, 9).unwrap();
        let bytes = encode_pair(&pair).unwrap();
        assert_eq!(decode_pair(&bytes, Path::new("x")).unwrap(), pair);
        assert!(decode_pair(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut wrong = bytes.clone();
        wrong[8] = 9;
        assert!(decode_pair(&wrong, Path::new("x")).is_err());
    }
}
