//! Checkpoint file format: a UTF-8 header block (architecture id, metadata
//! key/values, tensor shape table) terminated by `end_header`, followed by the
//! flat parameter vector as little-endian f32. Round-trips bit-exactly.

use super::params::ParamVec;
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &str = "devdet-checkpoint v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub architecture_id: String,
    /// Free-form metadata: seed, config echo, producing config hash.
    pub meta: BTreeMap<String, String>,
    pub params: ParamVec,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        header.push_str(&format!("architecture_id = {}\n", self.architecture_id));
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {} = {}\n", k, v));
        }
        for s in self.params.specs() {
            let dims: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("tensor {} {}\n", s.name, dims.join("x")));
        }
        header.push_str("end_header\n");
        f.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
        let mut buf = Vec::with_capacity(self.params.len() * 4);
        for v in &self.params.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Format { path: path.to_path_buf(), message: m.to_string() };
        let end_tag = b"end_header\n";
        let header_end = bytes
            .windows(end_tag.len())
            .position(|w| w == end_tag)
            .ok_or_else(|| bad("missing end_header"))?
            + end_tag.len();
        let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("header not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("bad magic"));
        }
        let mut architecture_id = String::new();
        let mut meta = BTreeMap::new();
        let mut params = ParamVec::new();
        for line in lines {
            if line == "end_header" {
                break;
            }
            if let Some(rest) = line.strip_prefix("architecture_id = ") {
                architecture_id = rest.to_string();
            } else if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(" = ").ok_or_else(|| bad("malformed meta line"))?;
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let (name, dims) = rest.split_once(' ').ok_or_else(|| bad("malformed tensor line"))?;
                let shape: Vec<usize> = dims
                    .split('x')
                    .map(|d| d.parse().map_err(|_| bad("bad tensor dim")))
                    .collect::<Result<_>>()?;
                params.add(name, &shape);
            } else {
                return Err(bad(&format!("unexpected header line: {line}")));
            }
        }
        let mut body = &bytes[header_end..];
        if body.len() != params.len() * 4 {
            return Err(bad(&format!(
                "parameter payload size {} does not match shape table ({} values)",
                body.len(),
                params.len()
            )));
        }
        for i in 0..params.len() {
            let mut b = [0u8; 4];
            body.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
            params.data[i] = f32::from_le_bytes(b) as f64;
        }
        Ok(Checkpoint { architecture_id, meta, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut pv = ParamVec::new();
        pv.add("w", &[2, 3]);
        pv.add("b", &[3]);
        for (i, v) in pv.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37 - 1.0) as f32 as f64;
        }
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), "7".into());
        let ck = Checkpoint { architecture_id: "toy".into(), meta, params: pv };
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.architecture_id, "toy");
        assert_eq!(back.meta["seed"], "7");
        assert_eq!(back.params.data, ck.params.data);
        assert_eq!(back.params.content_hash(), ck.params.content_hash());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut pv = ParamVec::new();
        pv.add("w", &[4]);
        let ck = Checkpoint { architecture_id: "toy".into(), meta: BTreeMap::new(), params: pv };
        ck.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
