//! Binary checkpoint container.
//!
//! Layout: the line `UDAINV1`, a `config <bytes>` line followed by that many
//! bytes of config text, a `tensors <count>` line, one `<name> <offset>
//! <shape>` line per tensor (shape as `AxBx…`, offset in bytes from the
//! payload start), a `payload <bytes>` line, then the little-endian `f64`
//! payload in directory order.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &str = "UDAINV1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Echo of the run configuration (`key=value` lines).
    pub config: String,
    tensors: Vec<(String, Tensor)>,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Checkpoint {
            config: config.into(),
            tensors: Vec::new(),
        }
    }

    /// Appends or replaces a named tensor.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = t,
            None => self.tensors.push((name, t)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| err(format!("missing tensor '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    /// Tensors named `{prefix}.0`, `{prefix}.1`, … in index order.
    pub fn group(&self, prefix: &str) -> Vec<Tensor> {
        let mut out = Vec::new();
        while let Some(t) = self.get(&format!("{prefix}.{}", out.len())) {
            out.push(t.clone());
        }
        out
    }

    pub fn insert_group<'a>(&mut self, prefix: &str, ts: impl IntoIterator<Item = &'a Tensor>) {
        for (i, t) in ts.into_iter().enumerate() {
            self.insert(format!("{prefix}.{i}"), t.clone());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC}\nconfig {}\n", self.config.len()).into_bytes();
        head.extend_from_slice(self.config.as_bytes());
        head.extend_from_slice(format!("\ntensors {}\n", self.tensors.len()).as_bytes());
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            head.extend_from_slice(format!("{name} {offset} {}\n", shape.join("x")).as_bytes());
            offset += t.numel() * 8;
        }
        head.extend_from_slice(format!("payload {offset}\n").as_bytes());
        head.reserve(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                head.extend_from_slice(&v.to_le_bytes());
            }
        }
        head
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut line = |what: &str| -> Result<String> {
            let rest = &bytes[pos.min(bytes.len())..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| err(format!("truncated header while reading {what}")))?;
            pos += end + 1;
            String::from_utf8(rest[..end].to_vec())
                .map_err(|_| err(format!("{what} is not valid text")))
        };
        if line("magic")? != MAGIC {
            return Err(err(format!("bad magic (expected {MAGIC})")));
        }
        let cfg_len: usize = line("config length")?
            .strip_prefix("config ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed config length line"))?;
        if bytes.len() < pos + cfg_len + 1 {
            return Err(err("truncated config section"));
        }
        let config = String::from_utf8(bytes[pos..pos + cfg_len].to_vec())
            .map_err(|_| err("config is not valid text"))?;
        pos += cfg_len + 1;
        let mut line = |what: &str| -> Result<String> {
            let rest = &bytes[pos.min(bytes.len())..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| err(format!("truncated header while reading {what}")))?;
            pos += end + 1;
            String::from_utf8(rest[..end].to_vec())
                .map_err(|_| err(format!("{what} is not valid text")))
        };
        let count: usize = line("tensor count")?
            .strip_prefix("tensors ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed tensor count line"))?;
        let mut dir = Vec::with_capacity(count);
        let mut expected_offset = 0usize;
        for i in 0..count {
            let l = line("tensor directory")?;
            let parts: Vec<&str> = l.split(' ').collect();
            let [name, off, shape] = parts[..] else {
                return Err(err(format!("malformed directory entry {i}: '{l}'")));
            };
            let off: usize = off
                .parse()
                .map_err(|_| err(format!("bad offset for '{name}'")))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().ok().filter(|&d| d > 0))
                .collect::<Option<_>>()
                .ok_or_else(|| err(format!("bad shape for '{name}'")))?;
            if off != expected_offset {
                return Err(err(format!(
                    "directory offsets must be increasing and contiguous: '{name}' at {off}, expected {expected_offset}"
                )));
            }
            let n: usize = shape.iter().product();
            expected_offset += n * 8;
            dir.push((name.to_string(), off, shape));
        }
        let declared: usize = line("payload length")?
            .strip_prefix("payload ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed payload line"))?;
        if declared != expected_offset {
            return Err(err(format!(
                "payload declares {declared} bytes but the directory needs {expected_offset}"
            )));
        }
        let payload = &bytes[pos.min(bytes.len())..];
        if payload.len() != declared {
            return Err(err(format!(
                "payload length mismatch: expected {declared} bytes, found {}",
                payload.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, off, shape) in dir {
            let n: usize = shape.iter().product();
            let data = payload[off..off + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("seed=3\nlambda_uda=1");
        c.insert("a.0", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1 - 0.2));
        c.insert("a.1", Tensor::scalar(f64::MIN_POSITIVE));
        c.insert("meta.iteration", Tensor::scalar(7.0));
        c
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.group("a").len(), 2);
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let bytes = sample().to_bytes();
        let e = Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("expected 64 bytes, found 59"), "{msg}");
    }

    #[test]
    fn bad_magic_and_overlap_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("magic"));

        let text = String::from_utf8_lossy(&sample().to_bytes()).into_owned();
        let bad = text.replacen("a.1 48 1", "a.1 40 1", 1);
        let e = Checkpoint::from_bytes(bad.as_bytes()).unwrap_err();
        assert!(e.to_string().contains("contiguous"), "{e}");
    }
}
