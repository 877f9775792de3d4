//! Versioned parameter container shared by VAE and classifier checkpoints.
//!
//! Layout (all header text is UTF-8, lines end in `\n`):
//!
//! ```text
//! <format version>                  e.g. latentaug-vae-v1
//! <key> = <value>                   zero or more metadata lines
//! tensor <name> <d0>x<d1>x...       one line per tensor, in payload order
//! end_header
//! <payload>                         every tensor's values as little-endian
//!                                   f32, row-major, in declaration order
//! ```
//!
//! Parameters are trained in f64 and stored as f32, so a round trip loses
//! precision at the f32 rounding level (about 6e-8 relative).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const END_HEADER: &str = "end_header";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(version: &str) -> Self {
        Self {
            version: version.to_string(),
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.push((name.into(), t.clone()));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Data(format!("checkpoint is missing metadata `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse().map_err(|_| {
            Error::Data(format!(
                "checkpoint metadata `{key}` = {raw:?} is malformed"
            ))
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut header = format!("{}\n", self.version);
        for (k, v) in &self.meta {
            header.push_str(&format!("{k} = {v}\n"));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            header.push_str(&format!("tensor {name} {}\n", dims.join("x")));
        }
        header.push_str(END_HEADER);
        header.push('\n');
        let mut out = header.into_bytes();
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Decodes `bytes`, requiring the version line to equal `expected_version`.
    pub fn decode(bytes: &[u8], expected_version: &str) -> Result<Self> {
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<(usize, String)> {
            let start = *pos;
            let rel = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::parse(bytes.len(), "unterminated header line"))?;
            let line = std::str::from_utf8(&bytes[start..start + rel])
                .map_err(|e| Error::parse(start + e.valid_up_to(), "header is not UTF-8"))?;
            *pos = start + rel + 1;
            Ok((start, line.to_string()))
        };

        let (_, version) = next_line(&mut pos)?;
        if version != expected_version {
            return Err(Error::Version {
                expected: expected_version.to_string(),
                found: version,
            });
        }

        let mut meta = Vec::new();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            let (at, line) = next_line(&mut pos)?;
            if line == END_HEADER {
                break;
            }
            if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split(' ');
                let (Some(name), Some(dims), None) = (parts.next(), parts.next(), parts.next())
                else {
                    return Err(Error::parse(at, format!("malformed tensor line {line:?}")));
                };
                let dims: Option<Vec<usize>> = dims
                    .split('x')
                    .map(|d| d.parse().ok().filter(|&n: &usize| n > 0))
                    .collect();
                let dims =
                    dims.ok_or_else(|| Error::parse(at, format!("bad tensor dims in {line:?}")))?;
                shapes.push((name.to_string(), dims));
            } else if let Some((k, v)) = line.split_once(" = ") {
                if !shapes.is_empty() {
                    return Err(Error::parse(at, "metadata after tensor declarations"));
                }
                meta.push((k.to_string(), v.to_string()));
            } else {
                return Err(Error::parse(
                    at,
                    format!("unrecognized header line {line:?}"),
                ));
            }
        }

        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, dims) in shapes {
            let n: usize = dims.iter().product();
            let end = pos + 4 * n;
            if end > bytes.len() {
                return Err(Error::parse(
                    bytes.len(),
                    format!("payload truncated inside tensor `{name}`"),
                ));
            }
            let data: Vec<f64> = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let t = Tensor::new(dims, data)
                .map_err(|e| Error::parse(pos, format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
            pos = end;
        }
        if pos != bytes.len() {
            return Err(Error::parse(pos, "trailing bytes after payload"));
        }
        Ok(Self {
            version: expected_version.to_string(),
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected_version: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, expected_version)
    }

    /// Removes and returns the next tensor, checking its name.
    pub(crate) fn take_tensors(self) -> TensorCursor {
        TensorCursor {
            inner: self.tensors.into_iter(),
        }
    }
}

pub(crate) struct TensorCursor {
    inner: std::vec::IntoIter<(String, Tensor)>,
}

impl TensorCursor {
    pub fn next(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let (found, t) = self
            .inner
            .next()
            .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor `{name}`")))?;
        if found != name || t.shape() != shape {
            return Err(Error::Data(format!(
                "expected tensor `{name}` {shape:?}, found `{found}` {:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn finish(mut self) -> Result<()> {
        match self.inner.next() {
            None => Ok(()),
            Some((name, _)) => Err(Error::Data(format!("unexpected extra tensor `{name}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("latentaug-test-v1").with_meta("latent_dim", 2);
        c.push_tensor(
            "w",
            &Tensor::from_rows(&[vec![0.5, -1.25], vec![3.0, 0.1]]).unwrap(),
        );
        c.push_tensor("b", &Tensor::vector(vec![1.0, 2.0]).unwrap());
        c
    }

    #[test]
    fn header_is_human_readable() {
        let bytes = sample().encode();
        let text = String::from_utf8_lossy(&bytes[..60]);
        assert!(text.starts_with("latentaug-test-v1\nlatent_dim = 2\ntensor w 2x2\n"));
        assert_eq!(
            bytes.len(),
            "latentaug-test-v1\nlatent_dim = 2\ntensor w 2x2\ntensor b 2\nend_header\n".len()
                + 6 * 4
        );
    }

    #[test]
    fn round_trip_within_f32() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode(), "latentaug-test-v1").unwrap();
        assert_eq!(back.meta, c.meta);
        for ((n1, a), (n2, b)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1e-30));
            }
        }
    }

    #[test]
    fn truncated_payload_is_a_parse_error() {
        let bytes = sample().encode();
        let err = Checkpoint::decode(&bytes[..bytes.len() - 3], "latentaug-test-v1").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
        let err = Checkpoint::decode(&bytes[..30], "latentaug-test-v1").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn wrong_magic_is_a_version_error() {
        let bytes = sample().encode();
        let err = Checkpoint::decode(&bytes, "latentaug-vae-v1").unwrap_err();
        assert!(matches!(err, Error::Version { .. }));
    }

    #[test]
    fn malformed_header_reports_offset() {
        let bytes = b"latentaug-test-v1\nlatent_dim = 2\ngarbage\nend_header\n";
        match Checkpoint::decode(bytes, "latentaug-test-v1") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 33),
            other => panic!("{other:?}"),
        }
    }
}
