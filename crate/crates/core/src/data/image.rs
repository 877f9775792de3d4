//! Binary Netpbm (P5 grayscale, P6 RGB, maxval 255) images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width, height and channel count of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageGeometry {
    pub fn gray(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            channels: 1,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height * self.channels
    }
}

impl std::fmt::Display for ImageGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

impl std::str::FromStr for ImageGeometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::Data(format!("bad geometry {s:?}")))
            })
            .collect::<Result<_>>()?;
        match parts[..] {
            [width, height, channels] if width > 0 && height > 0 && matches!(channels, 1 | 3) => {
                Ok(Self {
                    width,
                    height,
                    channels,
                })
            }
            _ => Err(Error::Data(format!("bad geometry {s:?}"))),
        }
    }
}

/// Row-major interleaved pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || !matches!(channels, 1 | 3) {
            return Err(Error::dim(format!(
                "invalid image geometry {width}x{height}x{channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::dim(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("image contains non-finite pixels".into()));
        }
        let pixels = pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn geometry(&self) -> ImageGeometry {
        ImageGeometry {
            width: self.width,
            height: self.height,
            channels: self.channels,
        }
    }

    /// Pixels as they would read back after an 8-bit write.
    pub fn quantized(&self) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|&v| quantize(v) as f64 / 255.0)
            .collect();
        Self {
            pixels,
            ..self.clone()
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|&v| quantize(v)));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = HeaderCursor { bytes, pos: 0 };
        if bytes.len() < 2 {
            return Err(Error::parse(0, "file too short for a Netpbm magic number"));
        }
        let channels = match &bytes[..2] {
            b"P5" => 1,
            b"P6" => 3,
            _ => {
                return Err(Error::parse(
                    0,
                    format!(
                        "unsupported magic {:?}",
                        String::from_utf8_lossy(&bytes[..2])
                    ),
                ))
            }
        };
        cur.pos = 2;
        let width = cur.number("width")?;
        let height = cur.number("height")?;
        let maxval = cur.number("maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::parse(cur.pos, "zero image dimension"));
        }
        if maxval != 255 {
            return Err(Error::parse(cur.pos, format!("maxval {maxval} is not 255")));
        }
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(Error::parse(cur.pos, "missing whitespace before raster")),
        }
        let n = width * height * channels;
        let raster = &bytes[cur.pos..];
        if raster.len() < n {
            return Err(Error::parse(
                bytes.len(),
                format!("raster truncated: need {n} bytes, have {}", raster.len()),
            ));
        }
        if raster.len() > n {
            return Err(Error::parse(cur.pos + n, "trailing bytes after raster"));
        }
        let pixels = raster.iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let before = self.pos;
        self.skip_space_and_comments();
        if self.pos == before {
            return Err(Error::parse(
                self.pos,
                format!("expected whitespace before {what}"),
            ));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(start, format!("{what} out of range")))
    }
}

pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ImageBuffer::decode(&bytes)
}

pub fn write_image(path: &Path, image: &ImageBuffer) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, image.encode()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_p5_bytes_as_fractions_of_255() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 128, 255, 64]);
        let img = ImageBuffer::decode(&bytes).unwrap();
        let expected = [0.0, 0.50196, 1.0, 0.25098];
        for (p, e) in img.pixels.iter().zip(expected) {
            assert!((p - e).abs() < 1e-5);
        }
        assert_eq!(img.encode(), bytes);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5 # made by hand\n# another\n1 1 255\n".to_vec();
        bytes.push(7);
        let img = ImageBuffer::decode(&bytes).unwrap();
        assert_eq!(img.pixels, vec![7.0 / 255.0]);
    }

    #[test]
    fn p6_round_trip() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([1, 2, 3, 250, 251, 252]);
        let img = ImageBuffer::decode(&bytes).unwrap();
        assert_eq!(img.channels, 3);
        assert_eq!(img.encode(), bytes);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            ImageBuffer::decode(b"P7\n2 2\n255\n"),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(matches!(
            ImageBuffer::decode(b"P5\n2 2\n255\n\x01\x02"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            ImageBuffer::decode(b"P5\n2 x\n255\n"),
            Err(Error::Parse { offset: 5, .. })
        ));
        assert!(matches!(
            ImageBuffer::decode(b"P5\n1 1\n65535\n\x00\x00"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn new_clamps_to_unit_interval() {
        let img = ImageBuffer::new(2, 1, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.pixels, vec![0.0, 1.0]);
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
    }

    #[test]
    fn geometry_parses() {
        let g: ImageGeometry = "32x32x1".parse().unwrap();
        assert_eq!(g, ImageGeometry::gray(32, 32));
        assert_eq!(g.to_string(), "32x32x1");
        assert!("32x32".parse::<ImageGeometry>().is_err());
    }
}
