//! Binary portable graymap (P5) images.
//!
//! Rows are written top to bottom, so the first image row is the largest `y`.

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<u8>,
}

impl Graymap {
    /// Map a `[ny, nx]` field (row 0 at `y = 0`) linearly from `[lo, hi]` to
    /// `[0, 255]`, clamping outside values. An empty range gives black.
    pub fn linear(nx: usize, ny: usize, values: &[f64], lo: f64, hi: f64) -> Graymap {
        assert_eq!(values.len(), nx * ny, "field size");
        let span = hi - lo;
        let level = |v: f64| -> u8 {
            if !(span > 0.0) {
                return 0;
            }
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        };
        let mut pixels = Vec::with_capacity(nx * ny);
        for iy in (0..ny).rev() {
            pixels.extend(values[iy * nx..(iy + 1) * nx].iter().map(|&v| level(v)));
        }
        Graymap { width: nx, height: ny, pixels }
    }

    /// Signed field mapped from `[−e, e]`; zero is mid gray, also when `e = 0`.
    pub fn symmetric(nx: usize, ny: usize, values: &[f64], e: f64) -> Graymap {
        if e > 0.0 {
            return Graymap::linear(nx, ny, values, -e, e);
        }
        assert_eq!(values.len(), nx * ny, "field size");
        Graymap { width: nx, height: ny, pixels: vec![128; nx * ny] }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parse the files written by [`Graymap::to_bytes`] (no comments, maxval 255).
    pub fn from_bytes(bytes: &[u8]) -> Result<Graymap, CliError> {
        let bad = |m: &str| CliError::Config(format!("graymap: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(bad("not an 8-bit P5 image"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
        let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixels"))?.to_vec();
        if pixels.len() != width * height {
            return Err(bad("pixel count"));
        }
        Ok(Graymap { width, height, pixels })
    }

    /// Pixel at column `ix` of the row holding grid row `iy`.
    pub fn at_grid(&self, ix: usize, iy: usize) -> u8 {
        self.pixels[(self.height - 1 - iy) * self.width + ix]
    }
}
