//! Binary file formats: PPM (P6) and PGM (P5) images with maxval 255, and
//! `UNDM` raw masks.

use thiserror::Error;
use undesir_core::Tensor;

/// Magic bytes of a raw mask file.
pub const MASK_MAGIC: &[u8; 4] = b"UNDM";

/// Decoding failures of the on-disk formats.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    /// Header could not be parsed.
    #[error("bad image header: {0}")]
    Header(String),
    /// Only 8-bit images are accepted.
    #[error("unsupported maxval {0}, expected 255")]
    Maxval(u32),
    /// Fewer bytes than the header promises.
    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated {
        /// Bytes required.
        expected: usize,
        /// Bytes available.
        found: usize,
    },
    /// Mask file does not start with `UNDM`.
    #[error("not an UNDM mask file")]
    MaskMagic,
    /// Tensor is not an image or mask of the expected rank.
    #[error("cannot encode tensor of shape {0:?}")]
    Shape(Vec<usize>),
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_pnm(tag: &str, h: usize, w: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("{tag}\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

/// Encodes an `[H, W, 3]` image in `[0, 1]` as binary PPM.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>, FormatError> {
    match *image.shape() {
        [h, w, 3] => Ok(encode_pnm(
            "P6",
            h,
            w,
            image.data().iter().map(|&v| quantize(v)),
        )),
        _ => Err(FormatError::Shape(image.shape().to_vec())),
    }
}

/// Encodes an `[H, W]` array in `[0, 1]` as binary PGM.
pub fn encode_pgm(gray: &Tensor) -> Result<Vec<u8>, FormatError> {
    match *gray.shape() {
        [h, w] => Ok(encode_pnm(
            "P5",
            h,
            w,
            gray.data().iter().map(|&v| quantize(v)),
        )),
        _ => Err(FormatError::Shape(gray.shape().to_vec())),
    }
}

/// Heatmap of an upsampled mask: `round(255·(1 − M′))`, bright where perturbed.
pub fn encode_heatmap(upsampled: &Tensor) -> Result<Vec<u8>, FormatError> {
    encode_pgm(&upsampled.map(|m| 1.0 - m))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn token(&mut self) -> Result<&str, FormatError> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FormatError::Header("unexpected end of header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| FormatError::Header("non-ASCII header".into()))
    }

    fn number(&mut self) -> Result<u32, FormatError> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| FormatError::Header(format!("expected a number, found {t:?}")))
    }
}

/// Decodes a P6 or P5 file into an `[H, W, 3]` image in `[0, 1]`. Gray
/// images are replicated across the three channels.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut hdr = Header { bytes, pos: 0 };
    let channels = match hdr.token()? {
        "P6" => 3,
        "P5" => 1,
        other => return Err(FormatError::Header(format!("unsupported magic {other:?}"))),
    };
    let w = hdr.number()? as usize;
    let h = hdr.number()? as usize;
    let maxval = hdr.number()?;
    if w == 0 || h == 0 {
        return Err(FormatError::Header("zero image extent".into()));
    }
    if maxval != 255 {
        return Err(FormatError::Maxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes.get(hdr.pos + 1..).unwrap_or(&[]);
    let expected = h * w * channels;
    if data.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: data.len(),
        });
    }
    let data = &data[..expected];
    Ok(Tensor::from_fn(&[h, w, 3], |i| {
        let src = if channels == 3 { i } else { i / 3 };
        f64::from(data[src]) / 255.0
    }))
}

/// Encodes a mask grid as `UNDM`, `u32` height, `u32` width, then little-endian `f64` values.
pub fn encode_mask(grid: &Tensor) -> Result<Vec<u8>, FormatError> {
    let [h, w] = *grid.shape() else {
        return Err(FormatError::Shape(grid.shape().to_vec()));
    };
    let mut out = Vec::with_capacity(12 + 8 * grid.len());
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    grid.data()
        .iter()
        .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    Ok(out)
}

/// Decodes an `UNDM` buffer.
pub fn decode_mask(bytes: &[u8]) -> Result<Tensor, FormatError> {
    if bytes.len() < 12 {
        return Err(FormatError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MASK_MAGIC {
        return Err(FormatError::MaskMagic);
    }
    let dim = |at: usize| {
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize
    };
    let (h, w) = (dim(4), dim(8));
    let expected = 12 + 8 * h * w;
    if bytes.len() != expected || h == 0 || w == 0 {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let values = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    Tensor::new(&[h, w], values.collect()).map_err(|_| FormatError::Shape(vec![h, w]))
}
