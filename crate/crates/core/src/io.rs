//! File formats at the engine boundary: NPY tensors, PGM/NPY/PNG label maps and
//! the flat run-config document.
//!
//! Only the subset of NPY needed here is supported: C-order arrays of
//! little-endian `f4`/`f8` (features) or `u1`/`u2`/`u4` (labels).

use std::fs;
use std::path::Path;

use crate::config::SegmentationConfig;
use crate::error::{Error, FormatError, Result};
use crate::feature::{FeatureMap, LabelMap};

pub const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Largest label a PGM or `u16` NPY label file can hold.
pub const LABEL_CAPACITY: usize = 65535;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    U1,
    U2,
    U4,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::U1 => "|u1",
            Dtype::U2 => "<u2",
            Dtype::U4 => "<u4",
        }
    }

    fn parse(descr: &str) -> std::result::Result<Self, FormatError> {
        match descr {
            "<f4" => Ok(Dtype::F4),
            "<f8" => Ok(Dtype::F8),
            "|u1" | "<u1" => Ok(Dtype::U1),
            "<u2" => Ok(Dtype::U2),
            "<u4" => Ok(Dtype::U4),
            other => Err(FormatError::UnsupportedDtype(other.to_string())),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::U1 => 1,
            Dtype::U2 => 2,
            Dtype::F4 | Dtype::U4 => 4,
            Dtype::F8 => 8,
        }
    }
}

/// A decoded NPY array before interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
enum PyValue {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

/// Parser for the Python dict literal in an NPY header.
struct HeaderParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn err(&self, what: &str) -> FormatError {
        FormatError::MalformedHeader(format!("{what} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> std::result::Result<(), FormatError> {
        self.skip_ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn string(&mut self) -> std::result::Result<String, FormatError> {
        self.skip_ws();
        let quote = match self.s.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos >= self.s.len() {
            return Err(self.err("unterminated string"));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn value(&mut self) -> std::result::Result<PyValue, FormatError> {
        match self.peek() {
            Some(b'\'' | b'"') => self.string().map(PyValue::Str),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            break;
                        }
                        Some(c) if c.is_ascii_digit() => {
                            let start = self.pos;
                            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                                self.pos += 1;
                            }
                            let text =
                                std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
                            dims.push(text.parse().map_err(|_| self.err("dimension overflow"))?);
                            if self.peek() == Some(b',') {
                                self.pos += 1;
                            }
                        }
                        _ => return Err(self.err("bad shape tuple")),
                    }
                }
                Ok(PyValue::Tuple(dims))
            }
            _ => {
                let rest = &self.s[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(PyValue::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(PyValue::Bool(false))
                } else {
                    Err(self.err("unsupported value"))
                }
            }
        }
    }

    fn dict(&mut self) -> std::result::Result<Vec<(String, PyValue)>, FormatError> {
        self.eat(b'{')?;
        let mut items = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.eat(b':')?;
            items.push((key, self.value()?));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected `,` or `}`")),
            }
        }
        Ok(items)
    }
}

/// Decodes an NPY byte buffer. The payload must match the declared shape exactly.
pub fn decode_npy(bytes: &[u8]) -> std::result::Result<NpyArray, FormatError> {
    if bytes.len() < 8 || &bytes[..6] != NPY_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, start): (usize, usize) = match major {
        1 if bytes.len() >= 10 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            12,
        ),
        1..=3 => return Err(FormatError::MalformedHeader("header length missing".into())),
        _ => return Err(FormatError::UnsupportedVersion(major, minor)),
    };
    let end = start
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(FormatError::Truncated {
            expected: start + header_len,
            found: bytes.len(),
        })?;
    let items = HeaderParser {
        s: &bytes[start..end],
        pos: 0,
    }
    .dict()?;
    let (mut descr, mut fortran, mut shape) = (None, None, None);
    for (k, v) in items {
        match (k.as_str(), v) {
            ("descr", PyValue::Str(s)) => descr = Some(s),
            ("fortran_order", PyValue::Bool(b)) => fortran = Some(b),
            ("shape", PyValue::Tuple(t)) => shape = Some(t),
            (other, _) => {
                return Err(FormatError::MalformedHeader(format!(
                    "unexpected key `{other}`"
                )))
            }
        }
    }
    let missing = |k: &str| FormatError::MalformedHeader(format!("missing `{k}`"));
    let dtype = Dtype::parse(&descr.ok_or_else(|| missing("descr"))?)?;
    if fortran.ok_or_else(|| missing("fortran_order"))? {
        return Err(FormatError::FortranOrder);
    }
    let shape = shape.ok_or_else(|| missing("shape"))?;
    let expected = shape
        .iter()
        .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::MalformedHeader("shape overflows".into()))?;
    let payload = &bytes[end..];
    if payload.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Ok(NpyArray {
        dtype,
        shape,
        payload: payload.to_vec(),
    })
}

/// Encodes a version 1.0 NPY buffer with a 64-byte aligned header.
pub fn encode_npy(dtype: Dtype, shape: &[usize], payload: &[u8]) -> Vec<u8> {
    let dims = match shape {
        [d] => format!("({d},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {dims}, }}",
        dtype.descr()
    );
    let unpadded = NPY_MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + payload.len());
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path, kind: FormatError) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        kind,
    }
}

/// Interprets an NPY array as an `(H, W, C)` float feature map.
pub fn features_from_npy(arr: &NpyArray) -> std::result::Result<FeatureMap, FormatError> {
    let [h, w, c] = arr.shape[..] else {
        return Err(FormatError::Rank {
            expected: 3,
            found: arr.shape.clone(),
        });
    };
    let values: Vec<f64> = match arr.dtype {
        Dtype::F4 => arr
            .payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F8 => arr
            .payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        other => return Err(FormatError::UnsupportedDtype(other.descr().to_string())),
    };
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(idx));
    }
    FeatureMap::new(h, w, c, values).map_err(|e| FormatError::MalformedHeader(e.to_string()))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    decode_npy(&bytes)
        .and_then(|arr| features_from_npy(&arr))
        .map_err(|k| format_err(path, k))
}

/// Feature precision on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloatPrecision {
    F32,
    F64,
}

pub fn encode_features(f: &FeatureMap, precision: FloatPrecision) -> Vec<u8> {
    let shape = [f.height(), f.width(), f.channels()];
    match precision {
        FloatPrecision::F64 => {
            let payload: Vec<u8> = f.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            encode_npy(Dtype::F8, &shape, &payload)
        }
        FloatPrecision::F32 => {
            let payload: Vec<u8> = f
                .data()
                .iter()
                .flat_map(|&v| (v as f32).to_le_bytes())
                .collect();
            encode_npy(Dtype::F4, &shape, &payload)
        }
    }
}

pub fn write_features(
    f: &FeatureMap,
    path: impl AsRef<Path>,
    precision: FloatPrecision,
) -> Result<()> {
    write_file(path.as_ref(), &encode_features(f, precision))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFormat {
    Pgm,
    Npy,
}

impl LabelFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LabelFormat::Pgm => "pgm",
            LabelFormat::Npy => "npy",
        }
    }
}

fn check_capacity(lm: &LabelMap, format: &'static str) -> std::result::Result<(), FormatError> {
    match lm.labels().iter().max() {
        Some(&m) if m as usize > LABEL_CAPACITY => Err(FormatError::Capacity {
            label: m as usize,
            capacity: LABEL_CAPACITY,
            format,
        }),
        _ => Ok(()),
    }
}

/// Binary PGM (P5) with `maxval = max(K - 1, 1)`; two-byte samples are big-endian
/// as the PGM format requires.
pub fn encode_pgm(lm: &LabelMap) -> std::result::Result<Vec<u8>, FormatError> {
    check_capacity(lm, "PGM")?;
    let maxval = lm.label_bound().saturating_sub(1).max(1);
    let mut out = format!("P5\n{} {}\n{}\n", lm.width(), lm.height(), maxval).into_bytes();
    if maxval < 256 {
        out.extend(lm.labels().iter().map(|&l| l as u8));
    } else {
        out.extend(lm.labels().iter().flat_map(|&l| (l as u16).to_be_bytes()));
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<LabelMap, FormatError> {
    let bad = |m: &str| FormatError::Pgm(m.to_string());
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("header truncated")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("expected a number"))?;
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing separator after maxval")),
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > LABEL_CAPACITY {
        return Err(bad("maxval out of range"));
    }
    let sample = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[pos..];
    let expected = w * h * sample;
    if payload.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let labels = if sample == 1 {
        payload.iter().map(|&b| b as u32).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
            .collect()
    };
    LabelMap::new(h, w, labels).map_err(|e| bad(&e.to_string()))
}

pub fn encode_labels(
    lm: &LabelMap,
    format: LabelFormat,
) -> std::result::Result<Vec<u8>, FormatError> {
    match format {
        LabelFormat::Pgm => encode_pgm(lm),
        LabelFormat::Npy => {
            check_capacity(lm, "uint16 NPY")?;
            let payload: Vec<u8> = lm
                .labels()
                .iter()
                .flat_map(|&l| (l as u16).to_le_bytes())
                .collect();
            Ok(encode_npy(Dtype::U2, &[lm.height(), lm.width()], &payload))
        }
    }
}

pub fn labels_from_npy(arr: &NpyArray) -> std::result::Result<LabelMap, FormatError> {
    let [h, w] = arr.shape[..] else {
        return Err(FormatError::Rank {
            expected: 2,
            found: arr.shape.clone(),
        });
    };
    let labels: Vec<u32> = match arr.dtype {
        Dtype::U1 => arr.payload.iter().map(|&b| b as u32).collect(),
        Dtype::U2 => arr
            .payload
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as u32)
            .collect(),
        Dtype::U4 => arr
            .payload
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect(),
        other => return Err(FormatError::UnsupportedDtype(other.descr().to_string())),
    };
    LabelMap::new(h, w, labels).map_err(|e| FormatError::MalformedHeader(e.to_string()))
}

pub fn decode_labels(bytes: &[u8]) -> std::result::Result<LabelMap, FormatError> {
    if bytes.starts_with(NPY_MAGIC) {
        labels_from_npy(&decode_npy(bytes)?)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        Err(FormatError::BadMagic)
    }
}

pub fn write_labels(lm: &LabelMap, path: impl AsRef<Path>, format: LabelFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_labels(lm, format).map_err(|k| format_err(path, k))?;
    write_file(path, &bytes)
}

/// Reads a PGM or NPY label file, detected from its magic bytes.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    decode_labels(&read_file(path)?).map_err(|k| format_err(path, k))
}

/// Fixed 256-entry palette (bit-interleaved, as used by common segmentation tools).
pub fn palette_color(label: u32) -> [u8; 3] {
    let mut c = [0u8; 3];
    let mut l = label % 256;
    let mut shift = 7;
    while l > 0 {
        for (ch, bit) in c.iter_mut().zip(0..3) {
            *ch |= (((l >> bit) & 1) as u8) << shift;
        }
        l >>= 3;
        shift -= 1;
    }
    c
}

/// Color-mapped PNG for inspection.
pub fn write_labels_png(lm: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = image::RgbImage::from_fn(lm.width() as u32, lm.height() as u32, |x, y| {
        image::Rgb(palette_color(lm.get(y as usize, x as usize)))
    });
    img.save(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

pub fn read_config(path: impl AsRef<Path>) -> Result<SegmentationConfig> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
    SegmentationConfig::from_toml_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Unvalidated config plus the keys the file set.
pub fn read_config_partial(path: impl AsRef<Path>) -> Result<(SegmentationConfig, Vec<String>)> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
    SegmentationConfig::from_toml_str_partial(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_config(cfg: &SegmentationConfig, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), cfg.to_toml_string().as_bytes())
}
