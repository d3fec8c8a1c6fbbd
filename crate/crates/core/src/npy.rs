//! Minimal NPY v1.0 encoder/decoder and NPZ (zip of `.npy`) container.
//!
//! Only the dtypes this crate stores are supported: `|u1`, `<f4`, `<f8`,
//! C order. Archives are written with deflate at a fixed level and a fixed
//! 1980-01-01 timestamp so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    U8,
    F32,
    F64,
}

impl DType {
    fn descr(self) -> &'static str {
        match self {
            DType::U8 => "|u1",
            DType::F32 => "<f4",
            DType::F64 => "<f8",
        }
    }

    fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn parse(descr: &str) -> Option<Self> {
        match descr {
            "|u1" | "<u1" | "u1" => Some(DType::U8),
            "<f4" => Some(DType::F32),
            "<f8" => Some(DType::F64),
            _ => None,
        }
    }
}

/// A dense C-order array held as little-endian bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl NpyArray {
    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        NpyArray {
            dtype: DType::U8,
            shape,
            data,
        }
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        NpyArray {
            dtype: DType::F32,
            shape,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        NpyArray {
            dtype: DType::F64,
            shape,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f32(&self) -> Option<Vec<f32>> {
        (self.dtype == DType::F32).then(|| {
            self.data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
    }

    pub fn to_f64(&self) -> Option<Vec<f64>> {
        (self.dtype == DType::F64).then(|| {
            self.data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
    }
}

fn shape_literal(shape: &[usize]) -> String {
    match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    }
}

pub fn encode_npy(array: &NpyArray) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.dtype.descr(),
        shape_literal(&array.shape)
    );
    // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + array.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&array.data);
    out
}

fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let needle = format!("'{key}':");
    let start = header.find(&needle)? + needle.len();
    Some(header[start..].trim_start())
}

fn parse_header(header: &str) -> Result<(DType, Vec<usize>)> {
    let bad = |what: &str| Error::Format(format!("NPY header: {what} in {header:?}"));

    let descr = dict_value(header, "descr").ok_or_else(|| bad("missing descr"))?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| bad("unquoted descr"))?;
    let dtype = DType::parse(descr).ok_or_else(|| bad("unsupported dtype"))?;

    let fortran = dict_value(header, "fortran_order").ok_or_else(|| bad("missing fortran_order"))?;
    if !fortran.starts_with("False") {
        return Err(bad("fortran order not supported"));
    }

    let shape = dict_value(header, "shape").ok_or_else(|| bad("missing shape"))?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad("malformed shape"))?;
    let dims = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("non-integer dimension")))
        .collect::<Result<Vec<_>>>()?;
    Ok((dtype, dims))
}

pub fn decode_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("bad NPY magic".into()));
    }
    let (header_len, offset) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12),
        v => return Err(Error::Format(format!("unsupported NPY version {v}"))),
    };
    let header_end = offset + header_len;
    if bytes.len() < header_end {
        return Err(Error::Corruption("NPY header truncated".into()));
    }
    let header =
        std::str::from_utf8(&bytes[offset..header_end]).map_err(|_| Error::Format("NPY header is not text".into()))?;
    let (dtype, shape) = parse_header(header)?;
    let expected = shape.iter().product::<usize>() * dtype.size();
    let data = &bytes[header_end..];
    if data.len() != expected {
        return Err(Error::Corruption(format!(
            "NPY payload is {} bytes, shape {:?} needs {expected}",
            data.len(),
            shape
        )));
    }
    Ok(NpyArray {
        dtype,
        shape,
        data: data.to_vec(),
    })
}

/// Serializes named arrays into NPZ bytes, in the given order.
pub fn encode_npz(entries: &[(&str, &NpyArray)]) -> Result<Vec<u8>> {
    let options = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .compression_level(Some(6))
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    for (name, array) in entries {
        let zip_err = |e: zip::result::ZipError| Error::Format(format!("zip write: {e}"));
        zip.start_file(format!("{name}.npy"), options).map_err(zip_err)?;
        zip.write_all(&encode_npy(array))
            .map_err(|e| Error::Format(format!("zip write: {e}")))?;
    }
    let cursor = zip.finish().map_err(|e| Error::Format(format!("zip finish: {e}")))?;
    Ok(cursor.into_inner())
}

pub fn write_npz(path: impl AsRef<Path>, entries: &[(&str, &NpyArray)]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_npz(entries)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes every `.npy` member; keys are member names without the suffix.
pub fn decode_npz(bytes: &[u8]) -> Result<BTreeMap<String, NpyArray>> {
    if bytes.len() < 4 || &bytes[..4] != b"PK\x03\x04" {
        return Err(Error::Format("not a zip archive (bad magic)".into()));
    }
    let mut archive =
        ZipArchive::new(Cursor::new(bytes)).map_err(|e| Error::Corruption(format!("zip archive: {e}")))?;
    let mut out = BTreeMap::new();
    for i in 0..archive.len() {
        let mut file = archive
            .by_index(i)
            .map_err(|e| Error::Corruption(format!("zip member {i}: {e}")))?;
        let name = file.name().to_string();
        let mut buf = Vec::with_capacity(file.size() as usize);
        // the zip reader verifies the CRC32 when the member is fully read
        file.read_to_end(&mut buf)
            .map_err(|e| Error::Corruption(format!("zip member {name}: {e}")))?;
        let key = name.strip_suffix(".npy").unwrap_or(&name).to_string();
        out.insert(key, decode_npy(&buf)?);
    }
    Ok(out)
}

pub fn read_npz(path: impl AsRef<Path>) -> Result<BTreeMap<String, NpyArray>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_npz(&bytes)
}
