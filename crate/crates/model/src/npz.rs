//! Reader for zipped numpy archives: enough of the .npy format (v1/v2
//! headers, little-endian scalars, C order) to load image datasets.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{ModelError, Result};

#[derive(Clone, Debug)]
pub enum NpyData {
    U8(Vec<u8>),
    I64(Vec<i64>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            NpyData::U8(v) => Ok(v),
            _ => Err(ModelError::Schema("expected unsigned byte data".into())),
        }
    }

    pub fn as_i64(&self) -> Result<Vec<i64>> {
        match &self.data {
            NpyData::U8(v) => Ok(v.iter().map(|&x| x as i64).collect()),
            NpyData::I64(v) => Ok(v.clone()),
            NpyData::F64(_) => Err(ModelError::Schema("expected integer data".into())),
        }
    }
}

fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pos = header
        .find(&format!("'{key}'"))
        .ok_or_else(|| ModelError::Format(format!("header is missing {key:?}")))?;
    let rest = &header[pos..];
    let colon = rest
        .find(':')
        .ok_or_else(|| ModelError::Format(format!("header field {key:?} has no value")))?;
    Ok(rest[colon + 1..].trim_start())
}

fn parse_descr(header: &str) -> Result<String> {
    let value = header_field(header, "descr")?;
    let quote = value
        .chars()
        .next()
        .filter(|&c| c == '\'' || c == '"')
        .ok_or_else(|| ModelError::Format("descr is not a string".into()))?;
    let inner = &value[1..];
    let end = inner
        .find(quote)
        .ok_or_else(|| ModelError::Format("unterminated descr".into()))?;
    Ok(inner[..end].to_string())
}

fn parse_fortran(header: &str) -> Result<bool> {
    let value = header_field(header, "fortran_order")?;
    if value.starts_with("False") {
        Ok(false)
    } else if value.starts_with("True") {
        Ok(true)
    } else {
        Err(ModelError::Format("fortran_order is not a boolean".into()))
    }
}

fn parse_shape(header: &str) -> Result<Vec<usize>> {
    let value = header_field(header, "shape")?;
    if !value.starts_with('(') {
        return Err(ModelError::Format("shape is not a tuple".into()));
    }
    let end = value
        .find(')')
        .ok_or_else(|| ModelError::Format("unterminated shape tuple".into()))?;
    value[1..end]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| ModelError::Format(format!("bad shape entry {s:?}")))
        })
        .collect()
}

/// Parse a single .npy payload.
pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(ModelError::Format("missing array file magic".into()));
    }
    let major = bytes[6];
    let (header_len, header_start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(ModelError::Format("truncated header length".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(ModelError::Format(format!("unsupported format version {v}"))),
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(ModelError::Format("truncated header".into()));
    }
    let header = String::from_utf8_lossy(&bytes[header_start..data_start]).into_owned();
    let descr = parse_descr(&header)?;
    if parse_fortran(&header)? {
        return Err(ModelError::Format("column-major arrays are not supported".into()));
    }
    let shape = parse_shape(&header)?;
    let count: usize = shape.iter().product();
    let payload = &bytes[data_start..];

    let need = |itemsize: usize| -> Result<()> {
        if payload.len() < count * itemsize {
            Err(ModelError::Format(format!(
                "payload holds {} bytes, shape needs {}",
                payload.len(),
                count * itemsize
            )))
        } else {
            Ok(())
        }
    };
    let data = match descr.as_str() {
        "|u1" | "|b1" => {
            need(1)?;
            NpyData::U8(payload[..count].to_vec())
        }
        "|i1" => {
            need(1)?;
            NpyData::I64(payload[..count].iter().map(|&b| b as i8 as i64).collect())
        }
        "<i2" => {
            need(2)?;
            NpyData::I64(chunks(payload, count, 2, |c| i16::from_le_bytes([c[0], c[1]]) as i64))
        }
        "<u2" => {
            need(2)?;
            NpyData::I64(chunks(payload, count, 2, |c| u16::from_le_bytes([c[0], c[1]]) as i64))
        }
        "<i4" => {
            need(4)?;
            NpyData::I64(chunks(payload, count, 4, |c| {
                i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64
            }))
        }
        "<u4" => {
            need(4)?;
            NpyData::I64(chunks(payload, count, 4, |c| {
                u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64
            }))
        }
        "<i8" => {
            need(8)?;
            NpyData::I64(chunks(payload, count, 8, |c| {
                i64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
            }))
        }
        "<f4" => {
            need(4)?;
            NpyData::F64(chunks(payload, count, 4, |c| {
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64
            }))
        }
        "<f8" => {
            need(8)?;
            NpyData::F64(chunks(payload, count, 8, |c| {
                f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
            }))
        }
        other => {
            return Err(ModelError::Format(format!("unsupported element type {other:?}")))
        }
    };
    Ok(NpyArray { shape, data })
}

fn chunks<T>(payload: &[u8], count: usize, size: usize, f: impl Fn(&[u8]) -> T) -> Vec<T> {
    payload[..count * size].chunks_exact(size).map(f).collect()
}

/// Read every member of a zipped archive of arrays, keyed by member name
/// with the .npy suffix stripped.
pub fn read_npz(path: &Path) -> Result<BTreeMap<String, NpyArray>> {
    let file = File::open(path)?;
    let mut archive = zip::ZipArchive::new(file)
        .map_err(|e| ModelError::Format(format!("not a zip archive: {e}")))?;
    let mut out = BTreeMap::new();
    for i in 0..archive.len() {
        let mut entry = archive
            .by_index(i)
            .map_err(|e| ModelError::Format(format!("bad zip entry: {e}")))?;
        let name = entry.name().trim_end_matches(".npy").to_string();
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut bytes)?;
        out.insert(name, parse_npy(&bytes)?);
    }
    Ok(out)
}
