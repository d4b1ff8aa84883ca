//! Reader and writer for the safetensors container.
//!
//! Layout: an 8-byte little-endian header length `N`, then `N` bytes of
//! UTF-8 JSON mapping tensor names to `{dtype, shape, data_offsets}`, then
//! the raw data buffer. Offsets are `[begin, end)` relative to the start of
//! the data buffer. An optional `__metadata__` entry holds a string map.

use std::collections::BTreeMap;
use std::path::Path;

use half::f16;
use serde_json::{Map, Value};

use crate::error::{Error, ParseErrorKind, Result};
use crate::tensor::WeightMatrix;

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F16,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F16 => "F16",
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "F16" => Some(Dtype::F16),
            "F32" => Some(Dtype::F32),
            "F64" => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Tensor payload kept at its on-disk precision so writes round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F16(Vec<f16>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorData::F16(_) => Dtype::F16,
            TensorData::F32(_) => Dtype::F32,
            TensorData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F16(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened (or, for f64, rounded) to f32.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            TensorData::F16(v) => v.iter().map(|x| x.to_f32()).collect(),
            TensorData::F32(v) => v.clone(),
            TensorData::F64(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            TensorData::F16(v) => v.iter().all(|x| x.is_finite()),
            TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
            TensorData::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F16(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
        }
    }

    fn read_le(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::F16 => TensorData::F16(
                bytes
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            Dtype::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl RawTensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_matrix(m: &WeightMatrix, dtype: Dtype) -> Self {
        let data = match dtype {
            Dtype::F16 => TensorData::F16(m.values().iter().map(|&v| f16::from_f32(v)).collect()),
            Dtype::F32 => TensorData::F32(m.values().to_vec()),
            Dtype::F64 => TensorData::F64(m.values().iter().map(|&v| v as f64).collect()),
        };
        Self {
            shape: vec![m.rows(), m.cols()],
            data,
        }
    }

    /// Interprets the tensor as a matrix; rank-1 tensors become a single row.
    pub fn to_matrix(&self) -> Result<WeightMatrix> {
        let (rows, cols) = match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                return Err(Error::invalid(format!(
                    "expected a rank-2 tensor, got shape {other:?}"
                )))
            }
        };
        WeightMatrix::new(rows, cols, self.data.to_f32())
    }
}

/// All tensors of one container plus its string metadata, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorTable {
    pub tensors: BTreeMap<String, RawTensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: RawTensor) {
        self.tensors.insert(name.into(), tensor);
    }
}

fn parse_err(pos: u64, kind: ParseErrorKind) -> Error {
    Error::Parse { pos, kind }
}

/// Parses a container held in memory.
pub fn parse_safetensors(bytes: &[u8]) -> Result<TensorTable> {
    let file_len = bytes.len() as u64;
    if bytes.len() < 8 {
        return Err(parse_err(file_len, ParseErrorKind::Truncated));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    if header_len == 0 {
        return Err(parse_err(0, ParseErrorKind::EmptyHeader));
    }
    let available = file_len - 8;
    if header_len > available {
        return Err(parse_err(
            0,
            ParseErrorKind::HeaderTooLarge {
                declared: header_len,
                available,
            },
        ));
    }
    let header_end = 8 + header_len as usize;
    let header_bytes = &bytes[8..header_end];
    let header_text = std::str::from_utf8(header_bytes).map_err(|e| {
        parse_err(
            8 + e.valid_up_to() as u64,
            ParseErrorKind::MalformedJson("header is not valid UTF-8".into()),
        )
    })?;
    let header: Map<String, Value> = serde_json::from_str(header_text).map_err(|e| {
        let offset = line_col_to_offset(header_text, e.line(), e.column());
        parse_err(
            8 + offset as u64,
            ParseErrorKind::MalformedJson(e.to_string()),
        )
    })?;

    let buffer = &bytes[header_end..];
    let buffer_len = buffer.len() as u64;
    let data_pos = |off: u64| header_end as u64 + off;

    let mut table = TensorTable::new();
    let mut spans: Vec<(u64, u64, String)> = Vec::new();
    for (name, entry) in header {
        if name == METADATA_KEY {
            let obj = entry.as_object().ok_or_else(|| {
                parse_err(
                    8,
                    ParseErrorKind::BadShape("__metadata__ must be an object".into()),
                )
            })?;
            for (k, v) in obj {
                let v = v.as_str().ok_or_else(|| {
                    parse_err(
                        8,
                        ParseErrorKind::BadShape(format!("metadata value `{k}` is not a string")),
                    )
                })?;
                table.metadata.insert(k.clone(), v.to_string());
            }
            continue;
        }
        let bad = |msg: &str| parse_err(8, ParseErrorKind::BadShape(format!("`{name}`: {msg}")));
        let obj = entry
            .as_object()
            .ok_or_else(|| bad("entry is not an object"))?;
        let dtype_str = obj
            .get("dtype")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing dtype"))?;
        let dtype = Dtype::parse(dtype_str)
            .ok_or_else(|| parse_err(8, ParseErrorKind::UnsupportedDtype(dtype_str.to_string())))?;
        let shape = obj
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing shape"))?
            .iter()
            .map(|d| d.as_u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("shape must be non-negative integers"))?;
        let offsets = obj
            .get("data_offsets")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing data_offsets"))?;
        let (begin, end) = match offsets.as_slice() {
            [b, e] => match (b.as_u64(), e.as_u64()) {
                (Some(b), Some(e)) if b <= e => (b, e),
                _ => return Err(bad("data_offsets must be [begin, end) with begin <= end")),
            },
            _ => return Err(bad("data_offsets must have two entries")),
        };
        if end > buffer_len {
            return Err(parse_err(
                data_pos(end),
                ParseErrorKind::OutOfBounds {
                    name,
                    end,
                    buffer: buffer_len,
                },
            ));
        }
        let expected = shape.iter().product::<usize>() as u64 * dtype.size() as u64;
        if expected != end - begin {
            return Err(parse_err(
                data_pos(begin),
                ParseErrorKind::SizeMismatch {
                    name,
                    expected,
                    actual: end - begin,
                },
            ));
        }
        let data = TensorData::read_le(dtype, &buffer[begin as usize..end as usize]);
        spans.push((begin, end, name.clone()));
        table.insert(name, RawTensor { shape, data });
    }

    spans.sort();
    for pair in spans.windows(2) {
        let (_, first_end, ref first) = pair[0];
        let (second_begin, second_end, ref second) = pair[1];
        // zero-length tensors occupy no bytes and cannot overlap
        if second_begin < first_end && second_begin < second_end {
            return Err(parse_err(
                data_pos(second_begin),
                ParseErrorKind::Overlap {
                    first: first.clone(),
                    second: second.clone(),
                },
            ));
        }
    }
    Ok(table)
}

fn line_col_to_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len();
    }
    text.len()
}

pub fn read_safetensors(path: impl AsRef<Path>) -> Result<TensorTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_safetensors(&bytes)
}

/// Serializes a table: names sorted, data packed contiguously in name order.
pub fn serialize_safetensors(table: &TensorTable) -> Result<Vec<u8>> {
    let mut header = Map::new();
    if !table.metadata.is_empty() {
        let meta = table
            .metadata
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect::<Map<_, _>>();
        header.insert(METADATA_KEY.to_string(), Value::Object(meta));
    }
    let mut data = Vec::new();
    for (name, tensor) in &table.tensors {
        if !tensor.data.all_finite() {
            return Err(Error::NonFinite(format!("tensor `{name}`")));
        }
        let expected: usize = tensor.shape.iter().product();
        if expected != tensor.data.len() {
            return Err(Error::invalid(format!(
                "tensor `{name}` has shape {:?} but {} values",
                tensor.shape,
                tensor.data.len()
            )));
        }
        let begin = data.len();
        tensor.data.write_le(&mut data);
        let mut entry = Map::new();
        entry.insert("dtype".into(), Value::from(tensor.data.dtype().as_str()));
        entry.insert("shape".into(), Value::from(tensor.shape.clone()));
        entry.insert("data_offsets".into(), Value::from(vec![begin, data.len()]));
        header.insert(name.clone(), Value::Object(entry));
    }
    let header_bytes = serde_json::to_vec(&Value::Object(header))?;
    let mut out = Vec::with_capacity(8 + header_bytes.len() + data.len());
    out.extend((header_bytes.len() as u64).to_le_bytes());
    out.extend(header_bytes);
    out.extend(data);
    Ok(out)
}

pub fn write_safetensors(table: &TensorTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = serialize_safetensors(table)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
