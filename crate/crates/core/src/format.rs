//! The STCL array container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `STCL` |
//! | 2     | version (`u16`, currently 1) |
//! | 4     | metadata length `n` (`u32`) |
//! | n     | UTF-8 JSON object with at least `dtype` and `dims` |
//! | ...   | raw payload, `product(dims)` values of `dtype` |
//!
//! `dtype` is `"f32"` for datasets and `"f64"` for checkpoints.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STCL";
pub const VERSION: u16 = 1;
const PREFIX: usize = 4 + 2 + 4;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> &'static str {
        match self {
            Payload::F32(_) => "f32",
            Payload::F64(_) => "f64",
        }
    }
}

/// A decoded container: metadata object and payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: Map<String, Value>,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

/// Serialises `value` as JSON with object keys in sorted order.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's default map is ordered by key.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

pub fn encode(meta: &Map<String, Value>, dims: &[usize], payload: &Payload) -> Result<Vec<u8>> {
    let expected: usize = dims.iter().product();
    if expected != payload.len() {
        return Err(Error::Contract(format!(
            "payload has {} values, dims {:?} need {expected}",
            payload.len(),
            dims
        )));
    }
    let mut meta = meta.clone();
    meta.insert("dtype".into(), Value::from(payload.dtype()));
    meta.insert("dims".into(), serde_json::to_value(dims)?);
    let json = serde_json::to_vec(&Value::Object(meta))?;
    let json_len = u32::try_from(json.len())
        .map_err(|_| Error::Contract("metadata larger than 4 GiB".into()))?;
    let width = if matches!(payload, Payload::F32(_)) { 4 } else { 8 };
    let mut out = Vec::with_capacity(PREFIX + json.len() + payload.len() * width);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&json_len.to_le_bytes());
    out.extend_from_slice(&json);
    match payload {
        Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len(), "file shorter than the 4-byte magic"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {:?}, expected \"STCL\"", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    if bytes.len() < PREFIX {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let json_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let json_end = PREFIX
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(6, format!("metadata length {json_len} runs past end of file")))?;
    let meta: Value = serde_json::from_slice(&bytes[PREFIX..json_end])
        .map_err(|e| Error::format(PREFIX, format!("invalid metadata JSON: {e}")))?;
    let Value::Object(meta) = meta else {
        return Err(Error::format(PREFIX, "metadata is not a JSON object"));
    };
    let dims: Vec<usize> = meta
        .get("dims")
        .cloned()
        .and_then(|d| serde_json::from_value(d).ok())
        .ok_or_else(|| Error::format(PREFIX, "metadata lacks integer array `dims`"))?;
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format(PREFIX, "dims overflow"))?;
    let dtype = meta.get("dtype").and_then(Value::as_str).unwrap_or("");
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::format(PREFIX, format!("unknown dtype {other:?}"))),
    };
    let body = &bytes[json_end..];
    let need = count
        .checked_mul(width)
        .ok_or_else(|| Error::format(PREFIX, "payload size overflow"))?;
    if body.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: {} of {need} bytes", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::format(
            json_end + need,
            format!("{} trailing bytes after payload", body.len() - need),
        ));
    }
    let payload = if width == 4 {
        Payload::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        )
    } else {
        Payload::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        )
    };
    Ok(Container {
        meta,
        dims,
        payload,
    })
}

pub fn write_file(path: &Path, meta: &Map<String, Value>, dims: &[usize], payload: &Payload) -> Result<()> {
    let bytes = encode(meta, dims, payload)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads a typed metadata field.
pub fn meta_field<T: DeserializeOwned>(meta: &Map<String, Value>, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .cloned()
        .ok_or_else(|| Error::format(PREFIX, format!("metadata lacks `{key}`")))?;
    serde_json::from_value(v).map_err(|e| Error::format(PREFIX, format!("metadata `{key}`: {e}")))
}
