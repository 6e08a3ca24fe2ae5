//! `.npy` files holding `uint8` arrays of traffic-graphs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{TrafficGraph, GRAPH_LEN, GRAPH_SIDE};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;
/// Spare room numpy leaves after the header so the leading dimension can grow in place.
const GROWTH_AXIS_MAX_DIGITS: usize = 21;

/// Encodes rows of 784 bytes as a v1.0 `|u1` array of shape `(N, 784)`,
/// byte-identical to `numpy.save`.
pub fn encode_npy<R: AsRef<[u8]>>(rows: &[R]) -> Result<Vec<u8>> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.as_ref().len() != GRAPH_LEN) {
        return Err(Error::shape(format!("row {i} has {} bytes, expected {GRAPH_LEN}", r.as_ref().len())));
    }
    let n = rows.len();
    let mut dict = format!("{{'descr': '|u1', 'fortran_order': False, 'shape': ({n}, {GRAPH_LEN}), }}");
    dict.push_str(&" ".repeat(GROWTH_AXIS_MAX_DIGITS.saturating_sub(n.to_string().len())));
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.push_str(&" ".repeat(pad));
    dict.push('\n');
    let header_len = u16::try_from(dict.len()).map_err(|_| Error::format("npy header too long for v1.0"))?;
    let mut out = Vec::with_capacity(10 + dict.len() + n * GRAPH_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    for r in rows {
        out.extend_from_slice(r.as_ref());
    }
    Ok(out)
}

pub fn write_npy<R: AsRef<[u8]>>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    std::fs::write(path, encode_npy(rows)?)?;
    Ok(())
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<Vec<TrafficGraph>> {
    let path = path.as_ref();
    decode_npy(&std::fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn parse_header(text: &str) -> Result<Header> {
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| Error::format("npy header is not a dict literal"))?;
    let value_of = |key: &str| -> Result<&str> {
        let tag = format!("'{key}':");
        let at = body.find(&tag).ok_or_else(|| Error::format(format!("npy header lacks '{key}'")))?;
        Ok(body[at + tag.len()..].trim_start())
    };
    let descr = {
        let v = value_of("descr")?;
        let q = v.chars().next().filter(|c| *c == '\'' || *c == '"').ok_or_else(|| Error::format("npy descr is not a string"))?;
        let end = v[1..].find(q).ok_or_else(|| Error::format("unterminated npy descr"))?;
        v[1..1 + end].to_string()
    };
    let fortran_order = {
        let v = value_of("fortran_order")?;
        if v.starts_with("True") {
            true
        } else if v.starts_with("False") {
            false
        } else {
            return Err(Error::format("npy fortran_order is not a bool"));
        }
    };
    let shape = {
        let v = value_of("shape")?;
        let inner = v
            .strip_prefix('(')
            .and_then(|t| t.split(')').next())
            .ok_or_else(|| Error::format("npy shape is not a tuple"))?;
        inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>().map_err(|_| Error::format(format!("bad npy dimension '{s}'"))))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(Header {
        descr,
        fortran_order,
        shape,
    })
}

/// Decodes a v1/v2/v3 `.npy` image of `uint8` with shape `(N, 784)` or `(N, 28, 28)`.
pub fn decode_npy(bytes: &[u8]) -> Result<Vec<TrafficGraph>> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::format("missing npy magic"));
    }
    let (len, start) = match bytes[6] {
        1 => (usize::from(u16::from_le_bytes([bytes[8], bytes[9]])), 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12),
        v => return Err(Error::format(format!("unsupported npy version {v}.{}", bytes[7]))),
    };
    let end = start + len;
    if bytes.len() < end {
        return Err(Error::format("truncated npy header"));
    }
    let text = std::str::from_utf8(&bytes[start..end]).map_err(|_| Error::format("npy header is not text"))?;
    let h = parse_header(text)?;
    if !matches!(h.descr.as_str(), "|u1" | "<u1" | ">u1" | "u1" | "=u1") {
        return Err(Error::format(format!("npy dtype '{}' is not uint8", h.descr)));
    }
    let n = match h.shape.as_slice() {
        [n, GRAPH_LEN] => *n,
        [n, GRAPH_SIDE, GRAPH_SIDE] => *n,
        s => {
            return Err(Error::format(format!(
                "npy shape {s:?} is neither (N, {GRAPH_LEN}) nor (N, {GRAPH_SIDE}, {GRAPH_SIDE})"
            )))
        }
    };
    if h.fortran_order && n > 1 {
        return Err(Error::format("fortran-order npy arrays are not supported"));
    }
    let data = &bytes[end..];
    if data.len() != n * GRAPH_LEN {
        return Err(Error::format(format!(
            "npy declares {} data bytes, file has {}",
            n * GRAPH_LEN,
            data.len()
        )));
    }
    data.chunks(GRAPH_LEN).map(|c| TrafficGraph::from_pixels(c.to_vec())).collect()
}
