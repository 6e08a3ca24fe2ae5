//! Classic libpcap capture files, both byte orders, micro- and nanosecond timestamps.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

pub const LINKTYPE_ETHERNET: u32 = 1;
pub const LINKTYPE_RAW: u32 = 101;

/// Link-layer framing of a captured packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkType {
    Ethernet,
    RawIp,
    Other(u32),
}

impl LinkType {
    pub fn from_code(code: u32) -> Self {
        match code {
            LINKTYPE_ETHERNET => LinkType::Ethernet,
            // DLT_RAW has platform-specific values besides 101; 228/229 are raw IPv4/IPv6.
            LINKTYPE_RAW | 12 | 14 | 228 | 229 => LinkType::RawIp,
            other => LinkType::Other(other),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            LinkType::Ethernet => LINKTYPE_ETHERNET,
            LinkType::RawIp => LINKTYPE_RAW,
            LinkType::Other(c) => c,
        }
    }
}

/// One captured frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPacket {
    /// 1-based record position in the capture file.
    pub ordinal: usize,
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub link_type: LinkType,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Copy)]
struct Layout {
    big_endian: bool,
    nanos: bool,
}

impl Layout {
    fn u32_at(&self, b: &[u8], at: usize) -> u32 {
        let raw = [b[at], b[at + 1], b[at + 2], b[at + 3]];
        if self.big_endian {
            u32::from_be_bytes(raw)
        } else {
            u32::from_le_bytes(raw)
        }
    }
}

fn detect(header: &[u8]) -> Result<Layout> {
    let le = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
    let be = u32::from_be_bytes([header[0], header[1], header[2], header[3]]);
    match (le, be) {
        (MAGIC_MICROS, _) => Ok(Layout { big_endian: false, nanos: false }),
        (MAGIC_NANOS, _) => Ok(Layout { big_endian: false, nanos: true }),
        (_, MAGIC_MICROS) => Ok(Layout { big_endian: true, nanos: false }),
        (_, MAGIC_NANOS) => Ok(Layout { big_endian: true, nanos: true }),
        _ => Err(Error::format(format!("not a pcap file (magic {le:#010x})"))),
    }
}

/// Reads every record of a pcap file, in file order.
pub fn open_capture(path: impl AsRef<Path>) -> Result<Vec<RawPacket>> {
    let bytes = std::fs::read(path)?;
    parse_capture(&bytes)
}

/// Parses an in-memory pcap image. Zero-length records are skipped but still
/// consume an ordinal.
pub fn parse_capture(bytes: &[u8]) -> Result<Vec<RawPacket>> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        if bytes.len() >= 4 {
            detect(bytes)?;
        }
        return Err(Error::format(format!(
            "pcap global header needs {GLOBAL_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let layout = detect(bytes)?;
    let link_type = LinkType::from_code(layout.u32_at(bytes, 20));
    let mut packets = Vec::new();
    let mut at = GLOBAL_HEADER_LEN;
    let mut ordinal = 0;
    while at < bytes.len() {
        ordinal += 1;
        if bytes.len() - at < RECORD_HEADER_LEN {
            return Err(Error::TruncatedRecord { ordinal });
        }
        let secs = layout.u32_at(bytes, at);
        let frac = layout.u32_at(bytes, at + 4);
        let incl = layout.u32_at(bytes, at + 8) as usize;
        at += RECORD_HEADER_LEN;
        if bytes.len() - at < incl {
            return Err(Error::TruncatedRecord { ordinal });
        }
        let divisor = if layout.nanos { 1e9 } else { 1e6 };
        if incl > 0 {
            packets.push(RawPacket {
                ordinal,
                timestamp: secs as f64 + frac as f64 / divisor,
                link_type,
                bytes: bytes[at..at + incl].to_vec(),
            });
        }
        at += incl;
    }
    Ok(packets)
}

/// Serializes frames as a little-endian microsecond pcap with the given link type.
pub fn write_capture<W: Write>(mut out: W, link_type: LinkType, frames: &[(f64, &[u8])]) -> Result<()> {
    let mut header = Vec::with_capacity(GLOBAL_HEADER_LEN);
    header.extend_from_slice(&MAGIC_MICROS.to_le_bytes());
    header.extend_from_slice(&2u16.to_le_bytes());
    header.extend_from_slice(&4u16.to_le_bytes());
    header.extend_from_slice(&0i32.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    header.extend_from_slice(&65_535u32.to_le_bytes());
    header.extend_from_slice(&link_type.code().to_le_bytes());
    out.write_all(&header)?;
    for &(ts, frame) in frames {
        if !(ts >= 0.0) || ts >= u32::MAX as f64 {
            return Err(Error::arg(format!("timestamp {ts} cannot be stored in a pcap record")));
        }
        let secs = ts.floor();
        let micros = (((ts - secs) * 1e6).round() as u32).min(999_999);
        let len = u32::try_from(frame.len()).map_err(|_| Error::arg("frame too large for pcap"))?;
        out.write_all(&(secs as u32).to_le_bytes())?;
        out.write_all(&micros.to_le_bytes())?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(frame)?;
    }
    Ok(())
}
