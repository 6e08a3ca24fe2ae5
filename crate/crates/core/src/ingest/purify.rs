use std::collections::HashSet;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};

use super::pcap::{LinkType, RawPacket};
use super::{PreprocessConfig, TransportFilter};
use crate::error::{Error, Result};

const ETHERNET_HEADER: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

impl Transport {
    fn from_protocol(p: u8) -> Option<Self> {
        match p {
            6 => Some(Transport::Tcp),
            17 => Some(Transport::Udp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src: IpAddr,
    pub dst: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Transport,
}

/// A packet reduced to its IP header onward.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifiedPacket {
    pub ordinal: usize,
    pub timestamp: f64,
    pub five_tuple: FiveTuple,
    /// Bytes from the first IP header byte to the end of the IP datagram (link
    /// padding removed, snap-length truncation kept).
    pub payload: Vec<u8>,
    /// Offset of the transport payload inside `payload`.
    pub transport_offset: usize,
    /// Transport payload length as declared by the headers.
    pub transport_len: usize,
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn malformed(ordinal: usize, msg: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("packet {ordinal}: {msg}"))
}

/// Where the network layer starts, or `None` for frames that carry no IP.
fn network_offset(packet: &RawPacket) -> Result<Option<usize>> {
    match packet.link_type {
        LinkType::RawIp => Ok(Some(0)),
        LinkType::Other(_) => Ok(None),
        LinkType::Ethernet => {
            let b = &packet.bytes;
            let mut at = 12;
            loop {
                if b.len() < at + 2 {
                    return Err(malformed(packet.ordinal, format!("ethernet frame of {} bytes", b.len())));
                }
                match be16(b, at) {
                    0x8100 | 0x88a8 => at += 4,
                    0x0800 | 0x86dd => return Ok(Some(at + 2)),
                    _ => return Ok(None),
                }
                if at > ETHERNET_HEADER + 8 {
                    return Ok(None);
                }
            }
        }
    }
}

struct Located {
    l4: usize,
    declared_end: usize,
    protocol: u8,
    addr_range: std::ops::Range<usize>,
}

fn locate_ipv4(ordinal: usize, net: &[u8]) -> Result<Option<Located>> {
    if net.len() < 20 {
        return Err(malformed(ordinal, format!("IPv4 header needs 20 bytes, {} captured", net.len())));
    }
    let ihl = usize::from(net[0] & 0x0f) * 4;
    if ihl < 20 {
        return Err(malformed(ordinal, format!("IPv4 header length {ihl} below minimum")));
    }
    if net.len() < ihl {
        return Err(malformed(ordinal, format!("IPv4 header declares {ihl} bytes, {} captured", net.len())));
    }
    let total = usize::from(be16(net, 2));
    if total < ihl {
        return Err(malformed(ordinal, format!("IPv4 total length {total} shorter than header")));
    }
    if be16(net, 6) & 0x1fff != 0 {
        return Ok(None);
    }
    Ok(Some(Located {
        l4: ihl,
        declared_end: total,
        protocol: net[9],
        addr_range: 12..20,
    }))
}

fn locate_ipv6(ordinal: usize, net: &[u8]) -> Result<Option<Located>> {
    if net.len() < 40 {
        return Err(malformed(ordinal, format!("IPv6 header needs 40 bytes, {} captured", net.len())));
    }
    let declared_end = 40 + usize::from(be16(net, 4));
    let mut next = net[6];
    let mut at = 40;
    while matches!(next, 0 | 43 | 44 | 51 | 60) {
        if net.len() < at + 8 {
            return Err(malformed(ordinal, "truncated IPv6 extension header"));
        }
        let len = match next {
            44 => {
                if be16(net, at + 2) >> 3 != 0 {
                    return Ok(None);
                }
                8
            }
            51 => (usize::from(net[at + 1]) + 2) * 4,
            _ => (usize::from(net[at + 1]) + 1) * 8,
        };
        next = net[at];
        at += len;
    }
    Ok(Some(Located {
        l4: at,
        declared_end,
        protocol: next,
        addr_range: 8..40,
    }))
}

/// Strips the link layer, keeps TCP/UDP over IP, and optionally zeroes the IP
/// addresses. `Ok(None)` means the frame is discarded.
pub fn purify(packet: &RawPacket, cfg: &PreprocessConfig) -> Result<Option<PurifiedPacket>> {
    let ordinal = packet.ordinal;
    let Some(start) = network_offset(packet)? else {
        return Ok(None);
    };
    let net = &packet.bytes[start..];
    if net.is_empty() {
        return Err(malformed(ordinal, "no network-layer bytes"));
    }
    let located = match net[0] >> 4 {
        4 => locate_ipv4(ordinal, net)?,
        6 => locate_ipv6(ordinal, net)?,
        _ if packet.link_type == LinkType::RawIp => return Ok(None),
        v => return Err(malformed(ordinal, format!("IP version {v} inside an IP ethertype"))),
    };
    let Some(loc) = located else {
        return Ok(None);
    };
    let Some(protocol) = Transport::from_protocol(loc.protocol) else {
        return Ok(None);
    };
    if protocol == Transport::Udp && cfg.include_transport == TransportFilter::TcpOnly {
        return Ok(None);
    }
    let end = loc.declared_end.min(net.len());
    let header_len = match protocol {
        Transport::Udp => 8,
        Transport::Tcp => {
            if end < loc.l4 + 13 {
                return Err(malformed(ordinal, "TCP header truncated"));
            }
            let thl = usize::from(net[loc.l4 + 12] >> 4) * 4;
            if thl < 20 {
                return Err(malformed(ordinal, format!("TCP data offset {thl} below minimum")));
            }
            thl
        }
    };
    if end < loc.l4 + 4 {
        return Err(malformed(ordinal, "transport ports truncated"));
    }
    if loc.declared_end < loc.l4 + header_len {
        return Err(malformed(ordinal, "datagram shorter than its transport header"));
    }
    let mut payload = net[..end].to_vec();
    let (src, dst) = if cfg.anonymize {
        payload[loc.addr_range.clone()].fill(0);
        if loc.addr_range.len() == 8 {
            (IpAddr::V4(Ipv4Addr::UNSPECIFIED), IpAddr::V4(Ipv4Addr::UNSPECIFIED))
        } else {
            (IpAddr::V6(Ipv6Addr::UNSPECIFIED), IpAddr::V6(Ipv6Addr::UNSPECIFIED))
        }
    } else if loc.addr_range.len() == 8 {
        let a: [u8; 4] = net[12..16].try_into().expect("4 bytes");
        let b: [u8; 4] = net[16..20].try_into().expect("4 bytes");
        (IpAddr::V4(a.into()), IpAddr::V4(b.into()))
    } else {
        let a: [u8; 16] = net[8..24].try_into().expect("16 bytes");
        let b: [u8; 16] = net[24..40].try_into().expect("16 bytes");
        (IpAddr::V6(a.into()), IpAddr::V6(b.into()))
    };
    Ok(Some(PurifiedPacket {
        ordinal,
        timestamp: packet.timestamp,
        five_tuple: FiveTuple {
            src,
            dst,
            src_port: be16(net, loc.l4),
            dst_port: be16(net, loc.l4 + 2),
            protocol,
        },
        payload,
        transport_offset: loc.l4 + header_len,
        transport_len: loc.declared_end - loc.l4 - header_len,
    }))
}

/// Drops packets without transport payload and, when `cfg.dedupe` is set,
/// every repeat of an already seen purified payload. Order is preserved.
pub fn refine(packets: Vec<PurifiedPacket>, cfg: &PreprocessConfig) -> Vec<PurifiedPacket> {
    let mut seen = HashSet::new();
    packets
        .into_iter()
        .filter(|p| p.transport_len > 0)
        .filter(|p| !cfg.dedupe || seen.insert(p.payload.clone()))
        .collect()
}
