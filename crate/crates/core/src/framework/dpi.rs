//! Port and payload-signature application labelling for benign traffic.

use serde::{Deserialize, Serialize};

use crate::ingest::{FiveTuple, Transport};

pub const UNKNOWN_APP: &str = "Unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evidence {
    PortMatch,
    SignatureMatch,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppLabel {
    pub name: String,
    pub evidence: Evidence,
}

impl AppLabel {
    fn new(name: &str, evidence: Evidence) -> Self {
        Self {
            name: name.to_string(),
            evidence,
        }
    }

    pub fn unknown() -> Self {
        Self::new(UNKNOWN_APP, Evidence::Unknown)
    }
}

/// IANA well-known and registered ports.
const PORTS: &[(u16, &str)] = &[
    (20, "FTP"),
    (21, "FTP"),
    (22, "SSH"),
    (23, "Telnet"),
    (25, "SMTP/Email"),
    (53, "DNS"),
    (67, "DHCP"),
    (68, "DHCP"),
    (80, "HTTP"),
    (110, "POP3/Email"),
    (123, "NTP"),
    (143, "IMAP/Email"),
    (161, "SNMP"),
    (443, "HTTPS"),
    (465, "SMTPS/Email"),
    (587, "SMTP/Email"),
    (993, "IMAPS/Email"),
    (995, "POP3S/Email"),
    (1883, "MQTT"),
    (3306, "MySQL"),
    (3389, "RDP"),
    (5060, "SIP"),
    (5432, "PostgreSQL"),
    (8080, "HTTP"),
];

const HTTP_PREFIXES: &[&[u8]] = &[
    b"GET ",
    b"POST ",
    b"HEAD ",
    b"PUT ",
    b"DELETE ",
    b"OPTIONS ",
    b"PATCH ",
    b"CONNECT ",
    b"TRACE ",
    b"HTTP/1.",
];

const SMTP_PREFIXES: &[&[u8]] = &[b"220 ", b"HELO ", b"EHLO "];

fn port_name(port: u16) -> Option<&'static str> {
    PORTS.iter().find(|(p, _)| *p == port).map(|(_, n)| *n)
}

/// A plausible DNS header: QR/opcode standard, 1..=16 questions, no absurd counts.
fn looks_like_dns(payload: &[u8]) -> bool {
    if payload.len() < 12 {
        return false;
    }
    let opcode = (payload[2] >> 3) & 0x0f;
    let qd = u16::from_be_bytes([payload[4], payload[5]]);
    let an = u16::from_be_bytes([payload[6], payload[7]]);
    opcode <= 2 && (1..=16).contains(&qd) && an <= 256
}

fn signature(meta: Option<&FiveTuple>, payload: &[u8]) -> Option<&'static str> {
    if HTTP_PREFIXES.iter().any(|p| payload.starts_with(p)) {
        return Some("HTTP");
    }
    if SMTP_PREFIXES.iter().any(|p| payload.starts_with(p)) {
        return Some("SMTP/Email");
    }
    if payload.len() >= 3 && payload[0] == 0x16 && payload[1] == 0x03 && payload[2] <= 0x04 {
        return Some("TLS");
    }
    let on_53 = meta.is_some_and(|t| t.src_port == 53 || t.dst_port == 53);
    let dns_payload = match meta {
        Some(t) if t.protocol == Transport::Tcp && payload.len() >= 2 => &payload[2..],
        _ => payload,
    };
    if on_53 && looks_like_dns(dns_payload) {
        return Some("DNS");
    }
    None
}

/// Signature match first, then the destination and source ports, then Unknown.
pub fn s2_port_dpi(meta: Option<&FiveTuple>, payload_prefix: &[u8]) -> AppLabel {
    if let Some(name) = signature(meta, payload_prefix) {
        return AppLabel::new(name, Evidence::SignatureMatch);
    }
    let by_port = meta.and_then(|t| port_name(t.dst_port).or_else(|| port_name(t.src_port)));
    match by_port {
        Some(name) => AppLabel::new(name, Evidence::PortMatch),
        None => AppLabel::unknown(),
    }
}
