//! Capture ingestion: pcap records → purified IP packets → 784-byte records →
//! 28×28 traffic-graphs.

pub mod frame;
mod pcap;
mod purify;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pcap::{open_capture, parse_capture, write_capture, LinkType, RawPacket, LINKTYPE_ETHERNET, LINKTYPE_RAW};
pub use purify::{purify, refine, FiveTuple, PurifiedPacket, Transport};

pub const GRAPH_SIDE: usize = 28;
pub const GRAPH_LEN: usize = GRAPH_SIDE * GRAPH_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportFilter {
    TcpOnly,
    TcpUdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_len: usize,
    pub anonymize: bool,
    pub dedupe: bool,
    pub time_unit_secs: f64,
    pub include_transport: TransportFilter,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_len: GRAPH_LEN,
            anonymize: true,
            dedupe: true,
            time_unit_secs: 60.0,
            include_transport: TransportFilter::TcpUdp,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_len == 0 {
            return Err(Error::arg("target_len must be positive"));
        }
        if !(self.time_unit_secs > 0.0) || !self.time_unit_secs.is_finite() {
            return Err(Error::arg(format!("time unit must be positive, got {}", self.time_unit_secs)));
        }
        Ok(())
    }
}

/// Packets sharing one time unit, ordered by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeUnitBatch {
    /// 1-based unit number counted from the earliest packet.
    pub index: usize,
    pub packets: Vec<RawPacket>,
}

/// Groups packets into `unit_secs` windows anchored at the earliest timestamp.
/// Empty windows are omitted; ties keep file order.
pub fn split_time_units(packets: Vec<RawPacket>, unit_secs: f64) -> Result<Vec<TimeUnitBatch>> {
    if !(unit_secs > 0.0) || !unit_secs.is_finite() {
        return Err(Error::arg(format!("time unit must be positive, got {unit_secs}")));
    }
    let Some(first) = packets.iter().map(|p| p.timestamp).reduce(f64::min) else {
        return Ok(Vec::new());
    };
    let mut keyed: Vec<(usize, RawPacket)> = packets
        .into_iter()
        .map(|p| (((p.timestamp - first) / unit_secs).floor() as usize + 1, p))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.timestamp.total_cmp(&b.1.timestamp)));
    let mut batches: Vec<TimeUnitBatch> = Vec::new();
    for (index, p) in keyed {
        match batches.last_mut() {
            Some(b) if b.index == index => b.packets.push(p),
            _ => batches.push(TimeUnitBatch { index, packets: vec![p] }),
        }
    }
    Ok(batches)
}

/// A record of exactly the configured target length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedRecord(Vec<u8>);

impl FixedRecord {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

/// Truncates to the first `target_len` bytes or right-pads with zeros.
pub fn unify_length(bytes: &[u8], target_len: usize) -> FixedRecord {
    let mut out = bytes[..bytes.len().min(target_len)].to_vec();
    out.resize(target_len, 0);
    FixedRecord(out)
}

/// Where a graph came from, kept so the S-layer can inspect headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphOrigin {
    pub file: String,
    pub ordinal: usize,
    pub timestamp: f64,
    pub five_tuple: FiveTuple,
    /// Start of the transport payload within the graph bytes.
    pub payload_offset: usize,
    pub payload_len: usize,
}

/// A 28×28 grayscale image whose row-major pixels are the record bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficGraph {
    pixels: Vec<u8>,
    pub origin: Option<GraphOrigin>,
}

impl TrafficGraph {
    pub fn from_pixels(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != GRAPH_LEN {
            return Err(Error::shape(format!("traffic-graph needs {GRAPH_LEN} pixels, got {}", pixels.len())));
        }
        Ok(Self { pixels, origin: None })
    }

    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        assert!(row < GRAPH_SIDE && col < GRAPH_SIDE, "pixel ({row}, {col}) outside 28×28");
        self.pixels[row * GRAPH_SIDE + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.pixels.chunks(GRAPH_SIDE)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// The transport payload bytes that survived length unification.
    pub fn payload_prefix(&self) -> &[u8] {
        match &self.origin {
            Some(o) => {
                let start = o.payload_offset.min(GRAPH_LEN);
                let end = (o.payload_offset + o.payload_len).min(GRAPH_LEN);
                &self.pixels[start..end]
            }
            None => &[],
        }
    }
}

impl AsRef<[u8]> for TrafficGraph {
    fn as_ref(&self) -> &[u8] {
        &self.pixels
    }
}

pub fn to_graph(record: FixedRecord) -> Result<TrafficGraph> {
    TrafficGraph::from_pixels(record.0)
}

/// Counters for one preprocessing run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessSummary {
    pub packets: usize,
    pub purified: usize,
    pub discarded: usize,
    pub malformed: usize,
    pub empty_payload: usize,
    pub duplicates: usize,
    pub graphs: usize,
}

/// Full P-layer over an already parsed capture. Deduplication is per time unit.
pub fn preprocess_packets(
    packets: Vec<RawPacket>,
    file: &str,
    cfg: &PreprocessConfig,
) -> Result<(Vec<TrafficGraph>, PreprocessSummary)> {
    cfg.validate()?;
    let mut summary = PreprocessSummary {
        packets: packets.len(),
        ..Default::default()
    };
    let mut graphs = Vec::new();
    for batch in split_time_units(packets, cfg.time_unit_secs)? {
        let mut kept = Vec::with_capacity(batch.packets.len());
        for p in &batch.packets {
            match purify(p, cfg) {
                Ok(Some(pp)) => kept.push(pp),
                Ok(None) => summary.discarded += 1,
                Err(Error::Malformed(_)) => summary.malformed += 1,
                Err(e) => return Err(e),
            }
        }
        summary.purified += kept.len();
        let with_payload = kept.iter().filter(|p| p.transport_len > 0).count();
        summary.empty_payload += kept.len() - with_payload;
        let refined = refine(kept, cfg);
        summary.duplicates += with_payload - refined.len();
        for p in refined {
            let record = unify_length(&p.payload, cfg.target_len);
            let mut graph = to_graph(record)?;
            graph.origin = Some(GraphOrigin {
                file: file.to_string(),
                ordinal: p.ordinal,
                timestamp: p.timestamp,
                five_tuple: p.five_tuple,
                payload_offset: p.transport_offset,
                payload_len: p.transport_len,
            });
            graphs.push(graph);
        }
    }
    summary.graphs = graphs.len();
    Ok((graphs, summary))
}

/// Reads a capture file and runs the full P-layer on it.
pub fn preprocess_capture(path: impl AsRef<Path>, cfg: &PreprocessConfig) -> Result<(Vec<TrafficGraph>, PreprocessSummary)> {
    let path = path.as_ref();
    let packets = open_capture(path)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    preprocess_packets(packets, &name, cfg)
}

#[cfg(test)]
mod tests {
    use super::frame::*;
    use super::*;
    use proptest::prelude::*;

    fn pkt(ordinal: usize, timestamp: f64) -> RawPacket {
        RawPacket {
            ordinal,
            timestamp,
            link_type: LinkType::Ethernet,
            bytes: vec![0; 14],
        }
    }

    #[test]
    fn time_units_by_floor_division() {
        let batches = split_time_units(vec![pkt(1, 0.0), pkt(2, 30.0), pkt(3, 61.0)], 60.0).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].index, 1);
        assert_eq!(batches[0].packets.iter().map(|p| p.ordinal).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(batches[1].index, 2);
        assert_eq!(batches[1].packets[0].timestamp, 61.0);
    }

    #[test]
    fn time_unit_edge_cases() {
        let one = split_time_units(vec![pkt(1, 5.0)], 60.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].index, 1);
        assert!(split_time_units(vec![], 60.0).unwrap().is_empty());
        assert!(matches!(split_time_units(vec![pkt(1, 0.0)], 0.0), Err(Error::Argument(_))));
        assert!(matches!(split_time_units(vec![pkt(1, 0.0)], -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn empty_units_are_omitted() {
        let b = split_time_units(vec![pkt(1, 0.0), pkt(2, 250.0)], 60.0).unwrap();
        assert_eq!(b.iter().map(|b| b.index).collect::<Vec<_>>(), vec![1, 5]);
    }

    #[test]
    fn unify_length_examples() {
        let long: Vec<u8> = (0..1500).map(|i| (i % 251) as u8).collect();
        assert_eq!(unify_length(&long, 784).as_bytes(), &long[..784]);
        let exact: Vec<u8> = (0..784).map(|i| (i % 7) as u8).collect();
        assert_eq!(unify_length(&exact, 784).as_bytes(), exact.as_slice());
        let short = vec![0xab; 100];
        let u = unify_length(&short, 784);
        assert_eq!(&u.as_bytes()[..100], short.as_slice());
        assert!(u.as_bytes()[100..].iter().all(|&b| b == 0));
        assert_eq!(u.as_bytes().len(), 784);
    }

    #[test]
    fn graph_pixels_follow_bytes() {
        let g = to_graph(unify_length(&[], 784)).unwrap();
        assert!(g.pixels().iter().all(|&p| p == 0));
        let g = to_graph(unify_length(&[0xff], 784)).unwrap();
        assert_eq!(g.pixel(0, 0), 255);
        let mut bytes = vec![0; 784];
        bytes[28 * 3 + 5] = 9;
        let g = to_graph(FixedRecord(bytes)).unwrap();
        assert_eq!(g.pixel(3, 5), 9);
        assert_eq!(g.rows().count(), 28);
        assert!(to_graph(unify_length(&[1], 100)).is_err());
    }

    proptest! {
        #[test]
        fn unify_is_idempotent(bytes in prop::collection::vec(any::<u8>(), 0..2000), target in 1usize..1200) {
            let once = unify_length(&bytes, target);
            prop_assert_eq!(once.as_bytes().len(), target);
            prop_assert_eq!(unify_length(once.as_bytes(), target), once);
        }

        #[test]
        fn graph_flatten_round_trips(bytes in prop::collection::vec(any::<u8>(), 784)) {
            let g = to_graph(FixedRecord(bytes.clone())).unwrap();
            let flat: Vec<u8> = g.rows().flatten().copied().collect();
            prop_assert_eq!(flat, bytes);
        }

        #[test]
        fn time_units_partition_input(ts in prop::collection::vec(0.0f64..1000.0, 0..50), unit in 0.5f64..100.0) {
            let packets: Vec<RawPacket> = ts.iter().enumerate().map(|(i, &t)| pkt(i + 1, t)).collect();
            let batches = split_time_units(packets, unit).unwrap();
            let total: usize = batches.iter().map(|b| b.packets.len()).sum();
            prop_assert_eq!(total, ts.len());
            let first = ts.iter().copied().fold(f64::INFINITY, f64::min);
            for b in &batches {
                prop_assert!(!b.packets.is_empty());
                for w in b.packets.windows(2) {
                    prop_assert!(w[0].timestamp <= w[1].timestamp);
                }
                for p in &b.packets {
                    prop_assert_eq!(((p.timestamp - first) / unit).floor() as usize + 1, b.index);
                }
            }
        }
    }

    fn capture(frames: &[(f64, Vec<u8>)]) -> Vec<RawPacket> {
        let refs: Vec<(f64, &[u8])> = frames.iter().map(|(t, f)| (*t, f.as_slice())).collect();
        let mut buf = Vec::new();
        write_capture(&mut buf, LinkType::Ethernet, &refs).unwrap();
        parse_capture(&buf).unwrap()
    }

    fn data_frame(last_octet: u8, port: u16, payload: &[u8]) -> Vec<u8> {
        ethernet(ETHERTYPE_IPV4, &ipv4_tcp([10, 1, 1, last_octet], [172, 16, 0, 9], 50000, port, TCP_PSH | TCP_ACK, payload))
    }

    #[test]
    fn empty_capture_gives_no_graphs() {
        let (g, s) = preprocess_packets(vec![], "x.pcap", &PreprocessConfig::default()).unwrap();
        assert!(g.is_empty());
        assert_eq!(s, PreprocessSummary::default());
    }

    #[test]
    fn one_data_packet_gives_one_graph() {
        let pk = capture(&[(1.0, data_frame(1, 80, b"GET / HTTP/1.1\r\n"))]);
        let (g, s) = preprocess_packets(pk, "one.pcap", &PreprocessConfig::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(s.graphs, 1);
        assert_eq!(g[0].pixel(0, 0), 0x45);
        assert_eq!(g[0].payload_prefix(), b"GET / HTTP/1.1\r\n");
        let o = g[0].origin.as_ref().unwrap();
        assert_eq!((o.file.as_str(), o.ordinal, o.five_tuple.dst_port), ("one.pcap", 1, 80));
    }

    #[test]
    fn summary_counts_every_fate() {
        let mut truncated = data_frame(3, 80, b"zz");
        truncated.truncate(20);
        let pk = capture(&[
            (0.0, data_frame(1, 80, b"a")),
            (0.1, data_frame(1, 80, b"a")),
            (0.2, data_frame(2, 80, &[])),
            (0.3, arp_request([1, 1, 1, 1], [2, 2, 2, 2])),
            (0.4, truncated),
            (120.0, data_frame(1, 80, b"a")),
        ]);
        let (g, s) = preprocess_packets(pk, "f", &PreprocessConfig::default()).unwrap();
        assert_eq!(
            s,
            PreprocessSummary {
                packets: 6,
                purified: 4,
                discarded: 1,
                malformed: 1,
                empty_payload: 1,
                duplicates: 1,
                graphs: 2,
            }
        );
        assert_eq!(g.iter().map(|g| g.origin.as_ref().unwrap().ordinal).collect::<Vec<_>>(), vec![1, 6]);
    }

    #[test]
    fn anonymized_graphs_have_zero_address_fields() {
        let frames: Vec<(f64, Vec<u8>)> = (0..8).map(|i| (i as f64, data_frame(i as u8 + 1, 443, &[i as u8; 30]))).collect();
        let (graphs, _) = preprocess_packets(capture(&frames), "f", &PreprocessConfig::default()).unwrap();
        assert_eq!(graphs.len(), 8);
        for g in graphs {
            assert!(g.pixels()[12..20].iter().all(|&b| b == 0));
        }
    }

    #[test]
    fn file_pipeline_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pcap");
        let frames: Vec<(f64, Vec<u8>)> = (0..5).map(|i| (i as f64 * 40.0, data_frame(1, 25, &[i as u8 + 1; 900]))).collect();
        let refs: Vec<(f64, &[u8])> = frames.iter().map(|(t, f)| (*t, f.as_slice())).collect();
        write_capture(std::fs::File::create(&path).unwrap(), LinkType::Ethernet, &refs).unwrap();
        let a = preprocess_capture(&path, &PreprocessConfig::default()).unwrap();
        let b = preprocess_capture(&path, &PreprocessConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 5);
        assert!(a.0.iter().all(|g| g.pixels().len() == GRAPH_LEN));
    }
}
