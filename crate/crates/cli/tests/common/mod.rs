#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trafficgraph::ingest::frame::{ethernet, ipv4_tcp, ipv4_udp, ETHERTYPE_IPV4, TCP_ACK, TCP_PSH};
use trafficgraph::ingest::{write_capture, LinkType};
use trafficgraph::model::{save_checkpoint, Checkpoint, Hyperparams, TrafficNet, TrainingMeta};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trafficgraph"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn trafficgraph")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Ten distinct data packets: TLS, HTTP, DNS and SMTP, one per second.
pub fn ten_packets() -> Vec<(f64, Vec<u8>)> {
    let mut frames = Vec::new();
    for i in 0..10u8 {
        let host = [10, 0, 0, 10 + i];
        let server = [192, 168, 1, 1];
        let sport = 40_000 + i as u16;
        let ip = match i % 4 {
            0 => ipv4_tcp(host, server, sport, 443, TCP_PSH | TCP_ACK, &[0x16, 0x03, 0x03, 0x00, 0x20 + i, 1, 2, 3]),
            1 => ipv4_tcp(host, server, sport, 80, TCP_PSH | TCP_ACK, format!("GET /{i} HTTP/1.1\r\n").as_bytes()),
            2 => ipv4_udp(host, server, sport, 53, &[0x12, i, 0x01, 0x00, 0x00, 0x01, 0, 0, 0, 0, 0, 0]),
            _ => ipv4_tcp(host, server, sport, 25, TCP_PSH | TCP_ACK, format!("EHLO host{i}\r\n").as_bytes()),
        };
        frames.push((i as f64, ethernet(ETHERTYPE_IPV4, &ip)));
    }
    frames
}

pub fn write_frames(path: &Path, frames: &[(f64, Vec<u8>)]) {
    let refs: Vec<(f64, &[u8])> = frames.iter().map(|(t, f)| (*t, f.as_slice())).collect();
    write_capture(std::fs::File::create(path).unwrap(), LinkType::Ethernet, &refs).unwrap();
}

pub fn ten_packet_capture(dir: &Path) -> PathBuf {
    let path = dir.join("ten.pcap");
    write_frames(&path, &ten_packets());
    path
}

pub fn save_model(path: &Path, model: TrafficNet) {
    let ckpt = Checkpoint {
        model,
        hyperparams: Hyperparams::default(),
        meta: TrainingMeta {
            epochs_completed: 0,
            final_loss: 0.0,
            seed: 0,
        },
    };
    save_checkpoint(&ckpt, path).unwrap();
}

/// A checkpoint whose every prediction is class `winner`.
pub fn hard_wired(path: &Path, classes: usize, winner: usize) {
    let mut logits = vec![0.0; classes];
    logits[winner] = 10.0;
    save_model(path, TrafficNet::constant(&logits).unwrap());
}
