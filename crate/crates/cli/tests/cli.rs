mod common;

use std::collections::BTreeSet;
use std::fs;

use common::*;
use trafficgraph::framework::Alert;

fn flags_in_help(sub: &str) -> BTreeSet<String> {
    let out = run(&[sub, "--help"]);
    assert_eq!(code(&out), 0);
    stdout(&out)
        .split_whitespace()
        .filter_map(|w| w.strip_prefix("--"))
        .map(|w| w.trim_end_matches([',', '.', ']']).split(['=', '<', '[']).next().unwrap().to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

#[test]
fn help_documents_every_flag() {
    let common = ["config", "seed", "verbose", "help"];
    let cases: [(&str, &[&str]); 6] = [
        ("preprocess", &["out", "label", "append", "time-unit", "no-anonymize", "no-dedupe", "tcp-only"]),
        (
            "train",
            &[
                "data", "task", "out", "per-class", "test-fraction", "holdout", "history", "epoch", "batchsize",
                "learn-rate", "dropout", "lambda-conv", "lambda-lstm",
            ],
        ),
        ("eval", &["checkpoint", "data", "task", "s-model", "out"]),
        (
            "run",
            &["g-model", "s-model", "sink", "report", "reference", "time-unit", "no-anonymize", "no-dedupe", "tcp-only"],
        ),
        ("gradcheck", &["seeds", "op", "inject-fault"]),
        ("synth", &["out", "per-class", "classes"]),
    ];
    for (sub, flags) in cases {
        let want: BTreeSet<String> = flags.iter().chain(&common).map(|s| s.to_string()).collect();
        assert_eq!(flags_in_help(sub), want, "{sub}");
    }
}

#[test]
fn preprocess_writes_dataset_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cap = ten_packet_capture(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["preprocess", p(&cap), "-o", p(out), "-l", "benign"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("10 packets, 10 graphs"));
    }
    for file in ["manifest.json", "benign/benign.npy", "encrypted/chat.npy", "malware/malware.npy"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["total"], 10);

    let o = run(&["preprocess", p(&cap), "-o", p(&a), "-l", "malware", "--append"]);
    assert_eq!(code(&o), 0);
    let o = run(&["preprocess", p(&cap), "-o", p(&a), "-l", "encrypted/voip", "--append"]);
    assert_eq!(code(&o), 0);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["total"], 30);
    assert_eq!(manifest["sources"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_input_is_io_and_bad_capture_is_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    let o = run(&["preprocess", "does-not-exist.pcap", "-o", p(&out), "-l", "benign"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("does-not-exist.pcap"));
    let junk = dir.path().join("junk.pcap");
    fs::write(&junk, b"definitely not a capture file").unwrap();
    let o = run(&["preprocess", p(&junk), "-o", p(&out), "-l", "benign"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(&["preprocess", p(&junk), "-o", p(&out), "-l", "encrypted/fax"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_is_seed_deterministic_and_reports_history() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    assert_eq!(code(&run(&["synth", "-o", p(&ds), "--per-class", "3", "--classes", "3class"])), 0);
    let mut ckpts = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let ck = dir.path().join(name);
        let o = run(&["train", "-d", p(&ds), "-t", "3class", "-o", p(&ck), "--epoch", "10", "--batchsize", "9"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[9]["epoch"], 10);
        ckpts.push(fs::read(&ck).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);

    let ck = dir.path().join("c.ckpt");
    let o = run(&["train", "-d", p(&ds), "-t", "3class", "-o", p(&ck), "--epoch", "1", "--seed", "99"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(&ck).unwrap(), ckpts[0]);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    assert_eq!(code(&run(&["synth", "-o", p(&ds), "--per-class", "2", "--classes", "3class"])), 0);
    let cfg = dir.path().join("train.conf");
    fs::write(&cfg, "# small run\nepoch = 3\nbatchsize = 6\n").unwrap();
    let ck = dir.path().join("m.ckpt");
    let hist = dir.path().join("h.jsonl");
    let base = ["train", "-d", p(&ds), "-t", "3class", "-o", p(&ck), "--config", p(&cfg), "--history", p(&hist)];
    assert_eq!(code(&run(&base)), 0);
    assert_eq!(fs::read_to_string(&hist).unwrap().lines().count(), 3);
    let mut flagged = base.to_vec();
    flagged.extend(["--epoch", "2"]);
    assert_eq!(code(&run(&flagged)), 0);
    assert_eq!(fs::read_to_string(&hist).unwrap().lines().count(), 2);

    fs::write(&cfg, "epochs = 3\n").unwrap();
    let o = run(&base);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("epochs"));
}

#[test]
fn undersized_pool_is_a_config_error_naming_the_class() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    assert_eq!(code(&run(&["synth", "-o", p(&ds), "--per-class", "2", "--classes", "3class"])), 0);
    let ck = dir.path().join("m.ckpt");
    let o = run(&["train", "-d", p(&ds), "-t", "3class", "-o", p(&ck), "--per-class", "5", "--epoch", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Encrypted has 2 samples, 5 requested"), "{}", stderr(&o));
    let o = run(&["train", "-d", p(&ds), "-t", "6class", "-o", p(&ck), "--epoch", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Email has 0 samples"), "{}", stderr(&o));
    assert!(!ck.exists());
}

#[test]
fn eval_of_a_perfect_model_and_a_mismatched_one() {
    let dir = tempfile::tempdir().unwrap();
    let cap = ten_packet_capture(dir.path());
    let ds = dir.path().join("ds");
    assert_eq!(code(&run(&["preprocess", p(&cap), "-o", p(&ds), "-l", "malware"])), 0);
    let g = dir.path().join("g.ckpt");
    hard_wired(&g, 3, 2);
    let json = dir.path().join("report.json");
    let o = run(&["eval", "-c", p(&g), "-d", p(&ds), "-o", p(&json)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("accuracy 1.00000 over 10 samples"), "{text}");
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&json).unwrap()).unwrap();
    assert_eq!(rep["accuracy"], 1.0);
    let malware = &rep["classes"][2];
    assert_eq!(malware["class"], "Malware");
    let line = text.lines().find(|l| l.starts_with("Malware")).unwrap().to_string();
    for key in ["precision", "recall", "f1"] {
        assert!(line.contains(&format!("{:.5}", malware[key].as_f64().unwrap())), "{key} in {line}");
    }
    assert!(line.ends_with("10"));

    let o = run(&["eval", "-c", p(&g), "-d", p(&ds), "-t", "6class"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("expected 6, found 3"));
    let s = dir.path().join("s.ckpt");
    hard_wired(&s, 6, 0);
    let o = run(&["eval", "-c", p(&s), "-d", p(&ds), "--s-model", p(&g)]);
    assert_eq!(code(&o), 2);

    let o = run(&["eval", "-c", p(&g), "-d", p(&ds), "--s-model", p(&s), "-o", p(&json)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy 1.00000 over 10 samples"));
}

#[test]
fn run_reports_conserve_counts_and_alert_every_malware_graph() {
    let dir = tempfile::tempdir().unwrap();
    let cap = ten_packet_capture(dir.path());
    let (g, s) = (dir.path().join("g.ckpt"), dir.path().join("s.ckpt"));
    hard_wired(&g, 3, 2);
    hard_wired(&s, 6, 4);
    let alerts = dir.path().join("alerts.jsonl");
    let o = run(&["run", p(&cap), "-g", p(&g), "-s", p(&s), "--sink", &format!("file:{}", p(&alerts))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["classified"], 10);
    assert_eq!(rep["alerts"], 10);
    assert!(rep["duration_secs"].is_number());
    let lines: Vec<Alert> = fs::read_to_string(&alerts).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|a| a.origin.file == "ten.pcap" && a.tuple.is_some()));

    hard_wired(&g, 3, 1);
    let o = run(&["run", p(&cap), "-g", p(&g), "-s", p(&s), "--reference"]);
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(rep.get("duration_secs").is_none());
    assert_eq!(rep["s2_apps"]["HTTP"], 3);
    assert_eq!(rep["s2_apps"]["DNS"], 2);
    let actions = &rep["actions"];
    let sum: u64 = ["s1", "s2", "s3"].iter().map(|k| actions[k].as_u64().unwrap()).sum();
    assert_eq!(sum, 10);
}

#[test]
fn run_on_empty_capture_and_dead_sink() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.pcap");
    write_frames(&empty, &[]);
    let (g, s) = (dir.path().join("g.ckpt"), dir.path().join("s.ckpt"));
    hard_wired(&g, 3, 2);
    hard_wired(&s, 6, 0);
    let o = run(&["run", p(&empty), "-g", p(&g), "-s", p(&s), "--reference"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["classified"], 0);
    assert_eq!(rep["g_labels"]["Malware"], 0);

    let cap = ten_packet_capture(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let report = dir.path().join("r.json");
    let sink = format!("tcp:127.0.0.1:{port}");
    let o = run(&["run", p(&cap), "-g", p(&g), "-s", p(&s), "--sink", &sink, "-r", p(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["delivery_failures"], 10);
    assert_eq!(rep["sinks"][0]["failures"], 10);

    let o = run(&["run", p(&cap), "-g", p(&s), "-s", p(&g)]);
    assert_eq!(code(&o), 2);
    let o = run(&["run", p(&cap), "-g", p(&g), "-s", p(&s), "--sink", "carrier-pigeon"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_lists_every_op_once_and_names_a_fault() {
    let o = run(&["gradcheck", "--seeds", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let names: Vec<String> = stdout(&o).lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    let want = [
        "conv1d", "relu", "maxpool1d", "lrn", "dense", "dropout", "lstm_step", "lstm_sequence",
        "softmax_cross_entropy", "l1_penalty", "model_loss",
    ];
    assert_eq!(names, want);
    assert!(stdout(&o).lines().all(|l| l.ends_with(" ok")));

    let o = run(&["gradcheck", "--seeds", "2", "--op", "lstm_step", "--op", "dense", "--inject-fault", "lstm_step"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("lstm_step"));
    assert!(!stderr(&o).contains("dense"));
    assert_eq!(code(&run(&["gradcheck", "--op", "nonsense"])), 2);
}
