//! The G-layer / S-layer pipeline: a three-way classifier routes malware to
//! IDS alerts, benign traffic to port/DPI labelling, and encrypted traffic to
//! a six-way application classifier.

mod dpi;
mod sink;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, EncryptedApp, TopClass};
use crate::error::{Error, Result};
use crate::ingest::{preprocess_capture, FiveTuple, PreprocessConfig, PreprocessSummary, TrafficGraph};
use crate::model::{Prediction, TrafficNet};

pub use dpi::{s2_port_dpi, AppLabel, Evidence, UNKNOWN_APP};
pub use sink::{AlertSink, SinkSpec};

pub const ALERT_SCHEMA_VERSION: u32 = 1;
const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GLabel {
    pub class: TopClass,
    /// Winning softmax probability.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertOrigin {
    pub file: String,
    pub ordinal: usize,
}

/// One IDS warning, serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub version: u32,
    pub ts: f64,
    pub origin: AlertOrigin,
    pub tuple: Option<FiveTuple>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SAction {
    S1Alert(Alert),
    S2AppLabel(AppLabel),
    S3EncryptedClass { app: EncryptedApp, confidence: f64 },
}

impl SAction {
    pub fn kind(&self) -> &'static str {
        match self {
            SAction::S1Alert(_) => "s1",
            SAction::S2AppLabel(_) => "s2",
            SAction::S3EncryptedClass { .. } => "s3",
        }
    }
}

fn expect_classes(model: &TrafficNet, expected: usize) -> Result<()> {
    if model.num_classes != expected {
        return Err(Error::ClassCountMismatch {
            expected,
            found: model.num_classes,
        });
    }
    Ok(())
}

fn g_label(p: &Prediction) -> GLabel {
    GLabel {
        class: TopClass::from_index(p.label).expect("3-class prediction"),
        confidence: p.probabilities[p.label],
    }
}

fn s3_label(p: &Prediction) -> (EncryptedApp, f64) {
    (EncryptedApp::from_index(p.label).expect("6-class prediction"), p.probabilities[p.label])
}

/// G-layer verdict for one graph.
pub fn g_classify(g_model: &TrafficNet, graph: &TrafficGraph) -> Result<GLabel> {
    expect_classes(g_model, TopClass::ALL.len())?;
    Ok(g_label(&g_model.predict(graph)?))
}

/// S(3): the encrypted application and its probability.
pub fn s3_classify(s_model: &TrafficNet, graph: &TrafficGraph) -> Result<(EncryptedApp, f64)> {
    expect_classes(s_model, EncryptedApp::ALL.len())?;
    Ok(s3_label(&s_model.predict(graph)?))
}

/// Builds the S(1) alert for a graph without delivering it.
pub fn make_alert(graph: &TrafficGraph, confidence: f64) -> Alert {
    let (ts, origin, tuple) = match &graph.origin {
        Some(o) => (
            o.timestamp,
            AlertOrigin {
                file: o.file.clone(),
                ordinal: o.ordinal,
            },
            Some(o.five_tuple.clone()),
        ),
        None => (
            0.0,
            AlertOrigin {
                file: String::new(),
                ordinal: 0,
            },
            None,
        ),
    };
    Alert {
        version: ALERT_SCHEMA_VERSION,
        ts,
        origin,
        tuple,
        confidence,
    }
}

/// S(1): builds the alert and hands it to every sink. Delivery failures are
/// counted by the sinks and do not fail the call.
pub fn s1_emit_alert(graph: &TrafficGraph, confidence: f64, sinks: &mut [AlertSink]) -> Alert {
    let alert = make_alert(graph, confidence);
    for s in sinks.iter_mut() {
        let _ = s.deliver(&alert);
    }
    alert
}

fn action_for(
    label: &GLabel,
    graph: &TrafficGraph,
    s3: impl FnOnce() -> Result<(EncryptedApp, f64)>,
) -> Result<SAction> {
    Ok(match label.class {
        TopClass::Malware => SAction::S1Alert(make_alert(graph, label.confidence)),
        TopClass::Benign => {
            let meta = graph.origin.as_ref().map(|o| &o.five_tuple);
            SAction::S2AppLabel(s2_port_dpi(meta, graph.payload_prefix()))
        }
        TopClass::Encrypted => {
            let (app, confidence) = s3()?;
            SAction::S3EncryptedClass { app, confidence }
        }
    })
}

/// Routes a G-layer verdict to its S-layer action.
pub fn dispatch(label: &GLabel, graph: &TrafficGraph, s_model: &TrafficNet) -> Result<SAction> {
    action_for(label, graph, || s3_classify(s_model, graph))
}

/// The leaf label two models jointly assign: the G-layer class, refined by
/// the S-layer when encrypted.
pub fn hierarchical_labels(g_model: &TrafficNet, s_model: &TrafficNet, graphs: &[impl AsRef<[u8]>]) -> Result<Vec<ClassLabel>> {
    expect_classes(g_model, TopClass::ALL.len())?;
    expect_classes(s_model, EncryptedApp::ALL.len())?;
    let g = g_model.predict_batch(graphs)?;
    let enc: Vec<&[u8]> = graphs
        .iter()
        .zip(&g)
        .filter(|(_, p)| p.label == TopClass::Encrypted.index())
        .map(|(x, _)| x.as_ref())
        .collect();
    let mut s = s_model.predict_batch(&enc)?.into_iter();
    Ok(g.iter()
        .map(|p| match g_label(p).class {
            TopClass::Encrypted => ClassLabel::encrypted(s3_label(&s.next().expect("one per encrypted")).0),
            TopClass::Benign => ClassLabel::BENIGN,
            TopClass::Malware => ClassLabel::MALWARE,
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub preprocess: PreprocessConfig,
    /// Leave wall-clock time out of the report so reruns are byte-identical.
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkReport {
    pub sink: String,
    pub delivered: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub capture: String,
    pub preprocess: PreprocessSummary,
    pub classified: usize,
    pub g_labels: BTreeMap<String, usize>,
    pub actions: BTreeMap<String, usize>,
    pub s2_apps: BTreeMap<String, usize>,
    pub s3_classes: BTreeMap<String, usize>,
    pub alerts: usize,
    pub delivery_failures: usize,
    pub action_errors: usize,
    pub sinks: Vec<SinkReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub duration_secs: Option<f64>,
}

impl PipelineReport {
    fn empty(capture: String, preprocess: PreprocessSummary) -> Self {
        let zeros = |names: Vec<String>| names.into_iter().map(|n| (n, 0)).collect();
        Self {
            capture,
            preprocess,
            classified: 0,
            g_labels: zeros(TopClass::ALL.iter().map(|t| t.to_string()).collect()),
            actions: zeros(vec!["s1".into(), "s2".into(), "s3".into()]),
            s2_apps: BTreeMap::new(),
            s3_classes: zeros(EncryptedApp::ALL.iter().map(|a| a.to_string()).collect()),
            alerts: 0,
            delivery_failures: 0,
            action_errors: 0,
            sinks: Vec::new(),
            duration_secs: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Runs the whole framework over already preprocessed graphs.
pub fn run_graphs(
    graphs: &[TrafficGraph],
    g_model: &TrafficNet,
    s_model: &TrafficNet,
    sinks: &mut [AlertSink],
    mut report: PipelineReport,
) -> Result<PipelineReport> {
    expect_classes(g_model, TopClass::ALL.len())?;
    expect_classes(s_model, EncryptedApp::ALL.len())?;
    let (delivered0, failed0): (Vec<usize>, Vec<usize>) = sinks.iter().map(|s| (s.delivered, s.failures)).unzip();
    for chunk in graphs.chunks(PREDICT_CHUNK) {
        let g_preds = g_model.predict_batch(chunk)?;
        let labels: Vec<GLabel> = g_preds.iter().map(g_label).collect();
        let encrypted: Vec<&TrafficGraph> = chunk
            .iter()
            .zip(&labels)
            .filter(|(_, l)| l.class == TopClass::Encrypted)
            .map(|(g, _)| g)
            .collect();
        let mut s_preds = s_model.predict_batch(&encrypted)?.into_iter();
        for (graph, label) in chunk.iter().zip(&labels) {
            report.classified += 1;
            *report.g_labels.entry(label.class.to_string()).or_insert(0) += 1;
            let action = action_for(label, graph, || {
                s_preds
                    .next()
                    .map(|p| s3_label(&p))
                    .ok_or_else(|| Error::shape("missing S-layer prediction"))
            });
            let action = match action {
                Ok(a) => a,
                Err(_) => {
                    report.action_errors += 1;
                    continue;
                }
            };
            *report.actions.entry(action.kind().to_string()).or_insert(0) += 1;
            match &action {
                SAction::S1Alert(alert) => {
                    report.alerts += 1;
                    for s in sinks.iter_mut() {
                        let _ = s.deliver(alert);
                    }
                }
                SAction::S2AppLabel(app) => *report.s2_apps.entry(app.name.clone()).or_insert(0) += 1,
                SAction::S3EncryptedClass { app, .. } => *report.s3_classes.entry(app.to_string()).or_insert(0) += 1,
            }
        }
    }
    for (i, s) in sinks.iter().enumerate() {
        report.delivery_failures += s.failures - failed0[i];
        report.sinks.push(SinkReport {
            sink: s.spec().to_string(),
            delivered: s.delivered - delivered0[i],
            failures: s.failures - failed0[i],
        });
    }
    Ok(report)
}

/// Preprocesses a capture file and runs the framework on every graph.
pub fn run(
    capture: impl AsRef<Path>,
    g_model: &TrafficNet,
    s_model: &TrafficNet,
    cfg: &RunConfig,
    sinks: &mut [AlertSink],
) -> Result<PipelineReport> {
    expect_classes(g_model, TopClass::ALL.len())?;
    expect_classes(s_model, EncryptedApp::ALL.len())?;
    let started = Instant::now();
    let capture = capture.as_ref();
    let (graphs, summary) = preprocess_capture(capture, &cfg.preprocess)?;
    let name = capture.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut report = run_graphs(&graphs, g_model, s_model, sinks, PipelineReport::empty(name, summary))?;
    if !cfg.reference {
        report.duration_secs = Some(started.elapsed().as_secs_f64());
    }
    Ok(report)
}
