use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use log::info;
use trafficgraph::dataset::{
    balance, read_dataset, read_manifest, split, synth_generate, task_pools, write_dataset, ClassLabel, LabeledGraph,
    SynthSpec, Task, MANIFEST_FILE,
};
use trafficgraph::framework::{self, AlertSink, RunConfig, SinkSpec};
use trafficgraph::ingest::preprocess_capture;
use trafficgraph::metrics::{confusion, report};
use trafficgraph::model::{load_checkpoint, save_checkpoint, train as fit, Checkpoint, TrafficNet, TrainingMeta};
use trafficgraph::nn::gradcheck::{run_suite, GradOp, SuiteConfig};
use trafficgraph::Error;

use crate::config::{FileConfig, HyperArgs, PreprocessArgs};
use crate::VerificationFailed;

#[derive(Debug, Args)]
pub struct PreprocessCmd {
    /// Capture files (classic pcap)
    #[arg(required = true, value_name = "CAPTURE")]
    inputs: Vec<PathBuf>,
    /// Dataset directory to write
    #[arg(short, long, value_name = "DIR")]
    out: PathBuf,
    /// Class of every packet in the inputs: benign, malware or encrypted/<app>
    #[arg(short, long)]
    label: ClassLabel,
    /// Merge into the dataset already in --out instead of replacing it
    #[arg(long)]
    append: bool,
    #[command(flatten)]
    pre: PreprocessArgs,
}

pub fn preprocess(cmd: PreprocessCmd, file: &FileConfig) -> Result<()> {
    let cfg = cmd.pre.resolve(file)?;
    let (mut graphs, mut sources) = if cmd.append && cmd.out.join(MANIFEST_FILE).is_file() {
        (read_dataset(&cmd.out)?, read_manifest(&cmd.out)?.sources)
    } else {
        (Vec::new(), Vec::new())
    };
    let mut stdout = io::stdout().lock();
    for input in &cmd.inputs {
        let (found, summary) =
            preprocess_capture(input, &cfg).with_context(|| format!("preprocessing {}", input.display()))?;
        writeln!(
            stdout,
            "{}: {} packets, {} graphs ({} discarded, {} malformed, {} without payload, {} duplicates)",
            input.display(),
            summary.packets,
            summary.graphs,
            summary.discarded,
            summary.malformed,
            summary.empty_payload,
            summary.duplicates
        )?;
        graphs.extend(found.into_iter().map(|graph| LabeledGraph { graph, label: cmd.label }));
        sources.push(input.display().to_string());
    }
    let manifest = write_dataset(&cmd.out, &graphs, sources, None)?;
    writeln!(stdout, "wrote {} graphs to {}", manifest.total, cmd.out.display())?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    /// Dataset directory
    #[arg(short, long, value_name = "DIR")]
    data: PathBuf,
    /// 3class (encrypted/benign/malware) or 6class (encrypted applications)
    #[arg(short, long)]
    task: Task,
    /// Checkpoint to write
    #[arg(short, long, value_name = "FILE")]
    out: PathBuf,
    /// Samples drawn per class [default: size of the smallest class]
    #[arg(long)]
    per_class: Option<usize>,
    /// Hold out this fraction of every class from training
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Write the held-out samples as a dataset directory
    #[arg(long, value_name = "DIR")]
    holdout: Option<PathBuf>,
    /// Write the epoch history here instead of standard output
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    #[command(flatten)]
    hp: HyperArgs,
}

/// Pool key that reports the class by name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Target {
    index: usize,
    name: String,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

pub fn train(cmd: TrainCmd, file: &FileConfig, seed: u64) -> Result<()> {
    let hp = cmd.hp.resolve(file)?;
    let names = cmd.task.class_names();
    let graphs = read_dataset(&cmd.data)?;
    let pools: BTreeMap<Target, Vec<LabeledGraph>> = task_pools(&graphs, cmd.task)
        .into_iter()
        .map(|(index, pool)| (Target { index, name: names[index].clone() }, pool))
        .collect();
    let smallest = pools.iter().min_by_key(|(_, p)| p.len()).expect("task has classes");
    let per_class = match cmd.per_class.or(file.per_class) {
        Some(n) => n,
        None if smallest.1.is_empty() => {
            return Err(Error::UndersizedPool {
                class: smallest.0.to_string(),
                available: 0,
                requested: 1,
            }
            .into())
        }
        None => smallest.1.len(),
    };
    let drawn = balance(&pools, per_class, seed.wrapping_add(1))?;
    let (train_set, held_out) = match cmd.test_fraction.or(file.test_fraction) {
        Some(f) => split(&drawn, |(t, _)| t.clone(), f, seed.wrapping_add(2))?,
        None => (drawn, Vec::new()),
    };
    if let Some(dir) = &cmd.holdout {
        let rows: Vec<LabeledGraph> = held_out.iter().map(|(_, g)| g.clone()).collect();
        write_dataset(dir, &rows, vec![cmd.data.display().to_string()], Some(seed))?;
        info!("held out {} graphs in {}", rows.len(), dir.display());
    }
    let x: Vec<&[u8]> = train_set.iter().map(|(_, g)| g.graph.pixels()).collect();
    let y: Vec<usize> = train_set.iter().map(|(t, _)| t.index).collect();
    info!("training {} on {} graphs ({per_class} per class drawn), {hp:?}", cmd.task, x.len());

    let mut history: Box<dyn Write> = match &cmd.history {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut write_err = None;
    let model = TrafficNet::build(cmd.task.num_classes(), seed)?;
    let outcome = fit(model, &x, &y, &hp, seed.wrapping_add(3), |r, _| {
        info!("epoch {} loss {:.6} accuracy {:.4}", r.epoch, r.mean_loss, r.train_accuracy);
        let line = serde_json::to_string(r).map_err(io::Error::from).and_then(|l| writeln!(history, "{l}"));
        match line {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                write_err = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing training history");
    }
    history.flush()?;
    let ckpt = Checkpoint {
        model: outcome.model,
        hyperparams: hp,
        meta: TrainingMeta {
            epochs_completed: outcome.history.len() as u64,
            final_loss: outcome.history.last().map_or(f64::NAN, |r| r.mean_loss),
            seed,
        },
    };
    save_checkpoint(&ckpt, &cmd.out)?;
    info!("saved {}", cmd.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Checkpoint to score (the 3-class one when --s-model is given)
    #[arg(short, long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Dataset directory
    #[arg(short, long, value_name = "DIR")]
    data: PathBuf,
    /// Task the checkpoint must solve [default: from its class count]
    #[arg(short, long)]
    task: Option<Task>,
    /// 6-class checkpoint; scores both stages together over the eight leaf classes
    #[arg(long, value_name = "FILE", conflicts_with = "task")]
    s_model: Option<PathBuf>,
    /// JSON report path [default: the checkpoint path with extension .eval.json]
    #[arg(short, long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn task_for(classes: usize) -> Result<Task> {
    match classes {
        3 => Ok(Task::ThreeClass),
        6 => Ok(Task::SixClass),
        found => Err(Error::ClassCountMismatch { expected: 3, found }.into()),
    }
}

pub fn eval(cmd: EvalCmd) -> Result<()> {
    let graphs = read_dataset(&cmd.data)?;
    let (preds, truths, names): (Vec<usize>, Vec<usize>, Vec<String>) = match &cmd.s_model {
        Some(s_path) => {
            let g = load_checkpoint(&cmd.checkpoint, Some(3))?.model;
            let s = load_checkpoint(s_path, Some(6))?.model;
            let pixels: Vec<&[u8]> = graphs.iter().map(|g| g.graph.pixels()).collect();
            let preds = framework::hierarchical_labels(&g, &s, &pixels)?.iter().map(|l| l.leaf_index()).collect();
            let truths = graphs.iter().map(|g| g.label.leaf_index()).collect();
            (preds, truths, ClassLabel::ALL.iter().map(|l| l.name()).collect::<Vec<_>>())
        }
        None => {
            let model = match cmd.task {
                Some(t) => load_checkpoint(&cmd.checkpoint, Some(t.num_classes()))?.model,
                None => load_checkpoint(&cmd.checkpoint, None)?.model,
            };
            let task = task_for(model.num_classes)?;
            let (items, truths): (Vec<&[u8]>, Vec<usize>) = graphs
                .iter()
                .filter_map(|g| task.target(g.label).map(|t| (g.graph.pixels(), t)))
                .unzip();
            let preds = model.predict_batch(&items)?.into_iter().map(|p| p.label).collect();
            (preds, truths, task.class_names())
        }
    };
    let cm = confusion(&preds, &truths, names.len())?;
    let rep = report(&cm, &names)?;
    print!("{}", rep.to_text());
    let out = cmd.out.unwrap_or_else(|| cmd.checkpoint.with_extension("eval.json"));
    fs::write(&out, serde_json::to_string_pretty(&rep)? + "\n").with_context(|| format!("writing {}", out.display()))?;
    info!("wrote {}", out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct RunCmd {
    /// Capture file (classic pcap)
    #[arg(value_name = "CAPTURE")]
    capture: PathBuf,
    /// 3-class checkpoint (encrypted/benign/malware)
    #[arg(short, long, value_name = "FILE")]
    g_model: PathBuf,
    /// 6-class checkpoint (encrypted applications)
    #[arg(short, long, value_name = "FILE")]
    s_model: PathBuf,
    /// Alert destination, repeatable: file:<path> (appended), stdout, or tcp:<host>:<port>
    #[arg(long = "sink", value_name = "SPEC")]
    sinks: Vec<SinkSpec>,
    /// Write the run report here instead of standard output
    #[arg(short, long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Leave timings out of the report so reruns are byte-identical
    #[arg(long)]
    reference: bool,
    #[command(flatten)]
    pre: PreprocessArgs,
}

pub fn run(cmd: RunCmd, file: &FileConfig) -> Result<()> {
    let cfg = RunConfig {
        preprocess: cmd.pre.resolve(file)?,
        reference: cmd.reference,
    };
    let specs = if cmd.sinks.is_empty() {
        file.sink
            .iter()
            .flatten()
            .map(|s| s.parse())
            .collect::<trafficgraph::Result<Vec<SinkSpec>>>()?
    } else {
        cmd.sinks
    };
    let g = load_checkpoint(&cmd.g_model, Some(3)).with_context(|| format!("loading {}", cmd.g_model.display()))?;
    let s = load_checkpoint(&cmd.s_model, Some(6)).with_context(|| format!("loading {}", cmd.s_model.display()))?;
    let mut sinks: Vec<AlertSink> = specs.into_iter().map(AlertSink::new).collect();
    let rep = framework::run(&cmd.capture, &g.model, &s.model, &cfg, &mut sinks)
        .with_context(|| format!("running {}", cmd.capture.display()))?;
    if rep.delivery_failures > 0 {
        log::warn!("{} alert deliveries failed", rep.delivery_failures);
    }
    let json = rep.to_json()?;
    match &cmd.report {
        Some(p) => write_file(p, json.as_bytes())?,
        None => io::stdout().lock().write_all(json.as_bytes())?,
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn parse_op(s: &str) -> std::result::Result<GradOp, String> {
    GradOp::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = GradOp::ALL.iter().map(|o| o.name()).collect();
        format!("unknown op '{s}' (one of {})", names.join(", "))
    })
}

#[derive(Debug, Args)]
pub struct GradcheckCmd {
    /// Random seeds per operation
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Check only this operation (repeatable) [default: all]
    #[arg(long = "op", value_name = "OP", value_parser = parse_op)]
    ops: Vec<GradOp>,
    /// Scale one operation's analytic gradient by 1.5 to see the check fail
    #[arg(long, value_name = "OP", value_parser = parse_op)]
    inject_fault: Option<GradOp>,
}

pub fn gradcheck(cmd: GradcheckCmd, seed: u64) -> Result<()> {
    let cfg = SuiteConfig {
        seeds: cmd.seeds,
        base_seed: seed,
        ops: if cmd.ops.is_empty() { GradOp::ALL.to_vec() } else { cmd.ops },
        fault: cmd.inject_fault,
    };
    let mut stdout = io::stdout().lock();
    let reports = run_suite(&cfg)?;
    for r in &reports {
        let verdict = if r.passed { "ok" } else { "FAIL" };
        writeln!(stdout, "{:<22} {:>10.3e}  {verdict}", r.op.name(), r.max_relative_error)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.op.name()).collect();
    if !failed.is_empty() {
        return Err(VerificationFailed(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SynthSet {
    /// All eight leaf classes
    All,
    /// One encrypted class plus benign and malware
    #[value(name = "3class")]
    Three,
    /// The six encrypted applications
    #[value(name = "6class")]
    Six,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// Dataset directory to write
    #[arg(short, long, value_name = "DIR")]
    out: PathBuf,
    /// Graphs per class
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    /// Which classes to generate
    #[arg(long, value_enum, default_value = "all")]
    classes: SynthSet,
}

pub fn synth(cmd: SynthCmd, seed: u64) -> Result<()> {
    let labels: Vec<ClassLabel> = match cmd.classes {
        SynthSet::All => ClassLabel::ALL.to_vec(),
        SynthSet::Three => vec![ClassLabel::ALL[0], ClassLabel::BENIGN, ClassLabel::MALWARE],
        SynthSet::Six => ClassLabel::ALL[..6].to_vec(),
    };
    let graphs = synth_generate(&SynthSpec::marker_classes(&labels, cmd.per_class, seed))?;
    let manifest = write_dataset(&cmd.out, &graphs, vec!["synthetic".into()], Some(seed))?;
    println!("wrote {} graphs to {}", manifest.total, cmd.out.display());
    Ok(())
}
