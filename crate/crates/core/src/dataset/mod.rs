//! Labeled traffic-graph datasets: NPY persistence, balancing, splitting and
//! synthetic generation.
//!
//! On disk a dataset is a directory holding `<top>/<sub>.npy` per encrypted
//! application, `benign/benign.npy`, `malware/malware.npy` and `manifest.json`.

mod label;
mod npy;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{TrafficGraph, GRAPH_LEN};
use crate::nn::seeded_rng;

pub use label::{ClassLabel, EncryptedApp, Task, TopClass};
pub use npy::{decode_npy, encode_npy, read_npy, write_npy};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub graph: TrafficGraph,
    pub label: ClassLabel,
}

impl AsRef<[u8]> for LabeledGraph {
    fn as_ref(&self) -> &[u8] {
        self.graph.pixels()
    }
}

/// File holding one class inside a dataset directory.
pub fn class_file(root: &Path, label: ClassLabel) -> PathBuf {
    let sub = label.sub().map(EncryptedApp::slug).unwrap_or(label.top().slug());
    root.join(label.top().slug()).join(format!("{sub}.npy"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub class: String,
    pub count: usize,
    pub percent: f64,
}

/// Per-class composition of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub total: usize,
    pub classes: Vec<ClassShare>,
    pub top_level: Vec<ClassShare>,
    pub sources: Vec<String>,
    pub seed: Option<u64>,
}

fn share(class: String, count: usize, total: usize) -> ClassShare {
    let percent = if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
    ClassShare { class, count, percent }
}

impl DatasetManifest {
    /// Builds the manifest for the eight leaf classes; labels absent from
    /// `counts` count as zero.
    pub fn from_counts(counts: &BTreeMap<ClassLabel, usize>, sources: Vec<String>, seed: Option<u64>) -> Self {
        let total = counts.values().sum();
        let classes = ClassLabel::ALL
            .iter()
            .map(|l| share(l.name(), counts.get(l).copied().unwrap_or(0), total))
            .collect();
        let top_level = TopClass::ALL
            .iter()
            .map(|t| {
                let n = counts.iter().filter(|(l, _)| l.top() == *t).map(|(_, n)| n).sum();
                share(t.to_string(), n, total)
            })
            .collect();
        Self {
            total,
            classes,
            top_level,
            sources,
            seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn count_labels(graphs: &[LabeledGraph]) -> BTreeMap<ClassLabel, usize> {
    let mut counts = BTreeMap::new();
    for g in graphs {
        *counts.entry(g.label).or_insert(0) += 1;
    }
    counts
}

/// Writes every leaf class file (empty classes get a `(0, 784)` array) plus
/// the manifest. Graphs keep their relative order within a class.
pub fn write_dataset(
    root: impl AsRef<Path>,
    graphs: &[LabeledGraph],
    sources: Vec<String>,
    seed: Option<u64>,
) -> Result<DatasetManifest> {
    let root = root.as_ref();
    for label in ClassLabel::ALL {
        let rows: Vec<&[u8]> = graphs.iter().filter(|g| g.label == label).map(|g| g.graph.pixels()).collect();
        let path = class_file(root, label);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_npy(&path, &rows)?;
    }
    let manifest = DatasetManifest::from_counts(&count_labels(graphs), sources, seed);
    std::fs::write(root.join(MANIFEST_FILE), manifest.to_json()?)?;
    Ok(manifest)
}

/// Loads every class file present under `root`, in table order.
pub fn read_dataset(root: impl AsRef<Path>) -> Result<Vec<LabeledGraph>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset directory {} not found", root.display()),
        )));
    }
    let mut out = Vec::new();
    for label in ClassLabel::ALL {
        let path = class_file(root, label);
        if path.is_file() {
            out.extend(read_npy(&path)?.into_iter().map(|graph| LabeledGraph { graph, label }));
        }
    }
    Ok(out)
}

pub fn read_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(root.as_ref().join(MANIFEST_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Draws exactly `n_per_class` members from every pool without replacement
/// and shuffles the union. Pools are visited in key order.
pub fn balance<K, T>(pools: &BTreeMap<K, Vec<T>>, n_per_class: usize, seed: u64) -> Result<Vec<(K, T)>>
where
    K: Ord + Clone + Display,
    T: Clone,
{
    if let Some((k, pool)) = pools.iter().find(|(_, p)| p.len() < n_per_class) {
        return Err(Error::UndersizedPool {
            class: k.to_string(),
            available: pool.len(),
            requested: n_per_class,
        });
    }
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(pools.len() * n_per_class);
    for (k, pool) in pools {
        let mut picks = index::sample(&mut rng, pool.len(), n_per_class).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| (k.clone(), pool[i].clone())));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Groups graphs into pools keyed by their target index under `task`;
/// labels outside the task are dropped.
pub fn task_pools(graphs: &[LabeledGraph], task: Task) -> BTreeMap<usize, Vec<LabeledGraph>> {
    let mut pools: BTreeMap<usize, Vec<LabeledGraph>> = (0..task.num_classes()).map(|i| (i, Vec::new())).collect();
    for g in graphs {
        if let Some(t) = task.target(g.label) {
            pools.entry(t).or_default().push(g.clone());
        }
    }
    pools
}

/// Stratified split: each class sends `round(fraction × size)` members to the
/// test side. Rejects splits that leave a class without training members.
pub fn split<T, K, F>(items: &[T], key: F, test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)>
where
    T: Clone,
    K: Ord + Display,
    F: Fn(&T) -> K,
{
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    if items.is_empty() {
        return Err(Error::arg("cannot split an empty dataset"));
    }
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        groups.entry(key(item)).or_default().push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for (k, mut members) in groups {
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        if n_test >= members.len() {
            return Err(Error::arg(format!(
                "split leaves class {k} with no training samples ({} members, {n_test} to test)",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let (t, r) = members.split_at(n_test);
        test_idx.extend_from_slice(t);
        train_idx.extend_from_slice(r);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Byte distribution of one synthetic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub label: ClassLabel,
    pub mean: f64,
    pub std_dev: f64,
    /// `(offset, value)` bytes planted in every sample.
    pub markers: Vec<(usize, u8)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<SynthClass>,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Classes told apart by eight marker bytes spread over the graph, each
    /// class using its own marker value, over a noisy background whose mean
    /// also shifts per class.
    pub fn marker_classes(labels: &[ClassLabel], samples_per_class: usize, seed: u64) -> Self {
        let n = labels.len().max(1);
        let classes = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let value = (0x20 + i * (0xc0 / n)) as u8;
                SynthClass {
                    label,
                    mean: 60.0 + 120.0 * i as f64 / n as f64,
                    std_dev: 40.0,
                    markers: (0..8).map(|k| (k * 97, value)).collect(),
                }
            })
            .collect();
        Self {
            classes,
            samples_per_class,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.classes.iter().enumerate() {
            if !(c.std_dev >= 0.0) || !c.mean.is_finite() {
                return Err(Error::arg(format!("class {} has an invalid byte distribution", c.label)));
            }
            if c.markers.is_empty() {
                return Err(Error::arg(format!("class {} has no marker bytes", c.label)));
            }
            if let Some(&(off, _)) = c.markers.iter().find(|(o, _)| *o >= GRAPH_LEN) {
                return Err(Error::arg(format!("marker offset {off} outside the graph")));
            }
            for other in &self.classes[..i] {
                if other.label == c.label {
                    return Err(Error::arg(format!("class {} listed twice", c.label)));
                }
                let mut a = c.markers.clone();
                let mut b = other.markers.clone();
                a.sort_unstable();
                b.sort_unstable();
                if a == b {
                    return Err(Error::arg(format!("classes {} and {} share marker bytes", other.label, c.label)));
                }
            }
        }
        Ok(())
    }
}

/// Samples every class from its clamped normal byte distribution and plants
/// its markers. Output is grouped by class in spec order.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<LabeledGraph>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut out = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for c in &spec.classes {
        let dist = Normal::new(c.mean, c.std_dev).map_err(|e| Error::arg(e.to_string()))?;
        for _ in 0..spec.samples_per_class {
            let mut px: Vec<u8> = (0..GRAPH_LEN).map(|_| dist.sample(&mut rng).round().clamp(0.0, 255.0) as u8).collect();
            for &(off, v) in &c.markers {
                px[off] = v;
            }
            out.push(LabeledGraph {
                graph: TrafficGraph::from_pixels(px)?,
                label: c.label,
            });
        }
    }
    Ok(out)
}

/// Per-class sample counts of the full-scale reference dataset.
pub fn reference_table_counts() -> BTreeMap<ClassLabel, usize> {
    let counts = [5840, 5852, 5839, 1022, 1829, 5847, 26229, 26229];
    ClassLabel::ALL.into_iter().zip(counts).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(fill: u8) -> TrafficGraph {
        TrafficGraph::from_pixels(vec![fill; GRAPH_LEN]).unwrap()
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let graphs = vec![
            LabeledGraph { graph: graph(1), label: ClassLabel::MALWARE },
            LabeledGraph { graph: graph(2), label: ClassLabel::encrypted(EncryptedApp::P2P) },
            LabeledGraph { graph: graph(3), label: ClassLabel::MALWARE },
        ];
        let m = write_dataset(dir.path(), &graphs, vec!["a.pcap".into()], Some(4)).unwrap();
        assert_eq!(m.total, 3);
        assert!(dir.path().join("encrypted/p2p.npy").is_file());
        assert!(dir.path().join("benign/benign.npy").is_file());
        assert_eq!(read_npy(dir.path().join("benign/benign.npy")).unwrap().len(), 0);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.iter().map(|g| (g.label, g.graph.pixel(0, 0))).collect::<Vec<_>>(), vec![
            (ClassLabel::encrypted(EncryptedApp::P2P), 2),
            (ClassLabel::MALWARE, 1),
            (ClassLabel::MALWARE, 3),
        ]);
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
    }

    #[test]
    fn writes_are_byte_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let graphs = synth_generate(&SynthSpec::marker_classes(&ClassLabel::ALL, 3, 9)).unwrap();
        write_dataset(a.path(), &graphs, vec![], Some(9)).unwrap();
        write_dataset(b.path(), &graphs, vec![], Some(9)).unwrap();
        for l in ClassLabel::ALL {
            assert_eq!(std::fs::read(class_file(a.path(), l)).unwrap(), std::fs::read(class_file(b.path(), l)).unwrap());
        }
        assert_eq!(std::fs::read(a.path().join(MANIFEST_FILE)).unwrap(), std::fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    }

    #[test]
    fn table_manifest_shares() {
        let m = DatasetManifest::from_counts(&reference_table_counts(), vec![], None);
        assert_eq!(m.total, 78687);
        for t in &m.top_level {
            assert!((t.percent - 33.33).abs() < 0.01, "{t:?}");
        }
        let chat = &m.classes[0];
        assert_eq!((chat.class.as_str(), chat.count), ("Chat", 5840));
        assert!((chat.percent - 7.42).abs() < 0.005);
        let sum: f64 = m.classes.iter().map(|c| c.percent).sum();
        assert!((sum - 100.0).abs() < 0.01);
    }

    #[test]
    fn balance_counts_are_exact() {
        let pools: BTreeMap<TopClass, Vec<u32>> = TopClass::ALL.iter().map(|&t| (t, (0..26229).collect())).collect();
        let out = balance(&pools, 20984, 1).unwrap();
        assert_eq!(out.len(), 62952);
        for t in TopClass::ALL {
            assert_eq!(out.iter().filter(|(k, _)| *k == t).count(), 20984);
        }
        assert!(balance(&pools, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn undersized_pool_names_class() {
        let mut pools = BTreeMap::new();
        pools.insert(ClassLabel::encrypted(EncryptedApp::P2P), vec![0u8; 1022]);
        match balance(&pools, 5000, 1) {
            Err(Error::UndersizedPool { class, available, requested }) => {
                assert_eq!((class.as_str(), available, requested), ("encrypted/p2p", 1022, 5000));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn balance_is_seeded_and_without_replacement() {
        let pools: BTreeMap<u8, Vec<u32>> = (0..3).map(|k| (k, (0..50).collect())).collect();
        let a = balance(&pools, 20, 5).unwrap();
        assert_eq!(a, balance(&pools, 20, 5).unwrap());
        assert_ne!(a, balance(&pools, 20, 6).unwrap());
        for k in 0..3 {
            let mut v: Vec<u32> = a.iter().filter(|(c, _)| *c == k).map(|(_, v)| *v).collect();
            v.sort_unstable();
            v.dedup();
            assert_eq!(v.len(), 20);
        }
    }

    #[test]
    fn split_examples() {
        let items: Vec<(u8, u32)> = (0..3).flat_map(|c| (0..100).map(move |i| (c, i))).collect();
        let (train, test) = split(&items, |x| x.0, 0.2, 3).unwrap();
        for c in 0..3 {
            assert_eq!(train.iter().filter(|x| x.0 == c).count(), 80);
            assert_eq!(test.iter().filter(|x| x.0 == c).count(), 20);
        }
        assert_eq!(split(&items, |x| x.0, 0.2, 3).unwrap(), (train, test));
        let two = vec![(0u8, 1u32), (0, 2)];
        assert!(split(&two, |x| x.0, 0.999, 1).is_err());
        assert!(split(&two, |x| x.0, 1.0, 1).is_err());
        assert!(split(&two, |x| x.0, 0.0, 1).is_err());
        let empty: Vec<(u8, u32)> = vec![];
        assert!(split(&empty, |x| x.0, 0.5, 1).is_err());
    }

    #[test]
    fn synth_examples() {
        let spec = SynthSpec {
            classes: vec![
                SynthClass { label: ClassLabel::BENIGN, mean: 100.0, std_dev: 20.0, markers: vec![(0, 0xaa)] },
                SynthClass { label: ClassLabel::MALWARE, mean: 100.0, std_dev: 20.0, markers: vec![(0, 0x55)] },
            ],
            samples_per_class: 10,
            seed: 1,
        };
        let g = synth_generate(&spec).unwrap();
        assert_eq!(g.len(), 20);
        assert!(g.iter().filter(|g| g.label == ClassLabel::BENIGN).all(|g| g.graph.pixel(0, 0) == 170));
        assert_eq!(g, synth_generate(&spec).unwrap());
        let mut clash = spec.clone();
        clash.classes[1].markers = vec![(0, 0xaa)];
        assert!(synth_generate(&clash).is_err());
    }

    #[test]
    fn marker_classes_are_distinct() {
        for n in [2, 3, 6, 8] {
            SynthSpec::marker_classes(&ClassLabel::ALL[..n], 1, 0).validate().unwrap();
        }
    }

    proptest! {
        #[test]
        fn balance_histogram_is_uniform(sizes in prop::collection::vec(5usize..40, 1..6), n in 0usize..5, seed in any::<u64>()) {
            let pools: BTreeMap<usize, Vec<usize>> = sizes.iter().enumerate().map(|(k, &s)| (k, (0..s).collect())).collect();
            let out = balance(&pools, n, seed).unwrap();
            prop_assert_eq!(out.len(), n * sizes.len());
            for k in 0..sizes.len() {
                prop_assert_eq!(out.iter().filter(|(c, _)| *c == k).count(), n);
            }
        }

        #[test]
        fn split_is_disjoint_and_stratified(sizes in prop::collection::vec(10usize..60, 1..5), frac in 0.05f64..0.5, seed in any::<u64>()) {
            let items: Vec<(usize, usize)> = sizes.iter().enumerate().flat_map(|(c, &s)| (0..s).map(move |i| (c, i))).collect();
            let (train, test) = split(&items, |x| x.0, frac, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), items.len());
            for x in &test {
                prop_assert!(!train.contains(x));
            }
            for (c, &s) in sizes.iter().enumerate() {
                let want = (frac * s as f64).round() as usize;
                prop_assert_eq!(test.iter().filter(|x| x.0 == c).count(), want);
            }
        }

        #[test]
        fn npy_round_trip(rows in prop::collection::vec(prop::collection::vec(any::<u8>(), GRAPH_LEN), 0..4)) {
            let back = decode_npy(&encode_npy(&rows).unwrap()).unwrap();
            let pixels: Vec<Vec<u8>> = back.iter().map(|g| g.pixels().to_vec()).collect();
            prop_assert_eq!(pixels, rows);
        }
    }
}
