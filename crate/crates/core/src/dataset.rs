//! Data ingestion, unit-interval normalization, synthetic generation and
//! the class-shift sampling protocol.
//!
//! Labels are 1-based everywhere: known classes are `1..=κ` and the
//! augmented class, when present, is `κ + 1`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_VERSION: u32 = 1;

/// Labeled instances. `num_classes` is κ for training sets and κ+1 for
/// test sets that may contain the augmented class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSet {
    pub features: Vec<Vec<f64>>,
}

fn check_rows(features: &[Vec<f64>]) -> Result<()> {
    if let Some(first) = features.first() {
        let d = first.len();
        for row in features {
            if row.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("feature values must be finite"));
            }
        }
    }
    Ok(())
}

impl LabeledSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be at least 1"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y == 0 || y > num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside 1..={num_classes}"
            )));
        }
        check_rows(&features)?;
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension, 0 when empty.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y - 1] += 1;
        }
        counts
    }
}

impl UnlabeledSet {
    pub fn new(features: Vec<Vec<f64>>) -> Result<Self> {
        check_rows(&features)?;
        Ok(Self { features })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Label name to 1-based index, in first-appearance order.
pub type LabelMap = IndexMap<String, usize>;

/// Per-feature `(min, max)` ranges fitted on training-role data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub ranges: Vec<(f64, f64)>,
}

impl Normalization {
    pub fn fit<'a, I>(sets: I) -> Self
    where
        I: IntoIterator<Item = &'a [Vec<f64>]>,
    {
        let mut ranges: Vec<(f64, f64)> = Vec::new();
        for set in sets {
            for row in set {
                if ranges.is_empty() {
                    ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); row.len()];
                }
                for (r, &v) in ranges.iter_mut().zip(row) {
                    r.0 = r.0.min(v);
                    r.1 = r.1.max(v);
                }
            }
        }
        Self { ranges }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            ranges: vec![(0.0, 1.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// Maps into `[0, 1]`. Constant features map to 0 and values outside
    /// the fitted range are clamped.
    pub fn apply_row(&self, row: &mut [f64]) {
        for (v, &(lo, hi)) in row.iter_mut().zip(&self.ranges) {
            let span = hi - lo;
            *v = if span > 0.0 {
                ((*v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }

    pub fn apply(&self, rows: &mut [Vec<f64>]) {
        for row in rows {
            self.apply_row(row);
        }
    }
}

/// Fits ranges on the union of `train_sets`, then rescales both the
/// training-role sets and `apply_sets` with them.
pub fn normalize_unit_interval(
    train_sets: &mut [&mut Vec<Vec<f64>>],
    apply_sets: &mut [&mut Vec<Vec<f64>>],
) -> Normalization {
    let norm = Normalization::fit(train_sets.iter().map(|s| s.as_slice()));
    for set in train_sets.iter_mut() {
        norm.apply(set);
    }
    for set in apply_sets.iter_mut() {
        norm.apply(set);
    }
    norm
}

/// Metadata stored next to data files and inside serialized models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub label_map: LabelMap,
    pub normalization: Vec<(f64, f64)>,
}

impl Manifest {
    pub fn new(feature_names: Vec<String>, label_map: LabelMap, norm: Option<&Normalization>) -> Self {
        let normalization = match norm {
            Some(n) => n.ranges.clone(),
            None => Normalization::identity(feature_names.len()).ranges,
        };
        Self {
            version: MANIFEST_VERSION,
            feature_names,
            label_map,
            normalization,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// CSV

/// Raw parsed CSV: numeric features plus the optional label column as text.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub label_names: Option<Vec<String>>,
}

pub fn read_csv_table<R: Read>(reader: R, label_column: Option<&str>) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Empty("no header row".into()));
    }
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_owned()))?,
        ),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != label_idx).collect();
    let feature_names = feature_cols.iter().map(|&i| headers[i].clone()).collect();

    let mut rows = Vec::new();
    let mut names = label_idx.map(|_| Vec::new());
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Cell {
                row: row_no,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = &record[c];
            let v: f64 = cell.parse().map_err(|_| Error::Cell {
                row: row_no,
                column: headers[c].clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Cell {
                    row: row_no,
                    column: headers[c].clone(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            row.push(v);
        }
        rows.push(row);
        if let (Some(li), Some(names)) = (label_idx, names.as_mut()) {
            names.push(record[li].to_owned());
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("no data rows".into()));
    }
    Ok(CsvTable {
        feature_names,
        rows,
        label_names: names,
    })
}

/// Assigns 1-based indices to label names by first appearance.
pub fn remap_labels(names: &[String]) -> (Vec<usize>, LabelMap) {
    let mut map = LabelMap::new();
    let labels = names
        .iter()
        .map(|n| {
            let next = map.len() + 1;
            *map.entry(n.clone()).or_insert(next)
        })
        .collect();
    (labels, map)
}

/// Maps names through an existing map; names it does not know become
/// `unknown_label` (the augmented class when evaluating).
pub fn apply_label_map(names: &[String], map: &LabelMap, unknown_label: usize) -> Vec<usize> {
    names
        .iter()
        .map(|n| map.get(n).copied().unwrap_or(unknown_label))
        .collect()
}

#[derive(Debug, Clone)]
pub enum LoadedCsv {
    Labeled {
        set: LabeledSet,
        label_map: LabelMap,
        feature_names: Vec<String>,
    },
    Unlabeled {
        set: UnlabeledSet,
        feature_names: Vec<String>,
    },
}

pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<LoadedCsv> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_csv_table(file, label_column)?;
    table_to_set(table)
}

pub fn table_to_set(table: CsvTable) -> Result<LoadedCsv> {
    match table.label_names {
        Some(names) => {
            let (labels, label_map) = remap_labels(&names);
            let set = LabeledSet::new(table.rows, labels, label_map.len())?;
            Ok(LoadedCsv::Labeled {
                set,
                label_map,
                feature_names: table.feature_names,
            })
        }
        None => Ok(LoadedCsv::Unlabeled {
            set: UnlabeledSet::new(table.rows)?,
            feature_names: table.feature_names,
        }),
    }
}

fn fmt_row(row: &[f64]) -> impl Iterator<Item = String> + '_ {
    row.iter().map(|v| v.to_string())
}

pub fn write_labeled_csv<W: Write>(w: W, feature_names: &[String], set: &LabeledSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = feature_names.to_vec();
    header.push("label".into());
    wtr.write_record(&header)?;
    for (row, y) in set.features.iter().zip(&set.labels) {
        wtr.write_record(fmt_row(row).chain(std::iter::once(y.to_string())))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_unlabeled_csv<W: Write>(w: W, feature_names: &[String], set: &UnlabeledSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(feature_names)?;
    for row in &set.features {
        wtr.write_record(fmt_row(row))?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn default_feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

// ---------------------------------------------------------------------------
// Class-shift split

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSplitConfig {
    pub augmented_class_fraction: f64,
    pub theta: f64,
    pub n_l: usize,
    pub n_u: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for ShiftSplitConfig {
    fn default() -> Self {
        Self {
            augmented_class_fraction: 0.5,
            theta: 0.5,
            n_l: 500,
            n_u: 1000,
            n_test: 100,
            seed: 0,
        }
    }
}

/// Output of the class-shift protocol. Known classes are relabeled
/// `1..=κ` in ascending order of their source label; every augmented source
/// class becomes `κ + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSplit {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    /// Hidden true labels of `unlabeled`, over `κ + 1` classes.
    pub unlabeled_truth: Vec<usize>,
    pub test: LabeledSet,
    pub known_source_classes: Vec<usize>,
    pub augmented_source_classes: Vec<usize>,
    pub realized_unlabeled_augmented_fraction: f64,
}

impl ShiftSplit {
    pub fn num_known(&self) -> usize {
        self.labeled.num_classes
    }
}

/// Picks `⌈fraction · C⌉` source classes as augmented and samples the three
/// sets from the θ-mixture.
pub fn make_shift_split(full: &LabeledSet, cfg: &ShiftSplitConfig) -> Result<ShiftSplit> {
    let c = full.num_classes;
    if c < 2 {
        return Err(Error::invalid("class-shift split needs at least 2 source classes"));
    }
    let f = cfg.augmented_class_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::invalid("augmented_class_fraction must lie in (0, 1)"));
    }
    let n_aug = ((f * c as f64).ceil() as usize).clamp(1, c - 1);
    let mut rng = rng::stream(cfg.seed, 0);
    let mut classes: Vec<usize> = (1..=c).collect();
    classes.shuffle(&mut rng);
    let mut augmented = classes[..n_aug].to_vec();
    augmented.sort_unstable();
    split_with_rng(full, &augmented, cfg, &mut rng)
}

/// Class-shift sampling with the augmented source classes fixed by the
/// caller (e.g. synthetic data whose last class is the augmented one).
pub fn split_by_roles(full: &LabeledSet, augmented: &[usize], cfg: &ShiftSplitConfig) -> Result<ShiftSplit> {
    let mut rng = rng::stream(cfg.seed, 1);
    split_with_rng(full, augmented, cfg, &mut rng)
}

fn split_with_rng(
    full: &LabeledSet,
    augmented: &[usize],
    cfg: &ShiftSplitConfig,
    rng: &mut rng::Rng,
) -> Result<ShiftSplit> {
    if !(0.0..1.0).contains(&cfg.theta) {
        return Err(Error::invalid("theta must lie in [0, 1)"));
    }
    if cfg.n_l == 0 || cfg.n_u == 0 || cfg.n_test == 0 {
        return Err(Error::invalid("n_l, n_u and n_test must be positive"));
    }
    let c = full.num_classes;
    if augmented.is_empty() || augmented.iter().any(|&a| a == 0 || a > c) {
        return Err(Error::invalid("augmented classes must be a nonempty subset of the source classes"));
    }
    let known: Vec<usize> = (1..=c).filter(|k| !augmented.contains(k)).collect();
    if known.is_empty() {
        return Err(Error::invalid("at least one class must remain known"));
    }
    let kappa = known.len();
    let mut new_label = vec![kappa + 1; c + 1];
    for (i, &k) in known.iter().enumerate() {
        new_label[k] = i + 1;
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c + 1];
    for (i, &y) in full.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for pool in by_class.iter_mut() {
        pool.shuffle(rng);
    }
    let mut known_pool = RolePool::new("known classes", known.iter().map(|&k| std::mem::take(&mut by_class[k])).collect());
    let mut aug_pool = RolePool::new(
        "augmented classes",
        augmented.iter().map(|&k| std::mem::take(&mut by_class[k])).collect(),
    );

    let mut labeled_idx = Vec::with_capacity(cfg.n_l);
    for _ in 0..cfg.n_l {
        labeled_idx.push(known_pool.draw(rng)?);
    }
    let mut draw_mixture = |n: usize, rng: &mut rng::Rng| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let is_aug = rng.random::<f64>() < cfg.theta;
            out.push(if is_aug { aug_pool.draw(rng)? } else { known_pool.draw(rng)? });
        }
        Ok(out)
    };
    let unlabeled_idx = draw_mixture(cfg.n_u, rng)?;
    let test_idx = draw_mixture(cfg.n_test, rng)?;

    let take = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        idx.iter()
            .map(|&i| (full.features[i].clone(), new_label[full.labels[i]]))
            .unzip()
    };
    let (lx, ly) = take(&labeled_idx);
    let (ux, uy) = take(&unlabeled_idx);
    let (tx, ty) = take(&test_idx);
    let n_aug_u = uy.iter().filter(|&&y| y == kappa + 1).count();
    Ok(ShiftSplit {
        labeled: LabeledSet::new(lx, ly, kappa)?,
        unlabeled: UnlabeledSet::new(ux)?,
        unlabeled_truth: uy,
        test: LabeledSet::new(tx, ty, kappa + 1)?,
        known_source_classes: known,
        augmented_source_classes: augmented.to_vec(),
        realized_unlabeled_augmented_fraction: n_aug_u as f64 / cfg.n_u as f64,
    })
}

/// Per-class instance pools of one role, drawn without replacement.
struct RolePool {
    role: &'static str,
    pools: Vec<Vec<usize>>,
    drawn: usize,
    total: usize,
}

impl RolePool {
    fn new(role: &'static str, pools: Vec<Vec<usize>>) -> Self {
        let total = pools.iter().map(Vec::len).sum();
        Self {
            role,
            pools,
            drawn: 0,
            total,
        }
    }

    /// Uniform over the role's classes that still have instances.
    fn draw(&mut self, rng: &mut rng::Rng) -> Result<usize> {
        let live: Vec<usize> = (0..self.pools.len()).filter(|&i| !self.pools[i].is_empty()).collect();
        if live.is_empty() {
            return Err(Error::Insufficient {
                role: self.role.into(),
                needed: self.drawn + 1,
                available: self.total,
            });
        }
        let class = live[rng.random_range(0..live.len())];
        self.drawn += 1;
        Ok(self.pools[class].pop().expect("nonempty pool"))
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownCluster {
    pub mean: Vec<f64>,
    pub stddev: f64,
    pub class: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedCluster {
    pub mean: Vec<f64>,
    pub stddev: f64,
    pub count: usize,
}

/// Isotropic Gaussian clusters. Known clusters carry classes `1..=κ`;
/// augmented clusters are all labeled `κ + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub known_clusters: Vec<KnownCluster>,
    pub augmented_clusters: Vec<AugmentedCluster>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// Three known classes and one augmented cluster in 2-D, means 10σ apart.
    pub fn four_cluster_benchmark(count: usize, seed: u64) -> Self {
        let known = |mean: [f64; 2], class| KnownCluster {
            mean: mean.to_vec(),
            stddev: 1.0,
            class,
            count,
        };
        Self {
            dim: 2,
            known_clusters: vec![known([0.0, 0.0], 1), known([10.0, 0.0], 2), known([0.0, 10.0], 3)],
            augmented_clusters: vec![AugmentedCluster {
                mean: vec![10.0, 10.0],
                stddev: 1.0,
                count,
            }],
            seed,
        }
    }

    pub fn num_known(&self) -> usize {
        self.known_clusters.iter().map(|c| c.class).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        let means = self
            .known_clusters
            .iter()
            .map(|c| (&c.mean, c.stddev))
            .chain(self.augmented_clusters.iter().map(|c| (&c.mean, c.stddev)));
        for (mean, sd) in means {
            if mean.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: mean.len(),
                });
            }
            if !(sd > 0.0 && sd.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::invalid("cluster stddev must be positive and means finite"));
            }
        }
        let kappa = self.num_known();
        if kappa == 0 {
            return Err(Error::invalid("at least one known cluster is required"));
        }
        for k in 1..=kappa {
            if !self.known_clusters.iter().any(|c| c.class == k) {
                return Err(Error::invalid(format!("known classes must be contiguous 1..={kappa}; {k} missing")));
            }
        }
        Ok(())
    }
}

/// Draws every cluster, then min-max normalizes the whole set into `[0, 1]`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledSet> {
    spec.validate()?;
    let kappa = spec.num_known();
    let mut rng = rng::stream(spec.seed, 0);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let clusters = spec
        .known_clusters
        .iter()
        .map(|c| (&c.mean, c.stddev, c.count, c.class))
        .chain(spec.augmented_clusters.iter().map(|c| (&c.mean, c.stddev, c.count, kappa + 1)));
    for (mean, sd, count, label) in clusters {
        for _ in 0..count {
            let row = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + sd * z
                })
                .collect();
            features.push(row);
            labels.push(label);
        }
    }
    normalize_unit_interval(&mut [&mut features], &mut []);
    LabeledSet::new(features, labels, kappa + 1)
}
