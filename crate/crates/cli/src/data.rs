use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use lacforest::dataset::{
    apply_label_map, load_csv, make_shift_split, read_csv_table, write_unlabeled_csv, LabelMap,
    LabeledSet, LoadedCsv, Manifest, Normalization, ShiftSplit, ShiftSplitConfig, UnlabeledSet,
};
use lacforest::Error;
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::error::CliError;

pub const AUGMENTED_NAME: &str = "augmented";

/// Training and test data in model space: features rescaled, labels
/// 1-based with the augmented class at `κ + 1` in `test`.
pub struct Prepared {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: Option<LabeledSet>,
    pub manifest: Manifest,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_labeled(path: &Path, label_column: &str) -> Result<(LabeledSet, LabelMap, Vec<String>), CliError> {
    match load_csv(path, Some(label_column)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))? {
        LoadedCsv::Labeled {
            set,
            label_map,
            feature_names,
        } => Ok((set, label_map, feature_names)),
        LoadedCsv::Unlabeled { .. } => unreachable!("label column requested"),
    }
}

/// Feature rows, ignoring a label column if the file has one.
pub fn load_features(path: &Path, label_column: &str) -> Result<(Vec<Vec<f64>>, Vec<String>), CliError> {
    let ctx = |e: Error| CliError::data(format!("{}: {e}", path.display()));
    let table = match read_csv_table(open(path)?, Some(label_column)) {
        Err(Error::MissingColumn(_)) => read_csv_table(open(path)?, None),
        other => other,
    }
    .map_err(ctx)?;
    Ok((table.rows, table.feature_names))
}

/// Test rows with truths mapped through `label_map`; unseen names become
/// the augmented class.
pub fn load_test(path: &Path, label_column: &str, label_map: &LabelMap) -> Result<LabeledSet, CliError> {
    let ctx = |e: Error| CliError::data(format!("{}: {e}", path.display()));
    let table = read_csv_table(open(path)?, Some(label_column)).map_err(ctx)?;
    let kappa = label_map.len();
    let names = table.label_names.unwrap_or_default();
    let labels = apply_label_map(&names, label_map, kappa + 1);
    LabeledSet::new(table.rows, labels, kappa + 1).map_err(ctx)
}

fn check_dim(what: &str, expected: usize, got: usize) -> Result<(), CliError> {
    if expected != got {
        return Err(CliError::data(format!("{what} has {got} features, expected {expected}")));
    }
    Ok(())
}

/// Name of a 1-based model label.
pub fn label_name(manifest: Option<&Manifest>, label: usize) -> String {
    manifest
        .and_then(|m| m.label_map.get_index(label - 1))
        .map(|(name, _)| name.clone())
        .unwrap_or_else(|| if manifest.is_some() { AUGMENTED_NAME.into() } else { label.to_string() })
}

/// Class-shift split of a labeled source. Known classes keep their source
/// names; the augmented rows are named [`AUGMENTED_NAME`].
pub struct NamedSplit {
    pub split: ShiftSplit,
    pub known_names: LabelMap,
    pub augmented_names: Vec<String>,
    pub feature_names: Vec<String>,
}

pub fn split_source(path: &Path, label_column: &str, cfg: &ShiftSplitConfig) -> Result<NamedSplit, CliError> {
    let (full, source_map, feature_names) = load_labeled(path, label_column)?;
    let split = make_shift_split(&full, cfg)?;
    let name = |c: usize| source_map.get_index(c - 1).expect("source class").0.clone();
    let known_names = split
        .known_source_classes
        .iter()
        .enumerate()
        .map(|(i, &c)| (name(c), i + 1))
        .collect();
    let augmented_names = split.augmented_source_classes.iter().map(|&c| name(c)).collect();
    Ok(NamedSplit {
        split,
        known_names,
        augmented_names,
        feature_names,
    })
}

/// Loads or splits the data described by `cfg`. `theta` and `n_u` may
/// differ from the config during sweeps; with CSV inputs a smaller `n_u`
/// draws a seeded subsample of the unlabeled rows.
pub fn prepare(cfg: &RunConfig, theta: f64, n_u: Option<usize>, seed: u64) -> Result<Prepared, CliError> {
    let (mut labeled, mut unlabeled, mut test, label_map, feature_names) = if let Some(source) = &cfg.source {
        let split_cfg = ShiftSplitConfig {
            augmented_class_fraction: cfg.split.augmented_class_fraction,
            theta,
            n_l: cfg.split.n_l,
            n_u: n_u.unwrap_or(cfg.split.n_u),
            n_test: cfg.split.n_test,
            seed,
        };
        let s = split_source(source, &cfg.label_column, &split_cfg)?;
        let test = (!s.split.test.is_empty()).then_some(s.split.test);
        (s.split.labeled, s.split.unlabeled, test, s.known_names, s.feature_names)
    } else {
        let (labeled, label_map, feature_names) = load_labeled(cfg.labeled.as_deref().expect("validated"), &cfg.label_column)?;
        let u_path = cfg.unlabeled.as_deref().expect("validated");
        let (mut rows, _) = load_features(u_path, &cfg.label_column)?;
        if let Some(n) = n_u {
            if n > rows.len() {
                return Err(CliError::data(format!("n_u = {n} exceeds the {} unlabeled rows", rows.len())));
            }
            rows.shuffle(&mut lacforest::rng::stream(seed, 101));
            rows.truncate(n);
        }
        let unlabeled = UnlabeledSet::new(rows).map_err(|e| CliError::data(format!("{}: {e}", u_path.display())))?;
        let test = match &cfg.test {
            Some(p) => Some(load_test(p, &cfg.label_column, &label_map)?),
            None => None,
        };
        (labeled, unlabeled, test, label_map, feature_names)
    };
    let d = labeled.dim();
    check_dim("unlabeled data", d, unlabeled.dim())?;
    if let Some(t) = &test {
        check_dim("test data", d, t.dim())?;
    }
    let norm = if cfg.normalize {
        let n = Normalization::fit([labeled.features.as_slice(), unlabeled.features.as_slice()]);
        n.apply(&mut labeled.features);
        n.apply(&mut unlabeled.features);
        if let Some(t) = test.as_mut() {
            n.apply(&mut t.features);
        }
        Some(n)
    } else {
        None
    };
    let manifest = Manifest::new(feature_names, label_map, norm.as_ref());
    Ok(Prepared {
        labeled,
        unlabeled,
        test,
        manifest,
    })
}

pub fn csv_err(e: csv::Error) -> CliError {
    CliError::data(e.to_string())
}

/// Writes a labeled CSV whose label column holds names instead of indices.
pub fn write_named_csv(path: &Path, feature_names: &[String], set: &LabeledSet, name: impl Fn(usize) -> String) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = feature_names.to_vec();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for (row, &y) in set.features.iter().zip(&set.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(name(y));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))
}

pub fn write_unlabeled(path: &Path, feature_names: &[String], set: &UnlabeledSet) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    write_unlabeled_csv(BufWriter::new(file), feature_names, set)?;
    Ok(())
}
