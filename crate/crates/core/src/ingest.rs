//! Loading and shaping of labelled sensor sequences.
//!
//! A dataset is an ordered run of per-minute frames. Frames are harmonised to a
//! common channel set, z-scored with source statistics, and cut into
//! overlapping two-step windows labelled by their last frame.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Number of quality classes (excellent, good, acceptable, spoiled).
pub const N_CLASSES: usize = 4;

/// Timesteps per classification window.
pub const WINDOW_STEPS: usize = 2;

/// Floor applied to per-feature standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Columns removed so the three beef datasets share nine gas channels.
pub const DEFAULT_DROP: [&str; 5] = ["humidity", "temperature", "MQ7", "MQ138", "MQ137"];

/// A quality class label in `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Class(u8);

impl Class {
    pub fn new(label: u8) -> Option<Self> {
        (1..=N_CLASSES as u8).contains(&label).then_some(Class(label))
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < N_CLASSES, "class index {index} out of range");
        Class(index as u8 + 1)
    }

    /// Zero-based index used by the classifiers.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Class> {
        (0..N_CLASSES).map(Class::from_index)
    }
}

impl TryFrom<u8> for Class {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Class::new(v).ok_or_else(|| format!("class label {v} outside 1..=4"))
    }
}

impl From<Class> for u8 {
    fn from(c: Class) -> u8 {
        c.0
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: usize,
    pub features: Vec<f64>,
    pub label: Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub name: String,
    pub feature_names: Vec<String>,
    pub frames: Vec<SensorFrame>,
}

impl SequenceDataset {
    /// Builds a dataset, checking that every frame matches the declared width.
    pub fn new(name: impl Into<String>, feature_names: Vec<String>, frames: Vec<SensorFrame>) -> Result<Self> {
        let d = feature_names.len();
        for f in &frames {
            if f.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: f.features.len(),
                });
            }
        }
        Ok(SequenceDataset {
            name: name.into(),
            feature_names,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<Class> {
        self.frames.iter().map(|f| f.label).collect()
    }
}

/// Two consecutive frames stacked row-major: `x[..d]` is the earlier frame,
/// `x[d..]` the later one, whose label the window carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub x: Vec<f64>,
    pub y: Class,
    pub origin_t: usize,
}

impl WindowSample {
    pub fn dim(&self) -> usize {
        self.x.len() / WINDOW_STEPS
    }

    pub fn step(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.x[i * d..(i + 1) * d]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub shots: Vec<WindowSample>,
    pub test_pool: Vec<WindowSample>,
    /// Number of distinct classes present in the windows the split was drawn from.
    pub n_classes: usize,
    /// Classes that had fewer windows than requested and contributed all of them.
    pub short_classes: Vec<Class>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub label_column: String,
    /// Columns ignored before numeric parsing (timestamps, raw TVC and the like).
    pub skip_columns: Vec<String>,
}

impl LoadOptions {
    pub fn new(label_column: impl Into<String>) -> Self {
        LoadOptions {
            label_column: label_column.into(),
            skip_columns: Vec::new(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<SequenceDataset> {
    load_csv_with(path, &LoadOptions::new(label_column))
}

/// Reads a headed CSV. Row numbers in errors are 1-based and exclude the header.
pub fn load_csv_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<SequenceDataset> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == opts.label_column)
        .ok_or_else(|| Error::MissingLabelColumn(opts.label_column.clone()))?;
    let feature_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, h)| *i != label_idx && !opts.skip_columns.iter().any(|s| s == h))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut frames = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(csv_err)?;
        let raw_label = record.get(label_idx).unwrap_or("");
        let label = parse_label(raw_label).ok_or_else(|| Error::InvalidLabel {
            row,
            value: raw_label.to_string(),
        })?;
        let mut features = Vec::with_capacity(feature_cols.len());
        for (i, name) in &feature_cols {
            let cell = record.get(*i).unwrap_or("");
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::NonNumeric {
                row,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            features.push(v);
        }
        frames.push(SensorFrame {
            t: r,
            features,
            label,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    SequenceDataset::new(name, feature_cols.into_iter().map(|(_, n)| n).collect(), frames)
}

fn parse_label(s: &str) -> Option<Class> {
    let v: f64 = s.parse().ok()?;
    if v.fract() != 0.0 || !(1.0..=N_CLASSES as f64).contains(&v) {
        return None;
    }
    Class::new(v as u8)
}

/// Lists the CSV files of a multi-file dataset in lexicographic order.
pub fn list_csv_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a file, or every CSV in a directory (one dataset per file).
pub fn load_path(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Vec<SequenceDataset>> {
    let path = path.as_ref();
    if path.is_dir() {
        list_csv_files(path)?.iter().map(|p| load_csv_with(p, opts)).collect()
    } else {
        Ok(vec![load_csv_with(path, opts)?])
    }
}

/// Removes the named feature columns (ASCII case-insensitive). Names that are
/// not present are skipped.
pub fn harmonize(ds: &SequenceDataset, drop: &[impl AsRef<str>]) -> SequenceDataset {
    let dropped = |name: &str| drop.iter().any(|d| d.as_ref().eq_ignore_ascii_case(name));
    for d in drop {
        if !ds.feature_names.iter().any(|n| n.eq_ignore_ascii_case(d.as_ref())) {
            log::debug!("{}: column `{}` not present, nothing to drop", ds.name, d.as_ref());
        }
    }
    let keep: Vec<usize> = (0..ds.dim()).filter(|&i| !dropped(&ds.feature_names[i])).collect();
    SequenceDataset {
        name: ds.name.clone(),
        feature_names: keep.iter().map(|&i| ds.feature_names[i].clone()).collect(),
        frames: ds
            .frames
            .iter()
            .map(|f| SensorFrame {
                t: f.t,
                features: keep.iter().map(|&i| f.features[i]).collect(),
                label: f.label,
            })
            .collect(),
    }
}

/// Reorders the columns of `ds` to follow `names`. Fails if any name is missing.
pub fn align_features(ds: &SequenceDataset, names: &[String]) -> Result<SequenceDataset> {
    if ds.feature_names == names {
        return Ok(ds.clone());
    }
    let mut order = Vec::with_capacity(names.len());
    let mut missing = Vec::new();
    for n in names {
        match ds.feature_names.iter().position(|m| m.eq_ignore_ascii_case(n)) {
            Some(i) => order.push(i),
            None => missing.push(n.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::FeatureMismatch { missing });
    }
    Ok(SequenceDataset {
        name: ds.name.clone(),
        feature_names: names.to_vec(),
        frames: ds
            .frames
            .iter()
            .map(|f| SensorFrame {
                t: f.t,
                features: order.iter().map(|&i| f.features[i]).collect(),
                label: f.label,
            })
            .collect(),
    })
}

pub fn fit_standardizer(ds: &SequenceDataset) -> Result<StandardizationStats> {
    StandardizationStats::fit(std::slice::from_ref(ds))
}

pub fn apply_standardizer(ds: &SequenceDataset, stats: &StandardizationStats) -> Result<SequenceDataset> {
    if stats.mean.len() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: stats.mean.len(),
            got: ds.dim(),
        });
    }
    Ok(SequenceDataset {
        name: ds.name.clone(),
        feature_names: ds.feature_names.clone(),
        frames: ds
            .frames
            .iter()
            .map(|f| SensorFrame {
                t: f.t,
                features: stats.transform(&f.features),
                label: f.label,
            })
            .collect(),
    })
}

impl StandardizationStats {
    /// Population mean and standard deviation pooled over all frames of all datasets.
    pub fn fit(datasets: &[SequenceDataset]) -> Result<Self> {
        let d = datasets.first().ok_or(Error::EmptyDataset)?.dim();
        let n: usize = datasets.iter().map(|ds| ds.len()).sum();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut mean = vec![0.0; d];
        for ds in datasets {
            if ds.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: ds.dim(),
                });
            }
            for f in &ds.frames {
                for (m, x) in mean.iter_mut().zip(&f.features) {
                    *m += x;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for f in datasets.iter().flat_map(|ds| &ds.frames) {
            for ((v, x), m) in var.iter_mut().zip(&f.features).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(StandardizationStats { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        StandardizationStats {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

/// Cuts `ds` into the `N-1` overlapping two-step windows.
pub fn make_windows(ds: &SequenceDataset) -> Result<Vec<WindowSample>> {
    if ds.len() < WINDOW_STEPS {
        return Err(Error::TooFewFrames {
            need: WINDOW_STEPS,
            got: ds.len(),
        });
    }
    Ok(ds
        .frames
        .windows(WINDOW_STEPS)
        .map(|pair| {
            let last = &pair[WINDOW_STEPS - 1];
            WindowSample {
                x: pair.iter().flat_map(|f| f.features.iter().copied()).collect(),
                y: last.label,
                origin_t: last.t,
            }
        })
        .collect())
}

/// Windows each file separately and concatenates, so no window straddles two files.
pub fn make_windows_multi(datasets: &[SequenceDataset]) -> Result<Vec<WindowSample>> {
    let mut out = Vec::new();
    for ds in datasets {
        out.extend(make_windows(ds)?);
    }
    Ok(out)
}

/// Draws `per_class` windows uniformly without replacement from every class
/// present. The test pool keeps the remaining windows in their original order.
pub fn sample_few_shot(windows: &[WindowSample], per_class: usize, seed: u64) -> Result<FewShotSplit> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be at least 1".into()));
    }
    let mut by_class: BTreeMap<Class, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_class.entry(w.y).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let mut taken = vec![false; windows.len()];
    let mut shots = Vec::new();
    let mut short_classes = Vec::new();
    for (&class, idx) in &by_class {
        let chosen: Vec<usize> = if idx.len() <= per_class {
            if idx.len() < per_class {
                log::warn!("class {class}: only {} windows available for {per_class} shots", idx.len());
                short_classes.push(class);
            }
            idx.clone()
        } else {
            sample(&mut rng, idx.len(), per_class).into_iter().map(|j| idx[j]).collect()
        };
        for i in chosen {
            taken[i] = true;
            shots.push(windows[i].clone());
        }
    }
    let test_pool = windows
        .iter()
        .zip(&taken)
        .filter(|(_, t)| !**t)
        .map(|(w, _)| w.clone())
        .collect();
    Ok(FewShotSplit {
        shots,
        test_pool,
        n_classes: by_class.len(),
        short_classes,
    })
}
