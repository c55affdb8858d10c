//! Source-to-target experiments: ingest, fit one method, score on the held-out
//! target windows.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, macro_accuracy};
use crate::baselines::{adaboost_predict, adaboost_train, ss_classify_stream, ss_init, AdaBoostModel, NnSsState, DEFAULT_ESTIMATORS};
use crate::error::{Error, Result};
use crate::ingest::{
    align_features, apply_standardizer, harmonize, load_path, make_windows, make_windows_multi, sample_few_shot, Class, FewShotSplit, LoadOptions, SequenceDataset,
    StandardizationStats, WindowSample, DEFAULT_DROP, N_CLASSES,
};
use crate::nets::{argmax, lstm_forward, lstm_train, mlp_predict, mlp_train, softmax_predict, softmax_train, LstmParams, LstmShape, MlpParams, MlpShape, SoftmaxRegressionParams, SoftmaxTrainConfig, TrainConfig};
use crate::pipeline::{fit_selected, EvalMode, PipelineConfig, SelectedFit};
use crate::seed;

const SPLIT_STREAM: u64 = 10;
const BASELINE_STREAM: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Lr,
    Adaboost,
    Ss,
    Dnn,
    Lstm,
    Ours,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Lr, Method::Adaboost, Method::Ss, Method::Dnn, Method::Lstm, Method::Ours];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lr => "lr",
            Method::Adaboost => "adaboost",
            Method::Ss => "ss",
            Method::Dnn => "dnn",
            Method::Lstm => "lstm",
            Method::Ours => "ours",
        }
    }

    /// Column heading in reports.
    pub fn heading(self) -> &'static str {
        match self {
            Method::Lr => "LR",
            Method::Adaboost => "AB",
            Method::Ss => "SS",
            Method::Dnn => "DNN",
            Method::Lstm => "LSTM",
            Method::Ours => "Ours",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Row label in reports.
    pub name: String,
    /// CSV files or directories of CSV files.
    pub source: Vec<PathBuf>,
    pub target: Vec<PathBuf>,
    /// Train one model per source file instead of pooling them.
    pub separate_sources: bool,
    pub method: Method,
    pub k: usize,
    pub per_class: usize,
    pub runs: usize,
    pub evals: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub standardize: bool,
    pub label_column: String,
    pub skip_columns: Vec<String>,
    pub drop_columns: Vec<String>,
    /// LSTM experts and the LSTM baseline.
    pub train: TrainConfig,
    pub dnn: TrainConfig,
    pub gate: SoftmaxTrainConfig,
    pub lr: SoftmaxTrainConfig,
    pub adaboost_estimators: usize,
    pub eval_mode: EvalMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            source: Vec::new(),
            target: Vec::new(),
            separate_sources: false,
            method: Method::Ours,
            k: 2,
            per_class: 4,
            runs: 10,
            evals: 5,
            seed: 0,
            output: None,
            standardize: true,
            label_column: "label".into(),
            skip_columns: Vec::new(),
            drop_columns: DEFAULT_DROP.iter().map(|s| s.to_string()).collect(),
            train: TrainConfig::default(),
            dnn: TrainConfig::default(),
            gate: SoftmaxTrainConfig::default(),
            lr: SoftmaxTrainConfig::default(),
            adaboost_estimators: DEFAULT_ESTIMATORS,
            eval_mode: EvalMode::Refit,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            k: self.k,
            train: self.train,
            gate: self.gate,
            seed: self.seed,
            runs: self.runs,
            evals: self.evals,
            eval_mode: self.eval_mode,
            ..Default::default()
        }
    }
}

/// One source set against one target file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub source: String,
    pub target: String,
    /// One entry per evaluation model.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub macro_accuracy: f64,
    pub n_shots: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub method: Method,
    pub cells: Vec<CellResult>,
    /// Unweighted mean of the cell means.
    pub overall_mean: f64,
    pub overall_macro: f64,
    pub wall_clock_secs: f64,
    pub config: ExperimentConfig,
}

impl ExperimentResult {
    pub fn recomputed_mean(&self) -> f64 {
        self.cells.iter().map(|c| c.mean).sum::<f64>() / self.cells.len() as f64
    }
}

/// Everything a method may see for one cell, plus the held-out windows.
#[derive(Debug, Clone)]
pub struct PreparedCell {
    pub source_name: String,
    pub target_name: String,
    pub source: Vec<WindowSample>,
    pub split: FewShotSplit,
    pub stats: StandardizationStats,
}

/// Harmonises, aligns to the features shared by all inputs, standardises with
/// source statistics, windows, and draws the shots.
pub fn prepare_cell(config: &ExperimentConfig, sources: &[SequenceDataset], target: &SequenceDataset, split_index: u64) -> Result<PreparedCell> {
    if sources.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sources: Vec<SequenceDataset> = sources.iter().map(|s| harmonize(s, &config.drop_columns)).collect();
    let target = harmonize(target, &config.drop_columns);
    let common: Vec<String> = sources[0]
        .feature_names
        .iter()
        .filter(|n| sources.iter().all(|s| s.feature_names.contains(n)) && target.feature_names.contains(n))
        .cloned()
        .collect();
    if common.is_empty() {
        return Err(Error::FeatureMismatch {
            missing: sources[0].feature_names.clone(),
        });
    }
    if common.len() < sources[0].feature_names.len() {
        log::info!("using {} features shared with {}", common.len(), target.name);
    }
    let sources = sources.iter().map(|s| align_features(s, &common)).collect::<Result<Vec<_>>>()?;
    let target = align_features(&target, &common)?;
    let stats = if config.standardize {
        StandardizationStats::fit(&sources)?
    } else {
        StandardizationStats::identity(common.len())
    };
    let sources = sources.iter().map(|s| apply_standardizer(s, &stats)).collect::<Result<Vec<_>>>()?;
    let target = apply_standardizer(&target, &stats)?;
    let split = sample_few_shot(&make_windows(&target)?, config.per_class, seed::derive(config.seed, SPLIT_STREAM, split_index))?;
    Ok(PreparedCell {
        source_name: sources.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join("+"),
        target_name: target.name.clone(),
        source: make_windows_multi(&sources)?,
        split,
        stats,
    })
}

/// A fitted method, serialisable for audits and reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "model", rename_all = "lowercase")]
pub enum TrainedModel {
    Ours(Box<SelectedFit>),
    Lr(SoftmaxRegressionParams),
    Adaboost(AdaBoostModel),
    /// State before any test window is streamed through it.
    Ss(NnSsState),
    Dnn(Vec<MlpParams>),
    Lstm(Vec<LstmParams>),
}

fn flat(ws: &[&WindowSample]) -> (Vec<Vec<f64>>, Vec<usize>) {
    (ws.iter().map(|w| w.x.clone()).collect(), ws.iter().map(|w| w.y.index()).collect())
}

/// Fits `config.method` on source windows and shots. Test data never enters.
pub fn fit_on_split(config: &ExperimentConfig, source: &[WindowSample], shots: &[WindowSample], stats: &StandardizationStats) -> Result<TrainedModel> {
    let pooled: Vec<&WindowSample> = source.iter().chain(shots).collect();
    let d = stats.mean.len();
    let seeds = |e: usize| seed::derive(config.seed, BASELINE_STREAM, e as u64);
    Ok(match config.method {
        Method::Ours => TrainedModel::Ours(Box::new(fit_selected(source, shots, stats, &config.pipeline())?)),
        Method::Lr => {
            let (xs, ys) = flat(&pooled);
            TrainedModel::Lr(softmax_train(&xs, &ys, N_CLASSES, &config.lr)?.params)
        }
        Method::Adaboost => {
            let xs: Vec<&[f64]> = pooled.iter().map(|w| w.x.as_slice()).collect();
            let ys: Vec<Class> = pooled.iter().map(|w| w.y).collect();
            TrainedModel::Adaboost(adaboost_train(&xs, &ys, config.adaboost_estimators)?)
        }
        Method::Ss => TrainedModel::Ss(ss_init(source)?),
        Method::Dnn => {
            let (xs, ys) = flat(&pooled);
            let models = (0..config.evals)
                .into_par_iter()
                .map(|e| Ok(mlp_train(&xs, &ys, MlpShape::new(xs[0].len()), &config.dnn.with_seed(seeds(e)))?.params))
                .collect::<Result<_>>()?;
            TrainedModel::Dnn(models)
        }
        Method::Lstm => {
            let (xs, ys) = flat(&pooled);
            let models = (0..config.evals)
                .into_par_iter()
                .map(|e| Ok(lstm_train(&xs, &ys, LstmShape::new(d), &config.train.with_seed(seeds(e)))?.params))
                .collect::<Result<_>>()?;
            TrainedModel::Lstm(models)
        }
    })
}

impl TrainedModel {
    /// One prediction vector per evaluation model, in test order.
    pub fn predict(&self, test: &[WindowSample]) -> Result<Vec<Vec<Class>>> {
        let xs: Vec<&[f64]> = test.iter().map(|w| w.x.as_slice()).collect();
        let by_probs = |probs: &dyn Fn(&[f64]) -> Result<Vec<f64>>| -> Result<Vec<Class>> { xs.iter().map(|x| Ok(Class::from_index(argmax(&probs(x)?)))).collect() };
        match self {
            TrainedModel::Ours(fit) => fit.eval_models.iter().map(|m| m.predict_all(test)).collect(),
            TrainedModel::Lr(p) => Ok(vec![by_probs(&|x| softmax_predict(p, x))?]),
            TrainedModel::Adaboost(m) => Ok(vec![xs.iter().map(|x| adaboost_predict(m, x)).collect()]),
            TrainedModel::Ss(state) => Ok(vec![ss_classify_stream(&mut state.clone(), &xs)?]),
            TrainedModel::Dnn(ms) => ms.iter().map(|m| by_probs(&|x| mlp_predict(m, x))).collect(),
            TrainedModel::Lstm(ms) => ms.iter().map(|m| by_probs(&|x| lstm_forward(m, x, None))).collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }
}

/// Scores a fitted model on the held-out windows; the only place test labels
/// are read.
pub fn score(model: &TrainedModel, test: &[WindowSample]) -> Result<(Vec<f64>, f64)> {
    let labels: Vec<Class> = test.iter().map(|w| w.y).collect();
    let preds = model.predict(test)?;
    let accs = preds.iter().map(|p| accuracy(p, &labels)).collect::<Result<Vec<_>>>()?;
    let macros = preds.iter().map(|p| macro_accuracy(p, &labels)).collect::<Result<Vec<_>>>()?;
    Ok((accs, macros.iter().sum::<f64>() / macros.len() as f64))
}

pub fn run_cell(config: &ExperimentConfig, cell: &PreparedCell) -> Result<(TrainedModel, CellResult)> {
    let model = fit_on_split(config, &cell.source, &cell.split.shots, &cell.stats)?;
    let (accuracies, macro_accuracy) = score(&model, &cell.split.test_pool)?;
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    log::info!("{} {} {} -> {}: {:.4}", config.name, config.method, cell.source_name, cell.target_name, mean);
    let result = CellResult {
        source: cell.source_name.clone(),
        target: cell.target_name.clone(),
        accuracies,
        mean,
        macro_accuracy,
        n_shots: cell.split.shots.len(),
        n_test: cell.split.test_pool.len(),
    };
    Ok((model, result))
}

/// Runs every (source set, target) cell on in-memory datasets.
pub fn run_on_datasets(config: &ExperimentConfig, source_sets: &[Vec<SequenceDataset>], targets: &[SequenceDataset]) -> Result<ExperimentResult> {
    let start = Instant::now();
    if source_sets.is_empty() || targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs: Vec<(usize, &Vec<SequenceDataset>, &SequenceDataset)> = source_sets
        .iter()
        .flat_map(|s| targets.iter().enumerate().map(move |(ti, t)| (ti, s, t)))
        .collect();
    let cells = pairs
        .par_iter()
        .map(|&(ti, s, t)| {
            let cell = prepare_cell(config, s, t, ti as u64)?;
            Ok(run_cell(config, &cell)?.1)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = cells.len() as f64;
    let overall_mean = cells.iter().map(|c| c.mean).sum::<f64>() / n;
    let overall_macro = cells.iter().map(|c| c.macro_accuracy).sum::<f64>() / n;
    let result = ExperimentResult {
        name: config.name.clone(),
        method: config.method,
        cells,
        overall_mean,
        overall_macro,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    if let Some(out) = &config.output {
        write_result(&result, out)?;
    }
    Ok(result)
}

fn load_all(paths: &[PathBuf], opts: &LoadOptions) -> Result<Vec<SequenceDataset>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(load_path(p, opts)?);
    }
    Ok(out)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let opts = LoadOptions {
        label_column: config.label_column.clone(),
        skip_columns: config.skip_columns.clone(),
    };
    let sources = load_all(&config.source, &opts)?;
    let targets = load_all(&config.target, &opts)?;
    if sources.is_empty() || targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let source_sets = if config.separate_sources {
        sources.into_iter().map(|s| vec![s]).collect()
    } else {
        vec![sources]
    };
    run_on_datasets(config, &source_sets, &targets)
}

pub fn write_result(result: &ExperimentResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(result)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The 21 source-to-target rows over `dataset1` (5 files), `dataset2` and
/// `dataset3` (12 files) under `root`, one config per row and method.
pub fn grid_configs(root: impl AsRef<Path>, base: &ExperimentConfig, methods: &[Method]) -> Result<Vec<ExperimentConfig>> {
    let root = root.as_ref();
    let files = |d: &str| crate::ingest::list_csv_files(root.join(d));
    let (d1, d2, d3) = (files("dataset1")?, files("dataset2")?, files("dataset3")?);
    let mut rows: Vec<(String, Vec<PathBuf>, bool, Vec<PathBuf>)> = Vec::new();
    rows.push(("1_{1-5}-2".into(), d1.clone(), true, d2.clone()));
    for (i, f) in d1.iter().enumerate() {
        rows.push((format!("1_{}-3_{{1-12}}", i + 1), vec![f.clone()], false, d3.clone()));
    }
    rows.push(("2-1_{1-5}".into(), d2.clone(), false, d1.clone()));
    rows.push(("2-3_{1-12}".into(), d2.clone(), false, d3.clone()));
    for (j, f) in d3.iter().enumerate() {
        rows.push((format!("3_{}-1_{{1-5}}", j + 1), vec![f.clone()], false, d1.clone()));
    }
    rows.push(("3_{1-12}-2".into(), d3.clone(), true, d2));
    let mut out = Vec::new();
    for (name, source, separate_sources, target) in rows {
        for &method in methods {
            out.push(ExperimentConfig {
                name: name.clone(),
                source: source.clone(),
                target: target.clone(),
                separate_sources,
                method,
                output: None,
                ..base.clone()
            });
        }
    }
    Ok(out)
}

/// Runs each config in turn, writing `<out>/<row>.<method>.json` files.
pub fn run_grid(configs: &[ExperimentConfig], out: impl AsRef<Path>) -> Result<Vec<ExperimentResult>> {
    let out = out.as_ref();
    configs
        .iter()
        .map(|c| {
            let r = run_experiment(c)?;
            let stem: String = c.name.chars().map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' }).collect();
            write_result(&r, out.join(format!("{stem}.{}.json", c.method)))?;
            Ok(r)
        })
        .collect()
}
