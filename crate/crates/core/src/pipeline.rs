//! Hierarchical few-shot adaptation: cluster the source, train one LSTM per
//! cluster, route labelled target shots to experts, retrain, and gate.
//!
//! Every stochastic stage takes its seed from [`seed::derive`] applied to the
//! fit's base seed, so a fitted model records everything needed to replay it.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{gmm_assign, gmm_fit, GmmConfig, GmmParams};
use crate::ingest::{Class, StandardizationStats, WindowSample, N_CLASSES, WINDOW_STEPS};
use crate::nets::{argmax, lstm_forward, lstm_train, softmax_train, LstmParams, LstmShape, SoftmaxRegressionParams, SoftmaxTrainConfig, TrainConfig, Trainable};
use crate::seed;

/// Seed streams for the stages of one fit.
pub const GMM_STREAM: u64 = 1;
pub const THETA1_STREAM: u64 = 2;
pub const THETA3_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Retrain the adapted experts and gate with fresh seeds for every evaluation.
    Refit,
    /// Evaluate the selected model as is, every time.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    /// Expert training; its `seed` field is ignored in favour of derived seeds.
    pub train: TrainConfig,
    pub gate: SoftmaxTrainConfig,
    pub seed: u64,
    pub runs: usize,
    pub evals: usize,
    pub eval_mode: EvalMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 2,
            gmm_max_iter: 200,
            gmm_tol: 1e-6,
            train: TrainConfig::default(),
            gate: SoftmaxTrainConfig::default(),
            seed: 0,
            runs: 10,
            evals: 5,
            eval_mode: EvalMode::Refit,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.runs == 0 || self.evals == 0 {
            return Err(Error::InvalidArgument("runs and evals must be at least 1".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExpert {
    pub cluster_id: usize,
    /// Trained on the cluster's source windows only.
    pub expert_before: LstmParams,
    /// Trained on the cluster's source windows plus its routed shots; equal to
    /// `expert_before` until [`adapt_experts`] runs.
    pub expert_after: LstmParams,
    /// Source window counts for classes 1..=4.
    pub source_label_histogram: [usize; N_CLASSES],
    pub loss_trace_before: Vec<f64>,
    pub loss_trace_after: Vec<f64>,
}

/// Routes a window to a cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateModel {
    /// Every shot went to the same cluster.
    Constant { cluster: usize, k: usize },
    Softmax(SoftmaxRegressionParams),
}

impl GateModel {
    pub fn k(&self) -> usize {
        match self {
            GateModel::Constant { k, .. } => *k,
            GateModel::Softmax(p) => p.classes,
        }
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        match self {
            GateModel::Constant { cluster, k } => {
                let mut p = vec![0.0; *k];
                p[*cluster] = 1.0;
                p
            }
            GateModel::Softmax(p) => p.probs(x),
        }
    }

    pub fn route(&self, x: &[f64]) -> usize {
        argmax(&self.probs(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSeeds {
    pub base: u64,
    pub gmm: u64,
    pub theta1: Vec<u64>,
    pub theta3: Vec<u64>,
}

impl FitSeeds {
    pub fn new(base: u64, k: usize) -> Self {
        FitSeeds {
            base,
            gmm: seed::derive(base, GMM_STREAM, 0),
            theta1: (0..k as u64).map(|i| seed::derive(base, THETA1_STREAM, i)).collect(),
            theta3: (0..k as u64).map(|i| seed::derive(base, THETA3_STREAM, i)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalModel {
    pub gmm: GmmParams,
    pub experts: Vec<ClusterExpert>,
    pub gate: GateModel,
    pub stats: StandardizationStats,
    /// Cluster id of each shot, in shot order.
    pub shot_assignments: Vec<usize>,
    pub seeds: FitSeeds,
}

impl HierarchicalModel {
    /// Predicted class of an already standardised window.
    pub fn predict(&self, window: &[f64]) -> Result<Class> {
        let cluster = self.gate.route(window);
        let p = lstm_forward(&self.experts[cluster].expert_after, window, None)?;
        Ok(Class::from_index(argmax(&p)))
    }

    /// Standardises a raw window step by step, then predicts.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<Class> {
        let d = self.stats.mean.len();
        if raw.len() != WINDOW_STEPS * d {
            return Err(Error::DimensionMismatch {
                expected: WINDOW_STEPS * d,
                got: raw.len(),
            });
        }
        let z: Vec<f64> = raw.chunks(d).flat_map(|s| self.stats.transform(s)).collect();
        self.predict(&z)
    }

    pub fn predict_all(&self, windows: &[WindowSample]) -> Result<Vec<Class>> {
        windows.iter().map(|w| self.predict(&w.x)).collect()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

fn window_dim(windows: &[WindowSample]) -> Result<usize> {
    let first = windows.first().ok_or(Error::EmptyTrainingSet)?;
    if first.x.len() % WINDOW_STEPS != 0 {
        return Err(Error::InvalidArgument(format!("window length {} is not a multiple of {WINDOW_STEPS}", first.x.len())));
    }
    Ok(first.x.len() / WINDOW_STEPS)
}

/// Clusters the source windows and trains one expert per cluster. Also returns
/// each source window's cluster id.
pub fn fit_source(source: &[WindowSample], config: &PipelineConfig, seeds: &FitSeeds) -> Result<(GmmParams, Vec<ClusterExpert>, Vec<usize>)> {
    config.validate()?;
    if source.len() < config.k {
        return Err(Error::TooFewPoints {
            need: config.k,
            got: source.len(),
        });
    }
    let d = window_dim(source)?;
    let xs: Vec<&[f64]> = source.iter().map(|w| w.x.as_slice()).collect();
    let gmm = gmm_fit(
        &xs,
        &GmmConfig {
            k: config.k,
            max_iter: config.gmm_max_iter,
            tol: config.gmm_tol,
            seed: seeds.gmm,
        },
    )?
    .params;
    let assign = gmm_assign(&gmm, &xs)?;
    let experts = (0..config.k)
        .into_par_iter()
        .map(|c| {
            let members: Vec<&WindowSample> = source.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(w, _)| w).collect();
            if members.is_empty() {
                return Err(Error::EmptyCluster(c));
            }
            let mut hist = [0; N_CLASSES];
            for w in &members {
                hist[w.y.index()] += 1;
            }
            let mx: Vec<&[f64]> = members.iter().map(|w| w.x.as_slice()).collect();
            let my: Vec<usize> = members.iter().map(|w| w.y.index()).collect();
            let t = lstm_train(&mx, &my, LstmShape::new(d), &config.train.with_seed(seeds.theta1[c]))?;
            Ok(ClusterExpert {
                cluster_id: c,
                expert_before: t.params.clone(),
                expert_after: t.params,
                source_label_histogram: hist,
                loss_trace_before: t.loss_trace.clone(),
                loss_trace_after: t.loss_trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gmm, experts, assign))
}

/// Sends each shot to the expert that gives its label the most probability,
/// provided some expert ranks that label first; otherwise to the expert whose
/// source data holds the most windows of that label. Ties go to the lower id.
pub fn route_few_shot(experts: &[ClusterExpert], shots: &[WindowSample]) -> Result<Vec<usize>> {
    if experts.is_empty() {
        return Err(Error::InvalidArgument("no experts to route to".into()));
    }
    shots
        .iter()
        .map(|s| {
            let y = s.y.index();
            let mut best = (0, f64::NEG_INFINITY);
            let mut any_correct = false;
            for (k, e) in experts.iter().enumerate() {
                let p = lstm_forward(&e.expert_before, &s.x, None)?;
                // ">= every entry" rather than argmax so that tie handling does
                // not depend on how the classes are numbered
                any_correct |= p.iter().all(|&q| p[y] >= q);
                if p[y] > best.1 {
                    best = (k, p[y]);
                }
            }
            if any_correct {
                return Ok(best.0);
            }
            let mut fallback = 0;
            for (k, e) in experts.iter().enumerate() {
                if e.source_label_histogram[y] > experts[fallback].source_label_histogram[y] {
                    fallback = k;
                }
            }
            Ok(fallback)
        })
        .collect()
}

/// Training set for one adapted expert: its source windows in their original
/// order followed by the shots routed to it, in shot order.
pub fn adapted_training_set<'a>(
    cluster: usize,
    source: &'a [WindowSample],
    source_assign: &[usize],
    shots: &'a [WindowSample],
    shot_assign: &[usize],
) -> Vec<&'a WindowSample> {
    let own = source.iter().zip(source_assign).filter(|(_, &a)| a == cluster);
    let routed = shots.iter().zip(shot_assign).filter(|(_, &a)| a == cluster);
    own.chain(routed).map(|(w, _)| w).collect()
}

/// Trains fresh networks on each cluster's source windows plus routed shots.
pub fn adapt_experts(
    experts: &[ClusterExpert],
    source: &[WindowSample],
    source_assign: &[usize],
    shots: &[WindowSample],
    shot_assign: &[usize],
    train: &TrainConfig,
    theta3_seeds: &[u64],
) -> Result<Vec<ClusterExpert>> {
    if source.len() != source_assign.len() {
        return Err(Error::LengthMismatch(source.len(), source_assign.len()));
    }
    if shots.len() != shot_assign.len() {
        return Err(Error::LengthMismatch(shots.len(), shot_assign.len()));
    }
    if theta3_seeds.len() != experts.len() {
        return Err(Error::LengthMismatch(experts.len(), theta3_seeds.len()));
    }
    experts
        .par_iter()
        .map(|e| {
            let set = adapted_training_set(e.cluster_id, source, source_assign, shots, shot_assign);
            let xs: Vec<&[f64]> = set.iter().map(|w| w.x.as_slice()).collect();
            let ys: Vec<usize> = set.iter().map(|w| w.y.index()).collect();
            let t = lstm_train(&xs, &ys, e.expert_before.shape, &train.with_seed(theta3_seeds[e.cluster_id]))?;
            Ok(ClusterExpert {
                expert_after: t.params,
                loss_trace_after: t.loss_trace,
                ..e.clone()
            })
        })
        .collect()
}

/// Softmax regression from shot windows to their assigned clusters.
pub fn fit_gate(shots: &[WindowSample], assignments: &[usize], k: usize, config: &SoftmaxTrainConfig) -> Result<GateModel> {
    if shots.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if shots.len() != assignments.len() {
        return Err(Error::LengthMismatch(shots.len(), assignments.len()));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
        return Err(Error::InvalidArgument(format!("cluster id {bad} >= k = {k}")));
    }
    if assignments.iter().all(|&a| a == assignments[0]) {
        return Ok(GateModel::Constant {
            cluster: assignments[0],
            k,
        });
    }
    let xs: Vec<&[f64]> = shots.iter().map(|w| w.x.as_slice()).collect();
    Ok(GateModel::Softmax(softmax_train(&xs, assignments, k, config)?.params))
}

/// One full fit from a base seed.
pub fn fit_hierarchical(
    source: &[WindowSample],
    shots: &[WindowSample],
    stats: &StandardizationStats,
    config: &PipelineConfig,
    base_seed: u64,
) -> Result<HierarchicalModel> {
    let seeds = FitSeeds::new(base_seed, config.k);
    let (gmm, experts, source_assign) = fit_source(source, config, &seeds)?;
    let shot_assign = route_few_shot(&experts, shots)?;
    let experts = adapt_experts(&experts, source, &source_assign, shots, &shot_assign, &config.train, &seeds.theta3)?;
    let gate = if shots.is_empty() {
        GateModel::Constant { cluster: 0, k: config.k }
    } else {
        fit_gate(shots, &shot_assign, config.k, &config.gate)?
    };
    Ok(HierarchicalModel {
        gmm,
        experts,
        gate,
        stats: stats.clone(),
        shot_assignments: shot_assign,
        seeds,
    })
}

/// Fraction of windows whose prediction matches the label.
fn model_accuracy(model: &HierarchicalModel, windows: &[WindowSample]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = model
        .predict_all(windows)?
        .iter()
        .zip(windows)
        .filter(|(p, w)| **p == w.y)
        .count();
    Ok(hits as f64 / windows.len() as f64)
}

/// Outcome of the run-selection protocol, before any test data is seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFit {
    pub model: HierarchicalModel,
    pub eval_models: Vec<HierarchicalModel>,
    pub shot_accuracies: Vec<f64>,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub shot_accuracies: Vec<f64>,
    pub selected: usize,
    pub test_accuracies: Vec<f64>,
    pub mean_test_accuracy: f64,
}

/// Fits `runs` models from seeds `seed, seed+1, ...`, keeps the one scoring
/// best on the shots (earliest on ties), then prepares `evals` evaluation
/// models. In refit mode each keeps the selected clustering, source experts
/// and routing, and retrains the adapted experts from seed `seed+runs+e`.
pub fn fit_selected(source: &[WindowSample], shots: &[WindowSample], stats: &StandardizationStats, config: &PipelineConfig) -> Result<SelectedFit> {
    config.validate()?;
    let runs: Vec<(HierarchicalModel, f64)> = (0..config.runs as u64)
        .into_par_iter()
        .map(|r| {
            let m = fit_hierarchical(source, shots, stats, config, config.seed.wrapping_add(r))?;
            let acc = if shots.is_empty() { 0.0 } else { model_accuracy(&m, shots)? };
            Ok((m, acc))
        })
        .collect::<Result<_>>()?;
    let shot_accuracies: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let selected = argmax(&shot_accuracies);
    let model = runs.into_iter().nth(selected).map(|r| r.0).expect("runs >= 1");

    let eval_models = match config.eval_mode {
        EvalMode::Fixed => vec![model.clone(); config.evals],
        EvalMode::Refit => {
            let source_assign = gmm_assign(&model.gmm, &source.iter().map(|w| w.x.as_slice()).collect::<Vec<_>>())?;
            (0..config.evals as u64)
                .into_par_iter()
                .map(|e| {
                    let seeds = FitSeeds::new(config.seed.wrapping_add(config.runs as u64).wrapping_add(e), config.k);
                    let experts = adapt_experts(&model.experts, source, &source_assign, shots, &model.shot_assignments, &config.train, &seeds.theta3)?;
                    Ok(HierarchicalModel {
                        experts,
                        seeds: FitSeeds {
                            theta3: seeds.theta3,
                            ..model.seeds.clone()
                        },
                        ..model.clone()
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(SelectedFit {
        model,
        eval_models,
        shot_accuracies,
        selected,
    })
}

impl SelectedFit {
    /// Scores every evaluation model on the held-out windows.
    pub fn report(&self, test: &[WindowSample]) -> Result<SelectionReport> {
        let test_accuracies = self.eval_models.iter().map(|m| model_accuracy(m, test)).collect::<Result<Vec<_>>>()?;
        let mean_test_accuracy = test_accuracies.iter().sum::<f64>() / test_accuracies.len() as f64;
        Ok(SelectionReport {
            shot_accuracies: self.shot_accuracies.clone(),
            selected: self.selected,
            test_accuracies,
            mean_test_accuracy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    /// Source experts on their own clusters' windows.
    pub e_source: f64,
    /// Gate on the shots against their routed clusters.
    pub e_gate: f64,
    /// Adapted experts on their clusters' windows plus routed shots.
    pub e_adapted: f64,
    /// Order in which the stages were optimised.
    pub stage_order: Vec<String>,
}

fn mean_xent<'a>(pairs: impl Iterator<Item = (&'a LstmParams, &'a WindowSample)>) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, w) in pairs {
        let probs = lstm_forward(p, &w.x, None)?;
        total += -probs[w.y.index()].ln();
        n += 1;
    }
    if n == 0 {
        return Ok(0.0);
    }
    Ok(total / n as f64)
}

/// Mean cross-entropy of each stage on the data it was trained on.
pub fn evaluate_objective(model: &HierarchicalModel, source: &[WindowSample], shots: &[WindowSample]) -> Result<ObjectiveReport> {
    if shots.len() != model.shot_assignments.len() {
        return Err(Error::LengthMismatch(shots.len(), model.shot_assignments.len()));
    }
    let xs: Vec<&[f64]> = source.iter().map(|w| w.x.as_slice()).collect();
    let source_assign = gmm_assign(&model.gmm, &xs)?;
    let e_source = mean_xent(source.iter().zip(&source_assign).map(|(w, &c)| (&model.experts[c].expert_before, w)))?;

    let mut e_gate = 0.0;
    for (s, &c) in shots.iter().zip(&model.shot_assignments) {
        e_gate += -model.gate.probs(&s.x)[c].ln();
    }
    if !shots.is_empty() {
        e_gate /= shots.len() as f64;
    }

    let adapted = source
        .iter()
        .zip(&source_assign)
        .chain(shots.iter().zip(&model.shot_assignments))
        .map(|(w, &c)| (&model.experts[c].expert_after, w));
    let e_adapted = mean_xent(adapted)?;
    Ok(ObjectiveReport {
        e_source,
        e_gate,
        e_adapted,
        stage_order: vec!["source".into(), "gate".into(), "adapted".into()],
    })
}
