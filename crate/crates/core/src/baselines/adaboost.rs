//! Multi-class AdaBoost (SAMME) over one-feature threshold stumps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Class, N_CLASSES};

pub const DEFAULT_ESTIMATORS: usize = 100;

/// Error floor used to bound the stage weight of a perfect stump.
const MIN_ERROR: f64 = 1e-10;

/// `x[feature] <= threshold` votes `left`, otherwise `right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: Class,
    pub right: Class,
}

impl Stump {
    pub fn predict(&self, x: &[f64]) -> Class {
        if x[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    /// Accepted stumps with their stage weights α.
    pub stages: Vec<(Stump, f64)>,
    /// Classes seen in training, ascending.
    pub classes: Vec<Class>,
}

fn heaviest(counts: &[f64; N_CLASSES]) -> (usize, f64) {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    (best, counts[best])
}

/// Lowest weighted-error stump; the constant stump competes too.
fn best_stump<X: AsRef<[f64]>>(xs: &[X], labels: &[Class], w: &[f64], sorted: &[Vec<usize>]) -> (Stump, f64) {
    let mut total = [0.0; N_CLASSES];
    for (l, wi) in labels.iter().zip(w) {
        total[l.index()] += wi;
    }
    let w_sum: f64 = total.iter().sum();
    let (maj, maj_w) = heaviest(&total);
    let first = xs[0].as_ref();
    let mut best = (
        Stump {
            feature: 0,
            threshold: sorted[0].last().map_or(0.0, |&i| xs[i].as_ref()[0]).max(first[0]),
            left: Class::from_index(maj),
            right: Class::from_index(maj),
        },
        w_sum - maj_w,
    );
    for (f, order) in sorted.iter().enumerate() {
        let mut left = [0.0; N_CLASSES];
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            left[labels[i].index()] += w[i];
            let (a, b) = (xs[i].as_ref()[f], xs[order[pos + 1]].as_ref()[f]);
            if a == b {
                continue;
            }
            let mut right = total;
            for c in 0..N_CLASSES {
                right[c] -= left[c];
            }
            let (lc, lw) = heaviest(&left);
            let (rc, rw) = heaviest(&right);
            let err = w_sum - lw - rw;
            if err < best.1 {
                best = (
                    Stump {
                        feature: f,
                        threshold: 0.5 * (a + b),
                        left: Class::from_index(lc),
                        right: Class::from_index(rc),
                    },
                    err,
                );
            }
        }
    }
    (best.0, best.1.max(0.0) / w_sum)
}

/// SAMME boosting. Stops early when the best stump's weighted error reaches
/// `1 − 1/K`, or after a stump with zero error.
pub fn adaboost_train<X: AsRef<[f64]>>(xs: &[X], labels: &[Class], n_estimators: usize) -> Result<AdaBoostModel> {
    if xs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if xs.len() != labels.len() {
        return Err(Error::LengthMismatch(xs.len(), labels.len()));
    }
    let p = xs[0].as_ref().len();
    if xs.iter().any(|x| x.as_ref().len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: xs.iter().map(|x| x.as_ref().len()).find(|&l| l != p).unwrap_or(p),
        });
    }
    let mut classes: Vec<Class> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let k = classes.len() as f64;

    let sorted: Vec<Vec<usize>> = (0..p)
        .map(|f| {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.sort_by(|&a, &b| xs[a].as_ref()[f].total_cmp(&xs[b].as_ref()[f]));
            idx
        })
        .collect();
    let n = xs.len() as f64;
    let mut w = vec![1.0 / n; xs.len()];
    let mut stages = Vec::new();
    for _ in 0..n_estimators {
        let (stump, err) = best_stump(xs, labels, &w, &sorted);
        if err >= 1.0 - 1.0 / k {
            log::debug!("adaboost: stopping after {} stumps, error {err:.4}", stages.len());
            break;
        }
        let e = err.max(MIN_ERROR);
        let alpha = ((1.0 - e) / e).ln() + (k - 1.0).ln();
        let perfect = err <= MIN_ERROR;
        for (i, x) in xs.iter().enumerate() {
            if stump.predict(x.as_ref()) != labels[i] {
                w[i] *= alpha.exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        stages.push((stump, alpha));
        if perfect {
            break;
        }
    }
    Ok(AdaBoostModel { stages, classes })
}

/// α-weighted vote; ties go to the lower class.
pub fn adaboost_predict(model: &AdaBoostModel, x: &[f64]) -> Class {
    if model.stages.is_empty() {
        return model.classes[0];
    }
    let mut votes = [0.0; N_CLASSES];
    for (stump, alpha) in &model.stages {
        votes[stump.predict(x).index()] += alpha;
    }
    Class::from_index(heaviest(&votes).0)
}
