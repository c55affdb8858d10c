//! Diagonal-covariance Gaussian mixture fitted by expectation-maximisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            k: 2,
            max_iter: 200,
            tol: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub params: GmmParams,
    /// Total log-likelihood after initialisation and after every EM iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GmmParams {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// `ln π_j + ln N(x | μ_j, diag σ²_j)` for every component.
    fn joint_log_density(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|j| {
                let quad: f64 = x
                    .iter()
                    .zip(&self.means[j])
                    .zip(&self.variances[j])
                    .map(|((x, m), v)| (x - m) * (x - m) / v + v.ln() + LN_2PI)
                    .sum();
                self.weights[j].ln() - 0.5 * quad
            })
            .collect()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gmm input"));
        }
        Ok(())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Responsibilities of each component for `x`, via log-sum-exp.
pub fn gmm_posterior(params: &GmmParams, x: &[f64]) -> Result<Vec<f64>> {
    params.check_point(x)?;
    let lj = params.joint_log_density(x);
    let lse = log_sum_exp(&lj);
    Ok(lj.iter().map(|l| (l - lse).exp()).collect())
}

/// Hard assignment to the most responsible component; ties go to the lower id.
pub fn gmm_assign<X: AsRef<[f64]>>(params: &GmmParams, xs: &[X]) -> Result<Vec<usize>> {
    xs.iter()
        .map(|x| {
            let x = x.as_ref();
            params.check_point(x)?;
            let lj = params.joint_log_density(x);
            let mut best = 0;
            for j in 1..lj.len() {
                if lj[j] > lj[best] {
                    best = j;
                }
            }
            Ok(best)
        })
        .collect()
}

pub fn gmm_log_likelihood<X: AsRef<[f64]>>(params: &GmmParams, xs: &[X]) -> Result<f64> {
    let mut total = 0.0;
    for x in xs {
        params.check_point(x.as_ref())?;
        total += log_sum_exp(&params.joint_log_density(x.as_ref()));
    }
    Ok(total)
}

/// Fits a `k`-component mixture. Seeding picks one random point and then
/// repeatedly the point farthest from the chosen centres; EM then starts from
/// uniform weights and the pooled per-dimension variance.
pub fn gmm_fit<X: AsRef<[f64]>>(xs: &[X], config: &GmmConfig) -> Result<GmmFit> {
    let k = config.k;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if xs.len() < k {
        return Err(Error::TooFewPoints {
            need: k,
            got: xs.len(),
        });
    }
    let p = xs[0].as_ref().len();
    if p == 0 {
        return Err(Error::InvalidArgument("points must have at least one dimension".into()));
    }
    for x in xs {
        let x = x.as_ref();
        if x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gmm input"));
        }
    }
    let n = xs.len();

    let mut rng = seed::rng(config.seed);
    let mut centres = vec![rng.gen_range(0..n)];
    let mut min_d2: Vec<f64> = xs.iter().map(|x| sq_dist(x.as_ref(), xs[centres[0]].as_ref())).collect();
    while centres.len() < k {
        let mut far = 0;
        for i in 1..n {
            if min_d2[i] > min_d2[far] {
                far = i;
            }
        }
        centres.push(far);
        for (i, d) in min_d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(xs[i].as_ref(), xs[far].as_ref()));
        }
    }

    let mut mean = vec![0.0; p];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x.as_ref()) {
            *m += v / n as f64;
        }
    }
    let mut var = vec![0.0; p];
    for x in xs {
        for ((s, v), m) in var.iter_mut().zip(x.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    var.iter_mut().for_each(|v| *v = v.max(VARIANCE_FLOOR));

    let mut params = GmmParams {
        k,
        weights: vec![1.0 / k as f64; k],
        means: centres.iter().map(|&c| xs[c].as_ref().to_vec()).collect(),
        variances: vec![var; k],
    };

    let mut resp = vec![vec![0.0; k]; n];
    let mut ll = e_step(&params, xs, &mut resp);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        m_step(&mut params, xs, &resp);
        let next = e_step(&params, xs, &mut resp);
        trace.push(next);
        iterations += 1;
        let gain = next - ll;
        ll = next;
        if gain < config.tol {
            converged = true;
            break;
        }
    }
    log::debug!("gmm k={k}: {iterations} iterations, log-likelihood {ll:.6}");
    Ok(GmmFit {
        params,
        trace,
        iterations,
        converged,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn e_step<X: AsRef<[f64]>>(params: &GmmParams, xs: &[X], resp: &mut [Vec<f64>]) -> f64 {
    let mut ll = 0.0;
    for (x, r) in xs.iter().zip(resp.iter_mut()) {
        let lj = params.joint_log_density(x.as_ref());
        let lse = log_sum_exp(&lj);
        for (rj, l) in r.iter_mut().zip(&lj) {
            *rj = (l - lse).exp();
        }
        ll += lse;
    }
    ll
}

fn m_step<X: AsRef<[f64]>>(params: &mut GmmParams, xs: &[X], resp: &[Vec<f64>]) {
    let n = xs.len() as f64;
    for j in 0..params.k {
        let nk: f64 = resp.iter().map(|r| r[j]).sum();
        params.weights[j] = (nk / n).max(f64::MIN_POSITIVE);
        if nk <= 0.0 {
            continue;
        }
        let mean = &mut params.means[j];
        mean.iter_mut().for_each(|m| *m = 0.0);
        for (x, r) in xs.iter().zip(resp) {
            for (m, v) in mean.iter_mut().zip(x.as_ref()) {
                *m += r[j] * v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let var = &mut params.variances[j];
        var.iter_mut().for_each(|v| *v = 0.0);
        for (x, r) in xs.iter().zip(resp) {
            for ((s, v), m) in var.iter_mut().zip(x.as_ref()).zip(mean.iter()) {
                *s += r[j] * (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / nk).max(VARIANCE_FLOOR));
    }
    let total: f64 = params.weights.iter().sum();
    params.weights.iter_mut().for_each(|w| *w /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn two_blobs(n_each: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seed::rng(seed);
        let a = Normal::new(-5.0, 1.0).unwrap();
        let b = Normal::new(5.0, 1.0).unwrap();
        let mut xs = Vec::new();
        let mut truth = Vec::new();
        for i in 0..2 * n_each {
            if i % 2 == 0 {
                xs.push(vec![a.sample(&mut rng)]);
                truth.push(0);
            } else {
                xs.push(vec![b.sample(&mut rng)]);
                truth.push(1);
            }
        }
        (xs, truth)
    }

    fn cfg(k: usize, seed: u64) -> GmmConfig {
        GmmConfig {
            k,
            max_iter: 500,
            tol: 1e-10,
            seed,
        }
    }

    #[test]
    fn recovers_separated_means() {
        let (xs, truth) = two_blobs(100, 3);
        let fit = gmm_fit(&xs, &cfg(2, 11)).unwrap();
        let mut means: Vec<f64> = fit.params.means.iter().map(|m| m[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 5.0).abs() < 0.3, "{means:?}");
        assert!((means[1] - 5.0).abs() < 0.3, "{means:?}");

        let assign = gmm_assign(&fit.params, &xs).unwrap();
        let low = if fit.params.means[0][0] < 0.0 { 0 } else { 1 };
        let agree = assign
            .iter()
            .zip(&truth)
            .filter(|(a, t)| (**a == low) == (**t == 0))
            .count();
        assert!(agree as f64 / xs.len() as f64 > 0.95);
    }

    #[test]
    fn single_component_closed_form() {
        let xs = vec![vec![1.0, 10.0], vec![2.0, 10.0], vec![6.0, 10.0]];
        let fit = gmm_fit(&xs, &cfg(1, 0)).unwrap();
        let p = &fit.params;
        assert!((p.weights[0] - 1.0).abs() < 1e-12);
        assert!((p.means[0][0] - 3.0).abs() < 1e-12);
        assert!((p.variances[0][0] - 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.variances[0][1], VARIANCE_FLOOR);
        assert_eq!(gmm_posterior(p, &[0.0, 0.0]).unwrap(), vec![1.0]);
        assert_eq!(gmm_assign(p, &[vec![5.0, 5.0]]).unwrap(), vec![0]);
    }

    #[test]
    fn identical_points_engage_floor() {
        let xs = vec![vec![2.5, -1.0]; 50];
        let fit = gmm_fit(&xs, &cfg(2, 4)).unwrap();
        for v in fit.params.variances.iter().flatten() {
            assert_eq!(*v, VARIANCE_FLOOR);
        }
        assert!(fit.trace.iter().all(|l| l.is_finite()));
        assert!(fit.params.weights.iter().all(|w| *w > 0.0));
        let s: f64 = fit.params.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        let xs = vec![vec![1.0]];
        assert!(matches!(gmm_fit(&xs, &cfg(2, 0)), Err(Error::TooFewPoints { need: 2, got: 1 })));
        let xs = vec![vec![1.0], vec![f64::NAN]];
        assert!(matches!(gmm_fit(&xs, &cfg(1, 0)), Err(Error::NonFinite(_))));
        let fit = gmm_fit(&[vec![0.0], vec![1.0]], &cfg(1, 0)).unwrap();
        assert!(matches!(
            gmm_posterior(&fit.params, &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(gmm_log_likelihood(&fit.params, &[vec![f64::INFINITY]]).is_err());
    }

    fn symmetric() -> GmmParams {
        GmmParams {
            k: 2,
            weights: vec![0.5, 0.5],
            means: vec![vec![-10.0, 0.0], vec![10.0, 0.0]],
            variances: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        }
    }

    #[test]
    fn posterior_examples() {
        let p = symmetric();
        let r = gmm_posterior(&p, &[-10.0, 0.0]).unwrap();
        // log-odds at the component-0 mean is 2·10·10/1 = 200 nats
        assert!(r[0] > 0.99);
        let r = gmm_posterior(&p, &[0.0, 3.0]).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-6 && (r[1] - 0.5).abs() < 1e-6);
        assert_eq!(gmm_assign(&p, &[vec![0.0, 3.0]]).unwrap(), vec![0]);
    }

    #[test]
    fn log_likelihood_examples() {
        let p = GmmParams {
            k: 1,
            weights: vec![1.0],
            means: vec![vec![0.0; 3]],
            variances: vec![vec![1.0; 3]],
        };
        let ll = gmm_log_likelihood(&p, &[vec![0.0; 3]]).unwrap();
        assert!((ll + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

        let (xs, _) = two_blobs(50, 9);
        let fit = gmm_fit(&xs, &cfg(2, 1)).unwrap();
        let base = gmm_log_likelihood(&fit.params, &xs).unwrap() / xs.len() as f64;
        let mut with_outlier = xs.clone();
        with_outlier.push(vec![1e3]);
        let worse = gmm_log_likelihood(&fit.params, &with_outlier).unwrap() / with_outlier.len() as f64;
        assert!(worse < base);
    }

    #[test]
    fn trace_is_monotone_and_deterministic() {
        let (xs, _) = two_blobs(80, 5);
        let a = gmm_fit(&xs, &cfg(3, 2)).unwrap();
        let b = gmm_fit(&xs, &cfg(3, 2)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        for w in a.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        let last = *a.trace.last().unwrap();
        assert!((gmm_log_likelihood(&a.params, &xs).unwrap() - last).abs() < 1e-9);
    }

    #[test]
    fn posterior_permutation_equivariant() {
        let (xs, _) = two_blobs(40, 6);
        let fit = gmm_fit(&xs, &cfg(2, 0)).unwrap();
        let p = fit.params;
        let swapped = GmmParams {
            k: 2,
            weights: vec![p.weights[1], p.weights[0]],
            means: vec![p.means[1].clone(), p.means[0].clone()],
            variances: vec![p.variances[1].clone(), p.variances[0].clone()],
        };
        for x in xs.iter().take(20) {
            let a = gmm_posterior(&p, x).unwrap();
            let b = gmm_posterior(&swapped, x).unwrap();
            assert!((a[0] - b[1]).abs() < 1e-12 && (a[1] - b[0]).abs() < 1e-12);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
