//! Four-way self-growing one-nearest-neighbour classifier.
//!
//! One pool of labelled windows per class. A test window takes the class of
//! the pool holding its globally nearest member, and joins that pool when the
//! distance is below the pool's smallest within-class distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Class, WindowSample, N_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnSsState {
    /// Flattened windows per class index.
    pub pools: Vec<Vec<Vec<f64>>>,
    /// Minimum pairwise distance within each pool; +inf for a single member.
    #[serde(with = "crate::serde_inf::vec")]
    pub deltas: Vec<f64>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact Euclidean 1-NN by linear scan; ties go to the lower index.
pub fn nearest_neighbor<P: AsRef<[f64]>>(pool: &[P], x: &[f64]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in pool.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                got: x.len(),
            });
        }
        let d = distance(p, x);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.ok_or(Error::EmptyPool)
}

fn min_pairwise(pool: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            best = best.min(distance(&pool[i], &pool[j]));
        }
    }
    best
}

/// Groups source windows into one pool per class. All four classes must be present.
pub fn ss_init(source: &[WindowSample]) -> Result<NnSsState> {
    let mut pools: Vec<Vec<Vec<f64>>> = vec![Vec::new(); N_CLASSES];
    for w in source {
        pools[w.y.index()].push(w.x.clone());
    }
    let missing: Vec<u8> = Class::all().filter(|c| pools[c.index()].is_empty()).map(Class::get).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses(missing));
    }
    let deltas = pools.iter().map(|p| min_pairwise(p)).collect();
    Ok(NnSsState { pools, deltas })
}

/// Classifies windows in order, growing pools as it goes.
pub fn ss_classify_stream<X: AsRef<[f64]>>(state: &mut NnSsState, test: &[X]) -> Result<Vec<Class>> {
    let mut out = Vec::with_capacity(test.len());
    for x in test {
        let x = x.as_ref();
        let mut winner = (0, f64::INFINITY);
        for (c, pool) in state.pools.iter().enumerate() {
            let (_, d) = nearest_neighbor(pool, x)?;
            if d < winner.1 || c == 0 {
                winner = (c, d);
            }
        }
        let (c, d) = winner;
        if d < state.deltas[c] {
            state.pools[c].push(x.to_vec());
            // the newcomer's closest pool-mate is exactly the winning distance
            state.deltas[c] = d;
        }
        out.push(Class::from_index(c));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn win(x: Vec<f64>, class: usize) -> WindowSample {
        WindowSample {
            x,
            y: Class::from_index(class),
            origin_t: 0,
        }
    }

    #[test]
    fn nearest_neighbor_examples() {
        let pool = vec![vec![3.0], vec![7.0]];
        assert_eq!(nearest_neighbor(&pool, &[4.0]).unwrap(), (0, 1.0));
        assert_eq!(nearest_neighbor(&pool, &[5.0]).unwrap(), (0, 2.0));
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(nearest_neighbor(&empty, &[1.0]), Err(Error::EmptyPool)));
    }

    #[test]
    fn nearest_neighbor_matches_linear_scan() {
        let mut rng = seed::rng(0);
        let pool: Vec<Vec<f64>> = (0..1000).map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let d2: Vec<f64> = pool.iter().map(|p| p.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum()).collect();
            let mut best = 0;
            for i in 0..d2.len() {
                if d2[i] < d2[best] {
                    best = i;
                }
            }
            let (i, d) = nearest_neighbor(&pool, &x).unwrap();
            assert_eq!(i, best);
            assert_eq!(d, d2[best].sqrt());
        }
    }

    fn four_pools() -> Vec<WindowSample> {
        vec![
            win(vec![0.0], 0),
            win(vec![2.0], 0),
            win(vec![10.0], 1),
            win(vec![20.0], 2),
            win(vec![23.0], 2),
            win(vec![30.0], 3),
        ]
    }

    #[test]
    fn init_deltas() {
        let s = ss_init(&four_pools()).unwrap();
        assert_eq!(s.deltas[0], 2.0);
        assert_eq!(s.deltas[1], f64::INFINITY);
        assert_eq!(s.deltas[2], 3.0);
        let missing = vec![win(vec![0.0], 0), win(vec![1.0], 2)];
        match ss_init(&missing) {
            Err(Error::MissingClasses(v)) => assert_eq!(v, vec![2, 4]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exact_match_grows_pool() {
        let mut s = ss_init(&four_pools()).unwrap();
        let out = ss_classify_stream(&mut s, &[vec![0.0]]).unwrap();
        assert_eq!(out, vec![Class::from_index(0)]);
        assert_eq!(s.pools[0].len(), 3);
        assert_eq!(s.deltas[0], 0.0);
    }

    #[test]
    fn far_point_is_not_added() {
        let mut s = ss_init(&four_pools()).unwrap();
        let out = ss_classify_stream(&mut s, &[vec![-100.0]]).unwrap();
        assert_eq!(out, vec![Class::from_index(0)]);
        assert_eq!(s.pools[0].len(), 2);
    }

    #[test]
    fn pools_never_shrink_and_serde_keeps_infinity() {
        let mut s = ss_init(&four_pools()).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: NnSsState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let mut rng = seed::rng(1);
        let mut sizes: Vec<usize> = s.pools.iter().map(Vec::len).collect();
        for _ in 0..40 {
            ss_classify_stream(&mut s, &[vec![rng.gen_range(-5.0..35.0)]]).unwrap();
            let now: Vec<usize> = s.pools.iter().map(Vec::len).collect();
            assert!(now.iter().zip(&sizes).all(|(a, b)| a >= b));
            sizes = now;
        }
    }
}
