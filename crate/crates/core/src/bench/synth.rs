//! Seeded two-domain generator with latent sub-groups, covariate shift and
//! label shift.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Class, SensorFrame, SequenceDataset, N_CLASSES};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDomainSpec {
    pub source_priors: Vec<f64>,
    pub target_priors: Vec<f64>,
    /// One mean vector per class; all of the same length `d`.
    pub class_means: Vec<Vec<f64>>,
    /// Noise standard deviation per class.
    pub class_scales: Vec<f64>,
    /// Added to every target frame.
    pub covariate_shift: Vec<f64>,
    pub source_len: usize,
    pub target_len: usize,
    pub source_subgroups: usize,
    pub target_subgroups: usize,
    /// Target sub-group `g` shares the offset and orientation of global group
    /// `g + target_first_subgroup`.
    pub target_first_subgroup: usize,
    /// Distance between consecutive sub-group offsets along the diagonal.
    pub subgroup_separation: f64,
    /// Odd sub-groups see the class means negated.
    pub mirror_subgroups: bool,
    /// Labels come in runs of this many frames.
    pub block_len: usize,
    /// AR(1) coefficient of the per-dimension noise.
    pub ar: f64,
    pub seed: u64,
}

impl Default for SyntheticDomainSpec {
    fn default() -> Self {
        let d = 4;
        SyntheticDomainSpec {
            source_priors: vec![0.111, 0.306, 0.139, 0.444],
            target_priors: vec![0.063, 0.046, 0.040, 0.851],
            class_means: (0..N_CLASSES).map(|c| (0..d).map(|j| if j == c { 2.0 } else { 0.0 }).collect()).collect(),
            class_scales: vec![1.0; N_CLASSES],
            covariate_shift: vec![0.5; d],
            source_len: 2000,
            target_len: 2000,
            source_subgroups: 2,
            target_subgroups: 1,
            target_first_subgroup: 0,
            subgroup_separation: 5.0,
            mirror_subgroups: false,
            block_len: 20,
            ar: 0.0,
            seed: 0,
        }
    }
}

/// A generated domain together with the latent sub-group of every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomain {
    pub dataset: SequenceDataset,
    pub subgroups: Vec<usize>,
}

fn check_simplex(p: &[f64]) -> Result<()> {
    let ok = p.len() == N_CLASSES && p.iter().all(|v| v.is_finite() && *v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-6;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidSimplex(p.to_vec()))
    }
}

impl SyntheticDomainSpec {
    pub fn dim(&self) -> usize {
        self.class_means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.source_priors)?;
        check_simplex(&self.target_priors)?;
        let d = self.dim();
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if d == 0 || self.class_means.len() != N_CLASSES || self.class_means.iter().any(|m| m.len() != d) {
            return bad("class_means must hold four vectors of one non-zero length");
        }
        if self.class_scales.len() != N_CLASSES || self.class_scales.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return bad("class_scales must hold four positive values");
        }
        if self.covariate_shift.len() != d {
            return bad("covariate_shift length must match the feature dimension");
        }
        if self.source_len < 2 || self.target_len < 2 {
            return bad("domain lengths must be at least 2");
        }
        if self.source_subgroups == 0 || self.target_subgroups == 0 || self.block_len == 0 {
            return bad("sub-group counts and block_len must be at least 1");
        }
        if !(self.ar > -1.0 && self.ar < 1.0) {
            return bad("ar must lie in (-1, 1)");
        }
        Ok(())
    }
}

/// Per-class counts summing to `n`, by the largest-remainder rule (ties to
/// the lower class).
pub fn stratified_counts(priors: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = priors.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..priors.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(short) {
        counts[c] += 1;
    }
    counts
}

struct Domain<'a> {
    name: &'a str,
    priors: &'a [f64],
    len: usize,
    groups: usize,
    first_group: usize,
    shift: Option<&'a [f64]>,
}

fn generate(spec: &SyntheticDomainSpec, dom: &Domain<'_>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<SyntheticDomain> {
    let d = spec.dim();
    // (class, group, length) runs in shuffled order
    let mut blocks = Vec::new();
    for (c, &n) in stratified_counts(dom.priors, dom.len).iter().enumerate() {
        let mut left = n;
        let mut j = 0;
        while left > 0 {
            let len = left.min(spec.block_len);
            blocks.push((c, dom.first_group + j % dom.groups, len));
            left -= len;
            j += 1;
        }
    }
    blocks.shuffle(rng);

    let diag = 1.0 / (d as f64).sqrt();
    let innov = (1.0 - spec.ar * spec.ar).sqrt();
    let mut noise = vec![0.0; d];
    let mut frames = Vec::with_capacity(dom.len);
    let mut subgroups = Vec::with_capacity(dom.len);
    for (c, g, len) in blocks {
        let sign = if spec.mirror_subgroups && g % 2 == 1 { -1.0 } else { 1.0 };
        for _ in 0..len {
            let features = (0..d)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(rng);
                    noise[j] = spec.ar * noise[j] + innov * z;
                    let shift = dom.shift.map_or(0.0, |s| s[j]);
                    spec.subgroup_separation * g as f64 * diag + sign * spec.class_means[c][j] + spec.class_scales[c] * noise[j] + shift
                })
                .collect();
            frames.push(SensorFrame {
                t: frames.len(),
                features,
                label: Class::from_index(c),
            });
            subgroups.push(g);
        }
    }
    let names = (1..=d).map(|j| format!("s{j}")).collect();
    Ok(SyntheticDomain {
        dataset: SequenceDataset::new(dom.name, names, frames)?,
        subgroups,
    })
}

/// Source and target domains with their latent sub-group labels.
pub fn synthesize_with_groups(spec: &SyntheticDomainSpec) -> Result<(SyntheticDomain, SyntheticDomain)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let source = generate(
        spec,
        &Domain {
            name: "source",
            priors: &spec.source_priors,
            len: spec.source_len,
            groups: spec.source_subgroups,
            first_group: 0,
            shift: None,
        },
        &mut rng,
    )?;
    let target = generate(
        spec,
        &Domain {
            name: "target",
            priors: &spec.target_priors,
            len: spec.target_len,
            groups: spec.target_subgroups,
            first_group: spec.target_first_subgroup,
            shift: Some(&spec.covariate_shift),
        },
        &mut rng,
    )?;
    Ok((source, target))
}

pub fn synthesize_domains(spec: &SyntheticDomainSpec) -> Result<(SequenceDataset, SequenceDataset)> {
    let (s, t) = synthesize_with_groups(spec)?;
    Ok((s.dataset, t.dataset))
}

/// Writes a dataset as a headed CSV with a trailing `label` column.
pub fn write_dataset_csv(ds: &SequenceDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = ds.feature_names.clone();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for f in &ds.frames {
        let mut row: Vec<String> = f.features.iter().map(|v| v.to_string()).collect();
        row.push(f.label.get().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{gmm_assign, gmm_fit, GmmConfig};
    use crate::ingest::load_csv;

    fn fractions(ds: &SequenceDataset) -> Vec<f64> {
        let mut counts = [0usize; N_CLASSES];
        for f in &ds.frames {
            counts[f.label.index()] += 1;
        }
        counts.iter().map(|&c| c as f64 / ds.len() as f64).collect()
    }

    #[test]
    fn empirical_priors_track_spec() {
        let spec = SyntheticDomainSpec {
            source_len: 2160,
            ..Default::default()
        };
        let (s, t) = synthesize_domains(&spec).unwrap();
        for (f, p) in fractions(&s).iter().zip(&spec.source_priors) {
            assert!((f - p).abs() <= 0.03, "{f} vs {p}");
        }
        let long = SyntheticDomainSpec {
            source_len: 10_000,
            target_len: 10_000,
            ..spec
        };
        let (s, t2) = synthesize_domains(&long).unwrap();
        for (f, p) in fractions(&s).iter().zip(&long.source_priors) {
            assert!((f - p).abs() <= 0.02);
        }
        for (f, p) in fractions(&t2).iter().zip(&long.target_priors) {
            assert!((f - p).abs() <= 0.02);
        }
        assert_eq!(t.len(), 2000);
    }

    #[test]
    fn largest_remainder_counts() {
        assert_eq!(stratified_counts(&[0.111, 0.306, 0.139, 0.444], 2160), vec![240, 661, 300, 959]);
        assert_eq!(stratified_counts(&[0.25; 4], 10), vec![3, 3, 2, 2]);
        assert_eq!(stratified_counts(&[1.0, 0.0, 0.0, 0.0], 7), vec![7, 0, 0, 0]);
    }

    #[test]
    fn null_shift_domains_match() {
        let spec = SyntheticDomainSpec {
            source_priors: vec![0.25; 4],
            target_priors: vec![0.25; 4],
            covariate_shift: vec![0.0; 4],
            source_subgroups: 1,
            source_len: 20_000,
            target_len: 20_000,
            seed: 3,
            ..Default::default()
        };
        let (s, t) = synthesize_domains(&spec).unwrap();
        for j in 0..4 {
            let col = |ds: &SequenceDataset| -> (f64, f64) {
                let v: Vec<f64> = ds.frames.iter().map(|f| f.features[j]).collect();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
                (m, var.sqrt())
            };
            let ((ms, ss), (mt, _)) = (col(&s), col(&t));
            assert!((ms - mt).abs() < 0.1 * ss, "dim {j}: {ms} vs {mt}");
        }
    }

    #[test]
    fn gmm_recovers_separated_subgroups() {
        let spec = SyntheticDomainSpec {
            class_means: vec![vec![0.0; 3]; 4],
            covariate_shift: vec![0.0; 3],
            subgroup_separation: 5.0,
            seed: 4,
            ..Default::default()
        };
        let (s, _) = synthesize_with_groups(&spec).unwrap();
        let xs: Vec<&[f64]> = s.dataset.frames.iter().map(|f| f.features.as_slice()).collect();
        let fit = gmm_fit(&xs, &GmmConfig { k: 2, ..Default::default() }).unwrap();
        let assign = gmm_assign(&fit.params, &xs).unwrap();
        let agree = assign.iter().zip(&s.subgroups).filter(|(a, g)| a == g).count();
        let purity = agree.max(xs.len() - agree) as f64 / xs.len() as f64;
        assert!(purity > 0.95, "purity {purity}");
    }

    #[test]
    fn seeded_and_reproducible() {
        let spec = SyntheticDomainSpec {
            ar: 0.6,
            mirror_subgroups: true,
            ..Default::default()
        };
        assert_eq!(synthesize_domains(&spec).unwrap(), synthesize_domains(&spec).unwrap());
        let other = SyntheticDomainSpec { seed: 1, ..spec.clone() };
        assert_ne!(synthesize_domains(&spec).unwrap().0, synthesize_domains(&other).unwrap().0);
    }

    #[test]
    fn rejects_bad_priors() {
        let spec = SyntheticDomainSpec {
            target_priors: vec![0.5, 0.5, 0.5, 0.0],
            ..Default::default()
        };
        assert!(matches!(synthesize_domains(&spec), Err(Error::InvalidSimplex(_))));
        let spec = SyntheticDomainSpec {
            source_len: 1,
            ..Default::default()
        };
        assert!(matches!(synthesize_domains(&spec), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn csv_round_trip() {
        let (s, _) = synthesize_domains(&SyntheticDomainSpec {
            source_len: 50,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("source.csv");
        write_dataset_csv(&s, &path).unwrap();
        let back = load_csv(&path, "label").unwrap();
        assert_eq!(back.feature_names, s.feature_names);
        assert_eq!(back.labels(), s.labels());
        for (a, b) in back.frames.iter().zip(&s.frames) {
            assert_eq!(a.features, b.features);
        }
    }
}
