//! Labeled Gaussian-mixture domains with deterministic sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{stream_rng, ToyError};

/// One labeled input point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: usize,
}

/// A synthetic classification domain: per-class Gaussian clouds, optionally
/// relabeled through a permutation. Train and test splits come from disjoint
/// seed streams.
#[derive(Debug, Clone)]
pub struct SyntheticDomain {
    pub name: String,
    pub input_dim: usize,
    pub num_classes: usize,
    pub class_means: Vec<Vec<f64>>,
    pub class_scales: Vec<f64>,
    pub label_permutation: Option<Vec<usize>>,
    pub seed: u64,
    train: Vec<Sample>,
    test: Vec<Sample>,
}

impl SyntheticDomain {
    pub fn train_samples(&self) -> &[Sample] {
        &self.train
    }

    pub fn test_samples(&self) -> &[Sample] {
        &self.test
    }
}

/// Shape of the generated domain family: one base domain plus `count`
/// shifted variants whose class means move by `shift` and whose noise scale
/// multiplies by `scale_factor`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainsConfig {
    pub count: usize,
    pub separation: f64,
    pub noise: f64,
    pub shift: f64,
    pub scale_factor: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Stress flag: relabel classes in the shifted domains. Defeats naive
    /// averaging by construction, so it is off by default.
    #[serde(default)]
    pub label_permutation: bool,
}

impl DomainsConfig {
    pub fn validate(&self, input_dim: usize, num_classes: usize) -> Result<(), ToyError> {
        let bad = |field: &str, reason: &str| {
            Err(ToyError::InvalidConfig {
                field: format!("domains.{field}"),
                reason: reason.to_string(),
            })
        };
        if self.count == 0 {
            return bad("count", "need at least one shifted domain");
        }
        if input_dim == 0 {
            return bad("input_dim", "must be positive");
        }
        if num_classes < 2 {
            return bad("num_classes", "need at least two classes");
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return bad("separation", "must be positive");
        }
        if !(self.noise.is_finite() && self.noise > 0.0) {
            return bad("noise", "must be positive");
        }
        if !(self.shift.is_finite() && self.shift >= 0.0) {
            return bad("shift", "must be non-negative");
        }
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return bad("scale_factor", "must be positive");
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return bad("train_samples/test_samples", "must be positive");
        }
        Ok(())
    }
}

fn draw_samples(
    rng: &mut rand_chacha::ChaCha8Rng,
    count: usize,
    means: &[Vec<f64>],
    scales: &[f64],
    permutation: Option<&[usize]>,
) -> Vec<Sample> {
    let num_classes = means.len();
    // Classes cycle so every split is balanced up to one sample; training
    // batches are drawn by random index, so batch composition stays random.
    (0..count)
        .map(|i| {
            let class = i % num_classes;
            let x = means[class]
                .iter()
                .map(|&m| m + scales[class] * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let label = permutation.map_or(class, |p| p[class]);
            Sample { x, label }
        })
        .collect()
}

fn build_domain(
    name: String,
    input_dim: usize,
    class_means: Vec<Vec<f64>>,
    class_scales: Vec<f64>,
    label_permutation: Option<Vec<usize>>,
    counts: (usize, usize),
    seed: u64,
) -> SyntheticDomain {
    let mut train_rng = stream_rng(seed, &format!("domain:{name}:train"));
    let mut test_rng = stream_rng(seed, &format!("domain:{name}:test"));
    let train = draw_samples(
        &mut train_rng,
        counts.0,
        &class_means,
        &class_scales,
        label_permutation.as_deref(),
    );
    let test = draw_samples(
        &mut test_rng,
        counts.1,
        &class_means,
        &class_scales,
        label_permutation.as_deref(),
    );
    SyntheticDomain {
        name,
        input_dim,
        num_classes: class_means.len(),
        class_means,
        class_scales,
        label_permutation,
        seed,
        train,
        test,
    }
}

/// Builds the base domain followed by `cfg.count` shifted domains named
/// `shift1..shiftN`. Shifted domains keep the base class structure but
/// translate each class mean by exactly `cfg.shift` in a random direction
/// and rescale the noise, so a base-trained model degrades on them while
/// staying above chance.
pub fn make_domains(
    seed: u64,
    cfg: &DomainsConfig,
    input_dim: usize,
    num_classes: usize,
) -> Result<Vec<SyntheticDomain>, ToyError> {
    cfg.validate(input_dim, num_classes)?;

    let mut structure_rng = stream_rng(seed, "domain-structure");
    let base_means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..input_dim)
                .map(|_| cfg.separation * structure_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let base_scales = vec![cfg.noise; num_classes];

    let mut domains = Vec::with_capacity(cfg.count + 1);
    domains.push(build_domain(
        "base".to_string(),
        input_dim,
        base_means.clone(),
        base_scales,
        None,
        (cfg.train_samples, cfg.test_samples),
        derive_domain_seed(seed, "base"),
    ));

    for k in 1..=cfg.count {
        let name = format!("shift{k}");
        let means = base_means
            .iter()
            .map(|mean| {
                let direction: Vec<f64> = (0..input_dim)
                    .map(|_| structure_rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
                mean.iter()
                    .zip(&direction)
                    .map(|(&m, &d)| {
                        if norm > 0.0 {
                            m + cfg.shift * d / norm
                        } else {
                            m
                        }
                    })
                    .collect()
            })
            .collect();
        let scales = vec![cfg.noise * cfg.scale_factor; num_classes];
        let permutation = if cfg.label_permutation {
            Some(random_rotation_permutation(num_classes, &mut structure_rng))
        } else {
            None
        };
        domains.push(build_domain(
            name.clone(),
            input_dim,
            means,
            scales,
            permutation,
            (cfg.train_samples, cfg.test_samples),
            derive_domain_seed(seed, &name),
        ));
    }
    Ok(domains)
}

fn derive_domain_seed(seed: u64, name: &str) -> u64 {
    super::derive_seed(seed, &format!("domain:{name}"))
}

/// A permutation with no fixed points: rotate by a random non-zero offset.
fn random_rotation_permutation(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let offset = rng.gen_range(1..n);
    (0..n).map(|c| (c + offset) % n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DomainsConfig {
        DomainsConfig {
            count: 2,
            separation: 2.0,
            noise: 1.0,
            shift: 1.5,
            scale_factor: 1.1,
            train_samples: 64,
            test_samples: 32,
            label_permutation: false,
        }
    }

    #[test]
    fn same_seed_reproduces_samples() {
        let a = make_domains(11, &cfg(), 4, 3).unwrap();
        let b = make_domains(11, &cfg(), 4, 3).unwrap();
        assert_eq!(a.len(), 3);
        for (da, db) in a.iter().zip(&b) {
            assert_eq!(da.train_samples(), db.train_samples());
            assert_eq!(da.test_samples(), db.test_samples());
        }
    }

    #[test]
    fn train_and_test_streams_differ() {
        let domains = make_domains(3, &cfg(), 4, 3).unwrap();
        let d = &domains[0];
        assert_ne!(d.train_samples()[0], d.test_samples()[0]);
    }

    #[test]
    fn zero_shift_keeps_generator_parameters() {
        let mut c = cfg();
        c.shift = 0.0;
        c.scale_factor = 1.0;
        let domains = make_domains(5, &c, 4, 3).unwrap();
        assert_eq!(domains[0].class_means, domains[1].class_means);
        assert_eq!(domains[0].class_scales, domains[1].class_scales);
    }

    #[test]
    fn shift_moves_each_mean_by_exactly_shift() {
        let domains = make_domains(9, &cfg(), 6, 4).unwrap();
        for shifted in &domains[1..] {
            for (base_mean, new_mean) in domains[0].class_means.iter().zip(&shifted.class_means)
            {
                let dist: f64 = base_mean
                    .iter()
                    .zip(new_mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!((dist - 1.5).abs() < 1e-9, "moved {dist}");
            }
        }
    }

    #[test]
    fn label_permutation_has_no_fixed_points() {
        let mut c = cfg();
        c.label_permutation = true;
        let domains = make_domains(2, &c, 4, 5).unwrap();
        assert!(domains[0].label_permutation.is_none());
        for d in &domains[1..] {
            let p = d.label_permutation.as_ref().unwrap();
            assert!(p.iter().enumerate().all(|(i, &pi)| i != pi));
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..5).collect::<Vec<_>>());
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(make_domains(0, &cfg(), 0, 3).is_err());
        assert!(make_domains(0, &cfg(), 4, 1).is_err());
        let mut c = cfg();
        c.count = 0;
        assert!(make_domains(0, &c, 4, 3).is_err());
        let mut c = cfg();
        c.noise = 0.0;
        assert!(make_domains(0, &c, 4, 3).is_err());
    }
}
