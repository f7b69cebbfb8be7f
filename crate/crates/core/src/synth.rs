//! Synthetic data with planted group unfairness.
//!
//! Record `i` draws `A` from `group_probs`, `Y ~ Bernoulli(pos_rates[A])`,
//! one informative feature `N(signal · Y, 1)` and `noise_features` pure-noise
//! features `N(0, 1)`. Features depend on `A` only through `Y`, so the Bayes
//! classifier thresholds the informative feature at a group-specific cut.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::dist::JointDistribution;
use crate::error::{Error, Result};
use crate::rng::record_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub records: usize,
    pub group_probs: Vec<f64>,
    pub pos_rates: Vec<f64>,
    pub signal: f64,
    pub noise_features: usize,
}

impl Default for PlantedConfig {
    /// Binary groups with positive rates 0.3 and 0.7, so `Δ′ = 0.4`.
    fn default() -> Self {
        PlantedConfig { records: 2000, group_probs: vec![0.3, 0.7], pos_rates: vec![0.3, 0.7], signal: 1.25, noise_features: 1 }
    }
}

impl PlantedConfig {
    /// The population law of `(A, Y)`.
    pub fn distribution(&self) -> Result<JointDistribution> {
        JointDistribution::new(self.group_probs.clone(), self.pos_rates.clone())
    }

    /// Per-group cut on the informative feature used by the Bayes classifier:
    /// `signal / 2 − logit(r_a) / signal`.
    pub fn bayes_cuts(&self) -> Vec<f64> {
        self.pos_rates.iter().map(|&r| self.signal / 2.0 - (r / (1.0 - r)).ln() / self.signal).collect()
    }
}

pub fn planted(cfg: &PlantedConfig, seed: u64) -> Result<TabularDataset> {
    let dist = cfg.distribution()?;
    if !(cfg.signal.is_finite() && cfg.signal > 0.0) {
        return Err(Error::InvalidConfig(format!("signal must be positive, got {}", cfg.signal)));
    }
    if cfg.records == 0 {
        return Err(Error::InvalidConfig("records must be positive".into()));
    }
    let k = dist.k();
    let shifted = |y: u8| Normal::new(cfg.signal * f64::from(y), 1.0).expect("unit variance");
    let mut features = Vec::with_capacity(cfg.records);
    let mut groups = Vec::with_capacity(cfg.records);
    let mut labels = Vec::with_capacity(cfg.records);
    for i in 0..cfg.records {
        let mut rng = record_rng(seed, i as u64);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let a = dist
            .group_probs()
            .iter()
            .position(|&p| {
                acc += p;
                u < acc
            })
            .unwrap_or(k - 1);
        let y = u8::from(rng.random::<f64>() < dist.pos_rates()[a]);
        let mut row = vec![shifted(y).sample(&mut rng)];
        row.extend((0..cfg.noise_features).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        features.push(row);
        groups.push(a);
        labels.push(y);
    }
    let names = (0..=cfg.noise_features).map(|j| format!("x{}", j + 1)).collect();
    TabularDataset::new(names, features, groups, k, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{delta_prime, estimate_distribution};

    #[test]
    fn planted_gap_is_recovered() {
        let cfg = PlantedConfig { records: 50_000, ..PlantedConfig::default() };
        let ds = planted(&cfg, 11).unwrap();
        let est = estimate_distribution(&ds).unwrap();
        // sd of a rate over ~15000 records is about 0.004
        assert!((delta_prime(&est) - 0.4).abs() < 0.02);
        assert!((est.group_probs()[1] - 0.7).abs() < 0.01);
        assert_eq!(ds.num_features(), 2);
    }

    #[test]
    fn reproducible() {
        let cfg = PlantedConfig::default();
        assert_eq!(planted(&cfg, 3).unwrap(), planted(&cfg, 3).unwrap());
        assert_ne!(planted(&cfg, 3).unwrap(), planted(&cfg, 4).unwrap());
    }

    #[test]
    fn cuts_are_ordered() {
        let c = PlantedConfig::default().bayes_cuts();
        // a larger prior pushes the cut left
        assert!(c[1] < c[0]);
        assert!((c[0] + c[1] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = PlantedConfig { signal: 0.0, ..PlantedConfig::default() };
        assert!(planted(&cfg, 0).is_err());
        let cfg = PlantedConfig { group_probs: vec![0.5, 0.6], ..PlantedConfig::default() };
        assert!(planted(&cfg, 0).is_err());
    }
}
