//! Training-set augmentations: RSSI down-scaling, simulated packet loss and
//! additive Gaussian noise. Undetected (zero) entries are never touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSample, RssiWindow};
use crate::error::{Error, Result};

/// How the configured noise level is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseParam {
    /// `noise_var` is σ².
    #[default]
    Variance,
    /// `noise_var` is σ.
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub scale_factors: Vec<f64>,
    pub drop_prob: f64,
    pub noise_var: f64,
    #[serde(default)]
    pub noise_param: NoiseParam,
    /// Number of drop+noise copies per sample.
    #[serde(default = "one")]
    pub noisy_copies: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_factors: vec![0.9, 0.8],
            drop_prob: 0.1,
            noise_var: 5.0,
            noise_param: NoiseParam::Variance,
            noisy_copies: 1,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self
            .scale_factors
            .iter()
            .find(|f| !(**f > 0.0 && **f <= 1.0))
        {
            return Err(Error::Config(format!("scale factor {f} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::Config(format!(
                "drop_prob {} is not a probability",
                self.drop_prob
            )));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::Config(format!(
                "noise_var {} must be >= 0",
                self.noise_var
            )));
        }
        Ok(())
    }

    fn noise_variance(&self) -> f64 {
        match self.noise_param {
            NoiseParam::Variance => self.noise_var,
            NoiseParam::StdDev => self.noise_var * self.noise_var,
        }
    }
}

pub fn augment_scale(w: &RssiWindow, factor: f64) -> Result<RssiWindow> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor {factor} outside (0, 1]"
        )));
    }
    Ok(w.map_values(|v| v * factor))
}

pub fn augment_drop(w: &RssiWindow, drop_prob: f64, seed: u64) -> Result<RssiWindow> {
    if !(0.0..=1.0).contains(&drop_prob) {
        return Err(Error::InvalidArgument(format!(
            "drop probability {drop_prob}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(drop_with(w, drop_prob, &mut rng))
}

pub fn augment_noise(w: &RssiWindow, noise_var: f64, seed: u64) -> Result<RssiWindow> {
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance {noise_var}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(noise_with(w, noise_var, &mut rng))
}

fn drop_with(w: &RssiWindow, drop_prob: f64, rng: &mut impl Rng) -> RssiWindow {
    w.map_values(|v| {
        if v > 0.0 && rng.random::<f64>() < drop_prob {
            0.0
        } else {
            v
        }
    })
}

fn noise_with(w: &RssiWindow, noise_var: f64, rng: &mut impl Rng) -> RssiWindow {
    let sigma = noise_var.sqrt();
    w.map_values(|v| {
        if v > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        } else {
            v
        }
    })
}

/// Training set plus augmented copies: one per scale factor and
/// `noisy_copies` drop+noise copies. Labels are carried over unchanged.
pub fn augment_dataset(data: &[LabeledSample], cfg: &AugmentConfig) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let copies = 1 + cfg.scale_factors.len() + cfg.noisy_copies;
    let mut out = Vec::with_capacity(data.len() * copies);
    out.extend_from_slice(data);
    for &f in &cfg.scale_factors {
        for s in data {
            out.push(LabeledSample {
                window: augment_scale(&s.window, f)?,
                location: s.location,
            });
        }
    }
    let var = cfg.noise_variance();
    for _ in 0..cfg.noisy_copies {
        for s in data {
            let dropped = drop_with(&s.window, cfg.drop_prob, &mut rng);
            out.push(LabeledSample {
                window: noise_with(&dropped, var, &mut rng),
                location: s.location,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Brand, Location, PhoneModelId};

    fn window(values: Vec<f64>, b: usize, h: usize) -> RssiWindow {
        RssiWindow::new(
            values,
            b,
            h,
            PhoneModelId {
                index: 0,
                brand: Brand::Apple,
            },
            0,
        )
        .unwrap()
    }

    fn dense(n: usize, level: f64) -> RssiWindow {
        window(vec![level; n], n, 1)
    }

    #[test]
    fn scale_examples() {
        let w = window(vec![20.0, 0.0, 7.0, 3.0], 2, 2);
        assert_eq!(augment_scale(&w, 1.0).unwrap(), w);
        assert_eq!(
            augment_scale(&w, 0.5).unwrap().values(),
            &[10.0, 0.0, 3.5, 1.5]
        );
        let zero = window(vec![0.0; 4], 2, 2);
        assert_eq!(augment_scale(&zero, 0.3).unwrap(), zero);
        assert!(augment_scale(&w, 0.0).is_err());
        assert!(augment_scale(&w, 1.5).is_err());
    }

    #[test]
    fn drop_extremes_and_rate() {
        let w = dense(100_000, 30.0);
        assert_eq!(augment_drop(&w, 0.0, 1).unwrap(), w);
        assert!(augment_drop(&w, 1.0, 1)
            .unwrap()
            .values()
            .iter()
            .all(|v| *v == 0.0));
        let d = augment_drop(&w, 0.3, 1).unwrap();
        let frac = d.values().iter().filter(|v| **v == 0.0).count() as f64 / 1e5;
        assert!((frac - 0.3).abs() < 0.01, "{frac}");
        assert_eq!(d, augment_drop(&w, 0.3, 1).unwrap());
    }

    #[test]
    fn noise_moments() {
        let w = dense(100_000, 50.0);
        assert_eq!(augment_noise(&w, 0.0, 2).unwrap(), w);
        let n = augment_noise(&w, 5.0, 2).unwrap();
        let diffs: Vec<f64> = n.values().iter().map(|v| v - 50.0).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 5.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn zeros_never_become_detections() {
        let w = window(vec![0.0, 12.0, 0.0, 0.5, 0.0, 40.0], 3, 2);
        for seed in 0..50 {
            let n = augment_noise(&w, 25.0, seed).unwrap();
            let d = augment_drop(&w, 0.5, seed).unwrap();
            for ((a, b), c) in w.values().iter().zip(n.values()).zip(d.values()) {
                if *a == 0.0 {
                    assert_eq!(*b, 0.0);
                    assert_eq!(*c, 0.0);
                }
                assert!(*b >= 0.0);
            }
        }
    }

    #[test]
    fn dataset_copies_keep_labels() {
        let data: Vec<LabeledSample> = (0..4)
            .map(|k| LabeledSample {
                window: window(vec![10.0 + k as f64, 0.0], 2, 1),
                location: Location::new(k as f64, -(k as f64)),
            })
            .collect();
        let cfg = AugmentConfig::default();
        let out = augment_dataset(&data, &cfg).unwrap();
        assert_eq!(
            out.len(),
            data.len() * (1 + cfg.scale_factors.len() + cfg.noisy_copies)
        );
        for (k, s) in out.iter().enumerate() {
            assert_eq!(s.location, data[k % data.len()].location);
        }
        assert_eq!(out, augment_dataset(&data, &cfg).unwrap());
    }

    #[test]
    fn std_dev_interpretation() {
        let cfg = AugmentConfig {
            noise_var: 3.0,
            noise_param: NoiseParam::StdDev,
            ..Default::default()
        };
        assert_eq!(cfg.noise_variance(), 9.0);
    }
}
