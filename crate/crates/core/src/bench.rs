//! Synthetic five-brand benchmark: two clean labeled brands, three noisy
//! unseen brands, and a comparison of LocNet-only training, translation with
//! statistic similarity, and semi-supervised adaptation.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Brand, PhoneModelId, Run, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::LossWeights;
use crate::simulate::{random_walk, synth_run, Bounds, Environment, PhoneSpec, RunMeta};
use crate::train::{
    continue_scenario3, labeled_windows, train_baseline2, train_scenario2, PhaseConfig,
    ScenarioConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub grid: (usize, usize),
    /// One synthetic phone per brand.
    pub phones: Vec<PhoneSpec>,
    pub run_seconds: usize,
    /// Labeled training seconds per known brand.
    pub labeled_seconds: usize,
    pub val_seconds: usize,
    /// Unlabeled seconds per adapted brand.
    pub unlabeled_seconds: usize,
    /// Test seconds per brand.
    pub test_seconds: usize,
    pub speed: (f64, f64),
    pub training: ScenarioConfig,
    pub seeds: Vec<u64>,
}

fn spec(
    name: &str,
    brand: Brand,
    gain: f64,
    var: f64,
    drop: f64,
    failure_pct: f64,
    dead: f64,
) -> PhoneSpec {
    PhoneSpec {
        name: name.into(),
        brand,
        gain_offset_db: gain,
        noise_var: var,
        per_beacon_drop_rate: drop,
        failure_pct,
        mean_dead_time_s: dead,
        source: "synthetic benchmark phone".into(),
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        let mut training = ScenarioConfig {
            scenario: 3,
            augment: None,
            ..ScenarioConfig::default()
        };
        training.locnet.hidden = 32;
        training.locnet.dense_hidden = 32;
        training.transnet.channels = vec![32, 16, 8];
        training.phase1 = PhaseConfig {
            epochs: 12,
            lr: 2e-3,
            batch_size: 64,
        };
        training.phase2 = PhaseConfig {
            epochs: 4,
            lr: 2e-4,
            batch_size: 64,
        };
        BenchConfig {
            width_m: 30.0,
            height_m: 20.0,
            grid: (4, 3),
            phones: vec![
                spec("clean-a", Brand::Apple, 0.0, 2.0, 0.02, 0.0, 0.0),
                spec("clean-b", Brand::Samsung, -3.0, 4.0, 0.05, 1.0, 1.2),
                spec("noisy-c", Brand::Google, -6.0, 8.0, 0.10, 0.0, 0.0),
                spec("noisy-d", Brand::Huawei, 6.0, 10.0, 0.25, 10.0, 1.5),
                spec("noisy-e", Brand::Xiaomi, -4.0, 20.0, 0.30, 15.0, 3.2),
            ],
            run_seconds: 300,
            labeled_seconds: 3000,
            val_seconds: 300,
            unlabeled_seconds: 1000,
            test_seconds: 600,
            speed: (1.0, 1.2),
            training,
            seeds: vec![0, 1, 2],
        }
    }
}

impl BenchConfig {
    pub fn environment(&self) -> Environment {
        Environment::grid(
            Bounds::new(self.width_m, self.height_m),
            self.grid.0,
            self.grid.1,
        )
    }

    pub fn phone_id(&self, index: usize) -> PhoneModelId {
        PhoneModelId {
            index,
            brand: self.phones[index].brand,
        }
    }

    pub fn unseen_brands(&self) -> BTreeSet<Brand> {
        self.phones
            .iter()
            .map(|p| p.brand)
            .filter(|b| !self.training.known_brands.contains(b))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.run_seconds < self.training.horizon {
            return Err(Error::Config(
                "runs must be at least one window long".into(),
            ));
        }
        let brands: BTreeSet<Brand> = self.phones.iter().map(|p| p.brand).collect();
        if brands.len() != self.phones.len() {
            return Err(Error::Config(
                "benchmark phones must have distinct brands".into(),
            ));
        }
        for p in &self.phones {
            p.profile()
                .map_err(|e| Error::Config(format!("phone '{}': {e}", p.name)))?;
        }
        Ok(())
    }
}

/// Runs of one benchmark replicate, by role.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchData {
    pub train: Vec<Run>,
    pub val: Vec<Run>,
    pub unlabeled: Vec<Run>,
    pub test: Vec<Run>,
}

pub fn generate(cfg: &BenchConfig, seed: u64) -> Result<BenchData> {
    cfg.validate()?;
    let env = cfg.environment();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let known = &cfg.training.known_brands;
    let adapted = cfg.training.adapted_brands();
    let mut data = BenchData {
        train: Vec::new(),
        val: Vec::new(),
        unlabeled: Vec::new(),
        test: Vec::new(),
    };
    let mut start_time = 0i64;
    for (index, phone) in cfg.phones.iter().enumerate() {
        let profile = phone.profile()?;
        let is_known = known.contains(&phone.brand);
        let plan = [
            (
                Split::Train,
                true,
                if is_known { cfg.labeled_seconds } else { 0 },
            ),
            (Split::Val, true, if is_known { cfg.val_seconds } else { 0 }),
            (
                Split::Train,
                false,
                if adapted.contains(&phone.brand) {
                    cfg.unlabeled_seconds
                } else {
                    0
                },
            ),
            (Split::Test, true, cfg.test_seconds),
        ];
        for (split, labeled, seconds) in plan {
            let mut remaining = seconds;
            let mut k = 0;
            while remaining > 0 {
                let len = remaining.min(cfg.run_seconds);
                remaining -= len;
                let walk_seed: u64 = master.random();
                let noise_seed: u64 = master.random();
                let mut traj = random_walk(&env, len, cfg.speed, walk_seed)?;
                traj.start_time = start_time;
                start_time += len as i64 + 60;
                let tag = if labeled { "" } else { "-unlabeled" };
                let meta = RunMeta {
                    id: format!("{}-{split}{tag}-{k}", phone.name),
                    phone: cfg.phone_id(index),
                    split,
                    labeled,
                };
                let run = synth_run(&env, &profile, &traj, noise_seed, meta)?;
                k += 1;
                match (split, labeled) {
                    (Split::Test, _) => data.test.push(run),
                    (Split::Val, _) => data.val.push(run),
                    (_, true) => data.train.push(run),
                    (_, false) => data.unlabeled.push(run),
                }
            }
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub baseline2_unseen: f64,
    pub scenario2_unseen: f64,
    pub scenario2_adapted: f64,
    pub scenario3_adapted: f64,
    /// Control: the second phase run with the unlabeled weight set to zero.
    pub continued_adapted: f64,
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub outcomes: Vec<SeedOutcome>,
    pub baseline2_unseen: f64,
    pub scenario2_unseen: f64,
    pub scenario2_adapted: f64,
    pub scenario3_adapted: f64,
    pub continued_adapted: f64,
}

impl BenchSummary {
    /// Relative reduction of adapted-brand mean AE from the semi-supervised phase.
    pub fn adaptation_gain(&self) -> f64 {
        (self.scenario2_adapted - self.scenario3_adapted) / self.scenario2_adapted
    }

    /// Relative reduction of unseen-brand mean AE against LocNet-only training.
    pub fn translation_gain(&self) -> f64 {
        (self.baseline2_unseen - self.scenario2_unseen) / self.baseline2_unseen
    }
}

fn brand_mean(report: &EvalReport, brands: &BTreeSet<Brand>) -> Result<f64> {
    report
        .mean_for_brands(brands)
        .ok_or_else(|| Error::EmptyData("no test windows for the requested brands".into()))
}

pub fn run_seed(cfg: &BenchConfig, seed: u64) -> Result<SeedOutcome> {
    let data = generate(cfg, seed)?;
    let mut training = cfg.training.clone();
    training.seed = seed;
    let test = labeled_windows(&data.test, training.horizon)?;
    let unseen = cfg.unseen_brands();
    let adapted = training.adapted_brands();

    let (b2, _) = train_baseline2(&data.train, &data.val, &training)?;
    let r_b2 = evaluate(&b2, &test, "locnet-only", Some(2))?;

    let (mut model, mut report) = train_scenario2(&data.train, &data.val, &training)?;
    if let Some(reason) = &report.aborted {
        return Err(Error::NonFinite(reason.clone()));
    }
    let r_s2 = evaluate(&model, &test, "transnet+ssl", Some(2))?;

    let (mut control, mut control_report) = (model.clone(), report.clone());
    let supervised_only = ScenarioConfig {
        weights: LossWeights {
            w_u: 0.0,
            ..training.weights
        },
        ..training.clone()
    };
    continue_scenario3(
        &mut control,
        &mut control_report,
        &data.train,
        &data.val,
        &data.unlabeled,
        &supervised_only,
    )?;
    let r_control = evaluate(&control, &test, "transnet+ssl continued", Some(2))?;

    continue_scenario3(
        &mut model,
        &mut report,
        &data.train,
        &data.val,
        &data.unlabeled,
        &training,
    )?;
    if let Some(reason) = &report.aborted {
        return Err(Error::NonFinite(reason.clone()));
    }
    let r_s3 = evaluate(&model, &test, "transnet+ssl semi-supervised", Some(3))?;

    Ok(SeedOutcome {
        seed,
        baseline2_unseen: brand_mean(&r_b2, &unseen)?,
        scenario2_unseen: brand_mean(&r_s2, &unseen)?,
        scenario2_adapted: brand_mean(&r_s2, &adapted)?,
        scenario3_adapted: brand_mean(&r_s3, &adapted)?,
        continued_adapted: brand_mean(&r_control, &adapted)?,
        reports: vec![r_b2, r_s2, r_s3, r_control],
    })
}

pub fn run(cfg: &BenchConfig) -> Result<BenchSummary> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one seed".into()));
    }
    let outcomes = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let mean =
        |f: fn(&SeedOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / outcomes.len() as f64;
    Ok(BenchSummary {
        baseline2_unseen: mean(|o| o.baseline2_unseen),
        scenario2_unseen: mean(|o| o.scenario2_unseen),
        scenario2_adapted: mean(|o| o.scenario2_adapted),
        scenario3_adapted: mean(|o| o.scenario3_adapted),
        continued_adapted: mean(|o| o.continued_adapted),
        outcomes,
    })
}
