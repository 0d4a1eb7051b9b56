//! Scenario objectives and training loops.
//!
//! Training data is organized into units of one window or two consecutive
//! windows of the same run, so the motion-smoothness term always has a
//! partner. An epoch is one pass over all windows.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, AugmentConfig};
use crate::data::{
    make_windows, Brand, LabeledSample, Location, RssiWindow, Run, Split, UnlabeledSample,
    DEFAULT_HORIZON,
};
use crate::error::{Error, Result};
use crate::eval::absolute_error;
use crate::model::{
    loss_loc_var, loss_ps_var, window_input, LocNetConfig, Localizer, LossWeights, ModelConfig,
    OutputScaling, SslOptions, SslTerm, TemporalSmoothness, TransNetConfig, INPUT_SCALE,
    TRANSNET_PREFIX,
};
use crate::nn::{AdamConfig, Tape, Var};
use crate::stats::{compute_stat_matrix, StatMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl PhaseConfig {
    pub fn supervised() -> Self {
        PhaseConfig {
            epochs: 50,
            lr: 1e-4,
            batch_size: 256,
        }
    }

    pub fn semi_supervised() -> Self {
        PhaseConfig {
            epochs: 20,
            lr: 1e-5,
            batch_size: 256,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be >= 0",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: u8,
    pub known_brands: BTreeSet<Brand>,
    /// Brand whose statistics the translator targets.
    pub target_brand: Brand,
    /// Brands whose unlabeled runs drive the semi-supervised phase; empty
    /// means every brand outside `known_brands`.
    pub unlabeled_brands: BTreeSet<Brand>,
    pub weights: LossWeights,
    pub ssl_weight_cap: f64,
    pub ssl_mask: bool,
    pub locnet: LocNetConfig,
    pub transnet: TransNetConfig,
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub horizon: usize,
    pub augment: Option<AugmentConfig>,
    /// Fixed output de-normalization; fitted on training labels when absent.
    pub output_scaling: Option<OutputScaling>,
    /// Keep TransNet at its initial parameters.
    pub freeze_transnet: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: 2,
            known_brands: [Brand::Apple, Brand::Samsung].into(),
            target_brand: Brand::Apple,
            unlabeled_brands: BTreeSet::new(),
            weights: LossWeights::default(),
            ssl_weight_cap: SslOptions::default().max_log_weight,
            ssl_mask: true,
            locnet: LocNetConfig::default(),
            transnet: TransNetConfig::default(),
            phase1: PhaseConfig::supervised(),
            phase2: PhaseConfig::semi_supervised(),
            horizon: DEFAULT_HORIZON,
            augment: Some(AugmentConfig::default()),
            output_scaling: None,
            freeze_transnet: false,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.scenario) {
            return Err(Error::Config(format!(
                "scenario must be 1, 2 or 3, got {}",
                self.scenario
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        self.weights.validate()?;
        self.phase1.validate()?;
        self.phase2.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if self.scenario >= 2 {
            if self.known_brands.is_empty() || self.known_brands.len() >= Brand::ALL.len() {
                return Err(Error::Config(
                    "known_brands must be a non-empty proper subset of brands".into(),
                ));
            }
            if !self.known_brands.contains(&self.target_brand) {
                return Err(Error::Config(format!(
                    "target brand {} is not among the known brands",
                    self.target_brand
                )));
            }
            if let Some(b) = self
                .unlabeled_brands
                .intersection(&self.known_brands)
                .next()
            {
                return Err(Error::Config(format!(
                    "unlabeled brand {b} is also a known brand"
                )));
            }
        }
        Ok(())
    }

    pub fn ssl_options(&self, weights: &LossWeights) -> SslOptions {
        SslOptions {
            tau: weights.tau,
            max_log_weight: self.ssl_weight_cap,
            mask_unsupported: self.ssl_mask,
        }
    }

    /// Brands adapted to in the semi-supervised phase.
    pub fn adapted_brands(&self) -> BTreeSet<Brand> {
        if self.unlabeled_brands.is_empty() {
            Brand::ALL
                .iter()
                .copied()
                .filter(|b| !self.known_brands.contains(b))
                .collect()
        } else {
            self.unlabeled_brands.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mean_ae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub scenario: u8,
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
    /// Windows that had no consecutive partner for the smoothness term.
    pub unpaired_windows: usize,
    pub warnings: Vec<String>,
    /// Reason training stopped early, if it did.
    pub aborted: Option<String>,
    pub checkpoint: Option<String>,
    pub wall_clock_s: f64,
}

impl TrainReport {
    pub fn new(scenario: u8) -> Self {
        TrainReport {
            scenario,
            epochs: Vec::new(),
            steps: 0,
            unpaired_windows: 0,
            warnings: Vec::new(),
            aborted: None,
            checkpoint: None,
            wall_clock_s: 0.0,
        }
    }

    /// Copy with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainReport {
        TrainReport {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}

/// Fails if any run is tagged as test data.
pub fn ensure_no_test_runs(stage: &str, runs: &[Run]) -> Result<()> {
    match runs.iter().find(|r| r.split == Split::Test) {
        Some(r) => Err(Error::TestDataAccess {
            stage: stage.into(),
            run: r.id.clone(),
        }),
        None => Ok(()),
    }
}

/// Fails if any window originates from a test-tagged run.
pub fn ensure_no_test_windows<'a>(
    stage: &str,
    windows: impl IntoIterator<Item = &'a RssiWindow>,
) -> Result<()> {
    match windows.into_iter().find(|w| w.split == Split::Test) {
        Some(w) => Err(Error::TestDataAccess {
            stage: stage.into(),
            run: w.run_id.to_string(),
        }),
        None => Ok(()),
    }
}

/// Labeled windows of every run, in run order.
pub fn labeled_windows(runs: &[Run], horizon: usize) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for run in runs {
        let w = make_windows(run, horizon)?;
        out.extend(w.labeled().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "run {} has no locations but labeled data is required",
                run.id
            ))
        })?);
    }
    Ok(out)
}

/// Windows of every run with labels dropped.
pub fn unlabeled_windows(runs: &[Run], horizon: usize) -> Result<Vec<UnlabeledSample>> {
    let mut out = Vec::new();
    for run in runs {
        out.extend(make_windows(run, horizon)?.unlabeled());
    }
    Ok(out)
}

pub fn runs_of_brands(runs: &[Run], brands: &BTreeSet<Brand>) -> Vec<Run> {
    runs.iter()
        .filter(|r| brands.contains(&r.phone.brand))
        .cloned()
        .collect()
}

/// Statistic matrix of one brand from its raw per-second training readings.
pub fn brand_stat_matrix(runs: &[Run], brand: Brand) -> Result<StatMatrix> {
    ensure_no_test_runs("statistic matrix", runs)?;
    let readings = runs
        .iter()
        .filter(|r| r.phone.brand == brand)
        .flat_map(|r| r.readings.iter().map(Vec::as_slice));
    compute_stat_matrix(readings, brand)
}

fn consecutive(a: &RssiWindow, b: &RssiWindow) -> bool {
    a.run_id == b.run_id && b.end_time == a.end_time + 1
}

/// Greedy split of a window sequence into consecutive pairs and leftovers.
fn build_units(windows: &[&RssiWindow]) -> (Vec<Vec<usize>>, usize) {
    let mut units = Vec::new();
    let mut unpaired = 0;
    let mut i = 0;
    while i < windows.len() {
        if i + 1 < windows.len() && consecutive(windows[i], windows[i + 1]) {
            units.push(vec![i, i + 1]);
            i += 2;
        } else {
            units.push(vec![i]);
            unpaired += 1;
            i += 1;
        }
    }
    (units, unpaired)
}

/// Units grouped into batches of at most `batch_size` windows.
fn batches(units: &[Vec<usize>], order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    let mut count = 0;
    for &u in order {
        let n = units[u].len();
        if count + n > batch_size && !current.is_empty() {
            out.push(std::mem::take(&mut current));
            count = 0;
        }
        current.push(u);
        count += n;
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn add_term(tape: &mut Tape, acc: Option<Var>, term: Var, weight: f64) -> Result<Option<Var>> {
    let t = if weight == 1.0 {
        term
    } else {
        tape.scale(term, weight)
    };
    Ok(Some(match acc {
        Some(a) => tape.add(a, t)?,
        None => t,
    }))
}

/// Shared pieces of one objective evaluation.
struct Objective<'a> {
    model: &'a Localizer,
    weights: LossWeights,
    stat: Option<&'a StatMatrix>,
    ssl: SslOptions,
}

impl<'a> Objective<'a> {
    /// Loss of one unit; `labels` is `None` for unlabeled windows, in which
    /// case the localization term is structurally absent.
    fn unit_loss(
        &self,
        tape: &mut Tape<'a>,
        windows: &[&RssiWindow],
        labels: Option<&[Location]>,
    ) -> Result<Option<Var>> {
        let w = self.weights;
        let mut total = None;
        let mut preds = Vec::with_capacity(windows.len());
        let need_pred = labels.is_some() && w.w_loc > 0.0 || w.w_ps > 0.0 && windows.len() == 2;
        for (k, win) in windows.iter().enumerate() {
            let x = window_input(tape, win)?;
            let g = self.model.forward_translate(tape, x)?;
            if need_pred {
                let pred = self.model.locnet.forward(tape, g)?;
                preds.push(pred);
                if let Some(labels) = labels {
                    if w.w_loc > 0.0 {
                        let l = loss_loc_var(tape, pred, labels[k])?;
                        total = add_term(tape, total, l, w.w_loc)?;
                    }
                }
            }
            if self.model.transnet.is_some() {
                if let (Some(stat), true) = (self.stat, w.w_ssl > 0.0) {
                    let scaled: Vec<f64> = win.values().iter().map(|v| v * INPUT_SCALE).collect();
                    let term =
                        SslTerm::new(&scaled, win.beacons(), win.horizon(), stat, &self.ssl)?;
                    let l = tape.scalar_fn(g, Box::new(term));
                    total = add_term(tape, total, l, w.w_ssl)?;
                }
                if w.w_ts > 0.0 && win.horizon() >= 2 {
                    let term = TemporalSmoothness {
                        beacons: win.beacons(),
                        horizon: win.horizon(),
                    };
                    let l = tape.scalar_fn(g, Box::new(term));
                    total = add_term(tape, total, l, w.w_ts)?;
                }
            }
        }
        if w.w_ps > 0.0 && preds.len() == 2 && consecutive(windows[0], windows[1]) {
            let l = loss_ps_var(tape, preds[1], preds[0])?;
            total = add_term(tape, total, l, w.w_ps)?;
        }
        Ok(total)
    }
}

/// Accumulates the gradient of `scale * Σ unit losses` into the model and
/// returns the scaled loss.
fn accumulate_batch(
    model: &mut Localizer,
    obj_weights: LossWeights,
    stat: Option<&StatMatrix>,
    ssl: SslOptions,
    windows: &[&RssiWindow],
    labels: Option<&[Location]>,
    units: &[Vec<usize>],
    batch: &[usize],
    scale: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    let mut grads_all = Vec::with_capacity(batch.len());
    {
        let obj = Objective {
            model,
            weights: obj_weights,
            stat,
            ssl,
        };
        for &u in batch {
            let idx = &units[u];
            let ws: Vec<&RssiWindow> = idx.iter().map(|&i| windows[i]).collect();
            let ls: Option<Vec<Location>> = labels.map(|l| idx.iter().map(|&i| l[i]).collect());
            let mut tape = Tape::new(&model.params);
            if let Some(out) = obj.unit_loss(&mut tape, &ws, ls.as_deref())? {
                loss += tape.scalar(out);
                grads_all.push(tape.backward(out)?.params);
            }
        }
    }
    for g in &grads_all {
        model.params.accumulate(g, scale);
    }
    Ok(loss * scale)
}

/// Mean localization loss and mean AE on validation windows.
pub fn validation_metrics(model: &Localizer, val: &[LabeledSample]) -> Result<Option<(f64, f64)>> {
    if val.is_empty() {
        return Ok(None);
    }
    ensure_no_test_windows("validation", val.iter().map(|s| &s.window))?;
    let (mut loss, mut ae) = (0.0, 0.0);
    for s in val {
        let p = model.predict(&s.window)?;
        let e = absolute_error(p, s.location);
        loss += e * e;
        ae += e;
    }
    let n = val.len() as f64;
    Ok(Some((loss / n, ae / n)))
}

/// Data and objective for one optimization phase.
pub struct PhaseInputs<'a> {
    pub labeled: &'a [LabeledSample],
    pub unlabeled: &'a [UnlabeledSample],
    pub val: &'a [LabeledSample],
    pub stat: Option<&'a StatMatrix>,
    pub weights: LossWeights,
    pub ssl: SslOptions,
}

/// Runs `phase.epochs` epochs of Adam on the labeled objective plus, when
/// `w_u > 0`, the label-free terms on unlabeled windows. The optimizer state
/// is reset at the start of the phase. A non-finite loss or gradient stops
/// training, leaves the parameters at their last finite state and records
/// the reason in `report.aborted`.
pub fn train_phase(
    model: &mut Localizer,
    inputs: &PhaseInputs,
    phase: &PhaseConfig,
    phase_id: u8,
    seed: u64,
    report: &mut TrainReport,
) -> Result<()> {
    phase.validate()?;
    inputs.weights.validate()?;
    if inputs.labeled.is_empty() {
        return Err(Error::EmptyData("no labeled training windows".into()));
    }
    ensure_no_test_windows("training", inputs.labeled.iter().map(|s| &s.window))?;
    ensure_no_test_windows("training", inputs.unlabeled.iter().map(|s| &s.window))?;

    let lab_windows: Vec<&RssiWindow> = inputs.labeled.iter().map(|s| &s.window).collect();
    let lab_labels: Vec<Location> = inputs.labeled.iter().map(|s| s.location).collect();
    let (lab_units, lab_unpaired) = build_units(&lab_windows);
    let unl_windows: Vec<&RssiWindow> = inputs.unlabeled.iter().map(|s| &s.window).collect();
    let (unl_units, unl_unpaired) = build_units(&unl_windows);
    let use_unlabeled = inputs.weights.w_u > 0.0 && !unl_units.is_empty();
    report.unpaired_windows += lab_unpaired + if use_unlabeled { unl_unpaired } else { 0 };

    let unl_weights = LossWeights {
        w_loc: 0.0,
        w_ps: inputs.weights.w_u * inputs.weights.w_ps,
        w_ssl: inputs.weights.w_u * inputs.weights.w_ssl,
        w_ts: inputs.weights.w_u * inputs.weights.w_ts,
        ..inputs.weights
    };
    let adam = AdamConfig::with_lr(phase.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unl_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut unl_order: Vec<usize> = (0..unl_units.len()).collect();
    let mut unl_cursor = unl_order.len();
    model.params.reset_optimizer();

    for epoch in 0..phase.epochs {
        let mut order: Vec<usize> = (0..lab_units.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let lab_batches = batches(&lab_units, &order, phase.batch_size);
        for batch in &lab_batches {
            model.params.zero_grad();
            let n: usize = batch.iter().map(|&u| lab_units[u].len()).sum();
            let mut loss = accumulate_batch(
                model,
                inputs.weights,
                inputs.stat,
                inputs.ssl,
                &lab_windows,
                Some(&lab_labels),
                &lab_units,
                batch,
                1.0 / n as f64,
            )?;
            if use_unlabeled {
                let mut ub = Vec::new();
                let mut count = 0;
                while count < phase.batch_size {
                    if unl_cursor == unl_order.len() {
                        unl_order.shuffle(&mut unl_rng);
                        unl_cursor = 0;
                    }
                    let u = unl_order[unl_cursor];
                    if count + unl_units[u].len() > phase.batch_size && !ub.is_empty() {
                        break;
                    }
                    unl_cursor += 1;
                    count += unl_units[u].len();
                    ub.push(u);
                }
                loss += accumulate_batch(
                    model,
                    unl_weights,
                    inputs.stat,
                    inputs.ssl,
                    &unl_windows,
                    None,
                    &unl_units,
                    &ub,
                    1.0 / count as f64,
                )?;
            }
            if !loss.is_finite() {
                report.aborted = Some(format!(
                    "non-finite loss in phase {phase_id}, epoch {epoch}"
                ));
                return Ok(());
            }
            if let Err(e) = model.params.adam_step(&adam) {
                report.aborted = Some(format!("phase {phase_id}, epoch {epoch}: {e}"));
                return Ok(());
            }
            report.steps += 1;
            epoch_loss += loss;
        }
        let val = validation_metrics(model, inputs.val)?;
        report.epochs.push(EpochRecord {
            phase: phase_id,
            epoch,
            train_loss: epoch_loss / lab_batches.len() as f64,
            val_loss: val.map(|v| v.0),
            val_mean_ae: val.map(|v| v.1),
        });
    }
    Ok(())
}

fn model_config(
    cfg: &ScenarioConfig,
    data: &[LabeledSample],
    with_transnet: bool,
) -> Result<ModelConfig> {
    let first = data
        .first()
        .ok_or_else(|| Error::EmptyData("no labeled training windows".into()))?;
    let labels: Vec<Location> = data.iter().map(|s| s.location).collect();
    Ok(ModelConfig {
        beacons: first.window.beacons(),
        horizon: cfg.horizon,
        locnet: cfg.locnet.clone(),
        transnet: with_transnet.then(|| cfg.transnet.clone()),
        scaling: cfg
            .output_scaling
            .unwrap_or_else(|| OutputScaling::fit(&labels)),
        seed: cfg.seed,
    })
}

fn training_windows(cfg: &ScenarioConfig, runs: &[Run]) -> Result<Vec<LabeledSample>> {
    let windows = labeled_windows(runs, cfg.horizon)?;
    match &cfg.augment {
        Some(a) => augment_dataset(&windows, a),
        None => Ok(windows),
    }
}

/// Supervised localization on all labeled runs with a LocNet-only model.
pub fn train_scenario1(
    train: &[Run],
    val: &[Run],
    cfg: &ScenarioConfig,
) -> Result<(Localizer, TrainReport)> {
    cfg.validate()?;
    ensure_no_test_runs("training", train)?;
    ensure_no_test_runs("validation", val)?;
    let start = Instant::now();
    let data = training_windows(cfg, train)?;
    let val_data = labeled_windows(val, cfg.horizon)?;
    let mut model = Localizer::new(model_config(cfg, &data, false)?)?;
    let mut report = TrainReport::new(1);
    let inputs = PhaseInputs {
        labeled: &data,
        unlabeled: &[],
        val: &val_data,
        stat: None,
        weights: LossWeights::loc_only(),
        ssl: cfg.ssl_options(&LossWeights::loc_only()),
    };
    train_phase(&mut model, &inputs, &cfg.phase1, 1, cfg.seed, &mut report)?;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// LocNet-only training on the known brands' labeled runs.
pub fn train_baseline2(
    train: &[Run],
    val: &[Run],
    cfg: &ScenarioConfig,
) -> Result<(Localizer, TrainReport)> {
    let train = runs_of_brands(train, &cfg.known_brands);
    let val = runs_of_brands(val, &cfg.known_brands);
    train_scenario1(&train, &val, cfg)
}

/// Joint TransNet + LocNet training on the known brands' labeled runs.
pub fn train_scenario2(
    train: &[Run],
    val: &[Run],
    cfg: &ScenarioConfig,
) -> Result<(Localizer, TrainReport)> {
    cfg.validate()?;
    ensure_no_test_runs("training", train)?;
    ensure_no_test_runs("validation", val)?;
    let start = Instant::now();
    let train = runs_of_brands(train, &cfg.known_brands);
    let val = runs_of_brands(val, &cfg.known_brands);
    let stat = brand_stat_matrix(&train, cfg.target_brand)?.scaled(INPUT_SCALE);
    let data = training_windows(cfg, &train)?;
    let val_data = labeled_windows(&val, cfg.horizon)?;
    let mut model = Localizer::new(model_config(cfg, &data, true)?)?;
    if cfg.freeze_transnet {
        model.params.set_trainable_prefix(TRANSNET_PREFIX, false);
    }
    let weights = LossWeights {
        w_u: 0.0,
        ..cfg.weights
    };
    let mut report = TrainReport::new(2);
    let inputs = PhaseInputs {
        labeled: &data,
        unlabeled: &[],
        val: &val_data,
        stat: Some(&stat),
        weights,
        ssl: cfg.ssl_options(&weights),
    };
    train_phase(&mut model, &inputs, &cfg.phase1, 1, cfg.seed, &mut report)?;
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// Semi-supervised phase starting from a scenario-2 model.
pub fn continue_scenario3(
    model: &mut Localizer,
    report: &mut TrainReport,
    train: &[Run],
    val: &[Run],
    unlabeled: &[Run],
    cfg: &ScenarioConfig,
) -> Result<()> {
    cfg.validate()?;
    ensure_no_test_runs("training", train)?;
    ensure_no_test_runs("validation", val)?;
    ensure_no_test_runs("unlabeled training", unlabeled)?;
    let start = Instant::now();
    report.scenario = 3;
    let train = runs_of_brands(train, &cfg.known_brands);
    let val = runs_of_brands(val, &cfg.known_brands);
    let unlabeled = runs_of_brands(unlabeled, &cfg.adapted_brands());
    let unl_data = unlabeled_windows(&unlabeled, cfg.horizon)?;
    if unl_data.is_empty() {
        report
            .warnings
            .push("no unlabeled windows for the adapted brands; result equals scenario 2".into());
        return Ok(());
    }
    let stat = brand_stat_matrix(&train, cfg.target_brand)?.scaled(INPUT_SCALE);
    let data = training_windows(cfg, &train)?;
    let val_data = labeled_windows(&val, cfg.horizon)?;
    let inputs = PhaseInputs {
        labeled: &data,
        unlabeled: &unl_data,
        val: &val_data,
        stat: Some(&stat),
        weights: cfg.weights,
        ssl: cfg.ssl_options(&cfg.weights),
    };
    train_phase(
        model,
        &inputs,
        &cfg.phase2,
        2,
        cfg.seed.wrapping_add(2),
        report,
    )?;
    report.wall_clock_s += start.elapsed().as_secs_f64();
    Ok(())
}

/// Scenario 2 followed by the semi-supervised phase on unlabeled runs.
pub fn train_scenario3(
    train: &[Run],
    val: &[Run],
    unlabeled: &[Run],
    cfg: &ScenarioConfig,
) -> Result<(Localizer, TrainReport)> {
    let (mut model, mut report) = train_scenario2(train, val, cfg)?;
    if report.aborted.is_none() {
        continue_scenario3(&mut model, &mut report, train, val, unlabeled, cfg)?;
    }
    Ok((model, report))
}

/// Default loss-weight grid.
pub fn default_grid() -> Vec<LossWeights> {
    let mut grid = Vec::new();
    for w_ps in [0.01, 0.1] {
        for w_ssl in [0.001, 0.01] {
            for w_ts in [0.001, 0.01] {
                for w_u in [0.1, 1.0] {
                    grid.push(LossWeights {
                        w_loc: 1.0,
                        w_ps,
                        w_ssl,
                        w_ts,
                        w_u,
                        tau: 0.1,
                    });
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: LossWeights,
    /// Validation mean AE per grid point, in grid order.
    pub scores: Vec<(LossWeights, f64)>,
}

/// Picks the grid point whose trained predictor has the lowest validation
/// mean AE; ties go to the smallest `(w_ssl, w_ts, w_ps)`.
pub fn tune_weights<P, F>(
    grid: &[LossWeights],
    val: &[LabeledSample],
    mut train: F,
) -> Result<TuneResult>
where
    P: crate::eval::Predictor,
    F: FnMut(&LossWeights) -> Result<P>,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("weight grid is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyData("validation split is empty".into()));
    }
    ensure_no_test_windows("weight tuning", val.iter().map(|s| &s.window))?;
    let mut scores = Vec::with_capacity(grid.len());
    for w in grid {
        let p = train(w)?;
        let mut total = 0.0;
        for s in val {
            total += absolute_error(p.predict(&s.window)?, s.location);
        }
        scores.push((*w, total / val.len() as f64));
    }
    let best = scores
        .iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.w_ssl.total_cmp(&b.0.w_ssl))
                .then(a.0.w_ts.total_cmp(&b.0.w_ts))
                .then(a.0.w_ps.total_cmp(&b.0.w_ps))
        })
        .map(|s| s.0)
        .expect("non-empty grid");
    Ok(TuneResult { best, scores })
}
