//! File-level workflows behind the command line: dataset simulation,
//! experiment configs and split loading.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::DEFAULT_K;
use crate::data::{write_run, CsvSchema, Manifest, ManifestEntry, RssiEncoding, Run, Split};
use crate::error::{Error, Result};
use crate::model::LossWeights;
use crate::simulate::{random_walk, synth_run, Catalog, RunMeta};
use crate::train::ScenarioConfig;

/// What `simulate` generates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// Catalog file; the bundled reference catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Catalog indices to simulate; every phone when empty.
    pub phones: Vec<usize>,
    pub run_seconds: usize,
    /// Seconds per phone and split.
    pub train_seconds: usize,
    pub val_seconds: usize,
    pub test_seconds: usize,
    /// Unlabeled training seconds per phone.
    pub unlabeled_seconds: usize,
    pub speed: (f64, f64),
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            catalog: None,
            phones: Vec::new(),
            run_seconds: 300,
            train_seconds: 600,
            val_seconds: 120,
            test_seconds: 120,
            unlabeled_seconds: 300,
            speed: (1.0, 1.2),
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Writes CSV runs and `manifest.json` into `out_dir`.
pub fn simulate_dataset(
    cfg: &SimulateConfig,
    base_dir: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    let catalog = match &cfg.catalog {
        Some(p) => Catalog::load(&resolve(base_dir, p))?,
        None => Catalog::reference(),
    };
    catalog.validate()?;
    if cfg.run_seconds == 0 {
        return Err(Error::Config("run_seconds must be positive".into()));
    }
    let phones: Vec<usize> = if cfg.phones.is_empty() {
        (0..catalog.phones.len()).collect()
    } else {
        cfg.phones.clone()
    };
    if let Some(bad) = phones.iter().find(|&&i| i >= catalog.phones.len()) {
        return Err(Error::Config(format!(
            "phone index {bad} outside the catalog"
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let env = &catalog.environment;
    let schema = CsvSchema {
        encoding: RssiEncoding::default(),
        ..CsvSchema::with_beacons(env.beacons())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut start_time = 0i64;
    for &index in &phones {
        let phone = &catalog.phones[index];
        let profile = phone.profile()?;
        let plan = [
            (Split::Train, true, cfg.train_seconds, "train"),
            (Split::Val, true, cfg.val_seconds, "val"),
            (Split::Test, true, cfg.test_seconds, "test"),
            (Split::Train, false, cfg.unlabeled_seconds, "unlabeled"),
        ];
        for (split, labeled, seconds, tag) in plan {
            let mut remaining = seconds;
            let mut k = 0;
            while remaining > 0 {
                let len = remaining.min(cfg.run_seconds);
                remaining -= len;
                let mut traj = random_walk(env, len, cfg.speed, rng.random())?;
                traj.start_time = start_time;
                start_time += len as i64 + 60;
                let id = format!("p{index:02}-{tag}-{k}");
                let meta = RunMeta {
                    id: id.clone(),
                    phone: catalog.phone_id(index),
                    split,
                    labeled,
                };
                let run = synth_run(env, &profile, &traj, rng.random(), meta)?;
                let file = PathBuf::from(format!("{id}.csv"));
                write_run(&out_dir.join(&file), &run, &schema)?;
                entries.push(ManifestEntry {
                    id,
                    path: file,
                    split,
                    phone_name: Some(phone.name.clone()),
                });
                k += 1;
            }
        }
    }
    let manifest = Manifest {
        beacons: env.beacons(),
        encoding: schema.encoding,
        runs: entries,
    };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Config for `train`, `evaluate` and `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Relative to the config file's directory unless absolute.
    pub manifest: PathBuf,
    #[serde(default)]
    pub training: ScenarioConfig,
    /// Select loss weights on the validation split before the final fit.
    #[serde(default)]
    pub tune: bool,
    /// Grid for tuning; the default grid when absent.
    #[serde(default)]
    pub grid: Option<Vec<LossWeights>>,
    #[serde(default = "default_k")]
    pub knn_k: usize,
}

fn default_k() -> usize {
    DEFAULT_K
}

/// Runs of a manifest grouped by role.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitRuns {
    /// Labeled training runs.
    pub train: Vec<Run>,
    pub val: Vec<Run>,
    /// Training runs without locations.
    pub unlabeled: Vec<Run>,
    pub test: Vec<Run>,
    /// Display names by phone index, where the manifest provides them.
    pub phone_names: Vec<(usize, String)>,
}

impl SplitRuns {
    pub fn phone_name(&self, index: usize) -> String {
        self.phone_names
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, n)| n.clone())
            .unwrap_or_else(|| format!("phone {index}"))
    }
}

pub fn load_split_runs(manifest_path: &Path) -> Result<SplitRuns> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let runs = manifest.load_runs(base)?;
    let mut out = SplitRuns::default();
    for (run, entry) in runs.into_iter().zip(&manifest.runs) {
        if let Some(name) = &entry.phone_name {
            if !out.phone_names.iter().any(|(i, _)| *i == run.phone.index) {
                out.phone_names.push((run.phone.index, name.clone()));
            }
        }
        match (run.split, run.is_labeled()) {
            (Split::Train, true) => out.train.push(run),
            (Split::Train, false) => out.unlabeled.push(run),
            (Split::Val, _) => out.val.push(run),
            (Split::Test, _) => out.test.push(run),
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Loads the config and resolves the manifest path against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = read_json(path)?;
        cfg.manifest = resolve(path.parent().unwrap_or(Path::new(".")), &cfg.manifest);
        cfg.training.validate()?;
        if cfg.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        Ok(cfg)
    }
}
