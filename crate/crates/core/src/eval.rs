//! Absolute localization error, summary reports and CDF export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Brand, LabeledSample, Location, PhoneModelId, RssiWindow};
use crate::error::{Error, Result};
use crate::model::Localizer;

/// Anything that maps a window to a position.
pub trait Predictor {
    fn predict(&self, w: &RssiWindow) -> Result<Location>;
}

impl Predictor for Localizer {
    fn predict(&self, w: &RssiWindow) -> Result<Location> {
        Localizer::predict(self, w)
    }
}

impl<F> Predictor for F
where
    F: Fn(&RssiWindow) -> Result<Location>,
{
    fn predict(&self, w: &RssiWindow) -> Result<Location> {
        self(w)
    }
}

pub fn absolute_error(pred: Location, truth: Location) -> f64 {
    pred.distance(&truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

/// Linear interpolation between order statistics at rank `q (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty list");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::EmptyData("no errors to summarize".into()));
    }
    if let Some(bad) = errors.iter().find(|e| !e.is_finite()) {
        return Err(Error::NonFinite(format!("localization error {bad}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(ErrorStats {
        count: errors.len(),
        mean,
        std: var.sqrt(),
        median: percentile(&sorted, 0.5),
        p90: percentile(&sorted, 0.9),
        max: sorted[sorted.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneReport {
    pub phone: PhoneModelId,
    pub stats: ErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub scenario: Option<u8>,
    pub overall: ErrorStats,
    /// Ordered by phone index.
    pub per_phone: Vec<PhoneReport>,
    /// Sorted absolute errors.
    pub cdf: Vec<f64>,
}

/// One evaluated window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub phone: PhoneModelId,
    pub pred: Location,
    pub truth: Location,
}

pub fn evaluate(
    model: &impl Predictor,
    test: &[LabeledSample],
    method: &str,
    scenario: Option<u8>,
) -> Result<EvalReport> {
    let preds = test
        .iter()
        .map(|s| {
            Ok(Prediction {
                phone: s.window.phone,
                pred: model.predict(&s.window)?,
                truth: s.location,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report_from_predictions(&preds, method, scenario)
}

pub fn report_from_predictions(
    preds: &[Prediction],
    method: &str,
    scenario: Option<u8>,
) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::EmptyData("evaluation set is empty".into()));
    }
    let mut by_phone: BTreeMap<usize, (PhoneModelId, Vec<f64>)> = BTreeMap::new();
    let mut all = Vec::with_capacity(preds.len());
    for p in preds {
        let e = absolute_error(p.pred, p.truth);
        all.push(e);
        by_phone
            .entry(p.phone.index)
            .or_insert_with(|| (p.phone, Vec::new()))
            .1
            .push(e);
    }
    let overall = error_stats(&all)?;
    let per_phone = by_phone
        .into_values()
        .map(|(phone, errs)| {
            Ok(PhoneReport {
                phone,
                stats: error_stats(&errs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    all.sort_by(f64::total_cmp);
    Ok(EvalReport {
        method: method.to_string(),
        scenario,
        overall,
        per_phone,
        cdf: all,
    })
}

/// Published reference figures, shown next to results but never tested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceFigure {
    pub label: &'static str,
    pub mean_ae_m: f64,
}

pub const REFERENCE_FIGURES: [ReferenceFigure; 3] = [
    ReferenceFigure {
        label: "overall mean, brand-restricted labels",
        mean_ae_m: 1.37,
    },
    ReferenceFigure {
        label: "iPhone XR, semi-supervised",
        mean_ae_m: 0.84,
    },
    ReferenceFigure {
        label: "Mate 20 Pro, semi-supervised",
        mean_ae_m: 1.63,
    },
];

impl EvalReport {
    /// Count-weighted mean AE over phones of the given brands.
    pub fn mean_for_brands(&self, brands: &BTreeSet<Brand>) -> Option<f64> {
        let (sum, n) = self
            .per_phone
            .iter()
            .filter(|p| brands.contains(&p.phone.brand))
            .fold((0.0, 0usize), |(s, n), p| {
                (s + p.stats.mean * p.stats.count as f64, n + p.stats.count)
            });
        (n > 0).then(|| sum / n as f64)
    }

    /// `(error_m, cumulative_fraction)` rows.
    pub fn cdf_rows(&self) -> Vec<(f64, f64)> {
        let n = self.cdf.len() as f64;
        self.cdf
            .iter()
            .enumerate()
            .map(|(k, e)| (*e, (k + 1) as f64 / n))
            .collect()
    }

    /// Human-readable table; `names` maps phone index to display name.
    pub fn to_table(&self, names: &dyn Fn(PhoneModelId) -> String) -> String {
        let mut out = String::new();
        let tag = self
            .scenario
            .map(|s| format!(" (scenario {s})"))
            .unwrap_or_default();
        let _ = writeln!(out, "method: {}{tag}", self.method);
        let _ = writeln!(
            out,
            "{:<24} {:>7} {:>9} {:>9}",
            "phone", "n", "mean (m)", "std (m)"
        );
        for p in &self.per_phone {
            let _ = writeln!(
                out,
                "{:<24} {:>7} {:>9.3} {:>9.3}",
                names(p.phone),
                p.stats.count,
                p.stats.mean,
                p.stats.std
            );
        }
        let o = &self.overall;
        let _ = writeln!(
            out,
            "overall: n={} mean={:.3} std={:.3} median={:.3} p90={:.3} max={:.3}",
            o.count, o.mean, o.std, o.median, o.p90, o.max
        );
        let _ = writeln!(
            out,
            "published reference figures (not comparable to synthetic data):"
        );
        for r in REFERENCE_FIGURES {
            let _ = writeln!(out, "  {:<40} {:.2} m", r.label, r.mean_ae_m);
        }
        out
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn export_cdf(report: &EvalReport, path: &Path) -> Result<()> {
    if report.cdf.is_empty() {
        return Err(Error::EmptyData("report has no errors".into()));
    }
    let mut wtr =
        csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    wtr.write_record(["error_m", "cumulative_fraction"])
        .map_err(io)?;
    for (e, f) in report.cdf_rows() {
        wtr.write_record([e.to_string(), f.to_string()])
            .map_err(io)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}
