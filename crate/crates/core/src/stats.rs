//! Brand co-detection statistics and receiver-failure diagnostics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Brand, Run};
use crate::error::{Error, Result};

/// Conditional expected RSSI `m[i][j] = E[s_j | s_i > 0]` over one brand's
/// per-second readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatMatrix {
    pub beacons: usize,
    pub brand: Brand,
    /// Row-major B×B.
    pub m: Vec<f64>,
    /// Number of seconds in which beacon i was detected, per (i, j).
    pub support: Vec<u64>,
}

impl StatMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i * self.beacons + j]
    }

    pub fn support(&self, i: usize, j: usize) -> u64 {
        self.support[i * self.beacons + j]
    }

    /// Copy with every entry multiplied by `k` (support unchanged).
    pub fn scaled(&self, k: f64) -> StatMatrix {
        StatMatrix {
            m: self.m.iter().map(|v| v * k).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.beacons {
            let row: Vec<String> = (0..self.beacons)
                .map(|j| self.get(i, j).to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Builds the statistic matrix from per-second RSSI vectors of one brand.
pub fn compute_stat_matrix<'a, I>(readings: I, brand: Brand) -> Result<StatMatrix>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = readings.into_iter().peekable();
    let beacons = iter
        .peek()
        .map(|s| s.len())
        .ok_or_else(|| Error::EmptyData(format!("no {brand} readings for the statistic matrix")))?;
    let mut sums = vec![0.0; beacons * beacons];
    let mut counts = vec![0u64; beacons];
    for s in iter {
        if s.len() != beacons {
            return Err(Error::shape("stat matrix", beacons, s.len()));
        }
        for (i, &si) in s.iter().enumerate() {
            if si > 0.0 {
                counts[i] += 1;
                let row = &mut sums[i * beacons..(i + 1) * beacons];
                row.iter_mut().zip(s).for_each(|(acc, v)| *acc += v);
            }
        }
    }
    let mut m = sums;
    let mut support = vec![0u64; beacons * beacons];
    for i in 0..beacons {
        for j in 0..beacons {
            let k = i * beacons + j;
            support[k] = counts[i];
            m[k] = if counts[i] == 0 {
                0.0
            } else {
                m[k] / counts[i] as f64
            };
        }
    }
    Ok(StatMatrix {
        beacons,
        brand,
        m,
        support,
    })
}

/// Per-phone receiver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverStats {
    /// Mean over all detected (non-zero) entries, shifted units.
    pub mean_nonzero_rssi: f64,
    /// Percentage of seconds where no beacon was detected.
    pub failure_pct: f64,
    /// Mean length in seconds of maximal all-zero streaks.
    pub mean_dead_time_s: f64,
    pub seconds: usize,
}

pub fn receiver_stats(run: &Run) -> Result<ReceiverStats> {
    receiver_stats_of(run.readings.iter().map(Vec::as_slice))
}

/// Same as [`receiver_stats`] over a plain sequence of per-second vectors.
pub fn receiver_stats_of<'a>(
    readings: impl IntoIterator<Item = &'a [f64]>,
) -> Result<ReceiverStats> {
    let mut seconds = 0usize;
    let mut nonzero_sum = 0.0;
    let mut nonzero_count = 0usize;
    let mut dead_seconds = 0usize;
    let mut streaks = 0usize;
    let mut in_streak = false;
    for s in readings {
        seconds += 1;
        let mut any = false;
        for &v in s {
            if v > 0.0 {
                any = true;
                nonzero_sum += v;
                nonzero_count += 1;
            }
        }
        if any {
            in_streak = false;
        } else {
            dead_seconds += 1;
            if !in_streak {
                streaks += 1;
                in_streak = true;
            }
        }
    }
    if seconds == 0 {
        return Err(Error::EmptyData("receiver stats of an empty run".into()));
    }
    Ok(ReceiverStats {
        mean_nonzero_rssi: if nonzero_count == 0 {
            0.0
        } else {
            nonzero_sum / nonzero_count as f64
        },
        failure_pct: 100.0 * dead_seconds as f64 / seconds as f64,
        mean_dead_time_s: if streaks == 0 {
            0.0
        } else {
            dead_seconds as f64 / streaks as f64
        },
        seconds,
    })
}

/// Fixed-width table of per-phone diagnostics.
pub fn format_receiver_table(rows: &[(String, ReceiverStats)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>10} {:>14} {:>12} {:>9}",
        "phone", "mean rssi", "failure (%)", "dead (s)", "seconds"
    );
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<24} {:>10.2} {:>14.2} {:>12.2} {:>9}",
            name, s.mean_nonzero_rssi, s.failure_pct, s.mean_dead_time_s, s.seconds
        );
    }
    out
}
