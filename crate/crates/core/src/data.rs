//! Domain types, CSV run ingestion, sliding windows and split bookkeeping.
//!
//! RSSI is stored in shifted units: `max(0, dBm - floor)` with the default
//! floor at -100 dBm, so 0 doubles as "not detected" and every stored value
//! is non-negative.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of beacons in the reference deployment.
pub const DEFAULT_BEACONS: usize = 47;
/// Default window length in seconds.
pub const DEFAULT_HORIZON: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeaconId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Brand {
    Apple,
    Samsung,
    Google,
    Huawei,
    Xiaomi,
}

impl Brand {
    pub const ALL: [Brand; 5] = [
        Brand::Apple,
        Brand::Samsung,
        Brand::Google,
        Brand::Huawei,
        Brand::Xiaomi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Brand::Apple => "Apple",
            Brand::Samsung => "Samsung",
            Brand::Google => "Google",
            Brand::Huawei => "Huawei",
            Brand::Xiaomi => "Xiaomi",
        }
    }
}

impl fmt::Display for Brand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Brand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "apple" => Ok(Brand::Apple),
            "samsung" => Ok(Brand::Samsung),
            "google" | "pixel" => Ok(Brand::Google),
            "huawei" => Ok(Brand::Huawei),
            "xiaomi" => Ok(Brand::Xiaomi),
            other => Err(Error::InvalidArgument(format!("unknown brand '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhoneModelId {
    pub index: usize,
    pub brand: Brand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Location { x, y }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Mapping between dBm readings and the non-negative shifted scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiEncoding {
    /// Readings at or below this level are treated as undetected.
    pub floor_dbm: f64,
}

impl Default for RssiEncoding {
    fn default() -> Self {
        RssiEncoding { floor_dbm: -100.0 }
    }
}

impl RssiEncoding {
    pub fn shift(&self, dbm: f64) -> f64 {
        (dbm - self.floor_dbm).max(0.0)
    }

    /// Inverse of [`shift`](Self::shift) for detected values; `None` for 0.
    pub fn unshift(&self, shifted: f64) -> Option<f64> {
        (shifted > 0.0).then(|| shifted + self.floor_dbm)
    }
}

/// B×H matrix of shifted RSSI for one phone, columns oldest to newest.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiWindow {
    values: Vec<f64>,
    beacons: usize,
    horizon: usize,
    pub phone: PhoneModelId,
    pub end_time: i64,
    pub run_id: Arc<str>,
    pub split: Split,
}

impl RssiWindow {
    /// Builds a window from row-major (beacon-major) values.
    pub fn new(
        values: Vec<f64>,
        beacons: usize,
        horizon: usize,
        phone: PhoneModelId,
        end_time: i64,
    ) -> Result<Self> {
        if beacons == 0 || horizon == 0 {
            return Err(Error::InvalidArgument(
                "window dimensions must be positive".into(),
            ));
        }
        if values.len() != beacons * horizon {
            return Err(Error::shape(
                "RssiWindow",
                format!("{beacons}x{horizon}"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "RSSI entries must be finite and non-negative, found {v}"
            )));
        }
        Ok(RssiWindow {
            values,
            beacons,
            horizon,
            phone,
            end_time,
            run_id: Arc::from(""),
            split: Split::Train,
        })
    }

    pub fn with_origin(mut self, run_id: Arc<str>, split: Split) -> Self {
        self.run_id = run_id;
        self.split = split;
        self
    }

    pub fn beacons(&self) -> usize {
        self.beacons
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, beacon: usize, t: usize) -> f64 {
        self.values[beacon * self.horizon + t]
    }

    /// Column `t` as a length-B vector.
    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.beacons).map(|b| self.get(b, t)).collect()
    }

    /// Applies `f` to every entry; the result is clamped at 0.
    pub(crate) fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> RssiWindow {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v).max(0.0);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub window: RssiWindow,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub window: RssiWindow,
}

impl From<LabeledSample> for UnlabeledSample {
    fn from(s: LabeledSample) -> Self {
        UnlabeledSample { window: s.window }
    }
}

/// One continuous recording by one phone, sampled at 1 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub id: String,
    pub phone: PhoneModelId,
    pub split: Split,
    pub start_time: i64,
    /// T rows of B shifted RSSI values.
    pub readings: Vec<Vec<f64>>,
    pub locations: Option<Vec<Location>>,
}

impl Run {
    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn beacons(&self) -> usize {
        self.readings.first().map_or(0, Vec::len)
    }

    pub fn is_labeled(&self) -> bool {
        self.locations.is_some()
    }

    pub fn time_at(&self, index: usize) -> i64 {
        self.start_time + index as i64
    }
}

/// Column names of the run CSV format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub time: String,
    pub phone: String,
    pub brand: String,
    pub x: String,
    pub y: String,
    pub beacon_prefix: String,
    pub beacons: usize,
    #[serde(default)]
    pub encoding: RssiEncoding,
}

impl CsvSchema {
    pub fn with_beacons(beacons: usize) -> Self {
        CsvSchema {
            beacons,
            ..Default::default()
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols = vec![
            self.time.clone(),
            self.phone.clone(),
            self.brand.clone(),
            self.x.clone(),
            self.y.clone(),
        ];
        cols.extend((0..self.beacons).map(|b| format!("{}{b}", self.beacon_prefix)));
        cols
    }
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            time: "t".into(),
            phone: "phone".into(),
            brand: "brand".into(),
            x: "x".into(),
            y: "y".into(),
            beacon_prefix: "b".into(),
            beacons: DEFAULT_BEACONS,
            encoding: RssiEncoding::default(),
        }
    }
}

struct ParsedRow {
    t: i64,
    phone: PhoneModelId,
    location: Option<Location>,
    rssi: Vec<f64>,
}

/// Reads one run from CSV.
///
/// Seconds missing from the 1 Hz grid are filled with all-zero readings; for
/// labeled runs their location is linearly interpolated between neighbours.
pub fn ingest_run(path: &Path, schema: &CsvSchema, id: &str, split: Split) -> Result<Run> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&text, path, schema, id, split)
}

pub(crate) fn parse_run(
    text: &str,
    path: &Path,
    schema: &CsvSchema,
    id: &str,
    split: Split,
) -> Result<Run> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column '{name}'")))
    };
    let t_col = col(&schema.time)?;
    let phone_col = col(&schema.phone)?;
    let brand_col = col(&schema.brand)?;
    let x_col = col(&schema.x)?;
    let y_col = col(&schema.y)?;
    let beacon_cols = (0..schema.beacons)
        .map(|b| col(&format!("{}{b}", schema.beacon_prefix)))
        .collect::<Result<Vec<_>>>()?;
    let extra = headers
        .iter()
        .filter(|h| {
            h.starts_with(schema.beacon_prefix.as_str())
                && h[schema.beacon_prefix.len()..].parse::<usize>().is_ok()
        })
        .count();
    if extra != schema.beacons {
        return Err(parse_err(
            1,
            format!("expected {} beacon columns, found {extra}", schema.beacons),
        ));
    }

    let mut rows: Vec<ParsedRow> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let t: i64 = field(t_col)
            .parse()
            .map_err(|_| parse_err(line, format!("bad timestamp '{}'", field(t_col))))?;
        let index: usize = field(phone_col)
            .parse()
            .map_err(|_| parse_err(line, format!("bad phone index '{}'", field(phone_col))))?;
        let brand: Brand = field(brand_col)
            .parse()
            .map_err(|e: Error| parse_err(line, e.to_string()))?;
        let location = match (field(x_col), field(y_col)) {
            ("", "") => None,
            (xs, ys) => {
                let x: f64 = xs
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad x '{xs}'")))?;
                let y: f64 = ys
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad y '{ys}'")))?;
                let loc = Location::new(x, y);
                if !loc.is_finite() {
                    return Err(parse_err(line, "non-finite location".into()));
                }
                Some(loc)
            }
        };
        let mut rssi = Vec::with_capacity(schema.beacons);
        for &c in &beacon_cols {
            let s = field(c);
            let v = if s.is_empty() {
                0.0
            } else {
                let dbm: f64 = s
                    .parse()
                    .map_err(|_| parse_err(line, format!("bad RSSI '{s}'")))?;
                if !dbm.is_finite() {
                    return Err(parse_err(line, format!("non-finite RSSI '{s}'")));
                }
                schema.encoding.shift(dbm)
            };
            rssi.push(v);
        }
        if let Some(prev) = rows.last() {
            if t <= prev.t {
                return Err(parse_err(
                    line,
                    format!("timestamps must increase strictly ({} after {})", t, prev.t),
                ));
            }
            if rows[0].phone != (PhoneModelId { index, brand }) {
                return Err(parse_err(line, "phone changes within a run".into()));
            }
            if location.is_some() != prev.location.is_some() {
                return Err(parse_err(line, "mixed labeled and unlabeled rows".into()));
            }
        }
        rows.push(ParsedRow {
            t,
            phone: PhoneModelId { index, brand },
            location,
            rssi,
        });
    }
    let first = rows
        .first()
        .ok_or_else(|| parse_err(2, "run contains no rows".into()))?;
    let start_time = first.t;
    let phone = first.phone;
    let labeled = first.location.is_some();

    let mut readings = Vec::new();
    let mut locations = Vec::new();
    let mut prev: Option<&ParsedRow> = None;
    for row in &rows {
        if let Some(p) = prev {
            let gap = row.t - p.t;
            for k in 1..gap {
                readings.push(vec![0.0; schema.beacons]);
                if let (Some(a), Some(b)) = (p.location, row.location) {
                    let f = k as f64 / gap as f64;
                    locations.push(Location::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)));
                }
            }
        }
        readings.push(row.rssi.clone());
        if let Some(loc) = row.location {
            locations.push(loc);
        }
        prev = Some(row);
    }
    Ok(Run {
        id: id.to_string(),
        phone,
        split,
        start_time,
        readings,
        locations: labeled.then_some(locations),
    })
}

/// Writes a run in the CSV format read by [`ingest_run`].
pub fn write_run(path: &Path, run: &Run, schema: &CsvSchema) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    writer
        .write_record(schema.header())
        .map_err(|e| csv_io(path, e))?;
    for (i, reading) in run.readings.iter().enumerate() {
        let mut record = vec![
            run.time_at(i).to_string(),
            run.phone.index.to_string(),
            run.phone.brand.to_string(),
        ];
        match &run.locations {
            Some(locs) => {
                record.push(locs[i].x.to_string());
                record.push(locs[i].y.to_string());
            }
            None => {
                record.push(String::new());
                record.push(String::new());
            }
        }
        for &v in reading {
            record.push(match schema.encoding.unshift(v) {
                Some(dbm) => dbm.to_string(),
                None => String::new(),
            });
        }
        writer.write_record(&record).map_err(|e| csv_io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Output of [`make_windows`].
#[derive(Debug, Clone, PartialEq)]
pub enum Windows {
    Labeled(Vec<LabeledSample>),
    Unlabeled(Vec<UnlabeledSample>),
}

impl Windows {
    pub fn len(&self) -> usize {
        match self {
            Windows::Labeled(v) => v.len(),
            Windows::Unlabeled(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labeled(self) -> Option<Vec<LabeledSample>> {
        match self {
            Windows::Labeled(v) => Some(v),
            Windows::Unlabeled(_) => None,
        }
    }

    /// Drops labels if present.
    pub fn unlabeled(self) -> Vec<UnlabeledSample> {
        match self {
            Windows::Labeled(v) => v.into_iter().map(UnlabeledSample::from).collect(),
            Windows::Unlabeled(v) => v,
        }
    }
}

/// Stride-1 sliding windows of `horizon` seconds; T − H + 1 windows, or none
/// when the run is shorter than the horizon.
pub fn make_windows(run: &Run, horizon: usize) -> Result<Windows> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let beacons = run.beacons();
    let run_id: Arc<str> = Arc::from(run.id.as_str());
    let count = (run.len() + 1).saturating_sub(horizon);
    let mut windows = Vec::with_capacity(count);
    for start in 0..count {
        let mut values = vec![0.0; beacons * horizon];
        for t in 0..horizon {
            for (b, &v) in run.readings[start + t].iter().enumerate() {
                values[b * horizon + t] = v;
            }
        }
        let end = start + horizon - 1;
        let window = RssiWindow::new(values, beacons, horizon, run.phone, run.time_at(end))?
            .with_origin(run_id.clone(), run.split);
        windows.push((window, end));
    }
    Ok(match &run.locations {
        Some(locs) => Windows::Labeled(
            windows
                .into_iter()
                .map(|(window, end)| LabeledSample {
                    window,
                    location: locs[end],
                })
                .collect(),
        ),
        None => Windows::Unlabeled(
            windows
                .into_iter()
                .map(|(window, _)| UnlabeledSample { window })
                .collect(),
        ),
    })
}

/// Keeps samples whose phone brand is in `brands`, preserving order.
pub fn restrict_dataset(data: &[LabeledSample], brands: &BTreeSet<Brand>) -> Vec<LabeledSample> {
    data.iter()
        .filter(|s| brands.contains(&s.window.phone.brand))
        .cloned()
        .collect()
}

/// Fails if a (phone, timestamp) pair occurs in runs of two different splits.
pub fn check_split_disjoint(runs: &[Run]) -> Result<()> {
    let mut seen: HashMap<(PhoneModelId, i64), Split> = HashMap::new();
    for run in runs {
        for i in 0..run.len() {
            let key = (run.phone, run.time_at(i));
            match seen.get(&key) {
                Some(&other) if other != run.split => {
                    return Err(Error::InvalidArgument(format!(
                        "phone {} at t={} appears in both {other} and {} splits",
                        run.phone.index, key.1, run.split
                    )));
                }
                _ => {
                    seen.insert(key, run.split);
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub split: Split,
    #[serde(default)]
    pub phone_name: Option<String>,
}

/// JSON index of runs and their split tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub beacons: usize,
    #[serde(default)]
    pub encoding: RssiEncoding,
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut ids = HashSet::new();
        for entry in &manifest.runs {
            if !ids.insert(entry.id.as_str()) {
                return Err(Error::Config(format!("duplicate run id '{}'", entry.id)));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            encoding: self.encoding,
            ..CsvSchema::with_beacons(self.beacons)
        }
    }

    /// Loads every run listed, resolving paths against `base_dir`.
    pub fn load_runs(&self, base_dir: &Path) -> Result<Vec<Run>> {
        let schema = self.schema();
        let runs = self
            .runs
            .iter()
            .map(|entry| {
                let path = resolve(base_dir, &entry.path);
                ingest_run(&path, &schema, &entry.id, entry.split)
            })
            .collect::<Result<Vec<_>>>()?;
        check_split_disjoint(&runs)?;
        Ok(runs)
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phone(brand: Brand, index: usize) -> PhoneModelId {
        PhoneModelId { index, brand }
    }

    fn run_of(len: usize, beacons: usize, labeled: bool) -> Run {
        Run {
            id: "r".into(),
            phone: phone(Brand::Apple, 0),
            split: Split::Train,
            start_time: 1,
            readings: (0..len)
                .map(|t| (0..beacons).map(|b| (t * 10 + b) as f64).collect())
                .collect(),
            locations: labeled.then(|| (0..len).map(|t| Location::new(t as f64, 0.0)).collect()),
        }
    }

    fn csv_text(beacons: usize, rows: &[(i64, Option<(f64, f64)>, Vec<&str>)]) -> String {
        let schema = CsvSchema::with_beacons(beacons);
        let mut out = schema.header().join(",");
        out.push('\n');
        for (t, loc, rssi) in rows {
            let (x, y) = loc.map_or((String::new(), String::new()), |(x, y)| {
                (x.to_string(), y.to_string())
            });
            out.push_str(&format!("{t},0,Apple,{x},{y},{}\n", rssi.join(",")));
        }
        out
    }

    fn parse(text: &str, beacons: usize) -> Result<Run> {
        parse_run(
            text,
            Path::new("fixture.csv"),
            &CsvSchema::with_beacons(beacons),
            "fixture",
            Split::Train,
        )
    }

    #[test]
    fn shift_encoding() {
        let enc = RssiEncoding::default();
        assert_eq!(enc.shift(-77.0), 23.0);
        assert_eq!(enc.shift(-100.0), 0.0);
        assert_eq!(enc.shift(-120.0), 0.0);
        assert_eq!(enc.unshift(0.0), None);
        assert_eq!(enc.unshift(23.0), Some(-77.0));
    }

    #[test]
    fn ingest_three_rows_of_47_beacons() {
        let mut row = vec![""; 47];
        row[0] = "-77";
        row[1] = "-100";
        row[2] = "-130";
        let rows: Vec<_> = (1..=3)
            .map(|t| (t, Some((1.0, 2.0)), row.clone()))
            .collect();
        let run = parse(&csv_text(47, &rows), 47).unwrap();
        assert_eq!(run.len(), 3);
        assert_eq!(run.beacons(), 47);
        assert_eq!(run.readings[0][0], 23.0);
        assert_eq!(run.readings[0][1], 0.0);
        assert_eq!(run.readings[0][2], 0.0);
        assert_eq!(run.readings[0][3], 0.0);
        assert!(run.is_labeled());
    }

    #[test]
    fn ingest_reports_line_of_malformed_row() {
        let text = csv_text(
            2,
            &[
                (1, None, vec!["-70", "-80"]),
                (2, None, vec!["oops", "-80"]),
            ],
        );
        match parse(&text, 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_non_monotone_time() {
        let text = csv_text(2, &[(5, None, vec!["-70", ""]), (5, None, vec!["-70", ""])]);
        assert!(matches!(parse(&text, 2), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn ingest_rejects_wrong_beacon_count() {
        let text = csv_text(3, &[(1, None, vec!["-70", "", ""])]);
        assert!(parse(&text, 2).is_err());
        assert!(parse(&text, 4).is_err());
    }

    #[test]
    fn ingest_fills_missing_seconds() {
        let text = csv_text(
            1,
            &[
                (1, Some((0.0, 0.0)), vec!["-60"]),
                (4, Some((3.0, 6.0)), vec!["-60"]),
            ],
        );
        let run = parse(&text, 1).unwrap();
        assert_eq!(run.len(), 4);
        assert_eq!(run.readings[1], vec![0.0]);
        assert_eq!(run.readings[2], vec![0.0]);
        let locs = run.locations.unwrap();
        assert_eq!(locs[1], Location::new(1.0, 2.0));
        assert_eq!(locs[2], Location::new(2.0, 4.0));
    }

    #[test]
    fn write_then_ingest_is_identity() {
        let run = run_of(6, 3, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.csv");
        let schema = CsvSchema::with_beacons(3);
        write_run(&path, &run, &schema).unwrap();
        let back = ingest_run(&path, &schema, "r", Split::Train).unwrap();
        assert_eq!(back, run);
    }

    #[test]
    fn window_counts() {
        let n = |len| make_windows(&run_of(len, 2, true), 5).unwrap().len();
        assert_eq!(n(7), 3);
        assert_eq!(n(5), 1);
        assert_eq!(n(4), 0);
        assert!(make_windows(&run_of(3, 2, true), 0).is_err());
    }

    #[test]
    fn single_window_label_is_last_second() {
        let run = run_of(5, 2, true);
        let w = make_windows(&run, 5).unwrap().labeled().unwrap();
        assert_eq!(w[0].location, Location::new(4.0, 0.0));
        assert_eq!(w[0].window.end_time, run.time_at(4));
    }

    #[test]
    fn windows_reconstruct_run() {
        let run = run_of(9, 3, false);
        let horizon = 4;
        let windows = make_windows(&run, horizon).unwrap().unlabeled();
        for (start, w) in windows.iter().enumerate() {
            for t in 0..horizon {
                assert_eq!(w.window.column(t), run.readings[start + t]);
            }
        }
    }

    #[test]
    fn restrict_by_brand() {
        let mk = |brand, index| LabeledSample {
            window: RssiWindow::new(vec![1.0], 1, 1, phone(brand, index), 0).unwrap(),
            location: Location::default(),
        };
        let data = vec![
            mk(Brand::Apple, 0),
            mk(Brand::Xiaomi, 1),
            mk(Brand::Samsung, 2),
        ];
        let keep: BTreeSet<_> = [Brand::Apple, Brand::Samsung].into();
        let out = restrict_dataset(&data, &keep);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].window.phone.index, 0);
        assert_eq!(out[1].window.phone.index, 2);
        assert_eq!(restrict_dataset(&data, &Brand::ALL.into()), data);
        let apple_only = vec![mk(Brand::Apple, 0)];
        assert!(restrict_dataset(&apple_only, &[Brand::Huawei].into()).is_empty());
    }

    #[test]
    fn split_overlap_detected() {
        let a = run_of(3, 1, true);
        let mut b = run_of(3, 1, true);
        b.split = Split::Test;
        assert!(check_split_disjoint(&[a.clone(), b.clone()]).is_err());
        b.start_time = 100;
        assert!(check_split_disjoint(&[a, b]).is_ok());
    }

    #[test]
    fn window_rejects_negative_entries() {
        assert!(RssiWindow::new(vec![-1.0], 1, 1, phone(Brand::Apple, 0), 0).is_err());
        assert!(RssiWindow::new(vec![1.0, 2.0], 1, 1, phone(Brand::Apple, 0), 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn shift_round_trip(dbm in -99.999f64..=0.0) {
            let enc = RssiEncoding::default();
            let back = enc.unshift(enc.shift(dbm)).unwrap();
            proptest::prop_assert!((back - dbm).abs() <= 1e-12);
        }
    }
}
