//! Synthetic BLE environment: log-distance path loss, random-walk
//! trajectories and per-phone receiver models with noise, per-beacon drops
//! and whole-receiver dead periods.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{BeaconId, Brand, Location, PhoneModelId, RssiEncoding, Run, Split};
use crate::error::{Error, Result};

/// Axis-aligned rectangle in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn new(width: f64, height: f64) -> Self {
        Bounds {
            min_x: 0.0,
            min_y: 0.0,
            max_x: width,
            max_y: height,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn is_empty(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
    }

    pub fn contains(&self, p: &Location) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn center(&self) -> Location {
        Location::new(
            (self.min_x + self.max_x) / 2.0,
            (self.min_y + self.max_y) / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub beacon_positions: Vec<Location>,
    pub bounds: Bounds,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    /// Expected RSSI at 1 m.
    #[serde(default = "default_measured_power")]
    pub measured_power_dbm: f64,
    #[serde(default = "default_exponent")]
    pub path_loss_exponent: f64,
}

fn default_tx_power() -> f64 {
    -12.0
}

fn default_measured_power() -> f64 {
    -77.0
}

fn default_exponent() -> f64 {
    2.5
}

impl Environment {
    /// Beacons on an `nx` × `ny` grid inset half a cell from the walls.
    pub fn grid(bounds: Bounds, nx: usize, ny: usize) -> Self {
        let mut beacon_positions = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                beacon_positions.push(Location::new(
                    bounds.min_x + bounds.width() * (i as f64 + 0.5) / nx as f64,
                    bounds.min_y + bounds.height() * (j as f64 + 0.5) / ny as f64,
                ));
            }
        }
        Environment {
            beacon_positions,
            bounds,
            tx_power_dbm: default_tx_power(),
            measured_power_dbm: default_measured_power(),
            path_loss_exponent: default_exponent(),
        }
    }

    pub fn beacons(&self) -> usize {
        self.beacon_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beacon_positions.is_empty() {
            return Err(Error::Config(
                "environment needs at least one beacon".into(),
            ));
        }
        if self.bounds.is_empty() {
            return Err(Error::Config("environment bounds are empty".into()));
        }
        if !(self.measured_power_dbm < 0.0) {
            return Err(Error::Config("measured power must be negative dBm".into()));
        }
        if !(1.5..=4.0).contains(&self.path_loss_exponent) {
            return Err(Error::Config(format!(
                "path-loss exponent {} outside [1.5, 4.0]",
                self.path_loss_exponent
            )));
        }
        Ok(())
    }
}

/// Log-distance RSSI in dBm; distances under 0.1 m are clamped.
pub fn path_loss_rssi(env: &Environment, beacon: BeaconId, pos: &Location) -> f64 {
    let d = env.beacon_positions[beacon.0].distance(pos).max(0.1);
    env.measured_power_dbm - 10.0 * env.path_loss_exponent * d.log10()
}

/// Receiver characteristics of one phone model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhoneProfile {
    pub gain_offset_db: f64,
    /// Variance of the per-beacon Gaussian noise, dB².
    pub noise_var: f64,
    /// Probability that an operating receiver enters a dead period in a
    /// given second.
    pub failure_rate: f64,
    pub mean_dead_time_s: f64,
    pub per_beacon_drop_rate: f64,
}

impl PhoneProfile {
    pub fn ideal() -> Self {
        PhoneProfile {
            gain_offset_db: 0.0,
            noise_var: 0.0,
            failure_rate: 0.0,
            mean_dead_time_s: 0.0,
            per_beacon_drop_rate: 0.0,
        }
    }

    /// Entry probability giving a long-run fraction `failure_pct` / 100 of
    /// dead seconds with mean dead period `dead_time_s`.
    ///
    /// Each dead period is followed by at least one operating second, so
    /// operating periods have mean 1 / rate and the dead fraction is
    /// D / (1 / rate + D).
    pub fn failure_entry_rate(failure_pct: f64, dead_time_s: f64) -> Result<f64> {
        let f = failure_pct / 100.0;
        if f <= 0.0 {
            return Ok(0.0);
        }
        if f >= 1.0 || dead_time_s < 1.0 {
            return Err(Error::Config(format!(
                "cannot realize {failure_pct}% failure with {dead_time_s} s dead periods"
            )));
        }
        let rate = f / (dead_time_s * (1.0 - f));
        if rate > 1.0 {
            return Err(Error::Config(format!(
                "{failure_pct}% failure needs dead periods longer than {dead_time_s} s"
            )));
        }
        Ok(rate)
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not a probability")))
            }
        };
        prob("failure_rate", self.failure_rate)?;
        prob("per_beacon_drop_rate", self.per_beacon_drop_rate)?;
        if !(self.noise_var >= 0.0) {
            return Err(Error::Config(format!(
                "noise_var = {} must be >= 0",
                self.noise_var
            )));
        }
        if self.failure_rate > 0.0 && self.mean_dead_time_s < 1.0 {
            return Err(Error::Config(
                "mean_dead_time_s must be >= 1 when failures occur".into(),
            ));
        }
        if !self.gain_offset_db.is_finite() {
            return Err(Error::Config("gain offset must be finite".into()));
        }
        Ok(())
    }
}

/// Positions sampled at 1 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_time: i64,
    pub waypoints: Vec<Location>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// Random walk with per-step speed uniform in `speed_range` and smooth
/// heading changes, kept inside the environment bounds.
pub fn random_walk(
    env: &Environment,
    duration_s: usize,
    speed_range: (f64, f64),
    seed: u64,
) -> Result<Trajectory> {
    if env.bounds.is_empty() {
        return Err(Error::Config("cannot walk in empty bounds".into()));
    }
    if duration_s == 0 {
        return Err(Error::InvalidArgument(
            "duration must be at least 1 s".into(),
        ));
    }
    let (lo, hi) = speed_range;
    if !(0.0 <= lo && lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "bad speed range ({lo}, {hi})"
        )));
    }
    let b = env.bounds;
    if hi >= b.width().min(b.height()) / 2.0 {
        return Err(Error::InvalidArgument(
            "speed too large for the environment".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = Location::new(
        rng.random_range(b.min_x..=b.max_x),
        rng.random_range(b.min_y..=b.max_y),
    );
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut waypoints = Vec::with_capacity(duration_s);
    waypoints.push(pos);
    for _ in 1..duration_s {
        let speed = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
        heading += rng.random_range(-0.4..0.4);
        let mut next = step(pos, heading, speed);
        let mut tries = 0;
        while !b.contains(&next) && tries < 16 {
            heading = rng.random_range(0.0..std::f64::consts::TAU);
            next = step(pos, heading, speed);
            tries += 1;
        }
        if !b.contains(&next) {
            let c = b.center();
            heading = (c.y - pos.y).atan2(c.x - pos.x);
            next = step(pos, heading, speed);
        }
        pos = next;
        waypoints.push(pos);
    }
    Ok(Trajectory {
        start_time: 0,
        waypoints,
    })
}

fn step(p: Location, heading: f64, speed: f64) -> Location {
    Location::new(p.x + speed * heading.cos(), p.y + speed * heading.sin())
}

/// Identity and split of a generated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub id: String,
    pub phone: PhoneModelId,
    pub split: Split,
    pub labeled: bool,
}

/// Simulates what `profile` records along `traj`.
///
/// The random stream is consumed identically regardless of profile values,
/// so two profiles under one seed see the same noise draws, drops and
/// failure events.
pub fn synth_run(
    env: &Environment,
    profile: &PhoneProfile,
    traj: &Trajectory,
    seed: u64,
    meta: RunMeta,
) -> Result<Run> {
    env.validate()?;
    profile.validate()?;
    let encoding = RssiEncoding::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = profile.noise_var.sqrt();
    let beacons = env.beacons();
    let mut dead_left = 0usize;
    let mut cooldown = false;
    let mut readings = Vec::with_capacity(traj.len());
    for pos in &traj.waypoints {
        let failure_draw: f64 = rng.random();
        let length_draw: f64 = rng.random();
        let mut row = Vec::with_capacity(beacons);
        for b in 0..beacons {
            let z: f64 = StandardNormal.sample(&mut rng);
            let drop_draw: f64 = rng.random();
            let dbm = path_loss_rssi(env, BeaconId(b), pos) + profile.gain_offset_db + sigma * z;
            let shifted = encoding.shift(dbm);
            row.push(if drop_draw < profile.per_beacon_drop_rate {
                0.0
            } else {
                shifted
            });
        }
        if dead_left == 0 && !cooldown && failure_draw < profile.failure_rate {
            dead_left = geometric(length_draw, profile.mean_dead_time_s);
        }
        if dead_left > 0 {
            row.iter_mut().for_each(|v| *v = 0.0);
            dead_left -= 1;
            cooldown = dead_left == 0;
        } else {
            cooldown = false;
        }
        readings.push(row);
    }
    Ok(Run {
        id: meta.id,
        phone: meta.phone,
        split: meta.split,
        start_time: traj.start_time,
        readings,
        locations: meta.labeled.then(|| traj.waypoints.clone()),
    })
}

/// Inverse-CDF draw from a geometric law on {1, 2, ...} with the given mean.
fn geometric(u: f64, mean: f64) -> usize {
    let p = 1.0 / mean.max(1.0);
    if p >= 1.0 {
        return 1;
    }
    // P(L > k) = (1 - p)^k
    let k = ((1.0 - u).ln() / (1.0 - p).ln()).floor() as usize;
    k + 1
}

/// One phone model of a simulated catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneSpec {
    pub name: String,
    pub brand: Brand,
    pub gain_offset_db: f64,
    pub noise_var: f64,
    pub per_beacon_drop_rate: f64,
    /// Long-run percentage of seconds with every beacon missing.
    pub failure_pct: f64,
    #[serde(default)]
    pub mean_dead_time_s: f64,
    /// Where the numbers come from.
    #[serde(default)]
    pub source: String,
}

impl PhoneSpec {
    pub fn profile(&self) -> Result<PhoneProfile> {
        let profile = PhoneProfile {
            gain_offset_db: self.gain_offset_db,
            noise_var: self.noise_var,
            failure_rate: PhoneProfile::failure_entry_rate(
                self.failure_pct,
                self.mean_dead_time_s,
            )?,
            mean_dead_time_s: self.mean_dead_time_s,
            per_beacon_drop_rate: self.per_beacon_drop_rate,
        };
        profile.validate()?;
        Ok(profile)
    }
}

/// Environment plus phone catalog, as stored in the simulator config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub environment: Environment,
    pub phones: Vec<PhoneSpec>,
}

impl Catalog {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let catalog: Catalog = serde_json::from_str(&text)?;
        catalog.validate()?;
        Ok(catalog)
    }

    /// The reference catalog shipped with the crate.
    pub fn reference() -> Self {
        serde_json::from_str(include_str!("../config/catalog.json"))
            .expect("bundled catalog parses")
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.validate()?;
        for p in &self.phones {
            p.profile()
                .map_err(|e| Error::Config(format!("phone '{}': {e}", p.name)))?;
        }
        Ok(())
    }

    pub fn phone_id(&self, index: usize) -> PhoneModelId {
        PhoneModelId {
            index,
            brand: self.phones[index].brand,
        }
    }
}
