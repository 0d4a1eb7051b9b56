//! LocNet (recurrent localizer), TransNet (residual signal translator) and
//! the four training losses.
//!
//! Networks see RSSI scaled by [`INPUT_SCALE`]; LocNet maps its raw output
//! back to meters through a fixed affine de-normalization.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Location, RssiWindow};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Conv1d, Dense, LstmLayer, ModelParams, ScalarFn, Tape, Var};
use crate::stats::StatMatrix;

/// Factor applied to shifted RSSI before it enters a network.
pub const INPUT_SCALE: f64 = 0.01;

pub const LOCNET_PREFIX: &str = "locnet.";
pub const TRANSNET_PREFIX: &str = "transnet.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocNetConfig {
    pub lstm_layers: usize,
    pub hidden: usize,
    pub dense_hidden: usize,
}

impl Default for LocNetConfig {
    fn default() -> Self {
        LocNetConfig {
            lstm_layers: 2,
            hidden: 128,
            dense_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransNetConfig {
    /// Encoder channel schedule; the decoder mirrors it back to B channels.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Start from the identity map by zeroing the last decoder layer.
    #[serde(default = "yes")]
    pub zero_init_output: bool,
}

fn yes() -> bool {
    true
}

impl Default for TransNetConfig {
    fn default() -> Self {
        TransNetConfig {
            channels: vec![64, 32, 16],
            kernel: 3,
            zero_init_output: true,
        }
    }
}

/// Affine map from network output to meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub offset: Location,
    pub scale: f64,
}

impl Default for OutputScaling {
    fn default() -> Self {
        OutputScaling {
            offset: Location::default(),
            scale: 1.0,
        }
    }
}

impl OutputScaling {
    /// Centers on the label mean and scales by the larger coordinate spread.
    pub fn fit(labels: &[Location]) -> Self {
        if labels.is_empty() {
            return Self::default();
        }
        let n = labels.len() as f64;
        let mx = labels.iter().map(|l| l.x).sum::<f64>() / n;
        let my = labels.iter().map(|l| l.y).sum::<f64>() / n;
        let vx = labels.iter().map(|l| (l.x - mx).powi(2)).sum::<f64>() / n;
        let vy = labels.iter().map(|l| (l.y - my).powi(2)).sum::<f64>() / n;
        let scale = vx.max(vy).sqrt();
        OutputScaling {
            offset: Location::new(mx, my),
            scale: if scale > 1e-9 { scale } else { 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocNet {
    pub lstm: Vec<LstmLayer>,
    pub fc1: Dense,
    pub fc2: Dense,
    pub scaling: OutputScaling,
    beacons: usize,
}

impl LocNet {
    pub fn new(
        params: &mut ModelParams,
        beacons: usize,
        cfg: &LocNetConfig,
        scaling: OutputScaling,
        seed: u64,
    ) -> Result<Self> {
        if cfg.lstm_layers == 0 || cfg.hidden == 0 || cfg.dense_hidden == 0 || beacons == 0 {
            return Err(Error::Config(format!("invalid LocNet config {cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lstm = Vec::with_capacity(cfg.lstm_layers);
        for layer in 0..cfg.lstm_layers {
            let input = if layer == 0 { beacons } else { cfg.hidden };
            lstm.push(LstmLayer::new(
                params,
                &format!("{LOCNET_PREFIX}lstm{layer}"),
                input,
                cfg.hidden,
                &mut rng,
            ));
        }
        let fc1 = Dense::new(
            params,
            &format!("{LOCNET_PREFIX}fc1"),
            cfg.hidden,
            cfg.dense_hidden,
            &mut rng,
        );
        let fc2 = Dense::new(
            params,
            &format!("{LOCNET_PREFIX}fc2"),
            cfg.dense_hidden,
            2,
            &mut rng,
        );
        Ok(LocNet {
            lstm,
            fc1,
            fc2,
            scaling,
            beacons,
        })
    }

    /// `x` is a normalized (B, H) matrix; returns a length-2 position in meters.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (rows, cols) = match tape.shape(x) {
            [r, c] => (*r, *c),
            other => {
                return Err(Error::shape(
                    "locnet",
                    format!("[{}, H]", self.beacons),
                    format!("{other:?}"),
                ))
            }
        };
        if rows != self.beacons {
            return Err(Error::shape(
                "locnet",
                format!("[{}, H]", self.beacons),
                format!("[{rows}, {cols}]"),
            ));
        }
        let mut seq = (0..cols)
            .map(|t| tape.column(x, t))
            .collect::<Result<Vec<_>>>()?;
        for layer in &self.lstm {
            seq = layer.run(tape, &seq)?;
        }
        let last = *seq.last().expect("at least one time step");
        let hidden = self.fc1.forward(tape, last)?;
        let hidden = tape.relu(hidden);
        let raw = self.fc2.forward(tape, hidden)?;
        let scaled = tape.scale(raw, self.scaling.scale);
        let offset = tape.input(vec![2], vec![self.scaling.offset.x, self.scaling.offset.y])?;
        tape.add(scaled, offset)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransNet {
    pub convs: Vec<Conv1d>,
    beacons: usize,
}

impl TransNet {
    pub fn new(
        params: &mut ModelParams,
        beacons: usize,
        cfg: &TransNetConfig,
        seed: u64,
    ) -> Result<Self> {
        if cfg.channels.is_empty()
            || cfg.channels.contains(&0)
            || cfg.kernel % 2 == 0
            || beacons == 0
        {
            return Err(Error::Config(format!("invalid TransNet config {cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut schedule = vec![beacons];
        schedule.extend(&cfg.channels);
        schedule.extend(cfg.channels.iter().rev().skip(1));
        schedule.push(beacons);
        let convs: Vec<Conv1d> = schedule
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                Conv1d::new(
                    params,
                    &format!("{TRANSNET_PREFIX}conv{k}"),
                    w[0],
                    w[1],
                    cfg.kernel,
                    &mut rng,
                )
            })
            .collect();
        if cfg.zero_init_output {
            let last = convs.last().expect("non-empty schedule");
            params
                .tensor_mut(last.weight)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
            params
                .tensor_mut(last.bias)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        Ok(TransNet { convs, beacons })
    }

    /// Residual correction r̂(x): ReLU between layers, linear output.
    pub fn residual(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (k, conv) in self.convs.iter().enumerate() {
            h = conv.forward(tape, h)?;
            if k + 1 < self.convs.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// ĝ(x) = ReLU(r̂(x) + x), same shape as `x`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match tape.shape(x) {
            [b, _] if *b == self.beacons => {}
            other => {
                return Err(Error::shape(
                    "transnet",
                    format!("[{}, H]", self.beacons),
                    format!("{other:?}"),
                ))
            }
        }
        let r = self.residual(tape, x)?;
        let sum = tape.add(r, x)?;
        Ok(tape.relu(sum))
    }
}

/// Window as a normalized (B, H) tape input.
pub fn window_input(tape: &mut Tape, w: &RssiWindow) -> Result<Var> {
    let values = w.values().iter().map(|v| v * INPUT_SCALE).collect();
    tape.input(vec![w.beacons(), w.horizon()], values)
}

/// LocNet prediction for one window.
pub fn locnet_forward(net: &LocNet, params: &ModelParams, w: &RssiWindow) -> Result<Location> {
    let mut tape = Tape::new(params);
    let x = window_input(&mut tape, w)?;
    let y = net.forward(&mut tape, x)?;
    let v = tape.value(y);
    Ok(Location::new(v[0], v[1]))
}

/// TransNet output for one window, in shifted RSSI units.
pub fn transnet_forward(net: &TransNet, params: &ModelParams, w: &RssiWindow) -> Result<Vec<f64>> {
    let mut tape = Tape::new(params);
    let x = window_input(&mut tape, w)?;
    let y = net.forward(&mut tape, x)?;
    Ok(tape.value(y).iter().map(|v| v / INPUT_SCALE).collect())
}

/// Serializable description from which a [`Localizer`] is rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub beacons: usize,
    pub horizon: usize,
    pub locnet: LocNetConfig,
    /// `None` for a LocNet-only model.
    pub transnet: Option<TransNetConfig>,
    pub scaling: OutputScaling,
    pub seed: u64,
}

/// LocNet, optionally preceded by TransNet, with its parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Localizer {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub locnet: LocNet,
    pub transnet: Option<TransNet>,
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    config: ModelConfig,
    checkpoint: Checkpoint,
}

impl Localizer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut params = ModelParams::new();
        let locnet = LocNet::new(
            &mut params,
            config.beacons,
            &config.locnet,
            config.scaling,
            config.seed,
        )?;
        let transnet = match &config.transnet {
            Some(cfg) => Some(TransNet::new(
                &mut params,
                config.beacons,
                cfg,
                config.seed.wrapping_add(1),
            )?),
            None => None,
        };
        Ok(Localizer {
            config,
            params,
            locnet,
            transnet,
        })
    }

    /// Translated window in normalized units (identity without TransNet).
    pub fn forward_translate(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &self.transnet {
            Some(t) => t.forward(tape, x),
            None => Ok(x),
        }
    }

    pub fn predict(&self, w: &RssiWindow) -> Result<Location> {
        self.check_window(w)?;
        let mut tape = Tape::new(&self.params);
        let x = window_input(&mut tape, w)?;
        let g = self.forward_translate(&mut tape, x)?;
        let y = self.locnet.forward(&mut tape, g)?;
        let v = tape.value(y);
        Ok(Location::new(v[0], v[1]))
    }

    /// Window after TransNet, in shifted RSSI units.
    pub fn translate(&self, w: &RssiWindow) -> Result<Vec<f64>> {
        self.check_window(w)?;
        match &self.transnet {
            Some(t) => transnet_forward(t, &self.params, w),
            None => Ok(w.values().to_vec()),
        }
    }

    fn check_window(&self, w: &RssiWindow) -> Result<()> {
        if w.beacons() != self.config.beacons || w.horizon() != self.config.horizon {
            return Err(Error::shape(
                "localizer input",
                format!("{}x{}", self.config.beacons, self.config.horizon),
                format!("{}x{}", w.beacons(), w.horizon()),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let saved = SavedModel {
            config: self.config.clone(),
            checkpoint: self.params.to_checkpoint(),
        };
        let text = serde_json::to_string(&saved)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let saved: SavedModel = serde_json::from_str(&text)?;
        let mut model = Localizer::new(saved.config)?;
        model.params.load_checkpoint(&saved.checkpoint)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_loc: f64,
    pub w_ps: f64,
    pub w_ssl: f64,
    pub w_ts: f64,
    pub w_u: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_loc: 1.0,
            w_ps: 0.1,
            w_ssl: 0.01,
            w_ts: 0.01,
            w_u: 1.0,
            tau: 0.1,
        }
    }
}

impl LossWeights {
    /// Pure localization objective.
    pub fn loc_only() -> Self {
        LossWeights {
            w_loc: 1.0,
            w_ps: 0.0,
            w_ssl: 0.0,
            w_ts: 0.0,
            w_u: 0.0,
            tau: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_loc, self.w_ps, self.w_ssl, self.w_ts, self.w_u];
        if ws.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative: {self:?}"
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Squared Euclidean distance between prediction and ground truth.
pub fn loss_loc(pred: Location, truth: Location) -> f64 {
    (pred.x - truth.x).powi(2) + (pred.y - truth.y).powi(2)
}

/// Squared displacement between consecutive predictions.
pub fn loss_ps(pred_t: Location, pred_prev: Location) -> f64 {
    loss_loc(pred_t, pred_prev)
}

/// `loss_loc` on the tape; `truth` enters as a constant.
pub fn loss_loc_var(tape: &mut Tape, pred: Var, truth: Location) -> Result<Var> {
    let t = tape.input(vec![2], vec![truth.x, truth.y])?;
    let d = tape.sub(pred, t)?;
    Ok(tape.sum_squares(d))
}

pub fn loss_ps_var(tape: &mut Tape, pred_t: Var, pred_prev: Var) -> Result<Var> {
    let d = tape.sub(pred_t, pred_prev)?;
    Ok(tape.sum_squares(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslOptions {
    pub tau: f64,
    /// Exponents of the beacon weights are capped here before `exp`.
    pub max_log_weight: f64,
    /// Skip (i, j) pairs never observed together in the statistic data.
    pub mask_unsupported: bool,
}

impl Default for SslOptions {
    fn default() -> Self {
        SslOptions {
            tau: 0.1,
            max_log_weight: 50.0,
            mask_unsupported: true,
        }
    }
}

/// Statistic-similarity loss of a translated window against `m`.
///
/// For each time step t and detected-beacon weight
/// `w_it = exp((input_it - m_ii) / tau)`, deviations `e = m_ij - g_jt` cost
/// `e²` when the output falls short of the expectation and `|e|` when it
/// overshoots.
pub struct SslTerm {
    beacons: usize,
    horizon: usize,
    /// (B, H) weights w_it.
    weights: Vec<f64>,
    m: Vec<f64>,
    mask: Vec<bool>,
}

impl SslTerm {
    pub fn new(
        input: &[f64],
        beacons: usize,
        horizon: usize,
        m: &StatMatrix,
        opts: &SslOptions,
    ) -> Result<Self> {
        if input.len() != beacons * horizon || m.beacons != beacons {
            return Err(Error::shape(
                "loss_ssl",
                format!("{beacons}x{horizon} input, {beacons}x{beacons} statistics"),
                format!(
                    "{} values, {}x{} statistics",
                    input.len(),
                    m.beacons,
                    m.beacons
                ),
            ));
        }
        if !(opts.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                opts.tau
            )));
        }
        let mut weights = vec![0.0; beacons * horizon];
        for i in 0..beacons {
            let m_ii = m.get(i, i);
            for t in 0..horizon {
                let exponent =
                    ((input[i * horizon + t] - m_ii) / opts.tau).min(opts.max_log_weight);
                weights[i * horizon + t] = exponent.exp();
            }
        }
        let mask = m
            .support
            .iter()
            .map(|&c| !opts.mask_unsupported || c > 0)
            .collect();
        Ok(SslTerm {
            beacons,
            horizon,
            weights,
            m: m.m.clone(),
            mask,
        })
    }

    fn check_len(&self, g: &[f64]) {
        assert_eq!(
            g.len(),
            self.beacons * self.horizon,
            "translated window shape"
        );
    }
}

impl ScalarFn for SslTerm {
    fn value(&self, g: &[f64]) -> f64 {
        self.check_len(g);
        let (b, h) = (self.beacons, self.horizon);
        let mut total = 0.0;
        for t in 0..h {
            for i in 0..b {
                let w = self.weights[i * h + t];
                if w == 0.0 {
                    continue;
                }
                let mut row = 0.0;
                for j in 0..b {
                    if self.mask[i * b + j] {
                        let e = self.m[i * b + j] - g[j * h + t];
                        row += if e < 0.0 { -e } else { e * e };
                    }
                }
                total += w * row;
            }
        }
        total
    }

    fn grad(&self, g: &[f64], out: &mut [f64]) {
        self.check_len(g);
        let (b, h) = (self.beacons, self.horizon);
        out.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..h {
            for i in 0..b {
                let w = self.weights[i * h + t];
                if w == 0.0 {
                    continue;
                }
                for j in 0..b {
                    if self.mask[i * b + j] {
                        let e = self.m[i * b + j] - g[j * h + t];
                        out[j * h + t] += w * if e < 0.0 { 1.0 } else { -2.0 * e };
                    }
                }
            }
        }
    }
}

/// Value of the statistic-similarity loss for a translated (B, H) window.
pub fn loss_ssl(
    translated: &[f64],
    input: &RssiWindow,
    m: &StatMatrix,
    opts: &SslOptions,
) -> Result<f64> {
    let term = SslTerm::new(input.values(), input.beacons(), input.horizon(), m, opts)?;
    if translated.len() != input.values().len() {
        return Err(Error::shape(
            "loss_ssl",
            input.values().len(),
            translated.len(),
        ));
    }
    Ok(term.value(translated))
}

/// L1 temporal variation `Σ_t Σ_i |g_i,t − g_i,t+1|` of a (B, H) window.
pub struct TemporalSmoothness {
    pub beacons: usize,
    pub horizon: usize,
}

impl ScalarFn for TemporalSmoothness {
    fn value(&self, g: &[f64]) -> f64 {
        let h = self.horizon;
        (0..self.beacons)
            .map(|i| {
                g[i * h..(i + 1) * h]
                    .windows(2)
                    .map(|w| (w[0] - w[1]).abs())
                    .sum::<f64>()
            })
            .sum()
    }

    fn grad(&self, g: &[f64], out: &mut [f64]) {
        let h = self.horizon;
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.beacons {
            for t in 0..h.saturating_sub(1) {
                let (a, b) = (i * h + t, i * h + t + 1);
                let s = sign(g[a] - g[b]);
                out[a] += s;
                out[b] -= s;
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss_ts(translated: &[f64], beacons: usize, horizon: usize) -> Result<f64> {
    if translated.len() != beacons * horizon {
        return Err(Error::shape("loss_ts", beacons * horizon, translated.len()));
    }
    Ok(TemporalSmoothness { beacons, horizon }.value(translated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Brand, PhoneModelId};
    use crate::nn::gradcheck::check;
    use proptest::prelude::*;
    use rand::Rng;

    fn phone() -> PhoneModelId {
        PhoneModelId {
            index: 0,
            brand: Brand::Apple,
        }
    }

    fn stat(b: usize, m: Vec<f64>, support: Vec<u64>) -> StatMatrix {
        StatMatrix {
            beacons: b,
            brand: Brand::Apple,
            m,
            support,
        }
    }

    /// Direct transcription of the triple sum, kept independent of `SslTerm`.
    fn ssl_oracle(
        g: &[f64],
        s: &[f64],
        m: &StatMatrix,
        b: usize,
        h: usize,
        opts: &SslOptions,
    ) -> f64 {
        let mut total = 0.0;
        for t in 0..h {
            for i in 0..b {
                for j in 0..b {
                    if opts.mask_unsupported && m.support(i, j) == 0 {
                        continue;
                    }
                    let w = ((s[i * h + t] - m.get(i, i)) / opts.tau)
                        .min(opts.max_log_weight)
                        .exp();
                    let diff = m.get(i, j) - g[j * h + t];
                    let d = if diff < 0.0 { diff.abs() } else { diff.powi(2) };
                    total += w * d;
                }
            }
        }
        total
    }

    #[test]
    fn loc_and_ps_examples() {
        let a = Location::new(1.0, 2.0);
        assert_eq!(loss_loc(a, a), 0.0);
        assert_eq!(loss_loc(Location::new(4.0, 6.0), a), 25.0);
        assert_eq!(loss_ps(a, a), 0.0);
        assert_eq!(loss_ps(Location::new(2.0, 2.0), a), 1.0);
    }

    #[test]
    fn loc_gradient_is_twice_the_residual() {
        let params = ModelParams::new();
        let mut tape = Tape::new(&params);
        let p = tape.input(vec![2], vec![1.5, -2.0]).unwrap();
        let l = loss_loc_var(&mut tape, p, Location::new(0.5, 1.0)).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(p).unwrap(), &[2.0, -6.0]);
    }

    #[test]
    fn ssl_worked_example() {
        let m = stat(2, vec![10.0, 4.0, 6.0, 8.0], vec![1; 4]);
        let s = RssiWindow::new(vec![10.0, 0.0], 2, 1, phone(), 0).unwrap();
        let opts = SslOptions {
            mask_unsupported: false,
            ..Default::default()
        };
        let v = loss_ssl(&[10.0, 5.0], &s, &m, &opts).unwrap();
        let expected = 1.0 + (-80.0f64).exp() * 25.0;
        assert!((v - expected).abs() < 1e-12, "{v}");
        assert_eq!(ssl_oracle(&[10.0, 5.0], s.values(), &m, 2, 1, &opts), v);
    }

    #[test]
    fn ssl_zero_when_output_matches_statistics() {
        // g_jt = m_ij for all i requires every row of m to be equal.
        let m = stat(2, vec![3.0, 7.0, 3.0, 7.0], vec![2; 4]);
        let s = RssiWindow::new(vec![3.0, 1.0, 7.0, 0.0], 2, 2, phone(), 0).unwrap();
        let v = loss_ssl(&[3.0, 3.0, 7.0, 7.0], &s, &m, &SslOptions::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn ssl_weight_cap_prevents_overflow() {
        let m = stat(1, vec![0.0], vec![1]);
        let s = RssiWindow::new(vec![90.0], 1, 1, phone(), 0).unwrap();
        let v = loss_ssl(&[1.0], &s, &m, &SslOptions::default()).unwrap();
        assert!(v.is_finite());
        assert!((v - 50.0f64.exp()).abs() / 50.0f64.exp() < 1e-12);
    }

    #[test]
    fn ssl_mask_skips_unsupported_pairs() {
        let m = stat(2, vec![5.0, 0.0, 0.0, 0.0], vec![3, 3, 0, 0]);
        let s = RssiWindow::new(vec![5.0, 0.0], 2, 1, phone(), 0).unwrap();
        let masked = loss_ssl(&[5.0, 2.0], &s, &m, &SslOptions::default()).unwrap();
        let unmasked = loss_ssl(
            &[5.0, 2.0],
            &s,
            &m,
            &SslOptions {
                mask_unsupported: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(masked, 2.0);
        assert!(unmasked > masked);
    }

    #[test]
    fn ts_examples() {
        assert_eq!(loss_ts(&[3.0, 5.0], 1, 2).unwrap(), 2.0);
        assert_eq!(loss_ts(&[4.0, 4.0, 4.0, 1.0, 1.0, 1.0], 2, 3).unwrap(), 0.0);
        assert_eq!(loss_ts(&[4.0, 1.0], 2, 1).unwrap(), 0.0);
        let g = [1.0, 4.0, -2.0, 0.5, 3.0, 3.5];
        let doubled: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        assert_eq!(
            loss_ts(&doubled, 2, 3).unwrap(),
            2.0 * loss_ts(&g, 2, 3).unwrap()
        );
    }

    proptest! {
        #[test]
        fn ssl_matches_triple_loop(
            (b, h, s, g, m, support, tau, mask) in (1usize..=4, 1usize..=3).prop_flat_map(|(b, h)| (
                Just(b),
                Just(h),
                prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], b * h),
                prop::collection::vec(0.0f64..1.0, b * h),
                prop::collection::vec(0.0f64..1.0, b * b),
                prop::collection::vec(0u64..3, b * b),
                0.05f64..1.0,
                any::<bool>(),
            ))
        ) {
            let sm = stat(b, m, support);
            let opts = SslOptions { tau, mask_unsupported: mask, ..Default::default() };
            let w = RssiWindow::new(s.clone(), b, h, phone(), 0).unwrap();
            let v = loss_ssl(&g, &w, &sm, &opts).unwrap();
            let o = ssl_oracle(&g, &s, &sm, b, h, &opts);
            prop_assert!(v >= 0.0);
            prop_assert!((v - o).abs() <= 1e-9 * o.abs().max(1e-300), "{} vs {}", v, o);
        }
    }

    #[test]
    fn ssl_and_ts_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (b, h) = (rng.random_range(1..=4), rng.random_range(2..=3));
            let s: Vec<f64> = (0..b * h).map(|_| rng.random_range(0.0..0.5)).collect();
            let g: Vec<f64> = (0..b * h).map(|_| rng.random_range(0.0..0.5)).collect();
            let m = stat(
                b,
                (0..b * b).map(|_| rng.random_range(0.0..0.5)).collect(),
                vec![1; b * b],
            );
            let term = SslTerm::new(&s, b, h, &m, &SslOptions::default()).unwrap();
            let mut grad = vec![0.0; b * h];
            term.grad(&g, &mut grad);
            let r = check(&g, &grad, 1e-6, 1e-5, |x| term.value(x));
            assert!(r.passes(1e-3), "{r:?}");

            let ts = TemporalSmoothness {
                beacons: b,
                horizon: h,
            };
            ts.grad(&g, &mut grad);
            let r = check(&g, &grad, 1e-6, 1e-5, |x| ts.value(x));
            assert!(r.passes(1e-3), "{r:?}");
        }
    }

    fn tiny_nets(seed: u64) -> (ModelParams, LocNet, TransNet) {
        let mut params = ModelParams::new();
        let cfg = LocNetConfig {
            lstm_layers: 2,
            hidden: 4,
            dense_hidden: 3,
        };
        let loc = LocNet::new(&mut params, 3, &cfg, OutputScaling::default(), seed).unwrap();
        let tcfg = TransNetConfig {
            channels: vec![4, 3, 2],
            kernel: 3,
            zero_init_output: false,
        };
        let trans = TransNet::new(&mut params, 3, &tcfg, seed + 1).unwrap();
        (params, loc, trans)
    }

    #[test]
    fn zero_params_locnet_outputs_final_bias() {
        let (mut params, loc, _) = tiny_nets(1);
        for id in params.ids().collect::<Vec<_>>() {
            params
                .tensor_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        params
            .tensor_mut(loc.fc2.bias)
            .data_mut()
            .copy_from_slice(&[1.25, -0.5]);
        let w = RssiWindow::new(vec![20.0; 6], 3, 2, phone(), 0).unwrap();
        assert_eq!(
            locnet_forward(&loc, &params, &w).unwrap(),
            Location::new(1.25, -0.5)
        );
    }

    #[test]
    fn locnet_is_sequence_sensitive() {
        let (params, loc, _) = tiny_nets(5);
        let w = RssiWindow::new(vec![10.0, 40.0, 0.0, 30.0, 5.0, 20.0], 3, 2, phone(), 0).unwrap();
        let swapped =
            RssiWindow::new(vec![40.0, 10.0, 30.0, 0.0, 20.0, 5.0], 3, 2, phone(), 0).unwrap();
        assert_ne!(
            locnet_forward(&loc, &params, &w).unwrap(),
            locnet_forward(&loc, &params, &swapped).unwrap()
        );
    }

    #[test]
    fn locnet_rejects_wrong_beacon_count() {
        let (params, loc, trans) = tiny_nets(2);
        let w = RssiWindow::new(vec![1.0; 8], 4, 2, phone(), 0).unwrap();
        assert!(locnet_forward(&loc, &params, &w).is_err());
        assert!(transnet_forward(&trans, &params, &w).is_err());
    }

    #[test]
    fn transnet_identity_when_residual_zero() {
        let mut params = ModelParams::new();
        let t = TransNet::new(&mut params, 3, &TransNetConfig::default(), 4).unwrap();
        let values = vec![12.0, 0.0, 31.5, 7.0, 0.0, 0.0, 3.0, 44.0, 2.0, 9.0];
        let w = RssiWindow::new(values[..6].to_vec(), 3, 2, phone(), 0).unwrap();
        let out = transnet_forward(&t, &params, &w).unwrap();
        for (a, b) in out.iter().zip(w.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transnet_output_non_negative_and_shape_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for horizon in [5, 8] {
            for seed in 0..5 {
                let mut params = ModelParams::new();
                let cfg = TransNetConfig {
                    zero_init_output: false,
                    ..Default::default()
                };
                let t = TransNet::new(&mut params, 6, &cfg, seed).unwrap();
                let values: Vec<f64> = (0..6 * horizon)
                    .map(|_| rng.random_range(0.0..60.0))
                    .collect();
                let w = RssiWindow::new(values, 6, horizon, phone(), 0).unwrap();
                let out = transnet_forward(&t, &params, &w).unwrap();
                assert_eq!(out.len(), 6 * horizon);
                assert!(out.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn locnet_input_gradient_matches_finite_differences() {
        let (params, loc, _) = tiny_nets(11);
        let input = vec![0.2, 0.35, 0.1, 0.05, 0.4, 0.3];
        let proj = [0.7, -1.3];
        let eval = |x: &[f64]| {
            let mut tape = Tape::new(&params);
            let v = tape.input(vec![3, 2], x.to_vec()).unwrap();
            let y = loc.forward(&mut tape, v).unwrap();
            let o = tape.value(y);
            o[0] * proj[0] + o[1] * proj[1]
        };
        let mut tape = Tape::new(&params);
        let v = tape.input(vec![3, 2], input.clone()).unwrap();
        let y = loc.forward(&mut tape, v).unwrap();
        let g = tape.backward_with(y, &proj).unwrap();
        let r = check(&input, g.wrt(v).unwrap(), 1e-5, 1e-7, eval);
        assert!(r.passes(1e-3), "{r:?}");
    }
}
