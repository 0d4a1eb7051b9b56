//! Layers built on the tape: dense, LSTM, 1-D convolution and ReLU.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ModelParams, ParamId};
use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Declarative description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    /// Consumes a (features, time) sequence and emits (hidden, time).
    Lstm {
        input: usize,
        hidden: usize,
    },
    Conv1d {
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
    },
    Relu,
}

impl LayerSpec {
    fn validate(&self) -> Result<()> {
        let dims: &[usize] = match self {
            LayerSpec::Dense { fan_in, fan_out } => &[*fan_in, *fan_out],
            LayerSpec::Lstm { input, hidden } => &[*input, *hidden],
            LayerSpec::Conv1d {
                channels_in,
                channels_out,
                kernel,
            } => {
                if kernel % 2 == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "conv1d kernel must be odd for same padding, got {kernel}"
                    )));
                }
                &[*channels_in, *channels_out, *kernel]
            }
            LayerSpec::Relu => &[],
        };
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer {self:?} has a zero dimension"
            )));
        }
        Ok(())
    }

    /// Registers freshly initialized parameters under `name`.
    pub fn build(&self, params: &mut ModelParams, name: &str, rng: &mut impl Rng) -> Result<Layer> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Dense { fan_in, fan_out } => {
                Layer::Dense(Dense::new(params, name, fan_in, fan_out, rng))
            }
            LayerSpec::Lstm { input, hidden } => {
                Layer::Lstm(LstmLayer::new(params, name, input, hidden, rng))
            }
            LayerSpec::Conv1d {
                channels_in,
                channels_out,
                kernel,
            } => Layer::Conv1d(Conv1d::new(
                params,
                name,
                channels_in,
                channels_out,
                kernel,
                rng,
            )),
            LayerSpec::Relu => Layer::Relu,
        })
    }
}

fn uniform(n: usize, bound: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new(
        params: &mut ModelParams,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = uniform(fan_in * fan_out, xavier_bound(fan_in, fan_out), rng);
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::new(vec![fan_out, fan_in], w).expect("shape"),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
        Dense {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if tape.value(x).len() != self.fan_in {
            return Err(Error::shape(
                tape.params().name(self.weight),
                self.fan_in,
                tape.value(x).len(),
            ));
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.affine(w, x, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    /// Gate order i, f, g, o; all tensors uniform in ±1/√hidden.
    pub fn new(
        params: &mut ModelParams,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = params.add(
            format!("{name}.w_ih"),
            Tensor::new(
                vec![4 * hidden, input],
                uniform(4 * hidden * input, bound, rng),
            )
            .expect("shape"),
        );
        let w_hh = params.add(
            format!("{name}.w_hh"),
            Tensor::new(
                vec![4 * hidden, hidden],
                uniform(4 * hidden * hidden, bound, rng),
            )
            .expect("shape"),
        );
        let bias = params.add(
            format!("{name}.bias"),
            Tensor::vector(uniform(4 * hidden, bound, rng)),
        );
        LstmLayer {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        }
    }

    /// One step; returns `(h', c')`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let (w_ih, w_hh, b) = (
            tape.param(self.w_ih),
            tape.param(self.w_hh),
            tape.param(self.bias),
        );
        let hc = tape.lstm_cell(x, h, c, w_ih, w_hh, b)?;
        Ok((
            tape.slice(hc, 0, self.hidden)?,
            tape.slice(hc, self.hidden, self.hidden)?,
        ))
    }

    /// Runs over a sequence of column vectors from zero state; returns the
    /// hidden state after every step.
    pub fn run(&self, tape: &mut Tape, steps: &[Var]) -> Result<Vec<Var>> {
        let mut h = tape.input(vec![self.hidden], vec![0.0; self.hidden])?;
        let mut c = tape.input(vec![self.hidden], vec![0.0; self.hidden])?;
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            if tape.value(x).len() != self.input {
                return Err(Error::shape(
                    tape.params().name(self.w_ih),
                    self.input,
                    tape.value(x).len(),
                ));
            }
            (h, c) = self.step(tape, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        params: &mut ModelParams,
        name: &str,
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = xavier_bound(channels_in * kernel, channels_out * kernel);
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::new(
                vec![channels_out, channels_in, kernel],
                uniform(channels_out * channels_in * kernel, bound, rng),
            )
            .expect("shape"),
        );
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![channels_out]));
        Conv1d {
            weight,
            bias,
            channels_in,
            channels_out,
            kernel,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match tape.shape(x) {
            [c, _] if *c == self.channels_in => {}
            other => {
                return Err(Error::shape(
                    tape.params().name(self.weight),
                    format!("[{}, L]", self.channels_in),
                    format!("{other:?}"),
                ))
            }
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.conv1d(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense(Dense),
    Lstm(LstmLayer),
    Conv1d(Conv1d),
    Relu,
}

impl Layer {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Layer::Dense(d) => d.forward(tape, x),
            Layer::Conv1d(c) => c.forward(tape, x),
            Layer::Relu => Ok(tape.relu(x)),
            Layer::Lstm(l) => {
                let (rows, cols) = match tape.shape(x) {
                    [r, c] => (*r, *c),
                    other => {
                        return Err(Error::shape(
                            tape.params().name(l.w_ih),
                            format!("[{}, T]", l.input),
                            format!("{other:?}"),
                        ))
                    }
                };
                if rows != l.input {
                    return Err(Error::shape(tape.params().name(l.w_ih), l.input, rows));
                }
                let steps = (0..cols)
                    .map(|t| tape.column(x, t))
                    .collect::<Result<Vec<_>>>()?;
                let hs = l.run(tape, &steps)?;
                tape.stack_columns(&hs)
            }
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn build(
        specs: &[LayerSpec],
        params: &mut ModelParams,
        prefix: &str,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| s.build(params, &format!("{prefix}.{i}"), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Sequential { layers })
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(tape, x)?;
        }
        Ok(x)
    }
}

/// Records a forward pass of `net` on `input`. The input is leaf 0 of the
/// returned tape.
pub fn forward<'a>(
    net: &Sequential,
    params: &'a ModelParams,
    input: &Tensor,
) -> Result<(Tensor, Tape<'a>, Var, Var)> {
    let mut tape = Tape::new(params);
    let x = tape.input(input.shape().to_vec(), input.data().to_vec())?;
    let y = net.forward(&mut tape, x)?;
    let out = Tensor::new(tape.shape(y).to_vec(), tape.value(y).to_vec())?;
    Ok((out, tape, x, y))
}

/// Reverse pass from `output` seeded with `loss_grad`.
pub fn backward(tape: &Tape, output: Var, loss_grad: &Tensor) -> Result<Gradients> {
    tape.backward_with(output, loss_grad.data())
}
