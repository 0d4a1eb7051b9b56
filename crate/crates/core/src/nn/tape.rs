//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Tape`] borrows a [`ModelParams`] and records every operation applied
//! during a forward pass. [`Tape::backward`] walks the record in reverse and
//! returns gradients for all parameters and input leaves.

use super::params::{ModelParams, ParamGrads, ParamId};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Scalar-valued function of one tape value with an analytic gradient.
///
/// Losses that are awkward to express with the primitive ops implement this
/// and enter the tape through [`Tape::scalar_fn`].
pub trait ScalarFn {
    fn value(&self, x: &[f64]) -> f64;
    /// Writes `d value / d x` into `out` (same length as `x`).
    fn grad(&self, x: &[f64], out: &mut [f64]);
}

enum Op<'a> {
    Input,
    Param(ParamId),
    Affine {
        w: Var,
        x: Var,
        b: Var,
    },
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        /// Activated gates i, f, g, o.
        gates: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Slice {
        x: Var,
        start: usize,
    },
    Column {
        x: Var,
        col: usize,
    },
    StackColumns(Vec<Var>),
    Sum(Var),
    SumSquares(Var),
    Custom {
        x: Var,
        f: Box<dyn ScalarFn + 'a>,
    },
}

struct Node<'a> {
    op: Op<'a>,
    shape: Vec<usize>,
    /// Empty for parameter nodes, whose values live in the store.
    value: Vec<f64>,
}

/// Gradients from one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub params: ParamGrads,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to any recorded value (typically an input).
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Tape<'a> {
    params: &'a ModelParams,
    nodes: Vec<Node<'a>>,
    param_vars: Vec<Option<Var>>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'a ModelParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op<'a>, shape: Vec<usize>, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, shape, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(Error::shape(
                "input",
                format!("{shape:?}"),
                format!("{} values", value.len()),
            ));
        }
        Ok(self.push(Op::Input, shape, value))
    }

    /// Leaf for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.params.tensor(id).shape().to_vec();
        let v = self.push(Op::Param(id), shape, Vec::new());
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `w · x + b` for `w` of shape (out, in), `x` of length in.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(w, "affine")?;
        if self.value(x).len() != cols || self.value(b).len() != rows {
            return Err(Error::shape(
                "affine",
                format!("x[{cols}], b[{rows}]"),
                format!("x[{}], b[{}]", self.value(x).len(), self.value(b).len()),
            ));
        }
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out = self.value(b).to_vec();
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(&wv[r * cols..(r + 1) * cols], xv);
        }
        Ok(self.push(Op::Affine { w, x, b }, vec![rows], out))
    }

    /// One LSTM step. Returns a vector `[h'; c']` of length 2·hidden.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<Var> {
        let hidden = self.value(h).len();
        let (r_ih, input) = self.matrix_dims(w_ih, "lstm")?;
        let (r_hh, c_hh) = self.matrix_dims(w_hh, "lstm")?;
        if r_ih != 4 * hidden
            || r_hh != 4 * hidden
            || c_hh != hidden
            || self.value(x).len() != input
            || self.value(c).len() != hidden
            || self.value(b).len() != 4 * hidden
        {
            return Err(Error::shape(
                "lstm",
                format!(
                    "x[{input}], h[{hidden}], c[{hidden}], w_hh[{}x{hidden}]",
                    4 * hidden
                ),
                format!(
                    "x[{}], h[{hidden}], c[{}], w_hh[{r_hh}x{c_hh}]",
                    self.value(x).len(),
                    self.value(c).len()
                ),
            ));
        }
        let (wi, wh, bv) = (self.value(w_ih), self.value(w_hh), self.value(b));
        let (xv, hv, cv) = (self.value(x), self.value(h), self.value(c));
        let mut gates = bv.to_vec();
        for (r, g) in gates.iter_mut().enumerate() {
            *g += dot(&wi[r * input..(r + 1) * input], xv)
                + dot(&wh[r * hidden..(r + 1) * hidden], hv);
        }
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if k / hidden == 2 {
                g.tanh()
            } else {
                sigmoid(*g)
            };
        }
        let mut out = vec![0.0; 2 * hidden];
        for k in 0..hidden {
            let (i, f, g, o) = (
                gates[k],
                gates[hidden + k],
                gates[2 * hidden + k],
                gates[3 * hidden + k],
            );
            let c_new = f * cv[k] + i * g;
            out[hidden + k] = c_new;
            out[k] = o * c_new.tanh();
        }
        Ok(self.push(
            Op::LstmCell {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                gates,
            },
            vec![2 * hidden],
            out,
        ))
    }

    /// 1-D convolution with zero "same" padding over the length axis.
    ///
    /// `x` is (channels_in, length); `w` is (channels_out, channels_in, kernel)
    /// with an odd kernel; `b` has channels_out entries.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2
            || ws.len() != 3
            || ws[1] != xs[0]
            || ws[2] % 2 == 0
            || self.value(b).len() != ws[0]
        {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "x[{}xL], w[out x {} x odd k], b[out]",
                    ws.get(1).copied().unwrap_or(0),
                    xs[0]
                ),
                format!("x{xs:?}, w{ws:?}, b[{}]", self.value(b).len()),
            ));
        }
        let (cin, len) = (xs[0], xs[1]);
        let (cout, kernel) = (ws[0], ws[2]);
        let pad = kernel / 2;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![0.0; cout * len];
        for o in 0..cout {
            let row = &mut out[o * len..(o + 1) * len];
            row.iter_mut().for_each(|v| *v = bv[o]);
            for c in 0..cin {
                let xr = &xv[c * len..(c + 1) * len];
                for j in 0..kernel {
                    let wgt = wv[(o * cin + c) * kernel + j];
                    if wgt == 0.0 {
                        continue;
                    }
                    let (t0, t1) = conv_range(j, pad, len);
                    for t in t0..t1 {
                        row[t] += wgt * xr[t + j - pad];
                    }
                }
            }
        }
        Ok(self.push(Op::Conv1d { x, w, b, kernel }, vec![cout, len], out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Relu(x), shape, out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Sigmoid(x), shape, out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Tanh(x), shape, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y)
            .map(|(s, v)| self.push(Op::Add(a, b), s, v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y)
            .map(|(s, v)| self.push(Op::Sub(a, b), s, v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y)
            .map(|(s, v)| self.push(Op::Mul(a, b), s, v))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * k).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(x, k), shape, out)
    }

    /// Contiguous range of the flattened value.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(x).len();
        if start + len > n {
            return Err(Error::shape(
                "slice",
                format!("range within {n}"),
                format!("{start}..{}", start + len),
            ));
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(Op::Slice { x, start }, vec![len], out))
    }

    /// Column `col` of a (rows, cols) matrix.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "column")?;
        if col >= cols {
            return Err(Error::shape("column", format!("col < {cols}"), col));
        }
        let xv = self.value(x);
        let out = (0..rows).map(|r| xv[r * cols + col]).collect();
        Ok(self.push(Op::Column { x, col }, vec![rows], out))
    }

    /// Builds a (rows, n) matrix whose column t is `parts[t]`.
    pub fn stack_columns(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).len());
        if parts.is_empty() || parts.iter().any(|p| self.value(*p).len() != rows) {
            return Err(Error::shape(
                "stack_columns",
                "equal-length columns",
                "ragged or empty input",
            ));
        }
        let cols = parts.len();
        let mut out = vec![0.0; rows * cols];
        for (t, p) in parts.iter().enumerate() {
            for (r, v) in self.value(*p).iter().enumerate() {
                out[r * cols + t] = *v;
            }
        }
        Ok(self.push(Op::StackColumns(parts.to_vec()), vec![rows, cols], out))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Op::Sum(x), vec![1], vec![s])
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|v| v * v).sum();
        self.push(Op::SumSquares(x), vec![1], vec![s])
    }

    pub fn scalar_fn(&mut self, x: Var, f: Box<dyn ScalarFn + 'a>) -> Var {
        let s = f.value(self.value(x));
        self.push(Op::Custom { x, f }, vec![1], vec![s])
    }

    fn matrix_dims(&self, v: Var, layer: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(layer, "2-D operand", format!("{other:?}"))),
        }
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(Error::shape(
                name,
                format!("{} values", av.len()),
                format!("{} values", bv.len()),
            ));
        }
        Ok((
            self.shape(a).to_vec(),
            av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect(),
        ))
    }

    /// Backpropagates from a scalar output with upstream gradient 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.backward_with(output, &[1.0])
    }

    /// Backpropagates `upstream` (shaped like `output`) through the tape.
    pub fn backward_with(&self, output: Var, upstream: &[f64]) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "value {} is not recorded on this tape ({} nodes)",
                output.0,
                self.nodes.len()
            )));
        }
        if upstream.len() != self.value(output).len() {
            return Err(Error::shape(
                "backward",
                format!("{} upstream values", self.value(output).len()),
                upstream.len(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(upstream.to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Affine { w, x, b } => {
                    let cols = self.value(*x).len();
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let gw = acc(&mut grads, *w, wv.len());
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            axpy(*gr, xv, &mut gw[r * cols..(r + 1) * cols]);
                        }
                    }
                    let gx = acc(&mut grads, *x, cols);
                    for (r, gr) in g.iter().enumerate() {
                        if *gr != 0.0 {
                            axpy(*gr, &wv[r * cols..(r + 1) * cols], gx);
                        }
                    }
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::LstmCell {
                    x,
                    h,
                    c,
                    w_ih,
                    w_hh,
                    b,
                    gates,
                } => {
                    let hidden = self.value(*h).len();
                    let input = self.value(*x).len();
                    let out = &node.value;
                    let cv = self.value(*c);
                    let mut dz = vec![0.0; 4 * hidden];
                    let mut dc_prev = vec![0.0; hidden];
                    for k in 0..hidden {
                        let (i, f, gg, o) = (
                            gates[k],
                            gates[hidden + k],
                            gates[2 * hidden + k],
                            gates[3 * hidden + k],
                        );
                        let tc = out[hidden + k].tanh();
                        let dh = g[k];
                        let dc = g[hidden + k] + dh * o * (1.0 - tc * tc);
                        dz[k] = dc * gg * i * (1.0 - i);
                        dz[hidden + k] = dc * cv[k] * f * (1.0 - f);
                        dz[2 * hidden + k] = dc * i * (1.0 - gg * gg);
                        dz[3 * hidden + k] = dh * tc * o * (1.0 - o);
                        dc_prev[k] = dc * f;
                    }
                    add_into(acc(&mut grads, *c, hidden), &dc_prev);
                    add_into(acc(&mut grads, *b, 4 * hidden), &dz);
                    let (wi, wh) = (self.value(*w_ih), self.value(*w_hh));
                    let (xv, hv) = (self.value(*x), self.value(*h));
                    {
                        let gwi = acc(&mut grads, *w_ih, wi.len());
                        for (r, d) in dz.iter().enumerate() {
                            if *d != 0.0 {
                                axpy(*d, xv, &mut gwi[r * input..(r + 1) * input]);
                            }
                        }
                    }
                    {
                        let gwh = acc(&mut grads, *w_hh, wh.len());
                        for (r, d) in dz.iter().enumerate() {
                            if *d != 0.0 {
                                axpy(*d, hv, &mut gwh[r * hidden..(r + 1) * hidden]);
                            }
                        }
                    }
                    {
                        let gx = acc(&mut grads, *x, input);
                        for (r, d) in dz.iter().enumerate() {
                            if *d != 0.0 {
                                axpy(*d, &wi[r * input..(r + 1) * input], gx);
                            }
                        }
                    }
                    let gh = acc(&mut grads, *h, hidden);
                    for (r, d) in dz.iter().enumerate() {
                        if *d != 0.0 {
                            axpy(*d, &wh[r * hidden..(r + 1) * hidden], gh);
                        }
                    }
                }
                Op::Conv1d { x, w, b, kernel } => {
                    let (cin, len) = (self.shape(*x)[0], self.shape(*x)[1]);
                    let cout = node.shape[0];
                    let kernel = *kernel;
                    let pad = kernel / 2;
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    {
                        let gb = acc(&mut grads, *b, cout);
                        for o in 0..cout {
                            gb[o] += g[o * len..(o + 1) * len].iter().sum::<f64>();
                        }
                    }
                    {
                        let gw = acc(&mut grads, *w, wv.len());
                        for o in 0..cout {
                            let go = &g[o * len..(o + 1) * len];
                            for c in 0..cin {
                                let xr = &xv[c * len..(c + 1) * len];
                                for j in 0..kernel {
                                    let (t0, t1) = conv_range(j, pad, len);
                                    let mut s = 0.0;
                                    for t in t0..t1 {
                                        s += go[t] * xr[t + j - pad];
                                    }
                                    gw[(o * cin + c) * kernel + j] += s;
                                }
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, cin * len);
                    for o in 0..cout {
                        let go = &g[o * len..(o + 1) * len];
                        for c in 0..cin {
                            let gxr = &mut gx[c * len..(c + 1) * len];
                            for j in 0..kernel {
                                let wgt = wv[(o * cin + c) * kernel + j];
                                if wgt == 0.0 {
                                    continue;
                                }
                                let (t0, t1) = conv_range(j, pad, len);
                                for t in t0..t1 {
                                    gxr[t + j - pad] += wgt * go[t];
                                }
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv.len());
                    for ((d, v), gi) in gx.iter_mut().zip(xv).zip(&g) {
                        if *v > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for ((d, y), gi) in gx.iter_mut().zip(&node.value).zip(&g) {
                        *d += gi * y * (1.0 - y);
                    }
                }
                Op::Tanh(x) => {
                    let gx = acc(&mut grads, *x, g.len());
                    for ((d, y), gi) in gx.iter_mut().zip(&node.value).zip(&g) {
                        *d += gi * (1.0 - y * y);
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    let gb = acc(&mut grads, *b, g.len());
                    gb.iter_mut().zip(&g).for_each(|(d, v)| *d -= v);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for ((d, y), gi) in ga.iter_mut().zip(bv).zip(&g) {
                        *d += gi * y;
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for ((d, y), gi) in gb.iter_mut().zip(av).zip(&g) {
                        *d += gi * y;
                    }
                }
                Op::Scale(x, k) => {
                    let gx = acc(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(d, v)| *d += k * v);
                }
                Op::Slice { x, start } => {
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    add_into(&mut gx[*start..*start + g.len()], &g);
                }
                Op::Column { x, col } => {
                    let cols = self.shape(*x)[1];
                    let n = self.value(*x).len();
                    let gx = acc(&mut grads, *x, n);
                    for (r, gi) in g.iter().enumerate() {
                        gx[r * cols + col] += gi;
                    }
                }
                Op::StackColumns(parts) => {
                    let cols = parts.len();
                    for (t, p) in parts.iter().enumerate() {
                        let rows = self.value(*p).len();
                        let gp = acc(&mut grads, *p, rows);
                        for (r, d) in gp.iter_mut().enumerate() {
                            *d += g[r * cols + t];
                        }
                    }
                }
                Op::Sum(x) => {
                    let gx = acc(&mut grads, *x, self.value(*x).len());
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::SumSquares(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv.len());
                    for (d, v) in gx.iter_mut().zip(xv) {
                        *d += 2.0 * v * g[0];
                    }
                }
                Op::Custom { x, f } => {
                    let xv = self.value(*x);
                    let mut local = vec![0.0; xv.len()];
                    f.grad(xv, &mut local);
                    let gx = acc(&mut grads, *x, xv.len());
                    for (d, l) in gx.iter_mut().zip(&local) {
                        *d += g[0] * l;
                    }
                }
            }
            grads[idx] = Some(g);
        }

        let mut params = vec![None; self.params.len()];
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                params[pid] = grads[v.0].clone();
            }
        }
        Ok(Gradients {
            params: ParamGrads(params),
            nodes: grads,
        })
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output positions `t` for which input index `t + j - pad` is in range.
fn conv_range(j: usize, pad: usize, len: usize) -> (usize, usize) {
    let t0 = pad.saturating_sub(j);
    let t1 = (len + pad).saturating_sub(j).min(len);
    (t0, t1.max(t0))
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
