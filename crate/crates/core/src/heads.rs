//! Per-task prediction heads: a single fully-connected layer per frame, or
//! a single-layer LSTM over frame sequences followed by the same output
//! layer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::math::{sigmoid, tanh};
use crate::nn::{join, Linear, Param, Parameterized, SeededInit};
use crate::tensor::{dot, Matrix};
use crate::{Error, Task};

/// Output nonlinearity applied after the final affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Two outputs squashed by `tanh` to `[-1, 1]`.
    VaSigned,
    /// Two outputs squashed by the logistic to `[0, 1]`.
    VaUnit,
    /// Eight raw logits.
    Expr,
    /// Twelve logistic probabilities.
    Au,
    /// Raw vectors of the given width (adapted embeddings).
    Embedding(usize),
}

impl OutputKind {
    pub fn for_task(task: Task, va_range: (f64, f64)) -> Self {
        match task {
            Task::Va if va_range.0 >= 0.0 => OutputKind::VaUnit,
            Task::Va => OutputKind::VaSigned,
            Task::Expr => OutputKind::Expr,
            Task::Au => OutputKind::Au,
        }
    }

    /// Fan-in gain of the output layer. Regression outputs start small so
    /// the squashing nonlinearity is not saturated by a shared offset in
    /// the embeddings.
    pub fn init_gain(self) -> f64 {
        match self {
            OutputKind::VaSigned | OutputKind::VaUnit => 0.1,
            _ => 1.0,
        }
    }

    pub fn width(self) -> usize {
        match self {
            OutputKind::VaSigned | OutputKind::VaUnit => 2,
            OutputKind::Expr => 8,
            OutputKind::Au => 12,
            OutputKind::Embedding(w) => w,
        }
    }

    #[inline]
    pub fn activate(self, z: f64) -> f64 {
        match self {
            OutputKind::VaSigned => tanh(z),
            OutputKind::VaUnit | OutputKind::Au => sigmoid(z),
            OutputKind::Expr | OutputKind::Embedding(_) => z,
        }
    }

    /// Derivative of [`activate`](Self::activate) at pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            OutputKind::VaSigned => {
                let t = tanh(z);
                1.0 - t * t
            }
            OutputKind::VaUnit | OutputKind::Au => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            OutputKind::Expr | OutputKind::Embedding(_) => 1.0,
        }
    }

    pub fn activate_row(self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.activate(v)).collect()
    }
}

/// One frame's prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskPrediction {
    Va { valence: f64, arousal: f64 },
    Expr { logits: Vec<f64> },
    Au { probs: Vec<f64> },
    Embedding { vector: Vec<f64> },
}

impl TaskPrediction {
    /// Build from a pre-activation row.
    pub fn from_logits(kind: OutputKind, z: &[f64]) -> Self {
        let a = kind.activate_row(z);
        match kind {
            OutputKind::VaSigned | OutputKind::VaUnit => TaskPrediction::Va {
                valence: a[0],
                arousal: a[1],
            },
            OutputKind::Expr => TaskPrediction::Expr { logits: a },
            OutputKind::Au => TaskPrediction::Au { probs: a },
            OutputKind::Embedding(_) => TaskPrediction::Embedding { vector: a },
        }
    }
}

/// Fully-connected task head: `activation(W e + b)`.
#[derive(Debug, Clone)]
pub struct FcHead {
    pub kind: OutputKind,
    pub linear: Linear,
}

impl FcHead {
    pub fn new(kind: OutputKind, in_dim: usize, init: &mut SeededInit) -> Self {
        Self {
            kind,
            linear: Linear::new(in_dim, kind.width(), kind.init_gain(), init),
        }
    }

    pub fn zeros(kind: OutputKind, in_dim: usize) -> Self {
        Self {
            kind,
            linear: Linear::zeros(in_dim, kind.width()),
        }
    }

    /// Pre-activation outputs, `(batch, width)`.
    pub fn logits(&self, embedding: &Matrix) -> Result<Matrix> {
        self.linear.forward(embedding)
    }

    pub fn forward(&self, embedding: &Matrix) -> Result<Vec<TaskPrediction>> {
        let z = self.logits(embedding)?;
        Ok((0..z.rows).map(|r| TaskPrediction::from_logits(self.kind, z.row(r))).collect())
    }

    /// Backward from gradients w.r.t. pre-activation outputs.
    pub fn backward(&mut self, embedding: &Matrix, d_logits: &Matrix) -> Matrix {
        self.linear.backward(embedding, d_logits)
    }
}

/// Fully-connected head for one task on `in_dim`-wide embeddings.
pub fn fc_head(embedding: &Matrix, head: &FcHead) -> Result<Vec<TaskPrediction>> {
    head.forward(embedding)
}

impl Parameterized for FcHead {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.linear.visit_params(&join(prefix, "fc"), f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.linear.visit_params_mut(&join(prefix, "fc"), f);
    }
}

/// Frame embeddings `(batch, time, dim)` with per-sample valid lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub batch: usize,
    pub time: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub lengths: Vec<usize>,
}

impl EmbeddingSequence {
    pub fn new(batch: usize, time: usize, dim: usize, data: Vec<f64>, lengths: Vec<usize>) -> Result<Self> {
        if data.len() != batch * time * dim {
            return Err(shape_err(batch * time * dim, data.len()));
        }
        if lengths.len() != batch {
            return Err(shape_err(format!("{batch} lengths"), lengths.len()));
        }
        if time == 0 || lengths.iter().any(|&l| l == 0 || l > time) {
            return Err(Error::Contract(format!("invalid sequence lengths {lengths:?} for time {time}")));
        }
        Ok(Self {
            batch,
            time,
            dim,
            data,
            lengths,
        })
    }

    /// One sample of full length from a list of frame rows.
    pub fn single(frames: &Matrix) -> Result<Self> {
        Self::new(1, frames.rows, frames.cols, frames.data.clone(), vec![frames.rows])
    }

    #[inline]
    pub fn frame(&self, b: usize, t: usize) -> &[f64] {
        let s = (b * self.time + t) * self.dim;
        &self.data[s..s + self.dim]
    }
}

/// Single-layer LSTM cell, gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    /// `(4h, input)`
    pub w_ih: Param,
    /// `(4h, h)`
    pub w_hh: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`, each of width `hidden`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn new(input: usize, hidden: usize, init: &mut SeededInit) -> Self {
        let mut bias = Param::zeros(&[4 * hidden]);
        bias.value[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Self {
            input,
            hidden,
            w_ih: init.fan_in(&[4 * hidden, input], input, 1.0),
            w_hh: init.fan_in(&[4 * hidden, hidden], hidden, 1.0),
            bias,
        }
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hd = self.hidden;
        let mut gates = vec![0.0; 4 * hd];
        for (r, g) in gates.iter_mut().enumerate() {
            let pre = self.bias.value[r]
                + dot(&self.w_ih.value[r * self.input..(r + 1) * self.input], x)
                + dot(&self.w_hh.value[r * hd..(r + 1) * hd], h_prev);
            *g = if (2 * hd..3 * hd).contains(&r) { tanh(pre) } else { sigmoid(pre) };
        }
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * tanh(c[j]);
        }
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            h,
        }
    }

    /// Backward through one step. `dh`, `dc` are the total gradients w.r.t.
    /// this step's outputs; returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(&mut self, s: &LstmStep, dh: &[f64], dc: &[f64], want_dx: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut dpre = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (s.gates[j], s.gates[hd + j], s.gates[2 * hd + j], s.gates[3 * hd + j]);
            let tc = tanh(s.c[j]);
            let d_o = dh[j] * tc;
            let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dpre[j] = dcj * g * i * (1.0 - i);
            dpre[hd + j] = dcj * s.c_prev[j] * f * (1.0 - f);
            dpre[2 * hd + j] = dcj * i * (1.0 - g * g);
            dpre[3 * hd + j] = d_o * o * (1.0 - o);
            dc_prev[j] = dcj * f;
        }
        let mut dx = if want_dx { vec![0.0; self.input] } else { Vec::new() };
        let mut dh_prev = vec![0.0; hd];
        for (r, &d) in dpre.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.bias.grad[r] += d;
            let wi = r * self.input..(r + 1) * self.input;
            for (gw, &xv) in self.w_ih.grad[wi.clone()].iter_mut().zip(&s.x) {
                *gw += d * xv;
            }
            if want_dx {
                for (dxv, &w) in dx.iter_mut().zip(&self.w_ih.value[wi]) {
                    *dxv += d * w;
                }
            }
            let wh = r * hd..(r + 1) * hd;
            for (gw, &hv) in self.w_hh.grad[wh.clone()].iter_mut().zip(&s.h_prev) {
                *gw += d * hv;
            }
            for (dhv, &w) in dh_prev.iter_mut().zip(&self.w_hh.value[wh]) {
                *dhv += d * w;
            }
        }
        (dx, dh_prev, dc_prev)
    }
}

impl Parameterized for LstmCell {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        f(join(prefix, "w_ih"), &self.w_ih);
        f(join(prefix, "w_hh"), &self.w_hh);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        f(join(prefix, "w_ih"), &mut self.w_ih);
        f(join(prefix, "w_hh"), &mut self.w_hh);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Recurrent head: LSTM over frames, then a per-frame affine output layer.
#[derive(Debug, Clone)]
pub struct LstmHead {
    pub kind: OutputKind,
    pub cell: LstmCell,
    pub out: Linear,
}

/// Cached steps of one sample.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub steps: Vec<LstmStep>,
    /// Pre-activation outputs, one row per valid frame.
    pub logits: Matrix,
}

impl LstmHead {
    pub fn new(kind: OutputKind, in_dim: usize, hidden: usize, init: &mut SeededInit) -> Self {
        Self {
            kind,
            cell: LstmCell::new(in_dim, hidden, init),
            out: Linear::new(hidden, kind.width(), kind.init_gain(), init),
        }
    }

    /// Run one sample from the zero state over `frames` (rows).
    pub fn run(&self, frames: &[&[f64]]) -> Result<LstmTrace> {
        if frames.is_empty() {
            return Err(Error::Contract("zero-length sequence".into()));
        }
        let hd = self.cell.hidden;
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut steps = Vec::with_capacity(frames.len());
        let mut logits = Matrix::zeros(frames.len(), self.kind.width());
        for (t, x) in frames.iter().enumerate() {
            if x.len() != self.cell.input {
                return Err(shape_err(self.cell.input, x.len()));
            }
            let s = self.cell.step(x, &h, &c);
            self.out.forward_vec(&s.h, logits.row_mut(t));
            h.clone_from(&s.h);
            c.clone_from(&s.c);
            steps.push(s);
        }
        Ok(LstmTrace { steps, logits })
    }

    /// Per-sample traces over the valid prefix of each sequence.
    pub fn forward_train(&self, seq: &EmbeddingSequence) -> Result<Vec<LstmTrace>> {
        if seq.dim != self.cell.input {
            return Err(shape_err(self.cell.input, seq.dim));
        }
        (0..seq.batch)
            .map(|b| {
                let frames: Vec<&[f64]> = (0..seq.lengths[b]).map(|t| seq.frame(b, t)).collect();
                self.run(&frames)
            })
            .collect()
    }

    pub fn forward(&self, seq: &EmbeddingSequence) -> Result<Vec<Vec<TaskPrediction>>> {
        Ok(self
            .forward_train(seq)?
            .into_iter()
            .map(|tr| {
                (0..tr.logits.rows)
                    .map(|t| TaskPrediction::from_logits(self.kind, tr.logits.row(t)))
                    .collect()
            })
            .collect())
    }

    /// Backpropagation through time for one sample. `d_logits` has one row
    /// per step. Returns gradients w.r.t. the input frames when requested.
    pub fn backward(&mut self, trace: &LstmTrace, d_logits: &Matrix, want_dx: bool) -> Option<Matrix> {
        let hd = self.cell.hidden;
        let t_len = trace.steps.len();
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dx = want_dx.then(|| Matrix::zeros(t_len, self.cell.input));
        for t in (0..t_len).rev() {
            let s = &trace.steps[t];
            let mut dh = dh_next.clone();
            self.out.backward_vec(&s.h, d_logits.row(t), Some(&mut dh));
            let (dxt, dhp, dcp) = self.cell.backward_step(s, &dh, &dc_next, want_dx);
            if let Some(m) = dx.as_mut() {
                m.row_mut(t).copy_from_slice(&dxt);
            }
            dh_next = dhp;
            dc_next = dcp;
        }
        dx
    }
}

/// Recurrent head applied to each sequence of a batch.
pub fn lstm_head(seq: &EmbeddingSequence, head: &LstmHead) -> Result<Vec<Vec<TaskPrediction>>> {
    head.forward(seq)
}

impl Parameterized for LstmHead {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param)) {
        self.cell.visit_params(&join(prefix, "lstm"), f);
        self.out.visit_params(&join(prefix, "out"), f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Param)) {
        self.cell.visit_params_mut(&join(prefix, "lstm"), f);
        self.out.visit_params_mut(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests;
