//! LSTM and dense layers with explicit forward traces and reverse-mode
//! backward passes.
//!
//! Batched sequences are stored step-major: row `t * batch + b` holds
//! sample `b` at step `t`. Gate pre-activations are laid out as
//! `[input | forget | cell | output]`, each `hidden` wide.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::{gemm, matmul, sigmoid, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerWeights {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `input_size x 4H`.
    pub w_input: Mat,
    /// `H x 4H`.
    pub w_recurrent: Mat,
    /// `1 x 4H`.
    pub bias: Mat,
}

impl LstmLayerWeights {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        LstmLayerWeights {
            input_size,
            hidden_size,
            w_input: Mat::zeros(input_size, 4 * hidden_size),
            w_recurrent: Mat::zeros(hidden_size, 4 * hidden_size),
            bias: Mat::zeros(1, 4 * hidden_size),
        }
    }

    /// Glorot-uniform input kernel, orthogonal recurrent kernel, forget-gate bias 1.
    pub fn init<R: Rng>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(input_size, hidden_size);
        glorot_uniform(&mut w.w_input, rng);
        orthogonal(&mut w.w_recurrent, rng);
        for j in hidden_size..2 * hidden_size {
            w.bias.data[j] = 1.0;
        }
        w
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    /// `in x out`.
    pub weight: Mat,
    /// `1 x out`.
    pub bias: Mat,
}

impl DenseWeights {
    pub fn zeros(input_size: usize, output_size: usize) -> Self {
        DenseWeights { weight: Mat::zeros(input_size, output_size), bias: Mat::zeros(1, output_size) }
    }

    pub fn init<R: Rng>(input_size: usize, output_size: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(input_size, output_size);
        glorot_uniform(&mut d.weight, rng);
        d
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.rows, self.weight.cols)
    }

    pub fn input_size(&self) -> usize {
        self.weight.rows
    }

    pub fn output_size(&self) -> usize {
        self.weight.cols
    }

    /// `x W + b`, optionally followed by tanh.
    pub fn forward(&self, x: &Mat, tanh: bool) -> Mat {
        let mut y = matmul(x, false, &self.weight, false);
        y.add_row_broadcast(&self.bias);
        if tanh {
            y.data.iter_mut().for_each(|v| *v = v.tanh());
        }
        y
    }

    /// Backward through `y = act(x W + b)`. `dy` is overwritten with the
    /// pre-activation gradient. Returns `dx` when requested.
    pub fn backward(
        &self,
        x: &Mat,
        y: &Mat,
        dy: &mut Mat,
        tanh: bool,
        grad: &mut DenseWeights,
        want_dx: bool,
    ) -> Option<Mat> {
        if tanh {
            for (d, v) in dy.data.iter_mut().zip(&y.data) {
                *d *= 1.0 - v * v;
            }
        }
        gemm(1.0, x, true, dy, false, 1.0, &mut grad.weight);
        dy.col_sums_into(&mut grad.bias);
        want_dx.then(|| matmul(dy, false, &self.weight, true))
    }
}

fn glorot_uniform<R: Rng>(m: &mut Mat, rng: &mut R) {
    let limit = (6.0 / (m.rows + m.cols) as f64).sqrt();
    for v in m.data.iter_mut() {
        *v = rng.random_range(-limit..limit);
    }
}

/// Rows of `m` (H x 4H) become orthonormal.
fn orthogonal<R: Rng>(m: &mut Mat, rng: &mut R) {
    let (rows, cols) = m.shape();
    let g = nalgebra::DMatrix::<f64>::from_fn(cols, rows, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    for i in 0..rows {
        let sign = if r[(i, i)] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..cols {
            m.data[i * cols + j] = sign * q[(j, i)];
        }
    }
}

/// Activations recorded during a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub steps: usize,
    pub batch: usize,
    /// Post-activation gates per step, `B x 4H`.
    gates: Vec<Mat>,
    cells: Vec<Mat>,
    tanh_cells: Vec<Mat>,
    /// Hidden state per step, `B x H`.
    pub hiddens: Vec<Mat>,
}

impl LstmTrace {
    pub fn last_hidden(&self) -> &Mat {
        self.hiddens.last().expect("non-empty sequence")
    }

    /// All hidden states stacked step-major, `T*B x H`.
    pub fn stacked_hiddens(&self) -> Mat {
        let h = self.hiddens.first().map_or(0, |m| m.cols);
        let mut data = Vec::with_capacity(self.steps * self.batch * h);
        for m in &self.hiddens {
            data.extend_from_slice(&m.data);
        }
        Mat::from_vec(self.steps * self.batch, h, data)
    }
}

/// Run the cell over `steps` steps. `input_proj` holds `x_t W_x + b`, either
/// per step (`T*B x 4H`) or shared by every step (`B x 4H`).
fn run_cell(w: &LstmLayerWeights, input_proj: &Mat, steps: usize, batch: usize, shared_input: bool) -> LstmTrace {
    let hs = w.hidden_size;
    let mut trace = LstmTrace {
        steps,
        batch,
        gates: Vec::with_capacity(steps),
        cells: Vec::with_capacity(steps),
        tanh_cells: Vec::with_capacity(steps),
        hiddens: Vec::with_capacity(steps),
    };
    let mut h_prev = Mat::zeros(batch, hs);
    let mut c_prev = Mat::zeros(batch, hs);
    for t in 0..steps {
        let mut z = if shared_input { input_proj.clone() } else { input_proj.rows_slice(t * batch, batch) };
        if t > 0 {
            gemm(1.0, &h_prev, false, &w.w_recurrent, false, 1.0, &mut z);
        }
        let mut c = Mat::zeros(batch, hs);
        let mut tc = Mat::zeros(batch, hs);
        let mut h = Mat::zeros(batch, hs);
        for b in 0..batch {
            let zr = z.row_mut(b);
            for j in 0..hs {
                zr[j] = sigmoid(zr[j]);
                zr[hs + j] = sigmoid(zr[hs + j]);
                zr[2 * hs + j] = zr[2 * hs + j].tanh();
                zr[3 * hs + j] = sigmoid(zr[3 * hs + j]);
            }
            let cp = c_prev.row(b);
            let (cr, tcr, hr) = (
                &mut c.data[b * hs..(b + 1) * hs],
                &mut tc.data[b * hs..(b + 1) * hs],
                &mut h.data[b * hs..(b + 1) * hs],
            );
            for j in 0..hs {
                let cv = zr[hs + j] * cp[j] + zr[j] * zr[2 * hs + j];
                cr[j] = cv;
                tcr[j] = cv.tanh();
                hr[j] = zr[3 * hs + j] * tcr[j];
            }
        }
        trace.gates.push(z);
        trace.cells.push(c.clone());
        trace.tanh_cells.push(tc);
        trace.hiddens.push(h.clone());
        h_prev = h;
        c_prev = c;
    }
    trace
}

/// Forward over a step-major input sequence `x` (`T*B x in`).
pub fn forward_sequence(w: &LstmLayerWeights, x: &Mat, steps: usize, batch: usize) -> LstmTrace {
    assert_eq!(x.rows, steps * batch, "sequence rows");
    assert_eq!(x.cols, w.input_size, "sequence width");
    let mut proj = matmul(x, false, &w.w_input, false);
    proj.add_row_broadcast(&w.bias);
    run_cell(w, &proj, steps, batch, false)
}

/// Forward with the same input `e` (`B x in`) at every step.
pub fn forward_repeated(w: &LstmLayerWeights, e: &Mat, steps: usize) -> LstmTrace {
    assert_eq!(e.cols, w.input_size, "input width");
    let mut proj = matmul(e, false, &w.w_input, false);
    proj.add_row_broadcast(&w.bias);
    run_cell(w, &proj, steps, e.rows, true)
}

/// Backpropagate through time. `dh` holds the external gradient on each
/// step's hidden state (`T*B x H`). Only the last `truncation` steps are
/// unrolled (all when `None`). Recurrent-kernel and bias gradients are
/// accumulated into `grad`; the per-step pre-activation gradients
/// (`T*B x 4H`) are returned so the caller can finish the input kernel.
pub fn backward(
    w: &LstmLayerWeights,
    trace: &LstmTrace,
    dh: &Mat,
    truncation: Option<usize>,
    grad: &mut LstmLayerWeights,
) -> Mat {
    let (steps, batch, hs) = (trace.steps, trace.batch, w.hidden_size);
    assert_eq!(dh.rows, steps * batch);
    let mut dz_all = Mat::zeros(steps * batch, 4 * hs);
    let mut dh_next = Mat::zeros(batch, hs);
    let mut dc_next = Mat::zeros(batch, hs);
    let first = truncation.map_or(0, |d| steps.saturating_sub(d));
    for t in (first..steps).rev() {
        let gates = &trace.gates[t];
        let tc = &trace.tanh_cells[t];
        let mut dz = Mat::zeros(batch, 4 * hs);
        for b in 0..batch {
            let g = gates.row(b);
            let dhe = dh.row(t * batch + b);
            let tcr = tc.row(b);
            let c_prev_row = (t > 0).then(|| trace.cells[t - 1].row(b));
            let dzr = &mut dz.data[b * 4 * hs..(b + 1) * 4 * hs];
            for j in 0..hs {
                let (i, f, gg, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
                let dh_total = dhe[j] + dh_next.data[b * hs + j];
                let d_o = dh_total * tcr[j];
                let dc = dc_next.data[b * hs + j] + dh_total * o * (1.0 - tcr[j] * tcr[j]);
                let c_prev = c_prev_row.map_or(0.0, |r| r[j]);
                dzr[j] = dc * gg * i * (1.0 - i);
                dzr[hs + j] = dc * c_prev * f * (1.0 - f);
                dzr[2 * hs + j] = dc * i * (1.0 - gg * gg);
                dzr[3 * hs + j] = d_o * o * (1.0 - o);
                dc_next.data[b * hs + j] = dc * f;
            }
        }
        if t > 0 {
            gemm(1.0, &trace.hiddens[t - 1], true, &dz, false, 1.0, &mut grad.w_recurrent);
            gemm(1.0, &dz, false, &w.w_recurrent, true, 0.0, &mut dh_next);
        }
        dz.col_sums_into(&mut grad.bias);
        dz_all.data[t * batch * 4 * hs..(t + 1) * batch * 4 * hs].copy_from_slice(&dz.data);
    }
    dz_all
}
