//! Interaction-aware trajectory model.
//!
//! ```text
//! query velocities ──LSTM──────────────► z_q ─┐
//! neighbor (Δp, Δv) seqs ─LSTM (shared)─┐     ├─ [z_q, z_e] ─LSTM─► dense ─► linear ─► v_1..v_TH
//! obstacle (Δp, Δv) ─────dense (shared)─┴ max ► z_e ─┘
//! ```
//!
//! The concatenated encoding is fed to the recurrent decoder at every output
//! step; decoder state starts at zero. With no neighbors and no obstacles the
//! environment encoding is the zero vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{self, DenseWeights, LstmLayerWeights, LstmTrace};
use super::tensor::{gemm, matmul, Mat};
use crate::error::{Error, Result};
use crate::predictors::ObservationHistory;
use crate::world::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub query_hidden: usize,
    /// Width of both the neighbor LSTM and the obstacle dense encoder.
    pub env_hidden: usize,
    pub decoder_hidden: usize,
    pub dense_hidden: usize,
    /// History length `T_O + 1`.
    pub history_len: usize,
    /// Prediction horizon `T_H`.
    pub horizon: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            query_hidden: 64,
            env_hidden: 64,
            decoder_hidden: 128,
            dense_hidden: 64,
            history_len: 21,
            horizon: 20,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("query_hidden", self.query_hidden),
            ("env_hidden", self.env_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("dense_hidden", self.dense_hidden),
            ("history_len", self.history_len),
            ("horizon", self.horizon),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        Ok(())
    }
}

pub const VELOCITY_DIM: usize = 3;
pub const RELATIVE_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub query_encoder: LstmLayerWeights,
    pub neighbor_encoder: LstmLayerWeights,
    pub obstacle_encoder: DenseWeights,
    pub recurrent_decoder: LstmLayerWeights,
    pub dense_decoder: DenseWeights,
    pub output_layer: DenseWeights,
}

/// Parameter tensor names in storage order.
pub const TENSOR_NAMES: [&str; 15] = [
    "query_encoder.w_input",
    "query_encoder.w_recurrent",
    "query_encoder.bias",
    "neighbor_encoder.w_input",
    "neighbor_encoder.w_recurrent",
    "neighbor_encoder.bias",
    "obstacle_encoder.weight",
    "obstacle_encoder.bias",
    "recurrent_decoder.w_input",
    "recurrent_decoder.w_recurrent",
    "recurrent_decoder.bias",
    "dense_decoder.weight",
    "dense_decoder.bias",
    "output_layer.weight",
    "output_layer.bias",
];

impl ModelWeights {
    pub fn zeros(config: ModelConfig) -> Self {
        let c = config;
        ModelWeights {
            config,
            query_encoder: LstmLayerWeights::zeros(VELOCITY_DIM, c.query_hidden),
            neighbor_encoder: LstmLayerWeights::zeros(RELATIVE_DIM, c.env_hidden),
            obstacle_encoder: DenseWeights::zeros(RELATIVE_DIM, c.env_hidden),
            recurrent_decoder: LstmLayerWeights::zeros(c.query_hidden + c.env_hidden, c.decoder_hidden),
            dense_decoder: DenseWeights::zeros(c.decoder_hidden, c.dense_hidden),
            output_layer: DenseWeights::zeros(c.dense_hidden, VELOCITY_DIM),
        }
    }

    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        ModelWeights {
            config,
            query_encoder: LstmLayerWeights::init(VELOCITY_DIM, c.query_hidden, &mut rng),
            neighbor_encoder: LstmLayerWeights::init(RELATIVE_DIM, c.env_hidden, &mut rng),
            obstacle_encoder: DenseWeights::init(RELATIVE_DIM, c.env_hidden, &mut rng),
            recurrent_decoder: LstmLayerWeights::init(c.query_hidden + c.env_hidden, c.decoder_hidden, &mut rng),
            dense_decoder: DenseWeights::init(c.decoder_hidden, c.dense_hidden, &mut rng),
            output_layer: DenseWeights::init(c.dense_hidden, VELOCITY_DIM, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn tensors(&self) -> [&Mat; 15] {
        [
            &self.query_encoder.w_input,
            &self.query_encoder.w_recurrent,
            &self.query_encoder.bias,
            &self.neighbor_encoder.w_input,
            &self.neighbor_encoder.w_recurrent,
            &self.neighbor_encoder.bias,
            &self.obstacle_encoder.weight,
            &self.obstacle_encoder.bias,
            &self.recurrent_decoder.w_input,
            &self.recurrent_decoder.w_recurrent,
            &self.recurrent_decoder.bias,
            &self.dense_decoder.weight,
            &self.dense_decoder.bias,
            &self.output_layer.weight,
            &self.output_layer.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 15] {
        [
            &mut self.query_encoder.w_input,
            &mut self.query_encoder.w_recurrent,
            &mut self.query_encoder.bias,
            &mut self.neighbor_encoder.w_input,
            &mut self.neighbor_encoder.w_recurrent,
            &mut self.neighbor_encoder.bias,
            &mut self.obstacle_encoder.weight,
            &mut self.obstacle_encoder.bias,
            &mut self.recurrent_decoder.w_input,
            &mut self.recurrent_decoder.w_recurrent,
            &mut self.recurrent_decoder.bias,
            &mut self.dense_decoder.weight,
            &mut self.dense_decoder.bias,
            &mut self.output_layer.weight,
            &mut self.output_layer.bias,
        ]
    }

    /// Whether tensor `i` (in [`TENSOR_NAMES`] order) is a weight matrix
    /// (regularized) rather than a bias.
    pub fn is_regularized(i: usize) -> bool {
        !TENSOR_NAMES[i].ends_with(".bias")
    }

    /// Expected shape of every tensor for this configuration.
    pub fn expected_shapes(config: &ModelConfig) -> [(usize, usize); 15] {
        let z = Self::zeros(*config);
        z.tensors().map(|m| m.shape())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|m| m.data.len()).sum()
    }

    /// Sum of squared entries of all weight matrices (biases excluded).
    pub fn l2_sum(&self) -> f64 {
        self.tensors().iter().enumerate().filter(|(i, _)| Self::is_regularized(*i)).map(|(_, m)| m.sum_sq()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

/// Options that alter inference without touching the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace the environment encoding by the empty-set (zero) encoding.
    pub zero_environment: bool,
}

/// A minibatch laid out for the batched layers.
struct Batch {
    size: usize,
    steps: usize,
    /// `T*B x 3`.
    ego: Mat,
    /// `T*M x 6` over all neighbor branches of all samples.
    neighbors: Mat,
    neighbor_owner: Vec<usize>,
    /// `K x 6`.
    obstacles: Mat,
    obstacle_owner: Vec<usize>,
}

impl Batch {
    fn build(histories: &[&ObservationHistory], config: &ModelConfig) -> Result<Batch> {
        let steps = config.history_len;
        for (s, h) in histories.iter().enumerate() {
            h.validate().map_err(|e| Error::ModelContract(format!("sample {s}: {e}")))?;
            if h.len() != steps {
                return Err(Error::ModelContract(format!(
                    "sample {s}: history has {} steps, model expects {steps}",
                    h.len()
                )));
            }
        }
        let b = histories.len();
        let mut ego = Mat::zeros(steps * b, VELOCITY_DIM);
        for (s, h) in histories.iter().enumerate() {
            for t in 0..steps {
                ego.row_mut(t * b + s).copy_from_slice(h.ego_velocities[t].as_slice());
            }
        }
        let neighbor_owner: Vec<usize> =
            histories.iter().enumerate().flat_map(|(s, h)| std::iter::repeat_n(s, h.num_neighbors())).collect();
        let m = neighbor_owner.len();
        let mut neighbors = Mat::zeros(steps * m, RELATIVE_DIM);
        let mut branch = 0;
        for h in histories {
            for j in 0..h.num_neighbors() {
                for t in 0..steps {
                    let row = neighbors.row_mut(t * m + branch);
                    row[..3].copy_from_slice(h.neighbor_rel_positions[j][t].as_slice());
                    row[3..].copy_from_slice(h.neighbor_rel_velocities[j][t].as_slice());
                }
                branch += 1;
            }
        }
        let obstacle_owner: Vec<usize> =
            histories.iter().enumerate().flat_map(|(s, h)| std::iter::repeat_n(s, h.num_obstacles())).collect();
        let mut obstacles = Mat::zeros(obstacle_owner.len(), RELATIVE_DIM);
        let mut row_i = 0;
        for h in histories {
            for o in 0..h.num_obstacles() {
                let row = obstacles.row_mut(row_i);
                row[..3].copy_from_slice(h.obstacle_rel_positions[o].as_slice());
                row[3..].copy_from_slice(h.obstacle_rel_velocities[o].as_slice());
                row_i += 1;
            }
        }
        Ok(Batch { size: b, steps, ego, neighbors, neighbor_owner, obstacles, obstacle_owner })
    }
}

/// Which branch won each coordinate of the pooled encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Winner {
    None,
    Neighbor(usize),
    Obstacle(usize),
}

struct ForwardTrace {
    query: LstmTrace,
    neighbor: Option<LstmTrace>,
    obstacle_out: Mat,
    winners: Vec<Winner>,
    /// `B x (Hq + He)`.
    encoding: Mat,
    decoder: LstmTrace,
    /// `T_H*B x Hd`.
    decoder_hidden: Mat,
    /// `T_H*B x Hdense`.
    dense_out: Mat,
    /// `T_H*B x 3`.
    output: Mat,
}

fn forward_trace(batch: &Batch, w: &ModelWeights, opts: ForwardOptions) -> ForwardTrace {
    let c = &w.config;
    let (b, he) = (batch.size, c.env_hidden);
    let query = lstm::forward_sequence(&w.query_encoder, &batch.ego, batch.steps, b);

    let m = batch.neighbor_owner.len();
    let neighbor = (m > 0).then(|| lstm::forward_sequence(&w.neighbor_encoder, &batch.neighbors, batch.steps, m));
    let obstacle_out = if batch.obstacle_owner.is_empty() {
        Mat::zeros(0, he)
    } else {
        w.obstacle_encoder.forward(&batch.obstacles, true)
    };

    // Global max over the stacked branch encodings, neighbors first.
    let mut pooled = Mat::zeros(b, he);
    let mut winners = vec![Winner::None; b * he];
    if !opts.zero_environment {
        let mut best = vec![f64::NEG_INFINITY; b * he];
        if let Some(tr) = &neighbor {
            let h = tr.last_hidden();
            for (branch, &s) in batch.neighbor_owner.iter().enumerate() {
                for (j, &v) in h.row(branch).iter().enumerate() {
                    if v > best[s * he + j] {
                        best[s * he + j] = v;
                        winners[s * he + j] = Winner::Neighbor(branch);
                    }
                }
            }
        }
        for (branch, &s) in batch.obstacle_owner.iter().enumerate() {
            for (j, &v) in obstacle_out.row(branch).iter().enumerate() {
                if v > best[s * he + j] {
                    best[s * he + j] = v;
                    winners[s * he + j] = Winner::Obstacle(branch);
                }
            }
        }
        for (p, (v, win)) in pooled.data.iter_mut().zip(best.iter().zip(&winners)) {
            if *win != Winner::None {
                *p = *v;
            }
        }
    }

    let hq = c.query_hidden;
    let mut encoding = Mat::zeros(b, hq + he);
    let zq = query.last_hidden();
    for s in 0..b {
        let row = encoding.row_mut(s);
        row[..hq].copy_from_slice(zq.row(s));
        row[hq..].copy_from_slice(pooled.row(s));
    }

    let decoder = lstm::forward_repeated(&w.recurrent_decoder, &encoding, c.horizon);
    let decoder_hidden = decoder.stacked_hiddens();
    let dense_out = w.dense_decoder.forward(&decoder_hidden, true);
    let output = w.output_layer.forward(&dense_out, false);
    ForwardTrace { query, neighbor, obstacle_out, winners, encoding, decoder, decoder_hidden, dense_out, output }
}

fn unpack_output(output: &Mat, batch: usize, horizon: usize) -> Vec<Vec<Vec3>> {
    (0..batch)
        .map(|s| {
            (0..horizon)
                .map(|t| {
                    let r = output.row(t * batch + s);
                    Vec3::new(r[0], r[1], r[2])
                })
                .collect()
        })
        .collect()
}

/// Predicted future velocities `v_1..v_TH` for each history.
pub fn forward_batch(
    histories: &[&ObservationHistory],
    w: &ModelWeights,
    opts: ForwardOptions,
) -> Result<Vec<Vec<Vec3>>> {
    if histories.is_empty() {
        return Ok(Vec::new());
    }
    let batch = Batch::build(histories, &w.config)?;
    let tr = forward_trace(&batch, w, opts);
    Ok(unpack_output(&tr.output, batch.size, w.config.horizon))
}

pub fn forward(history: &ObservationHistory, w: &ModelWeights) -> Result<Vec<Vec3>> {
    Ok(forward_batch(&[history], w, ForwardOptions::default())?.remove(0))
}

/// `(1/T_H) Σ_k |v_k - v̂_k|^2 + λ Σ W^2` (biases excluded).
pub fn loss(predicted: &[Vec3], truth: &[Vec3], w: &ModelWeights, l2_lambda: f64) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "loss: sequence lengths differ");
    data_loss(predicted, truth) + l2_lambda * w.l2_sum()
}

pub(crate) fn data_loss(predicted: &[Vec3], truth: &[Vec3]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).map(|(p, t)| (p - t).norm_squared()).sum::<f64>() / predicted.len() as f64
}

/// Result of a batched loss/gradient evaluation.
pub struct BatchGradient {
    /// Per-sample data loss (no regularizer), in input order.
    pub sample_losses: Vec<f64>,
    /// Gradient of `mean(sample_losses) + λ Σ W^2`.
    pub gradient: ModelWeights,
}

/// Loss and exact gradient over a batch of (history, target velocities).
pub fn loss_and_gradient(
    histories: &[&ObservationHistory],
    targets: &[&[Vec3]],
    w: &ModelWeights,
    l2_lambda: f64,
    truncation: Option<usize>,
) -> Result<BatchGradient> {
    assert_eq!(histories.len(), targets.len());
    let c = w.config;
    let batch = Batch::build(histories, &c)?;
    let b = batch.size;
    for (s, t) in targets.iter().enumerate() {
        if t.len() != c.horizon {
            return Err(Error::ModelContract(format!(
                "sample {s}: target has {} steps, model horizon is {}",
                t.len(),
                c.horizon
            )));
        }
    }
    let tr = forward_trace(&batch, w, ForwardOptions::default());

    let th = c.horizon;
    let mut sample_losses = vec![0.0; b];
    let mut d_out = Mat::zeros(th * b, VELOCITY_DIM);
    let scale = 2.0 / (b as f64 * th as f64);
    for s in 0..b {
        for t in 0..th {
            let r = t * b + s;
            let pred = tr.output.row(r);
            let truth = targets[s][t];
            let mut acc = 0.0;
            for a in 0..3 {
                let e = pred[a] - truth[a];
                acc += e * e;
                d_out.data[r * 3 + a] = scale * e;
            }
            sample_losses[s] += acc;
        }
        sample_losses[s] /= th as f64;
    }

    let mut g = w.zeros_like();

    // Output and dense decoder layers.
    let mut d_dense =
        w.output_layer.backward(&tr.dense_out, &tr.output, &mut d_out, false, &mut g.output_layer, true).unwrap();
    let d_hidden = w
        .dense_decoder
        .backward(&tr.decoder_hidden, &tr.dense_out, &mut d_dense, true, &mut g.dense_decoder, true)
        .unwrap();

    // Recurrent decoder; its input is the same encoding at every step.
    let dz_dec = lstm::backward(&w.recurrent_decoder, &tr.decoder, &d_hidden, truncation, &mut g.recurrent_decoder);
    let mut dz_sum = Mat::zeros(b, 4 * c.decoder_hidden);
    for t in 0..th {
        for (acc, v) in
            dz_sum.data.iter_mut().zip(&dz_dec.data[t * b * 4 * c.decoder_hidden..(t + 1) * b * 4 * c.decoder_hidden])
        {
            *acc += v;
        }
    }
    gemm(1.0, &tr.encoding, true, &dz_sum, false, 1.0, &mut g.recurrent_decoder.w_input);
    let d_encoding = matmul(&dz_sum, false, &w.recurrent_decoder.w_input, true);

    // Query encoder: gradient enters at the final hidden state.
    let hq = c.query_hidden;
    let he = c.env_hidden;
    let steps = batch.steps;
    let mut dh_query = Mat::zeros(steps * b, hq);
    for s in 0..b {
        dh_query.row_mut((steps - 1) * b + s).copy_from_slice(&d_encoding.row(s)[..hq]);
    }
    let dz_q = lstm::backward(&w.query_encoder, &tr.query, &dh_query, truncation, &mut g.query_encoder);
    gemm(1.0, &batch.ego, true, &dz_q, false, 1.0, &mut g.query_encoder.w_input);

    // Max pooling routes each coordinate's gradient to its winning branch.
    let m = batch.neighbor_owner.len();
    let mut dh_neighbor = Mat::zeros(steps * m, he);
    let mut d_obstacle = Mat::zeros(batch.obstacle_owner.len(), he);
    for s in 0..b {
        let d_pool = &d_encoding.row(s)[hq..];
        for j in 0..he {
            match tr.winners[s * he + j] {
                Winner::None => {}
                Winner::Neighbor(branch) => dh_neighbor.data[((steps - 1) * m + branch) * he + j] += d_pool[j],
                Winner::Obstacle(branch) => d_obstacle.data[branch * he + j] += d_pool[j],
            }
        }
    }
    if let Some(ntr) = &tr.neighbor {
        let dz_n = lstm::backward(&w.neighbor_encoder, ntr, &dh_neighbor, truncation, &mut g.neighbor_encoder);
        gemm(1.0, &batch.neighbors, true, &dz_n, false, 1.0, &mut g.neighbor_encoder.w_input);
    }
    if !batch.obstacle_owner.is_empty() {
        w.obstacle_encoder.backward(
            &batch.obstacles,
            &tr.obstacle_out,
            &mut d_obstacle,
            true,
            &mut g.obstacle_encoder,
            false,
        );
    }

    // L2 on weight matrices.
    if l2_lambda != 0.0 {
        let params = w.tensors();
        for (i, gt) in g.tensors_mut().into_iter().enumerate() {
            if ModelWeights::is_regularized(i) {
                for (gv, wv) in gt.data.iter_mut().zip(&params[i].data) {
                    *gv += 2.0 * l2_lambda * wv;
                }
            }
        }
    }

    Ok(BatchGradient { sample_losses, gradient: g })
}

/// Single-sample loss and gradient.
pub fn backward(
    history: &ObservationHistory,
    truth: &[Vec3],
    w: &ModelWeights,
    l2_lambda: f64,
) -> Result<(f64, ModelWeights)> {
    let bg = loss_and_gradient(&[history], &[truth], w, l2_lambda, None)?;
    Ok((bg.sample_losses[0] + l2_lambda * w.l2_sum(), bg.gradient))
}
