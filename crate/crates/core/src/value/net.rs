//! Socially attentive value network.
//!
//! Every vehicle-pedestrian pair is embedded by a shared MLP. An attention
//! MLP scores each embedding against the crowd mean, the scores go through
//! a softmax, and the weighted sum of per-pair features forms the crowd
//! feature. The value head reads the vehicle features and the crowd
//! feature. With no pedestrians a learned placeholder stands in for the
//! crowd feature.
//!
//! Sums over pedestrians are taken in sorted order so the output does not
//! depend on pedestrian order, not even in the last bit.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{exp, sqrt};
use crate::state::{EgoJointState, PAIR_FEATURES, VEHICLE_FEATURES};
use crate::value::ValueFunction;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("{0} needs at least one layer")]
    Empty(&'static str),
    #[error("{0} must end in a single output")]
    NotScalar(&'static str),
    #[error("layer shapes do not match the configuration")]
    ShapeMismatch,
    #[error("non-finite parameter")]
    NonFinite,
}

/// Hidden and output widths of the four sub-networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub embedding: Vec<usize>,
    pub attention: Vec<usize>,
    pub feature: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            embedding: vec![64, 32],
            attention: vec![32, 32, 1],
            feature: vec![32, 32],
            head: vec![64, 32, 1],
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        for (name, dims) in [
            ("embedding", &self.embedding),
            ("attention", &self.attention),
            ("feature", &self.feature),
            ("head", &self.head),
        ] {
            if dims.is_empty() || dims.contains(&0) {
                return Err(NetError::Empty(name));
            }
        }
        if *self.attention.last().unwrap() != 1 {
            return Err(NetError::NotScalar("attention"));
        }
        if *self.head.last().unwrap() != 1 {
            return Err(NetError::NotScalar("head"));
        }
        Ok(())
    }

    fn embedding_dim(&self) -> usize {
        *self.embedding.last().unwrap()
    }

    fn feature_dim(&self) -> usize {
        *self.feature.last().unwrap()
    }
}

/// Fully connected layer; `weights` is `rows x cols`, row-major, so
/// `out = weights * in + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Dense { rows, cols, weights: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / sqrt(cols as f64);
        let mut draw = || (rng.random::<f64>() * 2.0 - 1.0) * bound;
        let weights = (0..rows * cols).map(|_| draw()).collect();
        let bias = (0..rows).map(|_| draw()).collect();
        Dense { rows, cols, weights, bias }
    }

    #[inline]
    fn forward(&self, input: &[f64], out: &mut Vec<f64>, relu: bool) {
        debug_assert_eq!(input.len(), self.cols);
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.cols).zip(&self.bias) {
            let mut acc = *b;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(if relu && acc < 0.0 { 0.0 } else { acc });
        }
    }
}

/// Multi-layer perceptron with ReLU between layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// Whether the output layer is rectified too.
    pub relu_last: bool,
}

impl Mlp {
    fn build(input: usize, dims: &[usize], relu_last: bool, mut make: impl FnMut(usize, usize) -> Dense) -> Self {
        let mut layers = Vec::with_capacity(dims.len());
        let mut cols = input;
        for &rows in dims {
            layers.push(make(rows, cols));
            cols = rows;
        }
        Mlp { layers, relu_last }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    fn relu_at(&self, l: usize) -> bool {
        l + 1 < self.layers.len() || self.relu_last
    }

    /// Output only.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next, self.relu_at(l));
            core::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Activations of every layer, input first, output last.
    fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.rows);
            layer.forward(acts.last().unwrap(), &mut out, self.relu_at(l));
            acts.push(out);
        }
        acts
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input.
    fn backward(&self, acts: &[Vec<f64>], d_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if self.relu_at(l) {
                for (d, a) in delta.iter_mut().zip(&acts[l + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &acts[l];
            let g = &mut grad.layers[l];
            let mut d_in = vec![0.0; layer.cols];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.cols;
                let w_row = &layer.weights[row..row + layer.cols];
                let g_row = &mut g.weights[row..row + layer.cols];
                for i in 0..layer.cols {
                    g_row[i] += d * input[i];
                    d_in[i] += d * w_row[i];
                }
            }
            delta = d_in;
        }
        delta
    }
}

/// Parameters of the value network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub config: NetConfig,
    pub embedding: Mlp,
    pub attention: Mlp,
    pub feature: Mlp,
    pub head: Mlp,
    /// Crowd feature used when there are no pedestrians.
    pub placeholder: Vec<f64>,
}

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| exp(s - max)).collect();
    let mut tmp = exps.clone();
    let total = sorted_sum(&mut tmp);
    exps.into_iter().map(|e| e / total).collect()
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    embed: Vec<Vec<Vec<f64>>>,
    mean: Vec<f64>,
    attention: Vec<Vec<Vec<f64>>>,
    feature: Vec<Vec<Vec<f64>>>,
    weights: Vec<f64>,
    head: Vec<Vec<f64>>,
}

impl ValueNet {
    fn build(config: NetConfig, mut make: impl FnMut(usize, usize) -> Dense) -> Result<Self, NetError> {
        config.validate()?;
        let e = config.embedding_dim();
        let f = config.feature_dim();
        let embedding = Mlp::build(PAIR_FEATURES, &config.embedding, true, &mut make);
        let attention = Mlp::build(2 * e, &config.attention, false, &mut make);
        let feature = Mlp::build(e, &config.feature, false, &mut make);
        let head = Mlp::build(VEHICLE_FEATURES + f, &config.head, false, &mut make);
        Ok(ValueNet { config, embedding, attention, feature, head, placeholder: vec![0.0; f] })
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self, NetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = ValueNet::build(config, |r, c| Dense::random(r, c, &mut rng))?;
        for p in net.placeholder.iter_mut() {
            *p = (rng.random::<f64>() * 2.0 - 1.0) * 0.1;
        }
        Ok(net)
    }

    /// Same shapes, every parameter zero.
    pub fn zeros(config: NetConfig) -> Result<Self, NetError> {
        ValueNet::build(config, Dense::zeros)
    }

    pub fn zeros_like(&self) -> Self {
        ValueNet::zeros(self.config.clone()).expect("config already validated")
    }

    /// Checks shapes against the configuration and that every value is finite.
    pub fn validate(&self) -> Result<(), NetError> {
        let reference = self.zeros_like();
        let a = self.slices();
        let b = reference.slices();
        if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.len() != y.len()) {
            return Err(NetError::ShapeMismatch);
        }
        for (mine, theirs) in [
            (&self.embedding, &reference.embedding),
            (&self.attention, &reference.attention),
            (&self.feature, &reference.feature),
            (&self.head, &reference.head),
        ] {
            if mine.relu_last != theirs.relu_last
                || mine.layers.iter().zip(&theirs.layers).any(|(x, y)| x.rows != y.rows || x.cols != y.cols)
            {
                return Err(NetError::ShapeMismatch);
            }
        }
        if a.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(NetError::NonFinite);
        }
        Ok(())
    }

    /// Parameter blocks in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for mlp in [&self.embedding, &self.attention, &self.feature, &self.head] {
            for l in &mlp.layers {
                out.push(&l.weights);
                out.push(&l.bias);
            }
        }
        out.push(&self.placeholder);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for mlp in [&mut self.embedding, &mut self.attention, &mut self.feature, &mut self.head] {
            for l in mlp.layers.iter_mut() {
                out.push(&mut l.weights);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.placeholder);
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Reads parameter `index` in [`ValueNet::slices`] order.
    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut i = index;
        for s in self.slices_mut() {
            if i < s.len() {
                return &mut s[i];
            }
            i -= s.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn embeddings(&self, ego: &EgoJointState) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = ego.pedestrians.len();
        let embed: Vec<Vec<f64>> = (0..n).map(|i| self.embedding.forward(&ego.pair_features(i))).collect();
        let mean = column_mean(&embed, self.config.embedding_dim());
        (embed, mean)
    }

    fn attention_scores(&self, embed: &[Vec<f64>], mean: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(2 * mean.len());
        embed
            .iter()
            .map(|e| {
                input.clear();
                input.extend_from_slice(e);
                input.extend_from_slice(mean);
                self.attention.forward(&input)[0]
            })
            .collect()
    }

    /// Softmax attention weight of every pedestrian; empty without pedestrians.
    pub fn attention_weights(&self, ego: &EgoJointState) -> Vec<f64> {
        if ego.pedestrians.is_empty() {
            return Vec::new();
        }
        let (embed, mean) = self.embeddings(ego);
        softmax(&self.attention_scores(&embed, &mean))
    }

    fn crowd_feature(&self, features: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
        let dim = self.config.feature_dim();
        let mut column = vec![0.0; features.len()];
        (0..dim)
            .map(|k| {
                for (c, (f, w)) in column.iter_mut().zip(features.iter().zip(weights)) {
                    *c = w * f[k];
                }
                sorted_sum(&mut column)
            })
            .collect()
    }

    fn head_input(&self, ego: &EgoJointState, crowd: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(VEHICLE_FEATURES + crowd.len());
        input.extend_from_slice(&ego.vehicle_features());
        input.extend_from_slice(crowd);
        input
    }

    /// State value of `ego`.
    pub fn forward(&self, ego: &EgoJointState) -> f64 {
        let crowd = if ego.pedestrians.is_empty() {
            self.placeholder.clone()
        } else {
            let (embed, mean) = self.embeddings(ego);
            let weights = softmax(&self.attention_scores(&embed, &mean));
            let features: Vec<Vec<f64>> = embed.iter().map(|e| self.feature.forward(e)).collect();
            self.crowd_feature(&features, &weights)
        };
        self.head.forward(&self.head_input(ego, &crowd))[0]
    }

    fn forward_trace(&self, ego: &EgoJointState) -> (f64, Trace) {
        let n = ego.pedestrians.len();
        let embed: Vec<Vec<Vec<f64>>> = (0..n).map(|i| self.embedding.forward_trace(&ego.pair_features(i))).collect();
        let outs: Vec<Vec<f64>> = embed.iter().map(|t| t.last().unwrap().clone()).collect();
        let mean = column_mean(&outs, self.config.embedding_dim());
        let attention: Vec<Vec<Vec<f64>>> = outs
            .iter()
            .map(|e| {
                let mut input = e.clone();
                input.extend_from_slice(&mean);
                self.attention.forward_trace(&input)
            })
            .collect();
        let scores: Vec<f64> = attention.iter().map(|t| t.last().unwrap()[0]).collect();
        let weights = if n > 0 { softmax(&scores) } else { Vec::new() };
        let feature: Vec<Vec<Vec<f64>>> = outs.iter().map(|e| self.feature.forward_trace(e)).collect();
        let crowd = if n == 0 {
            self.placeholder.clone()
        } else {
            let feats: Vec<Vec<f64>> = feature.iter().map(|t| t.last().unwrap().clone()).collect();
            self.crowd_feature(&feats, &weights)
        };
        let head = self.head.forward_trace(&self.head_input(ego, &crowd));
        let value = head.last().unwrap()[0];
        (value, Trace { embed, mean, attention, feature, weights, head })
    }

    /// Accumulates `d_value * dV/dθ` into `grad`.
    fn backward(&self, trace: &Trace, d_value: f64, grad: &mut ValueNet) {
        let d_head_in = self.head.backward(&trace.head, &[d_value], &mut grad.head);
        let d_crowd = &d_head_in[VEHICLE_FEATURES..];
        let n = trace.embed.len();
        if n == 0 {
            for (g, d) in grad.placeholder.iter_mut().zip(d_crowd) {
                *g += d;
            }
            return;
        }
        let e_dim = self.config.embedding_dim();

        // crowd = sum_i w_i f_i
        let mut d_weights = vec![0.0; n];
        let mut d_embed: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let f = trace.feature[i].last().unwrap();
            d_weights[i] = f.iter().zip(d_crowd).map(|(a, b)| a * b).sum();
            let d_f: Vec<f64> = d_crowd.iter().map(|d| d * trace.weights[i]).collect();
            d_embed.push(self.feature.backward(&trace.feature[i], &d_f, &mut grad.feature));
        }

        // softmax
        let dot: f64 = trace.weights.iter().zip(&d_weights).map(|(w, d)| w * d).sum();
        let mut d_mean = vec![0.0; e_dim];
        for i in 0..n {
            let d_score = trace.weights[i] * (d_weights[i] - dot);
            let d_in = self.attention.backward(&trace.attention[i], &[d_score], &mut grad.attention);
            for k in 0..e_dim {
                d_embed[i][k] += d_in[k];
                d_mean[k] += d_in[e_dim + k];
            }
        }

        // mean over pedestrians
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            for k in 0..e_dim {
                d_embed[i][k] += d_mean[k] * inv_n;
            }
            self.embedding.backward(&trace.embed[i], &d_embed[i], &mut grad.embedding);
        }
        let _ = &trace.mean;
    }

    /// Mean-squared-error loss over `batch` and its gradient.
    ///
    /// Returns `(loss, grad)` with `loss = mean((V(s) - y)^2)`.
    pub fn gradient<'a, I>(&self, batch: I) -> (f64, ValueNet)
    where
        I: IntoIterator<Item = (&'a EgoJointState, f64)>,
    {
        let items: Vec<(&EgoJointState, f64)> = batch.into_iter().collect();
        assert!(!items.is_empty(), "gradient needs a nonempty batch");
        let scale = 1.0 / items.len() as f64;
        let mut grad = self.zeros_like();
        let mut loss = 0.0;
        for (ego, target) in items {
            let (value, trace) = self.forward_trace(ego);
            let err = value - target;
            loss += err * err * scale;
            if err != 0.0 {
                self.backward(&trace, 2.0 * err * scale, &mut grad);
            }
        }
        (loss, grad)
    }

    /// Mean squared error without gradients.
    pub fn loss<'a, I>(&self, batch: I) -> f64
    where
        I: IntoIterator<Item = (&'a EgoJointState, f64)>,
    {
        let mut total = 0.0;
        let mut count = 0usize;
        for (ego, target) in batch {
            let err = self.forward(ego) - target;
            total += err * err;
            count += 1;
        }
        total / count.max(1) as f64
    }
}

fn column_mean(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    if rows.is_empty() {
        return vec![0.0; dim];
    }
    let inv = 1.0 / rows.len() as f64;
    let mut column = vec![0.0; rows.len()];
    (0..dim)
        .map(|k| {
            for (c, r) in column.iter_mut().zip(rows) {
                *c = r[k];
            }
            sorted_sum(&mut column) * inv
        })
        .collect()
}

impl ValueFunction for ValueNet {
    fn value(&self, ego: &EgoJointState) -> f64 {
        self.forward(ego)
    }
}

/// Exposes the attention softmax for gradient checks of that block alone:
/// returns the softmax of `scores` and the vector-Jacobian product with
/// `upstream`.
pub fn softmax_with_vjp(scores: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = softmax(scores);
    let dot: f64 = w.iter().zip(upstream).map(|(a, b)| a * b).sum();
    let grad = w.iter().zip(upstream).map(|(wi, ui)| wi * (ui - dot)).collect();
    (w, grad)
}
