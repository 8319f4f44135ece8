//! Deep unidirectional LSTM with forget gates and peephole connections,
//! topped by a softmax over the label alphabet.
//!
//! Gate pre-activations are laid out `[input, forget, cell, output]`, each
//! `hidden` rows tall. The input and forget peepholes look at the previous
//! cell, the output peephole at the updated one.

mod model_file;
mod train;

pub use model_file::{
    load_model, read_model, save_model, write_model, Model, MAGIC as MODEL_MAGIC,
};
pub use train::{
    full_sequence_gradient, train_stream, window_gradient, SegmentRef, TrainOptions, TrainReport,
    UpdateRecord, Utterance,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Frames, Result};

/// Shape and training hyperparameters of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub layer_sizes: Vec<usize>,
    pub output_dim: usize,
    pub unroll_length: usize,
    pub update_period: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: crate::features::FEATURE_DIM,
            layer_sizes: vec![32, 32, 32],
            output_dim: 30,
            unroll_length: 128,
            update_period: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            clip_norm: 1.0,
            seed: 1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() {
            return Err(Error::Config("at least one LSTM layer is required".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.layer_sizes.contains(&0) {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.update_period == 0 || self.update_period > self.unroll_length {
            return Err(Error::Config(format!(
                "update period {} must be in 1..={}",
                self.update_period, self.unroll_length
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += self^T * v`
    fn mul_t_add(&self, v: &[f64], out: &mut [f64]) {
        for (r, &s) in v.iter().enumerate() {
            if s != 0.0 {
                axpy(s, self.row(r), out);
            }
        }
    }

    /// `self += u * v^T`
    fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        for (r, &s) in u.iter().enumerate() {
            if s != 0.0 {
                axpy(s, v, self.row_mut(r));
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of one LSTM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `4H x I`
    pub w_input: Matrix,
    /// `4H x H`
    pub w_recurrent: Matrix,
    /// `4H`
    pub bias: Vec<f64>,
    pub peep_input: Vec<f64>,
    pub peep_forget: Vec<f64>,
    pub peep_output: Vec<f64>,
}

/// Hidden output and cell of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LayerState {
    pub fn zeros(hidden: usize) -> Self {
        LayerState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Activations of one step, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LayerParams {
            w_input: Matrix::zeros(4 * hidden, input),
            w_recurrent: Matrix::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
            peep_input: vec![0.0; hidden],
            peep_forget: vec![0.0; hidden],
            peep_output: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.peep_input.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.cols
    }

    fn activations(&self, x: &[f64], prev: &LayerState) -> StepCache {
        let hidden = self.hidden();
        let mut pre = self.bias.clone();
        self.w_input.mul_add(x, &mut pre);
        self.w_recurrent.mul_add(&prev.h, &mut pre);
        let mut i = vec![0.0; hidden];
        let mut f = vec![0.0; hidden];
        let mut g = vec![0.0; hidden];
        let mut o = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut tanh_c = vec![0.0; hidden];
        for k in 0..hidden {
            let cp = prev.c[k];
            i[k] = sigmoid(pre[k] + self.peep_input[k] * cp);
            f[k] = sigmoid(pre[hidden + k] + self.peep_forget[k] * cp);
            g[k] = pre[2 * hidden + k].tanh();
            c[k] = f[k] * cp + i[k] * g[k];
            o[k] = sigmoid(pre[3 * hidden + k] + self.peep_output[k] * c[k]);
            tanh_c[k] = c[k].tanh();
        }
        StepCache {
            x: x.to_vec(),
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            i,
            f,
            g,
            o,
            c,
            tanh_c,
        }
    }

    /// One peephole LSTM step. Returns the new state; its `h` is the output.
    pub fn step(&self, x: &[f64], prev: &LayerState) -> LayerState {
        self.cached_step(x, prev).1
    }

    pub(crate) fn cached_step(&self, x: &[f64], prev: &LayerState) -> (StepCache, LayerState) {
        let cache = self.activations(x, prev);
        let h = cache
            .o
            .iter()
            .zip(&cache.tanh_c)
            .map(|(o, t)| o * t)
            .collect();
        let state = LayerState {
            h,
            c: cache.c.clone(),
        };
        (cache, state)
    }

    /// Backpropagates one step.
    ///
    /// `dh` is the total gradient on this step's output, `dc_next` the
    /// gradient flowing into this step's cell from the next step. Returns
    /// `(dx, dh_prev, dc_prev)` and accumulates weight gradients into `grad`.
    pub(crate) fn backward_step(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc_next: &[f64],
        grad: &mut LayerParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hidden = self.hidden();
        let mut da = vec![0.0; 4 * hidden];
        let mut dc_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let (i, f, g, o) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k]);
            let tc = cache.tanh_c[k];
            let da_o = dh[k] * tc * o * (1.0 - o);
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc) + da_o * self.peep_output[k];
            let da_i = dc * g * i * (1.0 - i);
            let da_g = dc * i * (1.0 - g * g);
            let da_f = dc * cache.c_prev[k] * f * (1.0 - f);
            dc_prev[k] = dc * f + da_i * self.peep_input[k] + da_f * self.peep_forget[k];
            grad.peep_input[k] += da_i * cache.c_prev[k];
            grad.peep_forget[k] += da_f * cache.c_prev[k];
            grad.peep_output[k] += da_o * cache.c[k];
            da[k] = da_i;
            da[hidden + k] = da_f;
            da[2 * hidden + k] = da_g;
            da[3 * hidden + k] = da_o;
        }
        grad.w_input.add_outer(&da, &cache.x);
        grad.w_recurrent.add_outer(&da, &cache.h_prev);
        for (b, d) in grad.bias.iter_mut().zip(&da) {
            *b += d;
        }
        let mut dx = vec![0.0; self.input_dim()];
        self.w_input.mul_t_add(&da, &mut dx);
        let mut dh_prev = vec![0.0; hidden];
        self.w_recurrent.mul_t_add(&da, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

/// Recurrent state of a running stream, one entry per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    pub layers: Vec<LayerState>,
}

impl StreamState {
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        StreamState {
            layers: layer_sizes.iter().map(|&h| LayerState::zeros(h)).collect(),
        }
    }
}

/// All weights of the LSTM stack and its softmax layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    /// `O x H_last`
    pub out_weight: Matrix,
    pub out_bias: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let mut layers = Vec::with_capacity(config.layer_sizes.len());
        let mut input = config.input_dim;
        for &hidden in &config.layer_sizes {
            layers.push(LayerParams::zeros(input, hidden));
            input = hidden;
        }
        NetworkParams {
            layers,
            out_weight: Matrix::zeros(config.output_dim, input),
            out_bias: vec![0.0; config.output_dim],
        }
    }

    /// Uniform(-0.1, 0.1) weights, zero biases except the forget gate at +1.
    pub fn init(config: &NetworkConfig) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (name, _, values) in params.tensors_mut() {
            if name.ends_with(".bias") || name == "softmax.bias" {
                continue;
            }
            for v in values {
                *v = rng.random_range(-0.1..0.1);
            }
        }
        for layer in &mut params.layers {
            let h = layer.hidden();
            layer.bias[h..2 * h].fill(1.0);
        }
        params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.out_bias.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden()).collect()
    }

    pub fn initial_state(&self) -> StreamState {
        StreamState::zeros(&self.layer_sizes())
    }

    /// Named tensors in a fixed order with their shapes.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.hidden();
            out.push((
                format!("lstm.{l}.w_input"),
                vec![4 * h, layer.input_dim()],
                &layer.w_input.data,
            ));
            out.push((
                format!("lstm.{l}.w_recurrent"),
                vec![4 * h, h],
                &layer.w_recurrent.data,
            ));
            out.push((format!("lstm.{l}.bias"), vec![4 * h], &layer.bias));
            out.push((format!("lstm.{l}.peep_input"), vec![h], &layer.peep_input));
            out.push((format!("lstm.{l}.peep_forget"), vec![h], &layer.peep_forget));
            out.push((format!("lstm.{l}.peep_output"), vec![h], &layer.peep_output));
        }
        out.push((
            "softmax.weight".into(),
            vec![self.out_weight.rows, self.out_weight.cols],
            &self.out_weight.data,
        ));
        out.push((
            "softmax.bias".into(),
            vec![self.out_bias.len()],
            &self.out_bias,
        ));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f64])> {
        let mut out: Vec<(String, Vec<usize>, &mut [f64])> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let h = layer.peep_input.len();
            let input = layer.w_input.cols;
            out.push((
                format!("lstm.{l}.w_input"),
                vec![4 * h, input],
                &mut layer.w_input.data,
            ));
            out.push((
                format!("lstm.{l}.w_recurrent"),
                vec![4 * h, h],
                &mut layer.w_recurrent.data,
            ));
            out.push((format!("lstm.{l}.bias"), vec![4 * h], &mut layer.bias));
            out.push((
                format!("lstm.{l}.peep_input"),
                vec![h],
                &mut layer.peep_input,
            ));
            out.push((
                format!("lstm.{l}.peep_forget"),
                vec![h],
                &mut layer.peep_forget,
            ));
            out.push((
                format!("lstm.{l}.peep_output"),
                vec![h],
                &mut layer.peep_output,
            ));
        }
        let shape = vec![self.out_weight.rows, self.out_weight.cols];
        out.push(("softmax.weight".into(), shape, &mut self.out_weight.data));
        let n = self.out_bias.len();
        out.push(("softmax.bias".into(), vec![n], &mut self.out_bias));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Pre-softmax outputs for one frame; advances `state`.
    pub fn logits_frame(&self, frame: &[f64], state: &mut StreamState) -> Result<Vec<f64>> {
        if frame.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: frame.len(),
            });
        }
        let mut x = frame.to_vec();
        for (layer, st) in self.layers.iter().zip(state.layers.iter_mut()) {
            *st = layer.step(&x, st);
            x.clone_from(&st.h);
        }
        let mut logits = self.out_bias.clone();
        self.out_weight.mul_add(&x, &mut logits);
        Ok(logits)
    }

    /// Label posteriors for one frame; advances `state`.
    pub fn forward_frame(&self, frame: &[f64], state: &mut StreamState) -> Result<Vec<f64>> {
        let logits = self.logits_frame(frame, state)?;
        Ok(softmax(&logits))
    }

    /// Runs a whole sequence frame by frame from `state`, returning posteriors.
    pub fn forward_sequence(&self, frames: &Frames, state: &mut StreamState) -> Result<Frames> {
        let mut out = Frames::with_capacity(self.output_dim(), frames.len());
        for frame in frames.iter() {
            out.push(&self.forward_frame(frame, state)?)?;
        }
        Ok(out)
    }

    /// Scales every tensor in place.
    pub(crate) fn scale(&mut self, s: f64) {
        for (_, _, v) in self.tensors_mut() {
            for x in v {
                *x *= s;
            }
        }
    }

    pub(crate) fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, _, v)| v.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// `self += s * other`
    pub(crate) fn add_scaled(&mut self, s: f64, other: &NetworkParams) {
        let src = other.tensors();
        for ((_, _, dst), (_, _, src)) in self.tensors_mut().into_iter().zip(src) {
            axpy(s, src, dst);
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Forward pass over a window keeping every activation, for BPTT.
pub(crate) struct ForwardTrace {
    pub caches: Vec<Vec<StepCache>>,
    pub logits: Frames,
}

impl NetworkParams {
    /// Runs `frames` from `state`, caching activations. If `snapshot_at` is
    /// `Some(k)`, the state after the first `k` frames is returned as well.
    pub(crate) fn forward_trace(
        &self,
        frames: &Frames,
        state: &StreamState,
        snapshot_at: Option<usize>,
    ) -> (ForwardTrace, StreamState, Option<StreamState>) {
        let mut state = state.clone();
        let mut caches = Vec::with_capacity(frames.len());
        let mut logits = Frames::with_capacity(self.output_dim(), frames.len());
        let mut snapshot = None;
        for (t, frame) in frames.iter().enumerate() {
            if snapshot_at == Some(t) {
                snapshot = Some(state.clone());
            }
            let mut x = frame.to_vec();
            let mut per_layer = Vec::with_capacity(self.layers.len());
            for (layer, st) in self.layers.iter().zip(state.layers.iter_mut()) {
                let (cache, next) = layer.cached_step(&x, st);
                *st = next;
                x.clone_from(&st.h);
                per_layer.push(cache);
            }
            let mut out = self.out_bias.clone();
            self.out_weight.mul_add(&x, &mut out);
            logits.push(&out).expect("output dim");
            caches.push(per_layer);
        }
        if snapshot_at == Some(frames.len()) {
            snapshot = Some(state.clone());
        }
        (ForwardTrace { caches, logits }, state, snapshot)
    }

    /// Backpropagates `dlogits` (gradient on pre-softmax outputs) through a
    /// traced window. The window's initial state is treated as a constant.
    pub(crate) fn backward_trace(
        &self,
        trace: &ForwardTrace,
        dlogits: &Frames,
        grad: &mut NetworkParams,
    ) {
        let last_layer = self.layers.len() - 1;
        // nothing to propagate beyond the last frame with a non-zero gradient
        let end = (0..dlogits.len())
            .rev()
            .find(|&t| dlogits.frame(t).iter().any(|&g| g != 0.0))
            .map_or(0, |t| t + 1);
        let mut dh_next: Vec<Vec<f64>> =
            self.layers.iter().map(|l| vec![0.0; l.hidden()]).collect();
        let mut dc_next: Vec<Vec<f64>> = dh_next.clone();
        for t in (0..end).rev() {
            let dl = dlogits.frame(t);
            let caches = &trace.caches[t];
            let top = &caches[last_layer];
            let h_top: Vec<f64> = top
                .o
                .iter()
                .zip(&top.tanh_c)
                .map(|(o, tc)| o * tc)
                .collect();
            grad.out_weight.add_outer(dl, &h_top);
            for (b, d) in grad.out_bias.iter_mut().zip(dl) {
                *b += d;
            }
            let mut dh_above = vec![0.0; h_top.len()];
            self.out_weight.mul_t_add(dl, &mut dh_above);
            for l in (0..self.layers.len()).rev() {
                let dh: Vec<f64> = dh_above
                    .iter()
                    .zip(&dh_next[l])
                    .map(|(a, b)| a + b)
                    .collect();
                let (dx, dh_prev, dc_prev) =
                    self.layers[l].backward_step(&caches[l], &dh, &dc_next[l], &mut grad.layers[l]);
                dh_next[l] = dh_prev;
                dc_next[l] = dc_prev;
                dh_above = dx;
            }
        }
    }
}
