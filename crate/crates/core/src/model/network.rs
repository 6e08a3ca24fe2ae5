use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Hyperparams;
use crate::nn::{
    cross_entropy, dropout, dropout_backward, l1_penalty_into, maxpool1d, maxpool1d_backward, relu, relu_backward,
    seeded_rng, softmax, softmax_cross_entropy_backward, Conv1dParams, DenseParams, DropoutMask, LrnParams,
    LstmStack, LstmStackCache, PoolOutput, Rng, Tensor,
};

/// Layer sizes. The default is the full-size network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_len: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel_width: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub dense_units: usize,
    /// The dense output is reshaped to `lstm_steps × (dense_units / lstm_steps)`.
    pub lstm_steps: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_len: 784,
            conv1_filters: 32,
            conv2_filters: 64,
            kernel_width: 25,
            pool_kernel: 3,
            pool_stride: 3,
            dense_units: 1024,
            lstm_steps: 32,
            lstm_hidden: 256,
            lstm_layers: 3,
        }
    }
}

impl Architecture {
    fn pooled(&self, len: usize) -> Option<usize> {
        (len >= self.pool_kernel).then(|| (len - self.pool_kernel) / self.pool_stride + 1)
    }

    pub fn pool1_len(&self) -> usize {
        self.pooled(self.input_len).unwrap_or(0)
    }

    pub fn pool2_len(&self) -> usize {
        self.pooled(self.pool1_len()).unwrap_or(0)
    }

    pub fn flat_len(&self) -> usize {
        self.conv2_filters * self.pool2_len()
    }

    pub fn lstm_features(&self) -> usize {
        self.dense_units / self.lstm_steps.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.input_len,
            self.conv1_filters,
            self.conv2_filters,
            self.kernel_width,
            self.pool_kernel,
            self.pool_stride,
            self.dense_units,
            self.lstm_steps,
            self.lstm_hidden,
            self.lstm_layers,
        ];
        if positive.contains(&0) {
            return Err(Error::arg(format!("architecture sizes must be positive: {self:?}")));
        }
        if self.pooled(self.input_len).and_then(|l| self.pooled(l)).is_none() {
            return Err(Error::arg(format!("input length {} too short for two pooling stages", self.input_len)));
        }
        if self.dense_units % self.lstm_steps != 0 {
            return Err(Error::arg(format!(
                "dense units {} not divisible into {} LSTM steps",
                self.dense_units, self.lstm_steps
            )));
        }
        Ok(())
    }
}

/// Which L1 coefficient applies to a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    Conv,
    Lstm,
    None,
}

/// How a forward pass treats dropout.
pub enum ForwardMode<'a> {
    Inference,
    Training { dropout: f64, rng: &'a mut Rng },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// `(stage, shape)` pairs recorded through one forward pass.
pub type ShapeTrace = Vec<(&'static str, Vec<usize>)>;

/// All learnable weights of the classifier. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficNet {
    pub arch: Architecture,
    pub lrn: LrnParams,
    pub num_classes: usize,
    pub conv1: Conv1dParams,
    pub conv2: Conv1dParams,
    pub dense1: DenseParams,
    pub lstm: LstmStack,
    pub dense2: DenseParams,
}

struct TrunkCache {
    x0: Tensor,
    c1: Tensor,
    p1: PoolOutput,
    n1: Tensor,
    c2: Tensor,
    p2: PoolOutput,
}

struct Cache {
    trunks: Vec<TrunkCache>,
    flat: Tensor,
    pre1: Tensor,
    mask1: Option<DropoutMask>,
    xs_shape: Vec<usize>,
    lstm: LstmStackCache,
    last: Tensor,
}

impl TrafficNet {
    /// Full-size network with freshly initialized weights.
    pub fn build(num_classes: usize, seed: u64) -> Result<Self> {
        Self::build_with(Architecture::default(), LrnParams::default(), num_classes, seed)
    }

    pub fn build_with(arch: Architecture, lrn: LrnParams, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::arg(format!("a classifier needs at least 2 classes, got {num_classes}")));
        }
        arch.validate()?;
        lrn.validate()?;
        let mut rng = seeded_rng(seed);
        let w = arch.kernel_width;
        Ok(Self {
            arch,
            lrn,
            num_classes,
            conv1: Conv1dParams::init(arch.conv1_filters, 1, w, &mut rng),
            conv2: Conv1dParams::init(arch.conv2_filters, arch.conv1_filters, w, &mut rng),
            dense1: DenseParams::init(arch.flat_len(), arch.dense_units, &mut rng),
            lstm: LstmStack::init(arch.lstm_features(), arch.lstm_hidden, arch.lstm_layers, &mut rng),
            dense2: DenseParams::init(arch.lstm_hidden, num_classes, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            lrn: self.lrn,
            num_classes: self.num_classes,
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            dense1: self.dense1.zeros_like(),
            lstm: self.lstm.zeros_like(),
            dense2: self.dense2.zeros_like(),
        }
    }

    /// A model whose weights are all zero and whose output bias is `logits`,
    /// so every input yields exactly those logits.
    pub fn constant(logits: &[f64]) -> Result<Self> {
        let mut m = Self::build(logits.len(), 0)?.zeros_like();
        m.dense2.bias = Tensor::from_vec(&[logits.len()], logits.to_vec())?;
        Ok(m)
    }

    /// Parameter tensors in their fixed declaration order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.conv1.kernels,
            &self.conv1.bias,
            &self.conv2.kernels,
            &self.conv2.bias,
            &self.dense1.weight,
            &self.dense1.bias,
        ];
        for l in &self.lstm.layers {
            out.extend([&l.w_input, &l.w_recurrent, &l.bias]);
        }
        out.extend([&self.dense2.weight, &self.dense2.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.conv1.kernels,
            &mut self.conv1.bias,
            &mut self.conv2.kernels,
            &mut self.conv2.bias,
            &mut self.dense1.weight,
            &mut self.dense1.bias,
        ];
        for l in &mut self.lstm.layers {
            out.extend([&mut l.w_input, &mut l.w_recurrent, &mut l.bias]);
        }
        out.extend([&mut self.dense2.weight, &mut self.dense2.bias]);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = ["conv1.kernels", "conv1.bias", "conv2.kernels", "conv2.bias", "dense1.weight", "dense1.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.lstm.layers.len() {
            out.extend([
                format!("lstm{}.w_input", i + 1),
                format!("lstm{}.w_recurrent", i + 1),
                format!("lstm{}.bias", i + 1),
            ]);
        }
        out.extend(["dense2.weight".to_string(), "dense2.bias".to_string()]);
        out
    }

    pub fn penalties(&self) -> Vec<Penalty> {
        let mut out = vec![Penalty::Conv, Penalty::None, Penalty::Conv, Penalty::None, Penalty::Conv, Penalty::None];
        for _ in &self.lstm.layers {
            out.extend([Penalty::Lstm, Penalty::Lstm, Penalty::None]);
        }
        out.extend([Penalty::Conv, Penalty::None]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_batch<G: AsRef<[u8]>>(&self, batch: &[G]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        for (i, g) in batch.iter().enumerate() {
            if g.as_ref().len() != self.arch.input_len {
                return Err(Error::shape(format!(
                    "graph {i} has {} pixels, model expects {}",
                    g.as_ref().len(),
                    self.arch.input_len
                )));
            }
        }
        Ok(())
    }

    fn trunk_forward(&self, pixels: &[u8]) -> Result<(Vec<f64>, TrunkCache)> {
        let a = &self.arch;
        let x0 = Tensor::from_vec(&[1, a.input_len], pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
        let c1 = self.conv1.forward(&x0)?;
        let p1 = maxpool1d(&relu(&c1), a.pool_kernel, a.pool_stride)?;
        let n1 = self.lrn.forward(&p1.output)?;
        let c2 = self.conv2.forward(&n1)?;
        let p2 = maxpool1d(&relu(&c2), a.pool_kernel, a.pool_stride)?;
        let n2 = self.lrn.forward(&p2.output)?;
        Ok((n2.into_vec(), TrunkCache { x0, c1, p1, n1, c2, p2 }))
    }

    fn trunk_backward(&self, cache: &TrunkCache, d_flat: &[f64], grads: &mut TrafficNet) -> Result<()> {
        let dn2 = Tensor::from_vec(cache.p2.output.shape(), d_flat.to_vec())?;
        let dp2 = self.lrn.backward(&cache.p2.output, &dn2)?;
        let dr2 = maxpool1d_backward(&cache.p2, &dp2)?;
        let dc2 = relu_backward(&cache.c2, &dr2);
        let dn1 = self.conv2.backward(&cache.n1, &dc2, &mut grads.conv2)?;
        let dp1 = self.lrn.backward(&cache.p1.output, &dn1)?;
        let dr1 = maxpool1d_backward(&cache.p1, &dp1)?;
        let dc1 = relu_backward(&cache.c1, &dr1);
        self.conv1.backward(&cache.x0, &dc1, &mut grads.conv1)?;
        Ok(())
    }

    fn forward_cached<G: AsRef<[u8]>>(&self, batch: &[G], mode: ForwardMode<'_>) -> Result<(Tensor, Cache)> {
        self.check_batch(batch)?;
        let a = &self.arch;
        let rows = batch.len();
        let flat_len = a.flat_len();
        let mut flat = Tensor::zeros(&[rows, flat_len]);
        let mut trunks = Vec::with_capacity(rows);
        for (r, g) in batch.iter().enumerate() {
            let (v, cache) = self.trunk_forward(g.as_ref())?;
            flat.row_mut(r).copy_from_slice(&v);
            trunks.push(cache);
        }
        let pre1 = self.dense1.forward(&flat)?;
        let h1 = relu(&pre1);
        let (xs, mask1, (last, lstm)) = match mode {
            ForwardMode::Inference => {
                let xs = to_time_major(&h1, a.lstm_steps)?;
                let out = self.lstm.forward(&xs, 0.0, &mut seeded_rng(0), false)?;
                (xs, None, out)
            }
            ForwardMode::Training { dropout: p, rng } => {
                let (dropped, mask) = dropout(&h1, p, rng, true)?;
                let xs = to_time_major(&dropped, a.lstm_steps)?;
                let out = self.lstm.forward(&xs, p, rng, true)?;
                (xs, mask, out)
            }
        };
        let xs_shape = xs.shape().to_vec();
        let logits = self.dense2.forward(&last)?;
        Ok((
            logits,
            Cache {
                trunks,
                flat,
                pre1,
                mask1,
                xs_shape,
                lstm,
                last,
            },
        ))
    }

    /// Logits `[batch, num_classes]`.
    pub fn forward<G: AsRef<[u8]>>(&self, batch: &[G], mode: ForwardMode<'_>) -> Result<Tensor> {
        Ok(self.forward_cached(batch, mode)?.0)
    }

    /// Mean cross-entropy plus L1 penalties, with gradients for every parameter.
    ///
    /// With `rng` present the pass runs in training mode using `hp.dropout`;
    /// otherwise dropout is off. Returns `(loss, gradients, logits)`.
    pub fn loss<G: AsRef<[u8]>>(
        &self,
        batch: &[G],
        labels: &[usize],
        hp: &Hyperparams,
        rng: Option<&mut Rng>,
    ) -> Result<(f64, TrafficNet, Tensor)> {
        let mut grads = self.zeros_like();
        let (loss, logits) = self.loss_into(batch, labels, hp, rng, &mut grads)?;
        Ok((loss, grads, logits))
    }

    /// [`TrafficNet::loss`] writing gradients into an existing buffer, which is
    /// overwritten. Returns `(loss, logits)`.
    pub fn loss_into<G: AsRef<[u8]>>(
        &self,
        batch: &[G],
        labels: &[usize],
        hp: &Hyperparams,
        rng: Option<&mut Rng>,
        grads: &mut TrafficNet,
    ) -> Result<(f64, Tensor)> {
        if batch.len() != labels.len() {
            return Err(Error::arg(format!("{} graphs but {} labels", batch.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::arg(format!("label {bad} out of range for {} classes", self.num_classes)));
        }
        let same_layout = grads.tensors().iter().map(|t| t.shape()).eq(self.tensors().iter().map(|t| t.shape()));
        if !same_layout {
            return Err(Error::shape("gradient buffer does not match the model layout"));
        }
        let mode = match rng {
            Some(rng) => ForwardMode::Training { dropout: hp.dropout, rng },
            None => ForwardMode::Inference,
        };
        let (logits, cache) = self.forward_cached(batch, mode)?;
        let rows = batch.len();
        let nc = self.num_classes;
        let scale = 1.0 / rows as f64;
        let mut data_loss = 0.0;
        let mut dlogits = Tensor::zeros(&[rows, nc]);
        for (r, &label) in labels.iter().enumerate() {
            let probs = softmax(logits.row(r));
            data_loss += cross_entropy(&probs, label)?;
            let g = softmax_cross_entropy_backward(&probs, label)?;
            for (d, v) in dlogits.row_mut(r).iter_mut().zip(g) {
                *d = v * scale;
            }
        }
        for t in grads.tensors_mut() {
            t.fill(0.0);
        }
        let d_last = self.dense2.backward(&cache.last, &dlogits, &mut grads.dense2)?;
        let d_xs = self.lstm.backward(&cache.lstm, &d_last, &mut grads.lstm)?;
        let d_h1 = from_time_major(&d_xs, &cache.xs_shape)?;
        let d_h1 = dropout_backward(&d_h1, cache.mask1.as_ref());
        let d_pre1 = relu_backward(&cache.pre1, &d_h1);
        let d_flat = self.dense1.backward(&cache.flat, &d_pre1, &mut grads.dense1)?;
        for (r, trunk) in cache.trunks.iter().enumerate() {
            self.trunk_backward(trunk, d_flat.row(r), grads)?;
        }
        let mut penalty = 0.0;
        let kinds = self.penalties();
        for ((w, g), kind) in self.tensors().into_iter().zip(grads.tensors_mut()).zip(kinds) {
            let lambda = match kind {
                Penalty::Conv => hp.lambda_conv,
                Penalty::Lstm => hp.lambda_lstm,
                Penalty::None => continue,
            };
            penalty += l1_penalty_into(w, lambda, g);
        }
        Ok((data_loss * scale + penalty, logits))
    }

    /// Loss value only (no backward pass), using the same conventions as [`TrafficNet::loss`].
    pub fn objective<G: AsRef<[u8]>>(
        &self,
        batch: &[G],
        labels: &[usize],
        hp: &Hyperparams,
        rng: Option<&mut Rng>,
    ) -> Result<f64> {
        if batch.len() != labels.len() {
            return Err(Error::arg(format!("{} graphs but {} labels", batch.len(), labels.len())));
        }
        let mode = match rng {
            Some(rng) => ForwardMode::Training { dropout: hp.dropout, rng },
            None => ForwardMode::Inference,
        };
        let logits = self.forward(batch, mode)?;
        let mut data_loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            data_loss += cross_entropy(&softmax(logits.row(r)), label)?;
        }
        let mut penalty = 0.0;
        for (w, kind) in self.tensors().into_iter().zip(self.penalties()) {
            let lambda = match kind {
                Penalty::Conv => hp.lambda_conv,
                Penalty::Lstm => hp.lambda_lstm,
                Penalty::None => continue,
            };
            penalty += lambda * w.data().iter().map(|v| v.abs()).sum::<f64>();
        }
        Ok(data_loss / batch.len() as f64 + penalty)
    }

    /// Mean cross-entropy (no penalty) and a fingerprint of every ReLU sign and
    /// max-pool winner. Two evaluations with equal fingerprints lie on the same
    /// smooth piece of the loss surface.
    pub(crate) fn data_loss_and_pattern<G: AsRef<[u8]>>(
        &self,
        batch: &[G],
        labels: &[usize],
        mode: ForwardMode<'_>,
    ) -> Result<(f64, u64)> {
        use std::hash::{Hash, Hasher};
        let (logits, cache) = self.forward_cached(batch, mode)?;
        let mut data_loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            data_loss += cross_entropy(&softmax(logits.row(r)), label)?;
        }
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let signs = |t: &Tensor, h: &mut std::collections::hash_map::DefaultHasher| {
            for v in t.data() {
                (*v > 0.0).hash(h);
            }
        };
        for t in &cache.trunks {
            signs(&t.c1, &mut h);
            t.p1.argmax.hash(&mut h);
            signs(&t.c2, &mut h);
            t.p2.argmax.hash(&mut h);
        }
        signs(&cache.pre1, &mut h);
        Ok((data_loss / batch.len() as f64, h.finish()))
    }

    pub fn predict<G: AsRef<[u8]>>(&self, graph: G) -> Result<Prediction> {
        let logits = self.forward(&[graph], ForwardMode::Inference)?;
        Ok(prediction_from_logits(logits.row(0)))
    }

    /// Inference over many graphs, in chunks to bound cache memory.
    pub fn predict_batch<G: AsRef<[u8]>>(&self, graphs: &[G]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(graphs.len());
        for chunk in graphs.chunks(64) {
            let logits = self.forward(chunk, ForwardMode::Inference)?;
            out.extend((0..chunk.len()).map(|r| prediction_from_logits(logits.row(r))));
        }
        Ok(out)
    }

    /// Shapes of every stage for one graph, in inference mode.
    pub fn trace<G: AsRef<[u8]>>(&self, graph: G) -> Result<ShapeTrace> {
        let (logits, cache) = self.forward_cached(&[graph], ForwardMode::Inference)?;
        let t = &cache.trunks[0];
        let a = &self.arch;
        let mut trace: ShapeTrace = vec![
            ("input", vec![t.x0.dim(1)]),
            ("conv1", t.c1.shape().to_vec()),
            ("pool1", t.p1.output.shape().to_vec()),
            ("conv2", t.c2.shape().to_vec()),
            ("pool2", t.p2.output.shape().to_vec()),
            ("flatten", vec![cache.flat.dim(1)]),
            ("dense1", vec![cache.pre1.dim(1)]),
            ("reshape", vec![cache.xs_shape[0], cache.xs_shape[2]]),
        ];
        for _ in 0..a.lstm_layers {
            trace.push(("lstm_layer", vec![a.lstm_steps, a.lstm_hidden]));
        }
        trace.push(("lstm", vec![cache.last.dim(1)]));
        trace.push(("logits", vec![logits.dim(1)]));
        Ok(trace)
    }
}

/// Softmax probabilities and the first-index argmax.
pub(crate) fn prediction_from_logits(logits: &[f64]) -> Prediction {
    let probabilities = softmax(logits);
    let mut label = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[label] {
            label = i;
        }
    }
    Prediction { label, probabilities }
}

/// `[B, steps·features]` → `[steps, B, features]` with rows as timesteps.
fn to_time_major(h: &Tensor, steps: usize) -> Result<Tensor> {
    let (rows, width) = (h.dim(0), h.dim(1));
    let feats = width / steps;
    let mut out = Tensor::zeros(&[steps, rows, feats]);
    let d = out.data_mut();
    for b in 0..rows {
        let src = h.row(b);
        for t in 0..steps {
            d[(t * rows + b) * feats..(t * rows + b + 1) * feats].copy_from_slice(&src[t * feats..(t + 1) * feats]);
        }
    }
    Ok(out)
}

fn from_time_major(xs: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let (steps, rows, feats) = (shape[0], shape[1], shape[2]);
    if xs.shape() != shape {
        return Err(Error::shape("time-major gradient shape mismatch"));
    }
    let mut out = Tensor::zeros(&[rows, steps * feats]);
    for b in 0..rows {
        let dst = out.row_mut(b);
        for t in 0..steps {
            dst[t * feats..(t + 1) * feats].copy_from_slice(&xs.data()[(t * rows + b) * feats..(t * rows + b + 1) * feats]);
        }
    }
    Ok(out)
}
