use super::dropout::{dropout, dropout_backward, DropoutMask};
use super::gemm::gemm;
use super::init::{glorot_uniform, Rng};
use super::{sigmoid, Tensor};
use crate::error::{Error, Result};

/// Gate order inside the stacked parameter matrices.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

/// Parameters of one LSTM layer (no peepholes).
///
/// The four gates are stacked along the first axis in the order
/// input, forget, cell, output, so gate `g` owns rows `g·H .. (g+1)·H`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[4·hidden, inputs]`
    pub w_input: Tensor,
    /// `[4·hidden, hidden]`
    pub w_recurrent: Tensor,
    /// `[4·hidden]`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            w_input: Tensor::zeros(&[4 * hidden, inputs]),
            w_recurrent: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    /// Glorot-uniform gate matrices, zero biases except the forget gate at 1.
    pub fn init(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(inputs, hidden);
        for g in 0..4 {
            let wi = glorot_uniform(&[hidden, inputs], inputs, hidden, rng);
            p.w_input.data_mut()[g * hidden * inputs..(g + 1) * hidden * inputs].copy_from_slice(wi.data());
            let wr = glorot_uniform(&[hidden, hidden], hidden, hidden, rng);
            p.w_recurrent.data_mut()[g * hidden * hidden..(g + 1) * hidden * hidden].copy_from_slice(wr.data());
        }
        p.bias.data_mut()[GATE_FORGET * hidden..(GATE_FORGET + 1) * hidden].fill(1.0);
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_input: self.w_input.zeros_like(),
            w_recurrent: self.w_recurrent.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.dim(1)
    }

    pub fn inputs(&self) -> usize {
        self.w_input.dim(1)
    }

    /// Input weight of one gate, `[hidden, inputs]` row-major.
    pub fn gate_input_weight(&self, gate: usize) -> &[f64] {
        let n = self.hidden() * self.inputs();
        &self.w_input.data()[gate * n..(gate + 1) * n]
    }

    pub fn gate_recurrent_weight(&self, gate: usize) -> &[f64] {
        let n = self.hidden() * self.hidden();
        &self.w_recurrent.data()[gate * n..(gate + 1) * n]
    }

    pub fn gate_bias(&self, gate: usize) -> &[f64] {
        let h = self.hidden();
        &self.bias.data()[gate * h..(gate + 1) * h]
    }

    fn check_rows(&self, what: &str, t: &Tensor, width: usize) -> Result<usize> {
        match t.shape() {
            [n] if *n == width => Ok(1),
            [b, n] if *n == width => Ok(*b),
            s => Err(Error::shape(format!("lstm {what} expects width {width}, got {s:?}"))),
        }
    }

    /// One time step for a batch of rows: `x: [B, in]`, `h, c: [B, hidden]`.
    pub fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor, LstmStepCache)> {
        let hd = self.hidden();
        let rows = self.check_rows("input", x, self.inputs())?;
        if self.check_rows("hidden state", h, hd)? != rows || self.check_rows("cell state", c, hd)? != rows {
            return Err(Error::shape("lstm state batch does not match input batch"));
        }
        let mut z = vec![0.0; rows * 4 * hd];
        for r in 0..rows {
            z[r * 4 * hd..(r + 1) * 4 * hd].copy_from_slice(self.bias.data());
        }
        gemm(rows, self.inputs(), 4 * hd, x.data(), false, self.w_input.data(), true, &mut z, 1.0);
        gemm(rows, hd, 4 * hd, h.data(), false, self.w_recurrent.data(), true, &mut z, 1.0);
        let mut c_next = vec![0.0; rows * hd];
        let mut tanh_c = vec![0.0; rows * hd];
        let mut h_next = vec![0.0; rows * hd];
        activate(&mut z, c.data(), &mut c_next, &mut tanh_c, &mut h_next, hd);
        let shape = h.shape().to_vec();
        let h_next = Tensor::from_vec(&shape, h_next)?;
        let c_next_t = Tensor::from_vec(&shape, c_next)?;
        let cache = LstmStepCache {
            x: x.clone(),
            h_prev: h.clone(),
            c_prev: c.clone(),
            gates: z,
            tanh_c,
        };
        Ok((h_next, c_next_t, cache))
    }

    /// Backward through one step. Returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        dh_next: &Tensor,
        dc_next: &Tensor,
        grads: &mut LstmParams,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let hd = self.hidden();
        let rows = cache.h_prev.len() / hd;
        if dh_next.len() != rows * hd || dc_next.len() != rows * hd {
            return Err(Error::shape("lstm step gradient does not match state shape"));
        }
        let mut dz = vec![0.0; rows * 4 * hd];
        let mut dc_prev = vec![0.0; rows * hd];
        gate_grads(
            &cache.gates,
            &cache.tanh_c,
            cache.c_prev.data(),
            dh_next.data(),
            dc_next.data(),
            &mut dz,
            &mut dc_prev,
            hd,
        );
        let n_in = self.inputs();
        gemm(4 * hd, rows, n_in, &dz, true, cache.x.data(), false, grads.w_input.data_mut(), 1.0);
        gemm(4 * hd, rows, hd, &dz, true, cache.h_prev.data(), false, grads.w_recurrent.data_mut(), 1.0);
        add_column_sums(&dz, 4 * hd, grads.bias.data_mut());
        let mut dx = Tensor::zeros(cache.x.shape());
        gemm(rows, 4 * hd, n_in, &dz, false, self.w_input.data(), false, dx.data_mut(), 0.0);
        let mut dh = Tensor::zeros(cache.h_prev.shape());
        gemm(rows, 4 * hd, hd, &dz, false, self.w_recurrent.data(), false, dh.data_mut(), 0.0);
        Ok((dx, dh, Tensor::from_vec(cache.c_prev.shape(), dc_prev)?))
    }

    /// Runs a time-major sequence `xs: [T, B, in]` from zero state and returns `[T, B, hidden]`.
    pub fn forward_sequence(&self, xs: &Tensor) -> Result<(Tensor, LstmLayerCache)> {
        if xs.ndim() != 3 || xs.dim(2) != self.inputs() {
            return Err(Error::shape(format!(
                "lstm sequence expects [T, B, {}], got {:?}",
                self.inputs(),
                xs.shape()
            )));
        }
        let (steps, rows, n_in) = (xs.dim(0), xs.dim(1), xs.dim(2));
        let hd = self.hidden();
        let g4 = 4 * hd;
        let mut gates = vec![0.0; steps * rows * g4];
        for r in gates.chunks_mut(g4) {
            r.copy_from_slice(self.bias.data());
        }
        gemm(steps * rows, n_in, g4, xs.data(), false, self.w_input.data(), true, &mut gates, 1.0);
        let mut cs = vec![0.0; steps * rows * hd];
        let mut tanh_cs = vec![0.0; steps * rows * hd];
        let mut hs = vec![0.0; steps * rows * hd];
        let zero = vec![0.0; rows * hd];
        let step_len = rows * hd;
        for t in 0..steps {
            let (before_h, rest_h) = hs.split_at_mut(t * step_len);
            let h_prev: &[f64] = if t == 0 { &zero } else { &before_h[(t - 1) * step_len..] };
            let z = &mut gates[t * rows * g4..(t + 1) * rows * g4];
            if t > 0 {
                gemm(rows, hd, g4, h_prev, false, self.w_recurrent.data(), true, z, 1.0);
            }
            let (before_c, rest_c) = cs.split_at_mut(t * step_len);
            let c_prev: &[f64] = if t == 0 { &zero } else { &before_c[(t - 1) * step_len..] };
            activate(
                z,
                c_prev,
                &mut rest_c[..step_len],
                &mut tanh_cs[t * step_len..(t + 1) * step_len],
                &mut rest_h[..step_len],
                hd,
            );
        }
        let out = Tensor::from_vec(&[steps, rows, hd], hs)?;
        let cache = LstmLayerCache {
            xs: xs.clone(),
            gates,
            cs,
            tanh_cs,
            hs: out.clone(),
        };
        Ok((out, cache))
    }

    /// Backpropagation through time. `dhs: [T, B, hidden]` is the gradient on every output.
    pub fn backward_sequence(&self, cache: &LstmLayerCache, dhs: &Tensor, grads: &mut LstmParams) -> Result<Tensor> {
        let (steps, rows, n_in) = (cache.xs.dim(0), cache.xs.dim(1), cache.xs.dim(2));
        let hd = self.hidden();
        let g4 = 4 * hd;
        if dhs.shape() != [steps, rows, hd] {
            return Err(Error::shape(format!(
                "lstm sequence gradient {:?}, expected [{steps}, {rows}, {hd}]",
                dhs.shape()
            )));
        }
        let step_len = rows * hd;
        let zero = vec![0.0; step_len];
        let mut dz = vec![0.0; steps * rows * g4];
        let mut dh_rec = vec![0.0; step_len];
        let mut dc_rec = vec![0.0; step_len];
        let mut dh = vec![0.0; step_len];
        let mut dc_prev = vec![0.0; step_len];
        for t in (0..steps).rev() {
            for ((d, &a), &b) in dh.iter_mut().zip(&dhs.data()[t * step_len..(t + 1) * step_len]).zip(&dh_rec) {
                *d = a + b;
            }
            let c_prev: &[f64] = if t == 0 { &zero } else { &cache.cs[(t - 1) * step_len..t * step_len] };
            let dz_t = &mut dz[t * rows * g4..(t + 1) * rows * g4];
            gate_grads(
                &cache.gates[t * rows * g4..(t + 1) * rows * g4],
                &cache.tanh_cs[t * step_len..(t + 1) * step_len],
                c_prev,
                &dh,
                &dc_rec,
                dz_t,
                &mut dc_prev,
                hd,
            );
            std::mem::swap(&mut dc_rec, &mut dc_prev);
            if t > 0 {
                gemm(rows, g4, hd, dz_t, false, self.w_recurrent.data(), false, &mut dh_rec, 0.0);
            }
        }
        gemm(g4, steps * rows, n_in, &dz, true, cache.xs.data(), false, grads.w_input.data_mut(), 1.0);
        if steps > 1 {
            gemm(
                g4,
                (steps - 1) * rows,
                hd,
                &dz[rows * g4..],
                true,
                &cache.hs.data()[..(steps - 1) * step_len],
                false,
                grads.w_recurrent.data_mut(),
                1.0,
            );
        }
        add_column_sums(&dz, g4, grads.bias.data_mut());
        let mut dxs = Tensor::zeros(cache.xs.shape());
        gemm(steps * rows, g4, n_in, &dz, false, self.w_input.data(), false, dxs.data_mut(), 0.0);
        Ok(dxs)
    }
}

/// Turns pre-activations `z` into gate activations in place and advances the cell.
fn activate(z: &mut [f64], c_prev: &[f64], c_next: &mut [f64], tanh_c: &mut [f64], h_next: &mut [f64], hd: usize) {
    for (r, zr) in z.chunks_mut(4 * hd).enumerate() {
        for j in 0..hd {
            let i = sigmoid(zr[GATE_INPUT * hd + j]);
            let f = sigmoid(zr[GATE_FORGET * hd + j]);
            let g = zr[GATE_CELL * hd + j].tanh();
            let o = sigmoid(zr[GATE_OUTPUT * hd + j]);
            zr[GATE_INPUT * hd + j] = i;
            zr[GATE_FORGET * hd + j] = f;
            zr[GATE_CELL * hd + j] = g;
            zr[GATE_OUTPUT * hd + j] = o;
            let k = r * hd + j;
            let c = f * c_prev[k] + i * g;
            let tc = c.tanh();
            c_next[k] = c;
            tanh_c[k] = tc;
            h_next[k] = o * tc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gate_grads(
    gates: &[f64],
    tanh_c: &[f64],
    c_prev: &[f64],
    dh: &[f64],
    dc_next: &[f64],
    dz: &mut [f64],
    dc_prev: &mut [f64],
    hd: usize,
) {
    for (r, (gr, dzr)) in gates.chunks(4 * hd).zip(dz.chunks_mut(4 * hd)).enumerate() {
        for j in 0..hd {
            let k = r * hd + j;
            let i = gr[GATE_INPUT * hd + j];
            let f = gr[GATE_FORGET * hd + j];
            let g = gr[GATE_CELL * hd + j];
            let o = gr[GATE_OUTPUT * hd + j];
            let tc = tanh_c[k];
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
            dzr[GATE_INPUT * hd + j] = dc * g * i * (1.0 - i);
            dzr[GATE_FORGET * hd + j] = dc * c_prev[k] * f * (1.0 - f);
            dzr[GATE_CELL * hd + j] = dc * i * (1.0 - g * g);
            dzr[GATE_OUTPUT * hd + j] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dc * f;
        }
    }
}

fn add_column_sums(m: &[f64], width: usize, out: &mut [f64]) {
    for row in m.chunks(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmLayerCache {
    xs: Tensor,
    /// activated gates, `[T·B, 4H]`
    gates: Vec<f64>,
    cs: Vec<f64>,
    tanh_cs: Vec<f64>,
    hs: Tensor,
}

/// Stacked LSTM layers with dropout on each layer's output sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmParams>,
}

#[derive(Debug, Clone)]
pub struct LstmStackCache {
    layers: Vec<LstmLayerCache>,
    masks: Vec<Option<DropoutMask>>,
    shape: Vec<usize>,
}

impl LstmStack {
    pub fn init(inputs: usize, hidden: usize, depth: usize, rng: &mut Rng) -> Self {
        let layers = (0..depth)
            .map(|l| LstmParams::init(if l == 0 { inputs } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros(inputs: usize, hidden: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|l| LstmParams::zeros(if l == 0 { inputs } else { hidden }, hidden))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(LstmParams::zeros_like).collect(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().map_or(0, LstmParams::hidden)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("lstm stack has no layers"));
        }
        for w in self.layers.windows(2) {
            if w[1].inputs() != w[0].hidden() {
                return Err(Error::shape(format!(
                    "lstm layer expects {} inputs but previous layer has {} hidden units",
                    w[1].inputs(),
                    w[0].hidden()
                )));
            }
        }
        Ok(())
    }

    /// `xs: [T, B, features]` → top-layer hidden state at the last step, `[B, hidden]`.
    pub fn forward(&self, xs: &Tensor, dropout_p: f64, rng: &mut Rng, training: bool) -> Result<(Tensor, LstmStackCache)> {
        self.validate()?;
        if xs.ndim() != 3 || xs.dim(0) == 0 {
            return Err(Error::shape(format!("lstm stack expects [T>0, B, F], got {:?}", xs.shape())));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut current = xs.clone();
        for layer in &self.layers {
            let (hs, cache) = layer.forward_sequence(&current)?;
            let (dropped, mask) = dropout(&hs, dropout_p, rng, training)?;
            caches.push(cache);
            masks.push(mask);
            current = dropped;
        }
        let (steps, rows, hd) = (current.dim(0), current.dim(1), current.dim(2));
        let last = Tensor::from_vec(&[rows, hd], current.data()[(steps - 1) * rows * hd..].to_vec())?;
        let shape = current.shape().to_vec();
        Ok((
            last,
            LstmStackCache {
                layers: caches,
                masks,
                shape,
            },
        ))
    }

    /// Returns the gradient on the stack input, `[T, B, features]`.
    pub fn backward(&self, cache: &LstmStackCache, d_last: &Tensor, grads: &mut LstmStack) -> Result<Tensor> {
        let (steps, rows, hd) = (cache.shape[0], cache.shape[1], cache.shape[2]);
        if d_last.len() != rows * hd {
            return Err(Error::shape("lstm stack output gradient does not match batch"));
        }
        let mut d = Tensor::zeros(&cache.shape);
        d.data_mut()[(steps - 1) * rows * hd..].copy_from_slice(d_last.data());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let d_hs = dropout_backward(&d, cache.masks[l].as_ref());
            d = layer.backward_sequence(&cache.layers[l], &d_hs, &mut grads.layers[l])?;
        }
        Ok(d)
    }
}

/// Single-sequence convenience wrapper: `xs: [timesteps, features]` → `[hidden]`.
pub fn lstm_sequence(xs: &Tensor, stack: &LstmStack, dropout_p: f64, rng: &mut Rng, training: bool) -> Result<Tensor> {
    if xs.ndim() != 2 {
        return Err(Error::shape(format!("lstm_sequence expects [timesteps, features], got {:?}", xs.shape())));
    }
    let (steps, feats) = (xs.dim(0), xs.dim(1));
    let seq = xs.clone().reshape(&[steps, 1, feats])?;
    let (last, _) = stack.forward(&seq, dropout_p, rng, training)?;
    last.reshape(&[stack.hidden()])
}
