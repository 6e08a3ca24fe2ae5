use super::Tensor;
use crate::error::{Error, Result};

/// Across-channel local response normalization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub k: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            k: 2.0,
            n: 5,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        if self.n % 2 == 0 {
            return Err(Error::arg(format!("lrn window n must be odd, got {}", self.n)));
        }
        if !(self.k > 0.0) {
            return Err(Error::arg(format!("lrn k must be positive, got {}", self.k)));
        }
        Ok(())
    }

    fn window(&self, c: usize, channels: usize) -> std::ops::Range<usize> {
        let half = self.n / 2;
        c.saturating_sub(half)..(c + half + 1).min(channels)
    }

    /// `k + alpha · Σ a[c', i]²` over the clipped channel window, for every element.
    fn scale(&self, x: &Tensor) -> Vec<f64> {
        let (channels, len) = (x.dim(0), x.dim(1));
        let mut s = vec![self.k; channels * len];
        for c in 0..channels {
            let out = &mut s[c * len..(c + 1) * len];
            for cc in self.window(c, channels) {
                for (o, &a) in out.iter_mut().zip(x.row(cc)) {
                    *o += self.alpha * a * a;
                }
            }
        }
        s
    }

    /// `x: [channels, length]`; `b[c,i] = a[c,i] / (k + alpha·Σ a[c',i]²)^beta`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.validate()?;
        if x.ndim() != 2 {
            return Err(Error::shape(format!("lrn expects [channels, length], got {:?}", x.shape())));
        }
        let s = self.scale(x);
        let mut y = x.clone();
        for (v, sv) in y.data_mut().iter_mut().zip(&s) {
            *v /= sv.powf(self.beta);
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        self.validate()?;
        if x.ndim() != 2 || upstream.shape() != x.shape() {
            return Err(Error::shape(format!(
                "lrn backward shapes {:?} / {:?}",
                x.shape(),
                upstream.shape()
            )));
        }
        let (channels, len) = (x.dim(0), x.dim(1));
        let s = self.scale(x);
        // t[c,i] = g[c,i] · a[c,i] · S[c,i]^(−beta−1)
        let t: Vec<f64> = upstream
            .data()
            .iter()
            .zip(x.data())
            .zip(&s)
            .map(|((&g, &a), &sv)| g * a * sv.powf(-self.beta - 1.0))
            .collect();
        let mut dx = Tensor::zeros(x.shape());
        let coeff = 2.0 * self.alpha * self.beta;
        for d in 0..channels {
            let a = x.row(d);
            let g = upstream.row(d);
            let sd = &s[d * len..(d + 1) * len];
            let mut acc = vec![0.0; len];
            // the window relation is symmetric, so the channels whose window holds d are window(d)
            for c in self.window(d, channels) {
                for (o, &tv) in acc.iter_mut().zip(&t[c * len..(c + 1) * len]) {
                    *o += tv;
                }
            }
            for (i, o) in dx.row_mut(d).iter_mut().enumerate() {
                *o = g[i] * sd[i].powf(-self.beta) - coeff * a[i] * acc[i];
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_zero_divides_by_k_pow_beta() {
        let p = LrnParams { alpha: 0.0, ..LrnParams::default() };
        let x = Tensor::from_vec(&[3, 2], vec![1.0, -2.0, 3.0, 4.0, 0.5, 6.0]).unwrap();
        let y = p.forward(&x).unwrap();
        let div = 2.0f64.powf(0.75);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / div).abs() < 1e-15);
        }
    }

    #[test]
    fn single_channel_hand_value() {
        let p = LrnParams { k: 1.0, n: 1, alpha: 1.0, beta: 1.0 };
        let y = p.forward(&Tensor::from_vec(&[1, 1], vec![2.0]).unwrap()).unwrap();
        assert!((y.data()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zero_in_zero_out() {
        let y = LrnParams::default().forward(&Tensor::zeros(&[4, 3])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn even_window_rejected() {
        let p = LrnParams { n: 4, ..LrnParams::default() };
        assert!(p.forward(&Tensor::zeros(&[4, 3])).is_err());
    }
}
