//! Adam and an exponential moving average of weights. Moment buffers are
//! kept in f64 regardless of the model element type; updates stay bitwise
//! reproducible for a fixed call sequence.

use ndarray::ArrayD;

use super::{El, Param};

pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update over the full parameter list. The list must have the
    /// same order and shapes on every call.
    pub fn step<E: El>(&mut self, params: &mut [&mut Param<E>]) {
        if self.m.is_empty() {
            for p in params.iter() {
                self.m.push(ArrayD::zeros(p.w.raw_dim()));
                self.v.push(ArrayD::zeros(p.w.raw_dim()));
            }
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            assert_eq!(self.m[i].shape(), p.w.shape(), "parameter shape changed");
            let m = self.m[i].as_slice_mut().unwrap();
            let v = self.v[i].as_slice_mut().unwrap();
            let w = p.w.as_slice_mut().unwrap();
            let g = p.g.as_slice().unwrap();
            for j in 0..w.len() {
                let gj = g[j].to_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / b1t;
                let vhat = v[j] / b2t;
                let wj = w[j].to_f64() - self.lr * mhat / (vhat.sqrt() + self.eps);
                w[j] = E::from_f64(wj);
            }
        }
    }
}

/// Shadow copy of the weights updated as shadow = d*shadow + (1-d)*w.
pub struct Ema {
    decay: f64,
    shadow: Vec<ArrayD<f64>>,
}

impl Ema {
    pub fn new<E: El>(decay: f64, params: &[&mut Param<E>]) -> Self {
        let shadow = params.iter().map(|p| p.w.mapv(|v| v.to_f64())).collect();
        Self { decay, shadow }
    }

    pub fn update<E: El>(&mut self, params: &[&mut Param<E>]) {
        assert_eq!(self.shadow.len(), params.len(), "parameter list changed");
        for (s, p) in self.shadow.iter_mut().zip(params.iter()) {
            let sv = s.as_slice_mut().unwrap();
            let wv = p.w.as_slice().unwrap();
            for j in 0..sv.len() {
                sv[j] = self.decay * sv[j] + (1.0 - self.decay) * wv[j].to_f64();
            }
        }
    }

    /// Overwrite the given parameters with the averaged weights.
    pub fn write_to<E: El>(&self, params: &mut [&mut Param<E>]) {
        assert_eq!(self.shadow.len(), params.len(), "parameter list changed");
        for (s, p) in self.shadow.iter().zip(params.iter_mut()) {
            let sv = s.as_slice().unwrap();
            let wv = p.w.as_slice_mut().unwrap();
            for j in 0..wv.len() {
                wv[j] = E::from_f64(sv[j]);
            }
        }
    }
}
