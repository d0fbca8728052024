use super::dense::DenseTensor;
use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore<f32>) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![0.0f32; t.numel()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr_scale · lr`; returns the
    /// pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &ParamGrads<f32>, lr_scale: f64) -> f64 {
        let norm = grads.global_norm();
        let clip = match self.config.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let lr = c.lr * lr_scale;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((p, &g), m), v) in store.get_mut(id).data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64 * clip;
                let mn = c.beta1 * *m as f64 + (1.0 - c.beta1) * g;
                let vn = c.beta2 * *v as f64 + (1.0 - c.beta2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                *p -= (lr * (mn / bc1) / ((vn / bc2).sqrt() + c.eps)) as f32;
            }
        }
        norm
    }

    /// Moment buffers and step count as named tensors under `optim.`.
    pub fn state_tensors(&self, store: &ParamStore<f32>) -> Vec<(String, DenseTensor<f32>)> {
        let mut out = Vec::new();
        for (id, name, t) in store.iter() {
            let shape = t.shape().to_vec();
            out.push((format!("optim.m.{name}"), DenseTensor::new(shape.clone(), self.m[id.index()].clone()).expect("shape")));
            out.push((format!("optim.v.{name}"), DenseTensor::new(shape, self.v[id.index()].clone()).expect("shape")));
        }
        // Split into two exactly representable halves.
        let (hi, lo) = ((self.step >> 20) as f32, (self.step & 0xF_FFFF) as f32);
        out.push(("optim.step".into(), DenseTensor::new(vec![2], vec![hi, lo]).expect("shape")));
        out
    }

    pub fn load_state(&mut self, store: &ParamStore<f32>, named: &[(String, DenseTensor<f32>)]) -> Result<()> {
        let find = |n: &str| {
            named
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::format("ckpt", format!("missing {n}")))
        };
        for (id, name, t) in store.iter() {
            let m = find(&format!("optim.m.{name}"))?;
            let v = find(&format!("optim.v.{name}"))?;
            if m.shape() != t.shape() || v.shape() != t.shape() {
                return Err(Error::format("ckpt", format!("optimizer state shape for {name}")));
            }
            self.m[id.index()] = m.data().to_vec();
            self.v[id.index()] = v.data().to_vec();
        }
        let s = find("optim.step")?;
        if s.numel() != 2 {
            return Err(Error::format("ckpt", "optim.step"));
        }
        self.step = ((s.data()[0] as u64) << 20) | s.data()[1] as u64;
        Ok(())
    }
}
