use super::{AutodiffError, ParamStore, Tensor};

/// Bias-corrected Adam over every tensor of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are treated as having
    /// a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>]) -> Result<(), AutodiffError> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(AutodiffError::Length { expected: store.len(), got: grads.len() });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            if let Some(g) = &grads[k] {
                if g.len() != p.len() {
                    return Err(AutodiffError::Length { expected: p.len(), got: g.len() });
                }
            }
            for i in 0..p.len() {
                let gi = grads[k].as_ref().map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moments and step as named tensors: `optim.m.<param>`, `optim.v.<param>`
    /// and `optim.step`.
    pub fn to_entries(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * store.len() + 1);
        for (k, (_, name, t)) in store.iter().enumerate() {
            out.push((format!("optim.m.{name}"), Tensor::new(t.shape().to_vec(), self.m[k].clone()).unwrap()));
            out.push((format!("optim.v.{name}"), Tensor::new(t.shape().to_vec(), self.v[k].clone()).unwrap()));
        }
        out.push(("optim.step".into(), Tensor::new(vec![1], vec![self.step as f64]).unwrap()));
        out
    }

    pub fn from_entries<'a>(
        store: &ParamStore,
        lr: f64,
        find: impl Fn(&str) -> Option<&'a Tensor>,
    ) -> Result<Adam, AutodiffError> {
        let mut adam = Adam::new(store, lr);
        for (k, (_, name, t)) in store.iter().enumerate() {
            for (prefix, dst) in [("m", &mut adam.m[k]), ("v", &mut adam.v[k])] {
                let key = format!("optim.{prefix}.{name}");
                let src = find(&key).ok_or(AutodiffError::MissingParam(key))?;
                if src.len() != t.len() {
                    return Err(AutodiffError::Length { expected: t.len(), got: src.len() });
                }
                dst.copy_from_slice(src.data());
            }
        }
        let step = find("optim.step").ok_or_else(|| AutodiffError::MissingParam("optim.step".into()))?;
        adam.step = step.data()[0] as u64;
        Ok(adam)
    }
}
