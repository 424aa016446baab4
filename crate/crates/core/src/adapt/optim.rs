use crate::params::ParamStore;

/// Adam without weight decay. Moments are stored per parameter so they can
/// be checkpointed alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: ParamStore,
    pub v: ParamStore,
    /// Update count.
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0, beta1, beta2, eps }
    }

    /// Applies one update. Parameters whose gradient is `None` are left
    /// untouched, moments included.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Vec<f64>>], lr: f64) {
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let it = params.params_mut().iter_mut().zip(self.m.params_mut()).zip(self.v.params_mut()).zip(grads);
        for (((p, m), v), g) in it {
            let Some(g) = g else { continue };
            for (((w, m), v), &g) in p.data.iter_mut().zip(&mut m.data).zip(&mut v.data).zip(g) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
    }
}

/// Scales every present gradient so their joint L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(sets: &mut [&mut Vec<Option<Vec<f64>>>], max_norm: f64) -> f64 {
    let norm = sets.iter().flat_map(|s| s.iter().flatten()).flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for set in sets.iter_mut() {
            for g in set.iter_mut().flatten() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}
