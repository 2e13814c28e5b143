use std::collections::BTreeMap;

use crate::models::ParamStore;

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, step: 0, moments: BTreeMap::new() }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update. Parameters without a gradient are left untouched.
    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &BTreeMap<String, Vec<f32>>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (self.lr / c1) as f32;
        let c2_sqrt = c2.sqrt() as f32;
        let eps = self.eps as f32;
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p.data[i] -= step_size * m[i] / (v[i].sqrt() / c2_sqrt + eps);
            }
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping. `max_norm = 0` only measures.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f32>>, max_norm: f64) -> f64 {
    let norm = grads.values().flatten().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        grads.values_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    fn store(v: f32) -> ParamStore<f32> {
        ParamStore::from_map([("p".to_string(), Tensor::new(vec![1], vec![v]))].into())
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first step is lr * sign(g).
        let mut p = store(1.0);
        let mut opt = Adam::new(0.1, 0.9, 0.999, 1e-8);
        opt.update(&mut p, &[("p".to_string(), vec![4.0])].into());
        assert!((p.get("p").unwrap().data[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = store(3.0);
        let mut opt = Adam::new(0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let x = p.get("p").unwrap().data[0];
            opt.update(&mut p, &[("p".to_string(), vec![2.0 * (x - 1.0)])].into());
        }
        assert!((p.get("p").unwrap().data[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn missing_gradient_leaves_parameter() {
        let mut p = store(2.0);
        Adam::new(0.1, 0.9, 0.999, 1e-8).update(&mut p, &BTreeMap::new());
        assert_eq!(p.get("p").unwrap().data[0], 2.0);
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let mut g: BTreeMap<String, Vec<f32>> = [("a".into(), vec![3.0]), ("b".into(), vec![4.0])].into();
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g["a"][0] - 0.6).abs() < 1e-6 && (g["b"][0] - 0.8).abs() < 1e-6);
        let mut small: BTreeMap<String, Vec<f32>> = [("a".into(), vec![0.3])].into();
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small["a"], vec![0.3]);
    }
}
