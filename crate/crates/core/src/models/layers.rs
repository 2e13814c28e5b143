use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Init, ParamSpec, ParamStore};
use crate::autograd::{AttnMask, Graph, Scalar, Tensor, Var};

/// A forward pass in progress: the tape, the parameters bound onto it, and
/// the dropout stream when training.
pub struct Ctx<'p, T: Scalar> {
    pub g: Graph<T>,
    params: &'p ParamStore<T>,
    bound: HashMap<String, Var>,
    dropout: Option<(T, ChaCha8Rng)>,
}

impl<'p, T: Scalar> Ctx<'p, T> {
    /// Forward-only pass: no gradients, no dropout.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self { g: Graph::new(false), params, bound: HashMap::new(), dropout: None }
    }

    /// Gradient-tracking pass; dropout is active when `rate > 0`.
    pub fn training(params: &'p ParamStore<T>, dropout_rate: f64, dropout_seed: u64) -> Self {
        let dropout = (dropout_rate > 0.0)
            .then(|| (T::from_f64_lossy(dropout_rate), ChaCha8Rng::seed_from_u64(dropout_seed)));
        Self { g: Graph::new(true), params, bound: HashMap::new(), dropout }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Binds a named parameter onto the tape (once per pass).
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} missing from store"))
            .clone();
        let v = self.g.leaf(value);
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Parameters touched by this pass, by name.
    pub fn bound_params(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.bound.iter()
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else { return x };
        let keep = T::one() - *rate;
        let scale = T::one() / keep;
        let p = rate.to_f64_lossy();
        let n = self.g.value(x).numel();
        let mask: Vec<T> = (0..n).map(|_| if rng.gen::<f64>() < p { T::zero() } else { scale }).collect();
        self.g.mul_const(x, mask)
    }

    pub fn linear(&mut self, prefix: &str, x: Var) -> Var {
        let w = self.param(&format!("{prefix}.w"));
        let b = self.param(&format!("{prefix}.b"));
        self.g.linear(x, w, Some(b))
    }

    pub fn layer_norm(&mut self, prefix: &str, x: Var) -> Var {
        let gamma = self.param(&format!("{prefix}.g"));
        let beta = self.param(&format!("{prefix}.b"));
        self.g.layer_norm(x, gamma, beta)
    }

    /// Projects `query_src` and `kv_src`, attends, and applies the output map.
    pub fn multi_head_attention(
        &mut self,
        prefix: &str,
        query_src: Var,
        kv_src: Var,
        heads: usize,
        mask: &AttnMask,
    ) -> Var {
        let q = self.linear(&format!("{prefix}.q"), query_src);
        let kw = self.param(&format!("{prefix}.k.w"));
        let k = self.g.linear(kv_src, kw, None);
        let v = self.linear(&format!("{prefix}.v"), kv_src);
        let o = self.g.attention(q, k, v, heads, mask);
        self.linear(&format!("{prefix}.o"), o)
    }

    pub fn feed_forward(&mut self, prefix: &str, x: Var) -> Var {
        let h = self.linear(&format!("{prefix}.ff1"), x);
        let h = self.g.relu(h);
        self.linear(&format!("{prefix}.ff2"), h)
    }

    /// Adds sinusoidal position codes to `[B, L, d]`.
    pub fn add_positions(&mut self, x: Var) -> Var {
        let shape = self.g.shape(x).to_vec();
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        let table = sinusoidal_table::<T>(l, d);
        let mut data = Vec::with_capacity(b * l * d);
        for _ in 0..b {
            data.extend_from_slice(&table);
        }
        let pe = self.g.constant(Tensor::new(shape, data));
        self.g.add(x, pe)
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn sinusoidal_table<T: Scalar>(len: usize, dim: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            out.push(T::from_f64_lossy(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    out
}

pub(crate) fn linear_specs(out: &mut Vec<ParamSpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    out.push(ParamSpec::weight(format!("{prefix}.w"), fan_in, fan_out));
    out.push(ParamSpec::new(format!("{prefix}.b"), vec![fan_out], Init::Zeros));
}

pub(crate) fn layer_norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    out.push(ParamSpec::new(format!("{prefix}.g"), vec![dim], Init::Ones));
    out.push(ParamSpec::new(format!("{prefix}.b"), vec![dim], Init::Zeros));
}

pub(crate) fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize) {
    // Keys carry no bias: it would shift every score of a query equally.
    linear_specs(out, &format!("{prefix}.q"), dim, dim);
    out.push(ParamSpec::weight(format!("{prefix}.k.w"), dim, dim));
    linear_specs(out, &format!("{prefix}.v"), dim, dim);
    linear_specs(out, &format!("{prefix}.o"), dim, dim);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_first_rows() {
        let t = sinusoidal_table::<f64>(2, 4);
        assert_eq!(&t[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((t[4] - 1f64.sin()).abs() < 1e-15);
        assert!((t[6] - 0.01f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn dropout_is_seeded_and_inactive_at_inference() {
        let specs = [ParamSpec::new("x", vec![1000], Init::Ones)];
        let store = ParamStore::<f32>::init(&specs, 0);
        let run = |seed| {
            let mut cx = Ctx::training(&store, 0.5, seed);
            let x = cx.param("x");
            let y = cx.dropout(x);
            cx.g.value(y).data.clone()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        let zeros = run(3).iter().filter(|&&v| v == 0.0).count();
        assert!((350..650).contains(&zeros));
        let mut cx = Ctx::inference(&store);
        let x = cx.param("x");
        assert_eq!(cx.dropout(x), x);
    }
}
