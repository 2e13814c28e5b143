use super::{Scalar, Tensor};

/// Score assigned to masked attention logits; `exp` of it underflows to an
/// exact zero in both `f32` and `f64`.
const MASKED_SCORE: f64 = -1.0e30;

const LAYER_NORM_EPS: f64 = 1.0e-5;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which keys each attention query may look at.
#[derive(Debug, Clone, Default)]
pub struct AttnMask {
    /// Row-major `[batch, keys]` validity flags; `None` means all valid.
    pub key_valid: Option<Vec<bool>>,
    /// Forbid query `i` from attending to key `j > i`.
    pub causal: bool,
}

enum Op<T> {
    Leaf,
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    MulConst { x: Var, factor: Vec<T> },
    Linear { x: Var, w: Var, b: Option<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    SpaceToDepth(Var),
    MeanAxis1(Var),
    RowNorm(Var),
    MaskedMeanPool { x: Var, weights: Vec<T> },
    WeightedSum { x: Var, weights: Vec<T> },
    SoftCrossEntropy { logits: Var, targets: Vec<T>, row_weights: Vec<T>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape.
///
/// Every operation appends a node holding its value; [`Graph::backward`]
/// walks the tape in reverse. A graph built with `track_grads = false` still
/// records values but never marks anything as differentiable.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    track_grads: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(track_grads: bool) -> Self {
        Self { nodes: Vec::with_capacity(512), track_grads }
    }

    pub fn tracks_grads(&self) -> bool {
        self.track_grads
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.track_grads && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (parameter or probe).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = self.track_grads;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let data = self.value(x).data.clone();
        self.push(Tensor::new(shape, data), Op::Reshape(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "add: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x + y).collect();
        let shape = av.shape.clone();
        self.push(Tensor::new(shape, data), Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "sub: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x - y).collect();
        let shape = av.shape.clone();
        self.push(Tensor::new(shape, data), Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "mul: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x * y).collect();
        let shape = av.shape.clone();
        self.push(Tensor::new(shape, data), Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape.clone(), xv.data.iter().map(|&v| v * s).collect());
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(
            xv.shape.clone(),
            xv.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        );
        self.push(out, Op::Relu(x), &[x])
    }

    /// Elementwise product with a constant of the same shape (dropout masks).
    pub fn mul_const(&mut self, x: Var, factor: Vec<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.numel(), factor.len(), "mul_const: length mismatch");
        let out =
            Tensor::new(xv.shape.clone(), xv.data.iter().zip(&factor).map(|(&a, &b)| a * b).collect());
        self.push(out, Op::MulConst { x, factor }, &[x])
    }

    /// `x · w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(wv.shape.len(), 2, "linear: weight must be 2-d");
        let (k, n) = (wv.shape[0], wv.shape[1]);
        assert_eq!(xv.last_dim(), k, "linear: input dim {} != weight rows {k}", xv.last_dim());
        let rows = xv.numel() / k;
        let mut out = vec![T::zero(); rows * n];
        let mut beta = T::zero();
        if let Some(b) = b {
            let bv = &self.value(b).data;
            assert_eq!(bv.len(), n, "linear: bias length");
            for r in 0..rows {
                out[r * n..(r + 1) * n].copy_from_slice(bv);
            }
            beta = T::one();
        }
        unsafe {
            T::gemm(
                rows,
                k,
                n,
                T::one(),
                xv.data.as_ptr(),
                k as isize,
                1,
                wv.data.as_ptr(),
                n as isize,
                1,
                beta,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = n;
        let inputs: Vec<Var> = std::iter::once(x).chain(Some(w)).chain(b).collect();
        self.push(Tensor::new(shape, out), Op::Linear { x, w, b }, &inputs)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        assert_eq!(gv.len(), d, "layer_norm: gamma length");
        let rows = xv.rows();
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let inv_d = T::one() / T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = &xv.data[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let shape = xv.shape.clone();
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
            &[x, gamma, beta],
        )
    }

    /// Row lookup; output shape is `out_shape ++ [dim]`.
    pub fn embedding(&mut self, table: Var, ids: Vec<usize>, out_shape: Vec<usize>) -> Var {
        let tv = self.value(table);
        let (vocab, d) = (tv.shape[0], tv.shape[1]);
        assert_eq!(out_shape.iter().product::<usize>(), ids.len(), "embedding: id count");
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in &ids {
            assert!(id < vocab, "embedding: id {id} out of range {vocab}");
            out.extend_from_slice(&tv.data[id * d..(id + 1) * d]);
        }
        let mut shape = out_shape;
        shape.push(d);
        self.push(Tensor::new(shape, out), Op::Embedding { table, ids }, &[table])
    }

    /// Multi-head scaled dot-product attention over already-projected
    /// `q [B,Tq,D]`, `k [B,Tk,D]`, `v [B,Tk,D]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttnMask) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qv.shape.len(), 3, "attention: q must be [B,T,D]");
        let (bsz, tq, dm) = (qv.shape[0], qv.shape[1], qv.shape[2]);
        let tk = kv.shape[1];
        assert_eq!(kv.shape, vec![bsz, tk, dm], "attention: k shape");
        assert_eq!(vv.shape, kv.shape, "attention: v shape");
        assert!(heads >= 1 && dm % heads == 0, "attention: D not divisible by heads");
        if let Some(kvalid) = &mask.key_valid {
            assert_eq!(kvalid.len(), bsz * tk, "attention: key mask length");
        }
        let dh = dm / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let masked = T::from_f64_lossy(MASKED_SCORE);
        let mut probs = vec![T::zero(); bsz * heads * tq * tk];
        let mut out = vec![T::zero(); bsz * tq * dm];
        for b in 0..bsz {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * tq * tk..(b * heads + h + 1) * tq * tk];
                unsafe {
                    T::gemm(
                        tq,
                        dh,
                        tk,
                        scale,
                        qv.data.as_ptr().add(b * tq * dm + h * dh),
                        dm as isize,
                        1,
                        kv.data.as_ptr().add(b * tk * dm + h * dh),
                        1,
                        dm as isize,
                        T::zero(),
                        p.as_mut_ptr(),
                        tk as isize,
                        1,
                    );
                }
                for i in 0..tq {
                    let row = &mut p[i * tk..(i + 1) * tk];
                    for (j, s) in row.iter_mut().enumerate() {
                        let key_ok = mask.key_valid.as_ref().is_none_or(|m| m[b * tk + j]);
                        if !key_ok || (mask.causal && j > i) {
                            *s = masked;
                        }
                    }
                    softmax_in_place(row);
                }
                unsafe {
                    T::gemm(
                        tq,
                        tk,
                        dh,
                        T::one(),
                        p.as_ptr(),
                        tk as isize,
                        1,
                        vv.data.as_ptr().add(b * tk * dm + h * dh),
                        dm as isize,
                        1,
                        T::zero(),
                        out.as_mut_ptr().add(b * tq * dm + h * dh),
                        dm as isize,
                        1,
                    );
                }
            }
        }
        self.push(
            Tensor::new(vec![bsz, tq, dm], out),
            Op::Attention { q, k, v, heads, probs },
            &[q, k, v],
        )
    }

    /// Non-overlapping 2×2 patch gather: `[B,H,W,C] -> [B,H/2,W/2,4C]`.
    pub fn space_to_depth(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [b, h, w, c] = dims4(&xv.shape, "space_to_depth");
        assert!(h % 2 == 0 && w % 2 == 0, "space_to_depth: odd spatial dims {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![T::zero(); xv.numel()];
        for bi in 0..b {
            for i in 0..ho {
                for j in 0..wo {
                    let dst = ((bi * ho + i) * wo + j) * 4 * c;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let src = ((bi * h + 2 * i + dy) * w + 2 * j + dx) * c;
                            let off = dst + (dy * 2 + dx) * c;
                            out[off..off + c].copy_from_slice(&xv.data[src..src + c]);
                        }
                    }
                }
            }
        }
        self.push(Tensor::new(vec![b, ho, wo, 4 * c], out), Op::SpaceToDepth(x), &[x])
    }

    /// Mean over axis 1: `[B,H,W,C] -> [B,W,C]`.
    pub fn mean_axis1(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [b, h, w, c] = dims4(&xv.shape, "mean_axis1");
        let inv = T::one() / T::from_usize(h).unwrap();
        let mut out = vec![T::zero(); b * w * c];
        for bi in 0..b {
            for i in 0..h {
                let src = &xv.data[(bi * h + i) * w * c..(bi * h + i + 1) * w * c];
                let dst = &mut out[bi * w * c..(bi + 1) * w * c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        self.push(Tensor::new(vec![b, w, c], out), Op::MeanAxis1(x), &[x])
    }

    /// Euclidean norm of each row along the last axis.
    ///
    /// The gradient at a zero row is taken to be zero.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let out: Vec<T> =
            xv.data.chunks(d).map(|row| row.iter().map(|&v| v * v).sum::<T>().sqrt()).collect();
        let shape = xv.shape[..xv.shape.len().saturating_sub(1)].to_vec();
        self.push(Tensor::new(shape, out), Op::RowNorm(x), &[x])
    }

    /// Weighted pooling over axis 1: `[B,L,D] -> [B,D]` with per-position
    /// weights of length `B*L`.
    pub fn masked_mean_pool(&mut self, x: Var, weights: Vec<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape.len(), 3, "masked_mean_pool: expected [B,L,D]");
        let (b, l, d) = (xv.shape[0], xv.shape[1], xv.shape[2]);
        assert_eq!(weights.len(), b * l, "masked_mean_pool: weight length");
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            for li in 0..l {
                let w = weights[bi * l + li];
                if w == T::zero() {
                    continue;
                }
                let src = &xv.data[(bi * l + li) * d..(bi * l + li + 1) * d];
                for (o, &s) in out[bi * d..(bi + 1) * d].iter_mut().zip(src) {
                    *o = *o + w * s;
                }
            }
        }
        self.push(Tensor::new(vec![b, d], out), Op::MaskedMeanPool { x, weights }, &[x])
    }

    /// Scalar `Σ weights[i] * x[i]`.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.numel(), weights.len(), "weighted_sum: length mismatch");
        let s = xv
            .data
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w != T::zero())
            .map(|(&v, &w)| v * w)
            .sum::<T>();
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x])
    }

    /// Scalar `Σ_r row_weights[r] * (−Σ_j targets[r,j] · log softmax(logits[r])_j)`.
    ///
    /// Rows with zero weight are skipped entirely.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Vec<T>, row_weights: Vec<T>) -> Var {
        let lv = self.value(logits);
        let v = lv.last_dim();
        let rows = lv.rows();
        assert_eq!(targets.len(), rows * v, "soft_cross_entropy: target shape");
        assert_eq!(row_weights.len(), rows, "soft_cross_entropy: row weights");
        let mut probs = vec![T::zero(); rows * v];
        let mut total = T::zero();
        for r in 0..rows {
            let w = row_weights[r];
            if w == T::zero() {
                continue;
            }
            let z = &lv.data[r * v..(r + 1) * v];
            let m = z.iter().copied().fold(T::neg_infinity(), T::max);
            let sum = z.iter().map(|&x| (x - m).exp()).sum::<T>();
            let lse = m + sum.ln();
            let mut row_loss = T::zero();
            for j in 0..v {
                probs[r * v + j] = (z[j] - m).exp() / sum;
                let t = targets[r * v + j];
                if t != T::zero() {
                    row_loss = row_loss - t * (z[j] - lse);
                }
            }
            total = total + w * row_loss;
        }
        self.push(
            Tensor::scalar(total),
            Op::SoftCrossEntropy { logits, targets, row_weights, probs },
            &[logits],
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward: loss must be scalar");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Grads { grads };
        }
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: &[T]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, &d) in existing.iter_mut().zip(delta) {
                    *e = *e + d;
                }
            }
            slot @ None => *slot = Some(delta.to_vec()),
        }
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Reshape(x) => self.accumulate(grads, *x, g),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                let da: Vec<T> = g.iter().zip(bv).map(|(&gv, &y)| gv * y).collect();
                let db: Vec<T> = g.iter().zip(av).map(|(&gv, &x)| gv * x).collect();
                self.accumulate(grads, *a, &da);
                self.accumulate(grads, *b, &db);
            }
            Op::Scale(x, s) => {
                let d: Vec<T> = g.iter().map(|&v| v * *s).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Relu(x) => {
                let xv = &self.value(*x).data;
                let d: Vec<T> =
                    g.iter().zip(xv).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::MulConst { x, factor } => {
                let d: Vec<T> = g.iter().zip(factor).map(|(&a, &b)| a * b).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Linear { x, w, b } => self.backward_linear(*x, *w, *b, g, grads),
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.value(*gamma).numel();
                let gam = &self.value(*gamma).data;
                let rows = rstd.len();
                let mut dx = vec![T::zero(); rows * d];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let inv_d = T::one() / T::from_usize(d).unwrap();
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = T::zero();
                    let mut mean_dh_h = T::zero();
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + gr[j] * hr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                        let dh = gr[j] * gam[j];
                        mean_dh = mean_dh + dh;
                        mean_dh_h = mean_dh_h + dh * hr[j];
                    }
                    mean_dh = mean_dh * inv_d;
                    mean_dh_h = mean_dh_h * inv_d;
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        dx[r * d + j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                self.accumulate(grads, *x, &dx);
                self.accumulate(grads, *gamma, &dgamma);
                self.accumulate(grads, *beta, &dbeta);
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let d = tv.shape[1];
                let mut dt = vec![T::zero(); tv.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] = dt[id * d + j] + g[i * d + j];
                    }
                }
                self.accumulate(grads, *table, &dt);
            }
            Op::Attention { q, k, v, heads, probs } => {
                self.backward_attention(*q, *k, *v, *heads, probs, g, grads)
            }
            Op::SpaceToDepth(x) => {
                let [b, h, w, c] = dims4(&self.value(*x).shape, "space_to_depth");
                let (ho, wo) = (h / 2, w / 2);
                let mut dx = vec![T::zero(); b * h * w * c];
                for bi in 0..b {
                    for i in 0..ho {
                        for j in 0..wo {
                            let src = ((bi * ho + i) * wo + j) * 4 * c;
                            for dy in 0..2 {
                                for dxo in 0..2 {
                                    let dst = ((bi * h + 2 * i + dy) * w + 2 * j + dxo) * c;
                                    let off = src + (dy * 2 + dxo) * c;
                                    dx[dst..dst + c].copy_from_slice(&g[off..off + c]);
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::MeanAxis1(x) => {
                let [b, h, w, c] = dims4(&self.value(*x).shape, "mean_axis1");
                let inv = T::one() / T::from_usize(h).unwrap();
                let mut dx = vec![T::zero(); b * h * w * c];
                for bi in 0..b {
                    for i in 0..h {
                        let dst = &mut dx[(bi * h + i) * w * c..(bi * h + i + 1) * w * c];
                        for (d, &s) in dst.iter_mut().zip(&g[bi * w * c..(bi + 1) * w * c]) {
                            *d = s * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::RowNorm(x) => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let norms = &node.value.data;
                let mut dx = vec![T::zero(); xv.numel()];
                for (r, &n) in norms.iter().enumerate() {
                    if n == T::zero() {
                        continue;
                    }
                    let f = g[r] / n;
                    for j in 0..d {
                        dx[r * d + j] = f * xv.data[r * d + j];
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::MaskedMeanPool { x, weights } => {
                let xv = self.value(*x);
                let (b, l, d) = (xv.shape[0], xv.shape[1], xv.shape[2]);
                let mut dx = vec![T::zero(); xv.numel()];
                for bi in 0..b {
                    for li in 0..l {
                        let w = weights[bi * l + li];
                        for j in 0..d {
                            dx[(bi * l + li) * d + j] = w * g[bi * d + j];
                        }
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::WeightedSum { x, weights } => {
                let d: Vec<T> = weights.iter().map(|&w| w * g[0]).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::SoftCrossEntropy { logits, targets, row_weights, probs } => {
                let lv = self.value(*logits);
                let v = lv.last_dim();
                let mut dz = vec![T::zero(); lv.numel()];
                for (r, &w) in row_weights.iter().enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let t = &targets[r * v..(r + 1) * v];
                    let mass = t.iter().copied().sum::<T>();
                    let f = w * g[0];
                    for j in 0..v {
                        dz[r * v + j] = f * (mass * probs[r * v + j] - t[j]);
                    }
                }
                self.accumulate(grads, *logits, &dz);
            }
        }
    }

    fn backward_linear(&self, x: Var, w: Var, b: Option<Var>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let xv = self.value(x);
        let wv = self.value(w);
        let (k, n) = (wv.shape[0], wv.shape[1]);
        let rows = xv.numel() / k;
        if self.requires_grad(x) {
            let mut dx = vec![T::zero(); rows * k];
            unsafe {
                T::gemm(
                    rows,
                    n,
                    k,
                    T::one(),
                    g.as_ptr(),
                    n as isize,
                    1,
                    wv.data.as_ptr(),
                    1,
                    n as isize,
                    T::zero(),
                    dx.as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            self.accumulate(grads, x, &dx);
        }
        if self.requires_grad(w) {
            let mut dw = vec![T::zero(); k * n];
            unsafe {
                T::gemm(
                    k,
                    rows,
                    n,
                    T::one(),
                    xv.data.as_ptr(),
                    1,
                    k as isize,
                    g.as_ptr(),
                    n as isize,
                    1,
                    T::zero(),
                    dw.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            self.accumulate(grads, w, &dw);
        }
        if let Some(b) = b {
            if self.requires_grad(b) {
                let mut db = vec![T::zero(); n];
                for r in 0..rows {
                    for (d, &gv) in db.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                        *d = *d + gv;
                    }
                }
                self.accumulate(grads, b, &db);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_attention(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (bsz, tq, dm) = (qv.shape[0], qv.shape[1], qv.shape[2]);
        let tk = kv.shape[1];
        let dh = dm / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut dq = vec![T::zero(); qv.numel()];
        let mut dk = vec![T::zero(); kv.numel()];
        let mut dv = vec![T::zero(); vv.numel()];
        let mut dp = vec![T::zero(); tq * tk];
        for b in 0..bsz {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * tq * tk..(b * heads + h + 1) * tq * tk];
                let go = b * tq * dm + h * dh;
                let ko = b * tk * dm + h * dh;
                unsafe {
                    // dP = dO · Vᵀ
                    T::gemm(
                        tq,
                        dh,
                        tk,
                        T::one(),
                        g.as_ptr().add(go),
                        dm as isize,
                        1,
                        vv.data.as_ptr().add(ko),
                        1,
                        dm as isize,
                        T::zero(),
                        dp.as_mut_ptr(),
                        tk as isize,
                        1,
                    );
                    // dV += Pᵀ · dO
                    T::gemm(
                        tk,
                        tq,
                        dh,
                        T::one(),
                        p.as_ptr(),
                        1,
                        tk as isize,
                        g.as_ptr().add(go),
                        dm as isize,
                        1,
                        T::one(),
                        dv.as_mut_ptr().add(ko),
                        dm as isize,
                        1,
                    );
                }
                for i in 0..tq {
                    let pr = &p[i * tk..(i + 1) * tk];
                    let dr = &mut dp[i * tk..(i + 1) * tk];
                    let dot = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                    for (d, &pv) in dr.iter_mut().zip(pr) {
                        *d = pv * (*d - dot) * scale;
                    }
                }
                unsafe {
                    // dQ += dS · K
                    T::gemm(
                        tq,
                        tk,
                        dh,
                        T::one(),
                        dp.as_ptr(),
                        tk as isize,
                        1,
                        kv.data.as_ptr().add(ko),
                        dm as isize,
                        1,
                        T::one(),
                        dq.as_mut_ptr().add(go),
                        dm as isize,
                        1,
                    );
                    // dK += dSᵀ · Q
                    T::gemm(
                        tk,
                        tq,
                        dh,
                        T::one(),
                        dp.as_ptr(),
                        1,
                        tk as isize,
                        qv.data.as_ptr().add(go),
                        dm as isize,
                        1,
                        T::one(),
                        dk.as_mut_ptr().add(ko),
                        dm as isize,
                        1,
                    );
                }
            }
        }
        self.accumulate(grads, q, &dq);
        self.accumulate(grads, k, &dk);
        self.accumulate(grads, v, &dv);
    }
}

fn dims4(shape: &[usize], what: &str) -> [usize; 4] {
    assert_eq!(shape.len(), 4, "{what}: expected a 4-d tensor, got {shape:?}");
    [shape[0], shape[1], shape[2], shape[3]]
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn linear_matches_hand_product() {
        let mut g = Graph::<f64>::new(true);
        let x = g.leaf(t(&[1, 2], &[1.0, 2.0]));
        let w = g.leaf(t(&[2, 3], &[1.0, 0.0, -1.0, 2.0, 1.0, 0.5]));
        let b = g.leaf(t(&[3], &[0.5, 0.5, 0.5]));
        let y = g.linear(x, w, Some(b));
        assert_eq!(g.value(y).data, vec![5.5, 2.5, 0.5]);
        let s = g.weighted_sum(y, vec![1.0, 1.0, 1.0]);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap(), &[0.0, 3.5]);
        assert_eq!(grads.get(b).unwrap(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.get(w).unwrap(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn row_norm_gradient_is_zero_at_origin() {
        let mut g = Graph::<f64>::new(true);
        let x = g.leaf(t(&[2, 2], &[0.0, 0.0, 3.0, 4.0]));
        let n = g.row_norm(x);
        assert_eq!(g.value(n).data, vec![0.0, 5.0]);
        let s = g.weighted_sum(n, vec![1.0, 1.0]);
        let grads = g.backward(s);
        let gx = grads.get(x).unwrap();
        assert_eq!(&gx[..2], &[0.0, 0.0]);
        assert!((gx[2] - 0.6).abs() < 1e-12 && (gx[3] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new(true);
        let a = g.leaf(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let s = g.add(a, c);
        let l = g.weighted_sum(s, vec![1.0, 1.0]);
        let grads = g.backward(l);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(a).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn untracked_graph_has_no_gradients() {
        let mut g = Graph::<f64>::new(false);
        let a = g.leaf(t(&[1], &[1.0]));
        let l = g.weighted_sum(a, vec![2.0]);
        assert!(!g.requires_grad(l));
        assert!(g.backward(l).get(a).is_none());
    }

    #[test]
    fn causal_attention_ignores_future_keys() {
        let mut g = Graph::<f64>::new(false);
        let q = g.constant(t(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let k = g.constant(t(&[1, 2, 2], &[1.0, 0.0, 5.0, 5.0]));
        let v = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 9.0, 9.0]));
        let o = g.attention(q, k, v, 1, &AttnMask { key_valid: None, causal: true });
        assert_eq!(&g.value(o).data[..2], &[1.0, 2.0]);
    }

    #[test]
    fn soft_cross_entropy_uniform_is_log_vocab() {
        let mut g = Graph::<f64>::new(false);
        let z = g.constant(t(&[1, 4], &[0.0; 4]));
        let l = g.soft_cross_entropy(z, vec![0.0, 0.0, 1.0, 0.0], vec![1.0]);
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
    }
}
