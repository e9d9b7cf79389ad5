//! Reverse-mode tape. Ops append nodes holding the forward value and a
//! closure that routes the incoming gradient to parent nodes; node ids
//! are creation-ordered, so one reverse sweep is a topological order.

use std::rc::Rc;

use rand::Rng;

use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-12;

pub type NodeId = usize;

type BackwardFn = Box<dyn Fn(&Tensor, &mut dyn FnMut(NodeId, &Tensor))>;

struct Node {
    value: Rc<Tensor>,
    backward: Option<BackwardFn>,
}

/// Per-node gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn rc(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes[id].value)
    }

    fn push(&mut self, value: Tensor, backward: Option<BackwardFn>) -> NodeId {
        self.nodes.push(Node {
            value: Rc::new(value),
            backward,
        });
        self.nodes.len() - 1
    }

    /// Leaf node. Gradients still accumulate into it, which is how
    /// parameters receive theirs.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, None)
    }

    /// Sweeps the tape once from a scalar loss; every node reachable
    /// backwards gets its accumulated gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss] = Some(Tensor::scalar(1.0));
        for id in (0..=loss).rev() {
            if grads[id].is_none() {
                continue;
            }
            let Some(back) = &self.nodes[id].backward else {
                continue;
            };
            let grad = grads[id].clone().expect("checked above");
            back(&grad, &mut |pid, contrib| {
                debug_assert!(pid < id, "tape must stay topological");
                match &mut grads[pid] {
                    Some(g) => g.add_scaled(contrib, 1.0).expect("gradient shapes agree"),
                    slot => *slot = Some(contrib.clone()),
                }
            });
        }
        Ok(Gradients { grads })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                sink(a, g);
                sink(b, g);
            })),
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                sink(a, g);
                sink(b, &g.map(|x| -x));
            })),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip(self.value(b), "mul", |x, y| x * y)?;
        let av = self.rc(a);
        let bv = self.rc(b);
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                sink(a, &g.zip(&bv, "mul_back", |x, y| x * y).expect("shape fixed"));
                sink(b, &g.zip(&av, "mul_back", |x, y| x * y).expect("shape fixed"));
            })),
        ))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let value = self.value(a).map(|x| factor * x);
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| sink(a, &g.map(|x| factor * x)))),
        ))
    }

    /// Adds a 1xC bias row to every row of an NxC matrix.
    pub fn add_bias(&mut self, m: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(m).shape();
        let bshape = self.value(bias).shape();
        if bshape != (1, cols) {
            return Err(Error::Shape {
                op: "add_bias".into(),
                details: format!("matrix {rows}x{cols}, bias {}x{}", bshape.0, bshape.1),
            });
        }
        let mut value = (*self.nodes[m].value).clone();
        let bv = self.rc(bias);
        for r in 0..rows {
            for c in 0..cols {
                let x = value.at(r, c) + bv.at(0, c);
                value.set(r, c, x);
            }
        }
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                sink(m, g);
                let mut bg = Tensor::zeros(1, cols);
                for r in 0..g.rows() {
                    for c in 0..cols {
                        bg.data_mut()[c] += g.at(r, c);
                    }
                }
                sink(bias, &bg);
            })),
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let av = self.rc(a);
        let bv = self.rc(b);
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let bt = bv.transposed();
                sink(a, &g.matmul(&bt).expect("shape fixed"));
                let at = av.transposed();
                sink(b, &at.matmul(g).expect("shape fixed"));
            })),
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transposed();
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| sink(a, &g.transposed()))),
        ))
    }

    /// Stacks the given rows of `a`, repetition allowed. Embedding
    /// lookup and position extraction are both this op.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.value(a).shape();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape {
                op: "gather_rows".into(),
                details: format!("row {bad} out of {rows}"),
            });
        }
        let src = self.rc(a);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(src.row(i));
        }
        let value = Tensor::new(indices.len(), cols, data)?;
        let indices = indices.to_vec();
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let mut out = Tensor::zeros(rows, cols);
                for (i, &r) in indices.iter().enumerate() {
                    for c in 0..cols {
                        out.data_mut()[r * cols + c] += g.at(i, c);
                    }
                }
                sink(a, &out);
            })),
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (rows, cols) = self.value(a).shape();
        if start >= end || end > cols {
            return Err(Error::Shape {
                op: "slice_cols".into(),
                details: format!("range {start}..{end} of {cols} columns"),
            });
        }
        let src = self.rc(a);
        let width = end - start;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..end]);
        }
        let value = Tensor::new(rows, width, data)?;
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let mut out = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..width {
                        out.set(r, start + c, g.at(r, c));
                    }
                }
                sink(a, &out);
            })),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat_cols".into(),
                details: "no inputs".into(),
            });
        }
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols".into(),
                    details: format!("row counts {} vs {}", rows, v.rows()),
                });
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(rows, total, data)?;
        let parts = parts.to_vec();
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let mut start = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    let mut part = Tensor::zeros(rows, w);
                    for r in 0..rows {
                        for c in 0..w {
                            part.set(r, c, g.at(r, start + c));
                        }
                    }
                    sink(p, &part);
                    start += w;
                }
            })),
        ))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(a).shape();
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let gv = g.scalar_value().expect("sum_all grad is scalar");
                sink(a, &Tensor::full(rows, cols, gv));
            })),
        ))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let out = Rc::new(value);
        let captured = Rc::clone(&out);
        Ok(self.push_rc(
            out,
            Some(Box::new(move |g, sink| {
                let d = g
                    .zip(&captured, "sigmoid_back", |gx, s| gx * s * (1.0 - s))
                    .expect("shape fixed");
                sink(a, &d);
            })),
        ))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::tanh);
        let out = Rc::new(value);
        let captured = Rc::clone(&out);
        Ok(self.push_rc(
            out,
            Some(Box::new(move |g, sink| {
                let d = g
                    .zip(&captured, "tanh_back", |gx, t| gx * (1.0 - t * t))
                    .expect("shape fixed");
                sink(a, &d);
            })),
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| x.max(0.0));
        let input = self.rc(a);
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let d = g
                    .zip(&input, "relu_back", |gx, x| if x > 0.0 { gx } else { 0.0 })
                    .expect("shape fixed");
                sink(a, &d);
            })),
        ))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::exp);
        let out = Rc::new(value);
        let captured = Rc::clone(&out);
        Ok(self.push_rc(
            out,
            Some(Box::new(move |g, sink| {
                let d = g
                    .zip(&captured, "exp_back", |gx, e| gx * e)
                    .expect("shape fixed");
                sink(a, &d);
            })),
        ))
    }

    /// Gaussian error linear unit, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const K: f64 = 0.044_715;
        let value = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (C * (x + K * x * x * x)).tanh()));
        let input = self.rc(a);
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let d = g
                    .zip(&input, "gelu_back", |gx, x| {
                        let t = (C * (x + K * x * x * x)).tanh();
                        let du = C * (1.0 + 3.0 * K * x * x);
                        gx * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .expect("shape fixed");
                sink(a, &d);
            })),
        ))
    }

    fn push_rc(&mut self, value: Rc<Tensor>, backward: Option<BackwardFn>) -> NodeId {
        self.nodes.push(Node { value, backward });
        self.nodes.len() - 1
    }

    /// Row-wise softmax. A 0/1 mask zeroes the masked entries and
    /// renormalizes over the rest; a fully-masked row falls back to
    /// uniform and passes no gradient.
    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<&Tensor>) -> Result<NodeId> {
        let (rows, cols) = self.value(a).shape();
        if let Some(m) = mask {
            if m.shape() != (rows, cols) {
                return Err(Error::Shape {
                    op: "softmax_rows".into(),
                    details: format!(
                        "mask {}x{} for logits {rows}x{cols}",
                        m.rows(),
                        m.cols()
                    ),
                });
            }
            if m.data().iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::Contract("softmax mask entries must be 0 or 1".into()));
            }
        }
        let logits = self.rc(a);
        let keep = |r: usize, c: usize| mask.is_none_or(|m| m.at(r, c) == 1.0);
        let mut value = Tensor::zeros(rows, cols);
        let mut live = vec![true; rows];
        for r in 0..rows {
            let allowed: Vec<usize> = (0..cols).filter(|&c| keep(r, c)).collect();
            if allowed.is_empty() {
                live[r] = false;
                for c in 0..cols {
                    value.set(r, c, 1.0 / cols as f64);
                }
                continue;
            }
            let max = allowed
                .iter()
                .map(|&c| logits.at(r, c))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &c in &allowed {
                let e = (logits.at(r, c) - max).exp();
                value.set(r, c, e);
                sum += e;
            }
            for &c in &allowed {
                value.set(r, c, value.at(r, c) / sum);
            }
        }
        let out = Rc::new(value);
        let probs = Rc::clone(&out);
        Ok(self.push_rc(
            out,
            Some(Box::new(move |g, sink| {
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    if !live[r] {
                        continue;
                    }
                    let dot: f64 = (0..cols).map(|c| g.at(r, c) * probs.at(r, c)).sum();
                    for c in 0..cols {
                        d.set(r, c, probs.at(r, c) * (g.at(r, c) - dot));
                    }
                }
                sink(a, &d);
            })),
        ))
    }

    /// Row-wise log softmax via the stable log-sum-exp.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(a).shape();
        let logits = self.rc(a);
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let lse = log_sum_exp(logits.row(r));
            for c in 0..cols {
                value.set(r, c, logits.at(r, c) - lse);
            }
        }
        let out = Rc::new(value);
        let logp = Rc::clone(&out);
        Ok(self.push_rc(
            out,
            Some(Box::new(move |g, sink| {
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let gsum: f64 = (0..cols).map(|c| g.at(r, c)).sum();
                    for c in 0..cols {
                        d.set(r, c, g.at(r, c) - logp.at(r, c).exp() * gsum);
                    }
                }
                sink(a, &d);
            })),
        ))
    }

    /// Per-row -log softmax(logits)[target], returned as an Nx1 column.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.value(logits).shape();
        if targets.len() != rows {
            return Err(Error::Shape {
                op: "cross_entropy_rows".into(),
                details: format!("{} targets for {rows} rows", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Shape {
                op: "cross_entropy_rows".into(),
                details: format!("target {bad} out of {cols} classes"),
            });
        }
        let z = self.rc(logits);
        let mut probs = Tensor::zeros(rows, cols);
        let mut value = Tensor::zeros(rows, 1);
        for r in 0..rows {
            let lse = log_sum_exp(z.row(r));
            for c in 0..cols {
                probs.set(r, c, (z.at(r, c) - lse).exp());
            }
            value.set(r, 0, lse - z.at(r, targets[r]));
        }
        let probs = Rc::new(probs);
        let targets = targets.to_vec();
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.at(r, 0);
                    for c in 0..cols {
                        let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                        d.set(r, c, gr * (probs.at(r, c) - onehot));
                    }
                }
                sink(logits, &d);
            })),
        ))
    }

    /// Row-wise normalization with learned 1xD gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(x).shape();
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let s = self.value(id).shape();
            if s != (1, cols) {
                return Err(Error::Shape {
                    op: "layer_norm".into(),
                    details: format!("{name} {}x{} for input {rows}x{cols}", s.0, s.1),
                });
            }
        }
        let xv = self.rc(x);
        let gv = self.rc(gain);
        let bv = self.rc(bias);
        let mut normalized = Tensor::zeros(rows, cols);
        let mut inv_std = vec![0.0; rows];
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let n = (row[c] - mean) * inv;
                normalized.set(r, c, n);
                value.set(r, c, gv.at(0, c) * n + bv.at(0, c));
            }
        }
        let normalized = Rc::new(normalized);
        Ok(self.push(
            value,
            Some(Box::new(move |g, sink| {
                let mut dx = Tensor::zeros(rows, cols);
                let mut dgain = Tensor::zeros(1, cols);
                let mut dbias = Tensor::zeros(1, cols);
                for r in 0..rows {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for c in 0..cols {
                        let gg = g.at(r, c) * gv.at(0, c);
                        m1 += gg;
                        m2 += gg * normalized.at(r, c);
                        dgain.data_mut()[c] += g.at(r, c) * normalized.at(r, c);
                        dbias.data_mut()[c] += g.at(r, c);
                    }
                    m1 /= cols as f64;
                    m2 /= cols as f64;
                    for c in 0..cols {
                        let gg = g.at(r, c) * gv.at(0, c);
                        dx.set(r, c, (gg - m1 - normalized.at(r, c) * m2) * inv_std[r]);
                    }
                }
                sink(x, &dx);
                sink(gain, &dgain);
                sink(bias, &dbias);
            })),
        ))
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Draws an index from a probability vector. The vector must be
/// nonnegative and sum to 1 within 1e-6.
pub fn categorical_sample<R: Rng>(probs: &Tensor, rng: &mut R) -> Result<usize> {
    let data = probs.data();
    if data.is_empty() {
        return Err(Error::Contract("cannot sample from an empty vector".into()));
    }
    if data.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::Contract(
            "sampling probabilities must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = data.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "sampling probabilities sum to {sum}, expected 1"
        )));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in data.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Float dust can leave u barely above the accumulated total; fall
    // back to the last index with positive mass.
    Ok(data
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("sum is 1, so some mass exists"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn add_shape_mismatch_reports_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 2));
        let b = g.constant(Tensor::zeros(2, 3));
        match g.add(a, b) {
            Err(Error::Shape { op, details }) => {
                assert_eq!(op, "add");
                assert!(details.contains("2x2"));
                assert!(details.contains("2x3"));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn sum_of_linear_map_gradient_broadcasts_input() {
        // loss = sum(W x) with fixed x: dW has x^T in every row.
        let mut g = Graph::new();
        let w = g.constant(t(2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let x = g.constant(t(3, 1, &[2.0, -1.0, 0.5]));
        let wx = g.matmul(w, x).unwrap();
        let loss = g.sum_all(wx).unwrap();
        let grads = g.backward(loss).unwrap();
        let dw = grads.get(w).unwrap();
        assert_eq!(dw.data(), &[2.0, -1.0, 0.5, 2.0, -1.0, 0.5]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut g = Graph::new();
        let z = g.constant(t(1, 2, &[0.0, 0.0]));
        let p = g.softmax_rows(z, None).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let z = g.constant(Tensor::truncated_normal(5, 7, 3.0, &mut rng));
        let p = g.softmax_rows(z, None).unwrap();
        for r in 0..5 {
            let sum: f64 = g.value(p).row(r).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "row {r} sums to {sum}");
        }
    }

    #[test]
    fn masked_softmax_renormalizes_over_kept_entries() {
        let mut g = Graph::new();
        let z = g.constant(t(1, 3, &[1.0, 5.0, 2.0]));
        let mask = t(1, 3, &[1.0, 0.0, 1.0]);
        let p = g.softmax_rows(z, Some(&mask)).unwrap();
        let pv = g.value(p);
        assert_eq!(pv.at(0, 1), 0.0);
        let denom = 1.0f64.exp() + 2.0f64.exp();
        assert!((pv.at(0, 0) - 1.0f64.exp() / denom).abs() < 1e-12);
        assert!((pv.at(0, 2) - 2.0f64.exp() / denom).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_softmax_row_is_uniform() {
        let mut g = Graph::new();
        let z = g.constant(t(1, 4, &[3.0, -1.0, 0.0, 9.0]));
        let mask = Tensor::zeros(1, 4);
        let p = g.softmax_rows(z, Some(&mask)).unwrap();
        assert_eq!(g.value(p).data(), &[0.25; 4]);
    }

    #[test]
    fn mask_entries_must_be_binary() {
        let mut g = Graph::new();
        let z = g.constant(t(1, 2, &[0.0, 0.0]));
        let mask = t(1, 2, &[0.5, 1.0]);
        assert!(matches!(
            g.softmax_rows(z, Some(&mask)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let mut g = Graph::new();
        let z = g.constant(t(1, 2, &[0.0, 0.0]));
        let ce = g.cross_entropy_rows(z, &[0]).unwrap();
        let v = g.value(ce).at(0, 0);
        assert!((v - 2.0f64.ln()).abs() < 1e-12);

        // Gradient is softmax minus one-hot: [-0.5, +0.5].
        let loss = g.sum_all(ce).unwrap();
        let grads = g.backward(loss).unwrap();
        let dz = grads.get(z).unwrap();
        assert!((dz.at(0, 0) + 0.5).abs() < 1e-12);
        assert!((dz.at(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let logits = t(2, 4, &[0.3, -1.2, 2.0, 0.7, -0.5, 0.1, 0.2, 1.5]);
        let targets = [2usize, 0];
        let mut g = Graph::new();
        let z = g.constant(logits.clone());
        let ce = g.cross_entropy_rows(z, &targets).unwrap();
        let lp = g.log_softmax_rows(z).unwrap();
        for r in 0..2 {
            let direct = g.value(ce).at(r, 0);
            let via_log = -g.value(lp).at(r, targets[r]);
            assert!((direct - via_log).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_pure_bias() {
        let mut g = Graph::new();
        let x = g.constant(t(1, 4, &[3.0; 4]));
        let gain = g.constant(t(1, 4, &[2.0, 2.0, 2.0, 2.0]));
        let bias = g.constant(t(1, 4, &[0.5, -0.5, 0.0, 1.0]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        // Zero variance: normalized values vanish, only the bias stays.
        assert_eq!(g.value(y).data(), &[0.5, -0.5, 0.0, 1.0]);
    }

    #[test]
    fn gather_rows_accumulates_repeated_indices() {
        let mut g = Graph::new();
        let table = g.constant(t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let picked = g.gather_rows(table, &[1, 1, 0]).unwrap();
        assert_eq!(g.value(picked).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let loss = g.sum_all(picked).unwrap();
        let grads = g.backward(loss).unwrap();
        // Row 1 was gathered twice, so its gradient doubles.
        assert_eq!(grads.get(table).unwrap().data(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn slice_concat_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(t(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        let left = g.slice_cols(x, 0, 2).unwrap();
        let right = g.slice_cols(x, 2, 4).unwrap();
        let back = g.concat_cols(&[left, right]).unwrap();
        assert_eq!(g.value(back), g.value(x));
        assert!(g.slice_cols(x, 2, 2).is_err());
        assert!(g.slice_cols(x, 3, 5).is_err());
    }

    #[test]
    fn categorical_degenerate_and_determinism() {
        let probs = t(1, 2, &[1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(categorical_sample(&probs, &mut rng).unwrap(), 0);
        }
        let probs = t(1, 3, &[0.2, 0.5, 0.3]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| categorical_sample(&probs, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn categorical_frequencies_match_probabilities() {
        let probs = t(1, 2, &[0.3, 0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| categorical_sample(&probs, &mut rng).unwrap() == 0)
            .count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.3).abs() <= 0.01, "empirical frequency {freq}");
    }

    #[test]
    fn categorical_rejects_bad_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negative = t(1, 2, &[-0.1, 1.1]);
        assert!(matches!(
            categorical_sample(&negative, &mut rng),
            Err(Error::Contract(_))
        ));
        let off = t(1, 2, &[0.6, 0.6]);
        assert!(matches!(
            categorical_sample(&off, &mut rng),
            Err(Error::Contract(_))
        ));
    }
}
