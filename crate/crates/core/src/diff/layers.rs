//! Composite blocks assembled from graph primitives: affine maps,
//! multi-head self-attention, the position-wise feed-forward block, an
//! LSTM cell and inverted dropout.

use rand::Rng;

use crate::diff::graph::{Graph, NodeId};
use crate::diff::tensor::Tensor;
use crate::error::{Error, Result};

pub fn affine(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Bound node ids for one attention block's parameters, all DxD plus
/// 1xD biases.
pub struct AttentionNodes {
    pub wq: NodeId,
    pub bq: NodeId,
    pub wk: NodeId,
    pub bk: NodeId,
    pub wv: NodeId,
    pub bv: NodeId,
    pub wo: NodeId,
    pub bo: NodeId,
}

/// Scaled dot-product self-attention over a TxD sequence, heads split
/// column-wise, concatenated and projected back to D.
pub fn multi_head_attention(
    g: &mut Graph,
    x: NodeId,
    p: &AttentionNodes,
    heads: usize,
    mask: Option<&Tensor>,
) -> Result<NodeId> {
    let (_, d) = g.value(x).shape();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Contract(format!(
            "width {d} does not split into {heads} heads"
        )));
    }
    let dh = d / heads;
    let q = affine(g, x, p.wq, p.bq)?;
    let k = affine(g, x, p.wk, p.bk)?;
    let v = affine(g, x, p.wv, p.bv)?;
    let mut contexts = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let probs = g.softmax_rows(scaled, mask)?;
        contexts.push(g.matmul(probs, vh)?);
    }
    let merged = g.concat_cols(&contexts)?;
    affine(g, merged, p.wo, p.bo)
}

/// Position-wise feed-forward: affine, GELU, affine.
pub fn ffn(
    g: &mut Graph,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
) -> Result<NodeId> {
    let hidden = affine(g, x, w1, b1)?;
    let activated = g.gelu(hidden)?;
    affine(g, activated, w2, b2)
}

/// One LSTM step. Gate order along the 4H axis is input, forget, cell,
/// output. Returns (next hidden, next cell).
pub fn lstm_cell(
    g: &mut Graph,
    x: NodeId,
    h: NodeId,
    c: NodeId,
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hidden = g.value(h).cols();
    let xw = g.matmul(x, wx)?;
    let hw = g.matmul(h, wh)?;
    let pre = g.add(xw, hw)?;
    let gates = g.add_bias(pre, b)?;
    if g.value(gates).cols() != 4 * hidden {
        return Err(Error::Shape {
            op: "lstm_cell".into(),
            details: format!(
                "gate width {} for hidden size {hidden}",
                g.value(gates).cols()
            ),
        });
    }
    let i_raw = g.slice_cols(gates, 0, hidden)?;
    let f_raw = g.slice_cols(gates, hidden, 2 * hidden)?;
    let g_raw = g.slice_cols(gates, 2 * hidden, 3 * hidden)?;
    let o_raw = g.slice_cols(gates, 3 * hidden, 4 * hidden)?;
    let i = g.sigmoid(i_raw)?;
    let f = g.sigmoid(f_raw)?;
    let cell_in = g.tanh(g_raw)?;
    let o = g.sigmoid(o_raw)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cell_in)?;
    let c_next = g.add(keep, write)?;
    let c_act = g.tanh(c_next)?;
    let h_next = g.mul(o, c_act)?;
    Ok((h_next, c_next))
}

/// Gate bias initialization: zeros with the forget gate at 1, the
/// usual remedy against early vanishing memory.
pub fn lstm_bias_init(hidden: usize) -> Tensor {
    let mut b = Tensor::zeros(1, 4 * hidden);
    for i in hidden..2 * hidden {
        b.data_mut()[i] = 1.0;
    }
    b
}

/// Inverted dropout: keeps entries with probability 1-rate and scales
/// them by 1/(1-rate), so expectations match inference. Training only;
/// inference paths simply skip the call.
pub fn dropout<R: Rng>(g: &mut Graph, x: NodeId, rate: f64, rng: &mut R) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate {rate} not in [0,1)")));
    }
    if rate == 0.0 {
        return Ok(x);
    }
    let (rows, cols) = g.value(x).shape();
    let keep = 1.0 - rate;
    let mut mask = Tensor::zeros(rows, cols);
    for v in mask.data_mut() {
        if rng.random::<f64>() >= rate {
            *v = 1.0 / keep;
        }
    }
    let mask = g.constant(mask);
    g.mul(x, mask)
}
