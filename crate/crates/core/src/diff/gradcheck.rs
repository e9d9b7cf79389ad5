//! Central-difference gradient verification. The builder closure is
//! re-run per perturbed element, so checks stay pure; the output is
//! probed with a fixed irregular weighting to rule out cancellation
//! hiding a wrong gradient.

use crate::diff::graph::{Graph, NodeId};
use crate::diff::tensor::Tensor;
use crate::error::Result;

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Weights in [0.2, 1.0], distinct across positions, shape-determined.
fn probe(rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = 0.6 + 0.4 * (i as f64 * 0.7391 + 0.31).sin();
    }
    t
}

/// Checks d(probe-weighted sum of build's output)/d(input element) for
/// every element of every input against a central difference.
pub fn check_gradients<F>(inputs: &[Tensor], epsilon: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let run = |tensors: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &ids)?;
        let (rows, cols) = g.value(out).shape();
        let w = g.constant(probe(rows, cols));
        let weighted = g.mul(out, w)?;
        let loss = g.sum_all(weighted)?;
        Ok((g, ids, loss))
    };

    let (graph, ids, loss) = run(inputs)?;
    let grads = graph.backward(loss)?;
    let analytic: Vec<Option<Tensor>> = ids.iter().map(|&id| grads.get(id).cloned()).collect();

    let mut max_rel_err = 0.0f64;
    let mut checked = 0;
    for (pi, input) in inputs.iter().enumerate() {
        for ei in 0..input.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut shifted = inputs.to_vec();
                shifted[pi].data_mut()[ei] += delta;
                let (g, _, l) = run(&shifted)?;
                g.value(l).scalar_value()
            };
            let numeric = (eval(epsilon)? - eval(-epsilon)?) / (2.0 * epsilon);
            let a = analytic[pi].as_ref().map_or(0.0, |t| t.data()[ei]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            max_rel_err = max_rel_err.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::layers::{affine, ffn, lstm_cell, multi_head_attention, AttentionNodes};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    fn sample(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::truncated_normal(rows, cols, 0.8, &mut rng)
    }

    fn assert_passes(
        inputs: &[Tensor],
        build: impl Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    ) {
        let report = check_gradients(inputs, EPS, build).unwrap();
        assert!(report.checked > 0);
        assert!(
            report.max_rel_err <= TOL,
            "max rel err {} over {} elements",
            report.max_rel_err,
            report.checked
        );
    }

    #[test]
    fn add_sub_mul_scale() {
        let a = sample(2, 3, 1);
        let b = sample(2, 3, 2);
        assert_passes(&[a.clone(), b.clone()], |g, ids| g.add(ids[0], ids[1]));
        assert_passes(&[a.clone(), b.clone()], |g, ids| g.sub(ids[0], ids[1]));
        assert_passes(&[a.clone(), b], |g, ids| g.mul(ids[0], ids[1]));
        assert_passes(&[a], |g, ids| g.scale(ids[0], -1.7));
    }

    #[test]
    fn add_bias_and_matmul() {
        assert_passes(&[sample(3, 4, 3), sample(1, 4, 4)], |g, ids| {
            g.add_bias(ids[0], ids[1])
        });
        assert_passes(&[sample(2, 3, 5), sample(3, 4, 6)], |g, ids| {
            g.matmul(ids[0], ids[1])
        });
    }

    #[test]
    fn transpose_gather_slice_concat_sum() {
        assert_passes(&[sample(2, 5, 7)], |g, ids| g.transpose(ids[0]));
        assert_passes(&[sample(5, 3, 8)], |g, ids| {
            g.gather_rows(ids[0], &[0, 2, 2, 4])
        });
        assert_passes(&[sample(3, 6, 9)], |g, ids| g.slice_cols(ids[0], 1, 4));
        assert_passes(&[sample(2, 2, 10), sample(2, 3, 11)], |g, ids| {
            g.concat_cols(&[ids[0], ids[1]])
        });
        assert_passes(&[sample(3, 3, 12)], |g, ids| g.sum_all(ids[0]));
    }

    #[test]
    fn pointwise_nonlinearities() {
        let x = sample(2, 4, 13);
        assert_passes(&[x.clone()], |g, ids| g.sigmoid(ids[0]));
        assert_passes(&[x.clone()], |g, ids| g.tanh(ids[0]));
        assert_passes(&[x.clone()], |g, ids| g.exp(ids[0]));
        assert_passes(&[x], |g, ids| g.gelu(ids[0]));
        // Kink at zero breaks finite differences, so keep clear of it.
        let off_kink = sample(2, 4, 14).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
        assert_passes(&[off_kink], |g, ids| g.relu(ids[0]));
    }

    #[test]
    fn softmax_and_losses() {
        assert_passes(&[sample(3, 5, 15)], |g, ids| g.softmax_rows(ids[0], None));
        assert_passes(&[sample(3, 5, 16)], |g, ids| g.log_softmax_rows(ids[0]));
        assert_passes(&[sample(3, 6, 17)], |g, ids| {
            g.cross_entropy_rows(ids[0], &[1, 0, 5])
        });
    }

    #[test]
    fn masked_softmax_including_dead_row() {
        let mask = Tensor::new(
            3,
            4,
            vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        assert_passes(&[sample(3, 4, 18)], move |g, ids| {
            g.softmax_rows(ids[0], Some(&mask))
        });
    }

    #[test]
    fn layer_norm_all_parameters() {
        assert_passes(
            &[sample(3, 5, 19), sample(1, 5, 20), sample(1, 5, 21)],
            |g, ids| g.layer_norm(ids[0], ids[1], ids[2]),
        );
    }

    #[test]
    fn attention_block() {
        let d = 4;
        let mut inputs = vec![sample(3, d, 22)];
        for s in 23..31 {
            let t = if (s - 23) % 2 == 0 {
                sample(d, d, s)
            } else {
                sample(1, d, s)
            };
            inputs.push(t);
        }
        assert_passes(&inputs, |g, ids| {
            let p = AttentionNodes {
                wq: ids[1],
                bq: ids[2],
                wk: ids[3],
                bk: ids[4],
                wv: ids[5],
                bv: ids[6],
                wo: ids[7],
                bo: ids[8],
            };
            multi_head_attention(g, ids[0], &p, 2, None)
        });
    }

    #[test]
    fn ffn_block() {
        assert_passes(
            &[
                sample(2, 3, 31),
                sample(3, 6, 32),
                sample(1, 6, 33),
                sample(6, 3, 34),
                sample(1, 3, 35),
            ],
            |g, ids| ffn(g, ids[0], ids[1], ids[2], ids[3], ids[4]),
        );
    }

    #[test]
    fn lstm_cell_both_outputs() {
        assert_passes(
            &[
                sample(1, 2, 36),
                sample(1, 3, 37),
                sample(1, 3, 38),
                sample(2, 12, 39),
                sample(3, 12, 40),
                sample(1, 12, 41),
            ],
            |g, ids| {
                let (h, c) = lstm_cell(g, ids[0], ids[1], ids[2], ids[3], ids[4], ids[5])?;
                g.concat_cols(&[h, c])
            },
        );
    }

    #[test]
    fn two_layer_network_end_to_end() {
        let x = sample(2, 3, 42);
        assert_passes(
            &[
                sample(3, 5, 43),
                sample(1, 5, 44),
                sample(5, 2, 45),
                sample(1, 2, 46),
            ],
            move |g, ids| {
                let xc = g.constant(x.clone());
                let h = affine(g, xc, ids[0], ids[1])?;
                let a = g.tanh(h)?;
                affine(g, a, ids[2], ids[3])
            },
        );
    }

    #[test]
    fn entropy_expression() {
        // -sum(p log p) exactly as the policy regularizer builds it.
        assert_passes(&[sample(1, 6, 47)], |g, ids| {
            let p = g.softmax_rows(ids[0], None)?;
            let lp = g.log_softmax_rows(ids[0])?;
            let plp = g.mul(p, lp)?;
            let s = g.sum_all(plp)?;
            g.scale(s, -1.0)
        });
    }
}
