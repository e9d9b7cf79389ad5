//! Python bindings over the path-based knowledge-graph completion
//! engine: load or synthesize datasets, pretrain the masked-entity
//! predictor, train walk policies, and rank held-out queries.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;

use pathlp::agent::{PolicyConfig, PolicyModel, ReinforceOptions, RewardKind, RolloutMode};
use pathlp::config::{parse_strategy, parse_variant};
use pathlp::diff::Optimizer;
use pathlp::eval::{evaluate_minerva, evaluate_predictor, rank_query, ContextSource, EvalOptions, Strategy};
use pathlp::kg::{load_dataset, Dataset, EntityId, Split, Triple};
use pathlp::predictor::{PredictorConfig, PredictorModel, PretrainOptions, Variant};
use pathlp::sampler::{sample_chain, to_relonly, Chain, ChainFormat, KPolicy, StepLabel};
use pathlp::synth::{generate_synthetic_kg, SynthOptions};
use pathlp::TrainRng;

fn err(e: pathlp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!(
            "split must be train, valid or test, got {other:?}"
        ))),
    }
}

/// A loaded dataset directory: vocabulary, splits, adjacency and the
/// filtered-ranking index.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: Dataset,
}

impl PyDataset {
    fn triple(&self, head: &str, relation: &str, tail: &str) -> PyResult<Triple> {
        let v = &self.inner.vocab;
        let h = v
            .entity(head)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown entity {head:?}")))?;
        let r = v
            .relation(relation)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown relation {relation:?}")))?;
        let t = v
            .entity(tail)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown entity {tail:?}")))?;
        Ok(Triple::new(h, r, t))
    }

    /// Context steps as (relation | None, entity) name pairs; None
    /// marks a NO_OP step that stays put.
    fn steps_out(&self, steps: &[(StepLabel, EntityId)]) -> Vec<(Option<String>, String)> {
        steps
            .iter()
            .map(|&(label, e)| {
                let rel = match label {
                    StepLabel::Rel(r) => Some(self.inner.vocab.relation_name(r)),
                    StepLabel::NoOp => None,
                };
                (rel, self.inner.vocab.entity_name(e).to_string())
            })
            .collect()
    }

    fn chain_in(
        &self,
        query: Triple,
        steps: Vec<(Option<String>, String)>,
        format: ChainFormat,
    ) -> PyResult<Chain> {
        let v = &self.inner.vocab;
        let mut out = Vec::with_capacity(steps.len());
        for (rel, entity) in steps {
            let e = v
                .entity(&entity)
                .ok_or_else(|| PyKeyError::new_err(format!("unknown entity {entity:?}")))?;
            let label = match rel {
                Some(name) => StepLabel::Rel(v.relation(&name).ok_or_else(|| {
                    PyKeyError::new_err(format!("unknown relation {name:?}"))
                })?),
                None => StepLabel::NoOp,
            };
            out.push((label, e));
        }
        let chain = Chain {
            query,
            steps: out,
            format: ChainFormat::InterEnt,
        };
        match format {
            ChainFormat::InterEnt => Ok(chain),
            ChainFormat::RelOnly => to_relonly(chain).map_err(err),
        }
    }
}

#[pymethods]
impl PyDataset {
    /// Loads train.txt, valid.txt and test.txt from a directory.
    #[new]
    fn new(dir: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: load_dataset(&dir).map_err(err)?,
        })
    }

    #[getter]
    fn entity_count(&self) -> usize {
        self.inner.vocab.entity_count()
    }

    #[getter]
    fn relation_count(&self) -> usize {
        self.inner.vocab.relation_count()
    }

    /// Fingerprint of the vocabulary; checkpoints refuse to load
    /// against a different one.
    #[getter]
    fn vocab_hash(&self) -> String {
        self.inner.vocab.hash()
    }

    fn entities(&self) -> Vec<String> {
        self.inner
            .vocab
            .entity_ids()
            .map(|e| self.inner.vocab.entity_name(e).to_string())
            .collect()
    }

    /// Original relation names; walks may also report the `^-1`
    /// inverse forms.
    fn relations(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        for split in [Split::Train, Split::Valid, Split::Test] {
            for t in self.inner.store.split(split) {
                if !t.relation.is_inverse() {
                    seen.insert(self.inner.vocab.relation_name(t.relation));
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Forward-direction triples of one split as name tuples.
    fn triples(&self, split: &str) -> PyResult<Vec<(String, String, String)>> {
        let split = parse_split(split)?;
        Ok(self
            .inner
            .store
            .split(split)
            .iter()
            .filter(|t| !t.relation.is_inverse())
            .map(|t| {
                (
                    self.inner.vocab.entity_name(t.head).to_string(),
                    self.inner.vocab.relation_name(t.relation),
                    self.inner.vocab.entity_name(t.tail).to_string(),
                )
            })
            .collect())
    }

    /// Outgoing edges of an entity, inverse edges included.
    fn neighbors(&self, entity: &str) -> PyResult<Vec<(String, String)>> {
        let e = self
            .inner
            .vocab
            .entity(entity)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown entity {entity:?}")))?;
        Ok(self
            .inner
            .adjacency
            .edges_from(e)
            .iter()
            .map(|&(r, t)| {
                (
                    self.inner.vocab.relation_name(r),
                    self.inner.vocab.entity_name(t).to_string(),
                )
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(entities={}, relations={}, train={}, valid={}, test={})",
            self.inner.vocab.entity_count(),
            self.inner.vocab.relation_count(),
            self.inner.store.split(Split::Train).len(),
            self.inner.store.split(Split::Valid).len(),
            self.inner.store.split(Split::Test).len(),
        )
    }
}

/// The masked-entity transformer: scores every entity for the hidden
/// head of a query given a walked context path.
#[pyclass(name = "Predictor")]
struct PyPredictor {
    inner: PredictorModel,
    curve: Vec<(u64, f64)>,
}

impl PyPredictor {
    fn context(
        &self,
        data: &PyDataset,
        query: Triple,
        steps: Vec<(Option<String>, String)>,
    ) -> PyResult<Chain> {
        data.chain_in(query, steps, self.inner.config.variant.chain_format())
    }

    fn scores(
        &self,
        data: &PyDataset,
        query: Triple,
        steps: Vec<(Option<String>, String)>,
    ) -> PyResult<Vec<f64>> {
        let chain = self.context(data, query, steps)?;
        self.inner
            .score_entities(&data.inner.vocab, &query, &chain)
            .map_err(err)
    }
}

#[pymethods]
impl PyPredictor {
    /// Trains a fresh predictor on the train split of `data` with
    /// masked-entity recovery over sampled walks. `variant` is
    /// "coke" (relation-only contexts, mixed walk lengths in
    /// `k_min..=k_max`) or "interent" (entity-interleaved contexts of
    /// fixed length `k_max`).
    #[staticmethod]
    #[pyo3(signature = (
        data, *, variant = "coke", d = 32, layers = 1, heads = 2,
        max_seq_len = 8, context_length = 2, dropout = 0.0,
        tied_output = false, epochs = 20, batch_size = 64,
        chains_per_triple = 4, k_min = 1, k_max = 3, lr = 1e-3,
        seed = 7,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn pretrain(
        data: PyRef<'_, PyDataset>,
        variant: &str,
        d: usize,
        layers: usize,
        heads: usize,
        max_seq_len: usize,
        context_length: usize,
        dropout: f64,
        tied_output: bool,
        epochs: usize,
        batch_size: usize,
        chains_per_triple: usize,
        k_min: usize,
        k_max: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let variant = parse_variant(variant).map_err(err)?;
        let config = PredictorConfig {
            variant,
            d,
            layers,
            heads,
            max_seq_len,
            dropout,
            context_length,
            tied_output,
        };
        let k_policy = match variant {
            Variant::CoKE => KPolicy::UniformMix { min: k_min, max: k_max },
            Variant::InterEnt => KPolicy::Fixed(k_max),
        };
        let opts = PretrainOptions {
            epochs,
            batch_size,
            chains_per_triple,
            k_policy,
            optimizer: Optimizer::adam(lr),
            seed,
        };
        let mut rng = TrainRng::seed_from_u64(seed);
        let mut model =
            PredictorModel::new(config, &data.inner.vocab, &mut rng).map_err(err)?;
        let curve = model
            .pretrain(
                &data.inner.vocab,
                &data.inner.adjacency,
                data.inner.store.split(Split::Train),
                &opts,
                |_, _| Ok(()),
            )
            .map_err(err)?;
        Ok(PyPredictor {
            inner: model,
            curve: curve.iter().map(|p| (p.step, p.loss)).collect(),
        })
    }

    /// (step, loss) points recorded while pretraining; empty on a
    /// loaded checkpoint.
    fn losses(&self) -> Vec<(u64, f64)> {
        self.curve.clone()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    /// Loads a checkpoint; pass `vocab_hash` to insist it was trained
    /// on a matching vocabulary.
    #[staticmethod]
    #[pyo3(signature = (path, vocab_hash = None))]
    fn load(path: PathBuf, vocab_hash: Option<String>) -> PyResult<Self> {
        Ok(PyPredictor {
            inner: PredictorModel::load(&path, vocab_hash.as_deref()).map_err(err)?,
            curve: Vec::new(),
        })
    }

    /// Probability assigned to `head` answering (?, relation, tail)
    /// given `context`, a list of (relation | None, entity) steps
    /// walked from the tail.
    fn score(
        &self,
        data: PyRef<'_, PyDataset>,
        head: &str,
        relation: &str,
        tail: &str,
        context: Vec<(Option<String>, String)>,
    ) -> PyResult<f64> {
        let query = data.triple(head, relation, tail)?;
        let scores = self.scores(&data, query, context)?;
        Ok(scores[query.head.0 as usize])
    }

    /// The `k` most probable head entities for (?, relation, tail).
    #[pyo3(signature = (data, relation, tail, context, k = 5))]
    fn top(
        &self,
        data: PyRef<'_, PyDataset>,
        relation: &str,
        tail: &str,
        context: Vec<(Option<String>, String)>,
        k: usize,
    ) -> PyResult<Vec<(String, f64)>> {
        // Any placeholder head works: scoring masks position zero.
        let first = data
            .inner
            .vocab
            .entity_ids()
            .next()
            .ok_or_else(|| PyValueError::new_err("empty vocabulary"))?;
        let query = Triple::new(
            first,
            data.inner
                .vocab
                .relation(relation)
                .ok_or_else(|| PyKeyError::new_err(format!("unknown relation {relation:?}")))?,
            data.inner
                .vocab
                .entity(tail)
                .ok_or_else(|| PyKeyError::new_err(format!("unknown entity {tail:?}")))?,
        );
        let scores = self.scores(&data, query, context)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .take(k)
            .map(|i| {
                (
                    data.inner.vocab.entity_name(EntityId(i as u32)).to_string(),
                    scores[i],
                )
            })
            .collect())
    }

    /// Filtered rank of the true head among all entities, other known
    /// answers removed.
    fn rank(
        &self,
        data: PyRef<'_, PyDataset>,
        head: &str,
        relation: &str,
        tail: &str,
        context: Vec<(Option<String>, String)>,
    ) -> PyResult<usize> {
        let query = data.triple(head, relation, tail)?;
        let scores = self.scores(&data, query, context)?;
        let known = data.inner.filter.candidates(&query.inverse());
        rank_query(&scores, query.head, &known).map_err(err)
    }

    fn describe<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.inner.config;
        let out = PyDict::new(py);
        out.set_item("variant", c.variant.as_str())?;
        out.set_item("d", c.d)?;
        out.set_item("layers", c.layers)?;
        out.set_item("heads", c.heads)?;
        out.set_item("max_seq_len", c.max_seq_len)?;
        out.set_item("context_length", c.context_length)?;
        out.set_item("dropout", c.dropout)?;
        out.set_item("tied_output", c.tied_output)?;
        out.set_item("vocab_hash", &self.inner.vocab_hash)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Predictor(variant={}, d={}, layers={}, heads={})",
            c.variant.as_str(),
            c.d,
            c.layers,
            c.heads
        )
    }
}

/// A walk policy over the graph: starts at the query tail and takes
/// relation edges toward an informative terminal.
#[pyclass(name = "Policy")]
struct PyPolicy {
    inner: PolicyModel,
    curve: Vec<(usize, f64, f64)>,
}

#[pymethods]
impl PyPolicy {
    /// REINFORCE over the train split. `reward` is "predictor" (the
    /// frozen predictor's probability of the true head, `predictor`
    /// required) or "answer" (1 exactly when the walk ends on the
    /// answer).
    #[staticmethod]
    #[pyo3(signature = (
        data, *, reward = "answer", predictor = None, steps = 2,
        epochs = 30, batch_size = 4, rollouts = 20, lr = 1e-2,
        baseline_decay = 0.95, entropy_weight = 0.01,
        entropy_decay = 0.9, seed = 17, d = 16, hidden = 32,
        mlp_hidden = 32, max_actions = 200, relation = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        data: PyRef<'_, PyDataset>,
        reward: &str,
        predictor: Option<PyRef<'_, PyPredictor>>,
        steps: usize,
        epochs: usize,
        batch_size: usize,
        rollouts: usize,
        lr: f64,
        baseline_decay: f64,
        entropy_weight: f64,
        entropy_decay: f64,
        seed: u64,
        d: usize,
        hidden: usize,
        mlp_hidden: usize,
        max_actions: usize,
        relation: Option<String>,
    ) -> PyResult<Self> {
        let kind = match (reward, &predictor) {
            ("answer", _) => RewardKind::AnswerSearch,
            ("predictor", Some(p)) => RewardKind::Predictor(&p.inner),
            ("predictor", None) => {
                return Err(PyValueError::new_err(
                    "the predictor reward needs a predictor",
                ))
            }
            (other, _) => {
                return Err(PyValueError::new_err(format!(
                    "reward must be answer or predictor, got {other:?}"
                )))
            }
        };
        let config = PolicyConfig {
            d,
            hidden,
            mlp_hidden,
            max_actions,
        };
        let opts = ReinforceOptions {
            epochs,
            batch_size,
            rollouts,
            steps,
            optimizer: Optimizer::adam(lr),
            baseline_decay,
            entropy_weight,
            entropy_decay,
            seed,
        };
        // Both query directions train unless one relation is singled
        // out; its inverse is then kept too.
        let queries: Vec<Triple> = match relation {
            None => data.inner.store.split(Split::Train).to_vec(),
            Some(name) => {
                let r = data.inner.vocab.relation(&name).ok_or_else(|| {
                    PyKeyError::new_err(format!("unknown relation {name:?}"))
                })?;
                data.inner
                    .store
                    .split(Split::Train)
                    .iter()
                    .copied()
                    .filter(|t| t.relation == r || t.relation == r.inverse())
                    .collect()
            }
        };
        let mut rng = TrainRng::seed_from_u64(seed);
        let mut policy = PolicyModel::new(config, &data.inner.vocab, &mut rng).map_err(err)?;
        let curve = policy
            .train_reinforce(
                &data.inner.vocab,
                &data.inner.adjacency,
                &queries,
                &kind,
                &opts,
            )
            .map_err(err)?;
        Ok(PyPolicy {
            inner: policy,
            curve: curve
                .iter()
                .map(|p| (p.epoch, p.mean_reward, p.entropy))
                .collect(),
        })
    }

    /// (epoch, mean reward, entropy) points recorded while training;
    /// empty on a loaded checkpoint.
    fn rewards(&self) -> Vec<(usize, f64, f64)> {
        self.curve.clone()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, vocab_hash = None))]
    fn load(path: PathBuf, vocab_hash: Option<String>) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: PolicyModel::load(&path, vocab_hash.as_deref()).map_err(err)?,
            curve: Vec::new(),
        })
    }

    /// One walk from the tail of (head, relation, tail); greedy takes
    /// the argmax action each step. Returns (relation | None, entity)
    /// steps; None is the stay-put NO_OP.
    #[pyo3(signature = (data, head, relation, tail, steps = 2, greedy = true, seed = 17))]
    fn walk(
        &self,
        data: PyRef<'_, PyDataset>,
        head: &str,
        relation: &str,
        tail: &str,
        steps: usize,
        greedy: bool,
        seed: u64,
    ) -> PyResult<Vec<(Option<String>, String)>> {
        let query = data.triple(head, relation, tail)?;
        let mode = if greedy {
            RolloutMode::Greedy
        } else {
            RolloutMode::Sample
        };
        let mut rng = TrainRng::seed_from_u64(seed);
        let rollout = self
            .inner
            .rollout(
                &data.inner.vocab,
                &data.inner.adjacency,
                query,
                steps,
                mode,
                &mut rng,
            )
            .map_err(err)?;
        Ok(data.steps_out(&rollout.steps))
    }

    /// The `width` most probable walks, best first, each as
    /// (log probability, steps).
    #[pyo3(signature = (data, head, relation, tail, steps = 2, width = 8))]
    fn beam(
        &self,
        data: PyRef<'_, PyDataset>,
        head: &str,
        relation: &str,
        tail: &str,
        steps: usize,
        width: usize,
    ) -> PyResult<Vec<(f64, Vec<(Option<String>, String)>)>> {
        let query = data.triple(head, relation, tail)?;
        let beams = self
            .inner
            .beam_search(
                &data.inner.vocab,
                &data.inner.adjacency,
                query,
                steps,
                width,
            )
            .map_err(err)?;
        Ok(beams
            .iter()
            .map(|b| (b.log_prob(), data.steps_out(&b.steps)))
            .collect())
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Policy(d={}, hidden={}, mlp_hidden={}, max_actions={})",
            c.d, c.hidden, c.mlp_hidden, c.max_actions
        )
    }
}

/// Writes a synthetic two-hop composition KG into `dir` and returns
/// its split sizes.
#[pyfunction]
#[pyo3(signature = (
    dir, *, entities = 200, rule_facts = 28, noise_relations = 2,
    noise_facts = 60, valid_fraction = 0.1, test_fraction = 0.2,
    seed = 29,
))]
fn synth_kg<'py>(
    py: Python<'py>,
    dir: PathBuf,
    entities: usize,
    rule_facts: usize,
    noise_relations: usize,
    noise_facts: usize,
    valid_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = SynthOptions {
        entities,
        rule_facts,
        noise_relations,
        noise_facts,
        valid_fraction,
        test_fraction,
        seed,
    };
    let summary = generate_synthetic_kg(&dir, &opts).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("entities", summary.entities)?;
    out.set_item("train", summary.train)?;
    out.set_item("valid", summary.valid)?;
    out.set_item("test", summary.test)?;
    Ok(out)
}

/// Ranks every test query under one strategy and returns MRR and
/// Hits@k. Strategies: "sampling" (predictor, uniform-walk context),
/// "rl" (predictor, policy-walk context), "minerva" (predictor,
/// beam-search context) and "answer-search" (policy beams alone, no
/// predictor).
#[pyfunction]
#[pyo3(signature = (
    data, strategy, *, predictor = None, policy = None, steps = 2,
    beam_width = 40, hits_at = vec![1, 3, 10], seed = 17,
))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    data: PyRef<'_, PyDataset>,
    strategy: &str,
    predictor: Option<PyRef<'_, PyPredictor>>,
    policy: Option<PyRef<'_, PyPolicy>>,
    steps: usize,
    beam_width: usize,
    hits_at: Vec<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let strategy = parse_strategy(strategy).map_err(err)?;
    let opts = EvalOptions {
        steps,
        beam_width,
        hits_at,
        seed,
    };
    let need_predictor = || {
        predictor.as_deref().ok_or_else(|| {
            PyValueError::new_err(format!("strategy {} needs a predictor", strategy.as_str()))
        })
    };
    let need_policy = || {
        policy.as_deref().ok_or_else(|| {
            PyValueError::new_err(format!("strategy {} needs a policy", strategy.as_str()))
        })
    };
    let (metrics, _) = match strategy {
        Strategy::Sampling => evaluate_predictor(
            &need_predictor()?.inner,
            &ContextSource::Sampling,
            &data.inner,
            &opts,
        ),
        Strategy::Minerva => evaluate_predictor(
            &need_predictor()?.inner,
            &ContextSource::Minerva(&need_policy()?.inner),
            &data.inner,
            &opts,
        ),
        Strategy::Rl => evaluate_predictor(
            &need_predictor()?.inner,
            &ContextSource::Rl(&need_policy()?.inner),
            &data.inner,
            &opts,
        ),
        Strategy::AnswerSearch => evaluate_minerva(&need_policy()?.inner, &data.inner, &opts),
    }
    .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("strategy", strategy.as_str())?;
    out.set_item("queries", metrics.queries)?;
    out.set_item("mrr", metrics.mrr)?;
    let hits = PyDict::new(py);
    for (k, v) in &metrics.hits {
        hits.set_item(k, v)?;
    }
    out.set_item("hits", hits)?;
    Ok(out)
}

/// Uniform random walks from the tail of (head, relation, tail), the
/// query edge and its inverse barred, as (relation | None, entity)
/// steps.
#[pyfunction]
#[pyo3(signature = (data, head, relation, tail, *, k = 2, count = 1, seed = 17))]
fn sample_paths(
    data: PyRef<'_, PyDataset>,
    head: &str,
    relation: &str,
    tail: &str,
    k: usize,
    count: usize,
    seed: u64,
) -> PyResult<Vec<Vec<(Option<String>, String)>>> {
    let query = data.triple(head, relation, tail)?;
    let mut rng = TrainRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let chain = sample_chain(&data.inner.adjacency, query, k, &mut rng).map_err(err)?;
        out.push(data.steps_out(&chain.steps));
    }
    Ok(out)
}

#[pymodule]
fn pathlp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPredictor>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(synth_kg, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(sample_paths, m)?)?;
    Ok(())
}
