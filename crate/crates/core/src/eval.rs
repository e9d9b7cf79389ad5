//! Filtered ranking. Every augmented test triple is a query for its
//! head entity; known-correct competitors are removed and ties count
//! against the model. One context chain per query, produced by the
//! selected strategy.

use std::collections::BTreeMap;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::agent::{PolicyModel, RolloutMode};
use crate::error::{Error, Result};
use crate::kg::{Dataset, EntityId, Split, Triple, Vocabulary};
use crate::predictor::PredictorModel;
use crate::sampler::{sample_chain, to_relonly, Chain, ChainFormat};
use crate::TrainRng;

/// How the context chain for a query is produced.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Uniform random walk from the query tail.
    Sampling,
    /// Top beam path of an answer-search policy.
    Minerva,
    /// Greedy rollout of a predictor-reward policy.
    Rl,
    /// No predictor: rank by the answer-search policy's own beam
    /// probabilities.
    AnswerSearch,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Sampling => "sampling",
            Strategy::Minerva => "minerva",
            Strategy::Rl => "rl",
            Strategy::AnswerSearch => "answer-search",
        }
    }
}

/// One ranked query.
#[derive(Clone, Debug)]
pub struct RankingResult {
    pub query: Triple,
    pub rank: usize,
    pub strategy: Strategy,
    pub context: Chain,
}

/// Serialized per-query record, one JSON line each.
#[derive(Serialize, Deserialize, Debug)]
pub struct RecordLine {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub strategy: Strategy,
    pub rank: usize,
    pub context: Vec<u32>,
}

impl RankingResult {
    pub fn to_line(&self, vocab: &Vocabulary) -> RecordLine {
        RecordLine {
            head: vocab.entity_name(self.query.head).to_string(),
            relation: vocab.relation_name(self.query.relation),
            tail: vocab.entity_name(self.query.tail).to_string(),
            strategy: self.strategy,
            rank: self.rank,
            context: self.context.tokens(vocab).iter().map(|t| t.0).collect(),
        }
    }
}

/// Aggregated metrics over a record set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
}

/// MRR and Hits@k recomputed from scratch over per-query ranks.
pub fn summarize(ranks: impl IntoIterator<Item = usize>, hits_at: &[usize]) -> Metrics {
    let ranks: Vec<usize> = ranks.into_iter().collect();
    let n = ranks.len();
    let mrr = if n == 0 {
        0.0
    } else {
        ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64
    };
    let mut hits = BTreeMap::new();
    for &k in hits_at {
        let hit = ranks.iter().filter(|&&r| r <= k).count();
        hits.insert(k, if n == 0 { 0.0 } else { hit as f64 / n as f64 });
    }
    Metrics {
        queries: n,
        mrr,
        hits,
    }
}

/// Filtered pessimistic rank: 1 plus the number of unfiltered
/// competitors scoring above the target plus those tying it. The
/// filtered set must not contain the target.
pub fn rank_query(scores: &[f64], target: EntityId, filtered: &[EntityId]) -> Result<usize> {
    let t = target.0 as usize;
    if t >= scores.len() {
        return Err(Error::Contract(format!(
            "target entity {t} outside the {}-entity score table",
            scores.len()
        )));
    }
    if filtered.contains(&target) {
        return Err(Error::Contract(
            "the true entity may not be filtered away".into(),
        ));
    }
    let mut skip = vec![false; scores.len()];
    for f in filtered {
        let i = f.0 as usize;
        if i >= scores.len() {
            return Err(Error::Contract(format!(
                "filtered entity {i} outside the {}-entity score table",
                scores.len()
            )));
        }
        skip[i] = true;
    }
    let own = scores[t];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if i == t || skip[i] {
            continue;
        }
        if s >= own {
            rank += 1;
        }
    }
    Ok(rank)
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Context walk length N.
    pub steps: usize,
    /// Beam width for policy-derived contexts and answer search.
    pub beam_width: usize,
    pub hits_at: Vec<usize>,
    pub seed: u64,
}

impl EvalOptions {
    pub fn desk(steps: usize) -> Self {
        EvalOptions {
            steps,
            beam_width: 40,
            hits_at: vec![1, 3, 10],
            seed: 17,
        }
    }
}

/// Context source behind a [`Strategy`].
pub enum ContextSource<'a> {
    Sampling,
    Minerva(&'a PolicyModel),
    Rl(&'a PolicyModel),
}

impl ContextSource<'_> {
    fn strategy(&self) -> Strategy {
        match self {
            ContextSource::Sampling => Strategy::Sampling,
            ContextSource::Minerva(_) => Strategy::Minerva,
            ContextSource::Rl(_) => Strategy::Rl,
        }
    }
}

fn identify(vocab: &Vocabulary, query: &Triple, e: Error) -> Error {
    Error::Eval {
        query: format!(
            "({}, {}, {})",
            vocab.entity_name(query.head),
            vocab.relation_name(query.relation),
            vocab.entity_name(query.tail)
        ),
        source: Box::new(e),
    }
}

/// The known-correct competitors for predicting the head of `query`:
/// heads of (?, r, tail) facts in any split, which the augmented store
/// holds as tails of (tail, r inverse, ?).
fn known_heads(data: &Dataset, query: &Triple) -> Vec<EntityId> {
    data.filter.candidates(&query.inverse())
}

/// Ranks every augmented test triple by masked-predictor score over a
/// single strategy-provided context chain.
pub fn evaluate_predictor(
    predictor: &PredictorModel,
    source: &ContextSource,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<(Metrics, Vec<RankingResult>)> {
    if opts.steps == 0 {
        return Err(Error::Argument("context walks need at least one step".into()));
    }
    let strategy = source.strategy();
    let mut rng = TrainRng::seed_from_u64(opts.seed);
    let mut records = Vec::new();
    for &query in data.store.split(Split::Test) {
        let mut run = || -> Result<RankingResult> {
            let walk = match source {
                ContextSource::Sampling => {
                    sample_chain(&data.adjacency, query, opts.steps, &mut rng)?
                }
                ContextSource::Minerva(policy) => {
                    let beams = policy.beam_search(
                        &data.vocab,
                        &data.adjacency,
                        query,
                        opts.steps,
                        opts.beam_width,
                    )?;
                    beams[0].chain()
                }
                ContextSource::Rl(policy) => policy
                    .rollout(
                        &data.vocab,
                        &data.adjacency,
                        query,
                        opts.steps,
                        RolloutMode::Greedy,
                        &mut rng,
                    )?
                    .chain(),
            };
            let context = match predictor.config.variant.chain_format() {
                ChainFormat::InterEnt => walk,
                ChainFormat::RelOnly => to_relonly(walk)?,
            };
            let scores = predictor.score_entities(&data.vocab, &query, &context)?;
            let rank = rank_query(&scores, query.head, &known_heads(data, &query))?;
            Ok(RankingResult {
                query,
                rank,
                strategy,
                context,
            })
        };
        records.push(run().map_err(|e| identify(&data.vocab, &query, e))?);
    }
    let metrics = summarize(records.iter().map(|r| r.rank), &opts.hits_at);
    Ok((metrics, records))
}

/// Answer-search evaluation: an entity's score is the best joint
/// probability among beam paths ending there; entities no path
/// reaches share the bottom tie group.
pub fn evaluate_minerva(
    policy: &PolicyModel,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<(Metrics, Vec<RankingResult>)> {
    if opts.steps == 0 {
        return Err(Error::Argument("walks need at least one step".into()));
    }
    let entity_count = data.vocab.entity_count();
    let mut records = Vec::new();
    for &query in data.store.split(Split::Test) {
        let run = || -> Result<RankingResult> {
            let beams = policy.beam_search(
                &data.vocab,
                &data.adjacency,
                query,
                opts.steps,
                opts.beam_width,
            )?;
            let mut scores = vec![f64::NEG_INFINITY; entity_count];
            for beam in &beams {
                let e = beam.terminal().0 as usize;
                scores[e] = scores[e].max(beam.log_prob());
            }
            let rank = rank_query(&scores, query.head, &known_heads(data, &query))?;
            Ok(RankingResult {
                query,
                rank,
                strategy: Strategy::AnswerSearch,
                context: beams[0].chain(),
            })
        };
        records.push(run().map_err(|e| identify(&data.vocab, &query, e))?);
    }
    let metrics = summarize(records.iter().map(|r| r.rank), &opts.hits_at);
    Ok((metrics, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{PolicyConfig, ReinforceOptions, RewardKind};
    use crate::kg::{
        augment_inverse, load_triples, AdjacencyIndex, FilterIndex, TripleStore,
    };
    use crate::predictor::{PredictorConfig, Variant};
    use crate::diff::Tensor;
    use proptest::prelude::*;

    fn e(i: u32) -> EntityId {
        EntityId(i)
    }

    #[test]
    fn the_top_score_ranks_first() {
        let rank = rank_query(&[0.9, 0.5, 0.1], e(0), &[]).unwrap();
        assert_eq!(rank, 1);
    }

    #[test]
    fn ties_count_against_the_model() {
        let rank = rank_query(&[0.5, 0.5], e(0), &[]).unwrap();
        assert_eq!(rank, 2);
    }

    #[test]
    fn filtered_competitors_never_count() {
        let scores = [0.2, 0.9, 0.9, 0.1];
        assert_eq!(rank_query(&scores, e(0), &[]).unwrap(), 3);
        assert_eq!(rank_query(&scores, e(0), &[e(1)]).unwrap(), 2);
        assert_eq!(rank_query(&scores, e(0), &[e(1), e(2)]).unwrap(), 1);
    }

    #[test]
    fn filtering_the_target_is_a_contract_breach() {
        let err = rank_query(&[0.2, 0.9], e(0), &[e(0)]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn summary_arithmetic_matches_hand_computation() {
        let m = summarize([1usize, 2], &[1, 3, 10]);
        assert_eq!(m.queries, 2);
        assert!((m.mrr - 0.75).abs() < 1e-15);
        assert_eq!(m.hits[&1], 0.5);
        assert_eq!(m.hits[&3], 1.0);
        assert_eq!(m.hits[&10], 1.0);
    }

    proptest! {
        /// Sort-based oracle: order candidates by score with the
        /// target losing every tie; the target's position is its rank.
        #[test]
        fn ranks_match_a_sort_based_oracle(
            raw in proptest::collection::vec(0u8..5, 2..10),
            target_pick in any::<prop::sample::Index>(),
            filter_mask in proptest::collection::vec(any::<bool>(), 10),
        ) {
            let scores: Vec<f64> = raw.iter().map(|&v| v as f64 / 4.0).collect();
            let target = target_pick.index(scores.len());
            let filtered: Vec<EntityId> = (0..scores.len())
                .filter(|&i| i != target && filter_mask[i])
                .map(|i| e(i as u32))
                .collect();

            let mut pool: Vec<(f64, bool)> = scores
                .iter()
                .enumerate()
                .filter(|&(i, _)| i == target || !filter_mask[i])
                .map(|(i, &s)| (s, i == target))
                .collect();
            pool.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap()
                    .then_with(|| a.1.cmp(&b.1))
            });
            let oracle = pool.iter().position(|&(_, t)| t).unwrap() + 1;

            let rank = rank_query(&scores, e(target as u32), &filtered).unwrap();
            prop_assert_eq!(rank, oracle);
        }
    }

    fn dataset(train: &str, test: &str) -> Dataset {
        let dir = tempfile::tempdir().unwrap();
        let train_path = dir.path().join("train.txt");
        std::fs::write(&train_path, train).unwrap();
        let (train_triples, _) = load_triples(&train_path, None).unwrap();
        let both = format!("{train}{test}");
        let all_path = dir.path().join("all.txt");
        std::fs::write(&all_path, &both).unwrap();
        let (_, vocab) = load_triples(&all_path, None).unwrap();
        let test_path = dir.path().join("test.txt");
        std::fs::write(&test_path, test).unwrap();
        let (test_triples, _) = load_triples(&test_path, Some(&vocab)).unwrap();
        let store = augment_inverse(TripleStore::from_splits(
            train_triples,
            vec![],
            test_triples,
        ))
        .unwrap();
        let adjacency = AdjacencyIndex::from_store(&store, vocab.entity_count()).unwrap();
        let filter = FilterIndex::from_store(&store);
        Dataset {
            vocab,
            store,
            adjacency,
            filter,
        }
    }

    fn flat_predictor(vocab: &Vocabulary, variant: Variant) -> PredictorModel {
        let config = PredictorConfig {
            variant,
            d: 8,
            layers: 1,
            heads: 2,
            max_seq_len: 9,
            dropout: 0.0,
            context_length: 2,
            tied_output: false,
        };
        let mut model =
            PredictorModel::new(config, vocab, &mut TrainRng::seed_from_u64(3)).unwrap();
        for name in ["head.w2", "head.b2"] {
            let t = model.params.value_mut(name).unwrap();
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        model
    }

    #[test]
    fn a_flat_predictor_ranks_every_candidate_equal() {
        // Augmented test = both directions of (b, r, a); competitors
        // tie, the filter shrinks the tie group where it applies.
        let data = dataset("a\tr\tb\nb\tr\tc\nc\tr\ta\na\tr\tc\n", "b\tr\ta\n");
        let predictor = flat_predictor(&data.vocab, Variant::InterEnt);
        let (metrics, records) = evaluate_predictor(
            &predictor,
            &ContextSource::Sampling,
            &data,
            &EvalOptions::desk(2),
        )
        .unwrap();
        assert_eq!(records.len(), 2);
        // Predicting b for (?, r, c): heads of (?, r, c) are {a, b};
        // filtering a leaves 2 unfiltered competitors tying.
        assert_eq!(records[0].query, data.store.split(Split::Test)[0]);
        for r in &records {
            let filtered = known_heads(&data, &r.query);
            assert_eq!(r.rank, data.vocab.entity_count() - filtered.len());
        }
        assert!(metrics.queries == 2);
        assert!(metrics.hits[&1] == 0.0);
    }

    #[test]
    fn sampling_evaluation_is_reproducible() {
        let data = dataset("a\tr\tb\nb\tr\tc\nc\tr\ta\n", "a\tr\tc\n");
        let predictor = flat_predictor(&data.vocab, Variant::CoKE);
        let opts = EvalOptions::desk(2);
        let runs: Vec<Vec<RecordLine>> = (0..2)
            .map(|_| {
                let (_, records) =
                    evaluate_predictor(&predictor, &ContextSource::Sampling, &data, &opts)
                        .unwrap();
                records.iter().map(|r| r.to_line(&data.vocab)).collect()
            })
            .collect();
        let a = serde_json::to_string(&runs[0]).unwrap();
        let b = serde_json::to_string(&runs[1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn answer_search_ranks_reached_entities_by_path_probability() {
        // From tail a the policy can reach b (edge) or stay at a;
        // c and d stay unreachable in one step.
        let data = dataset("a\tr1\tb\nc\tr1\td\n", "b\tr1\ta\nd\tr1\ta\n");
        let mut policy = PolicyModel::new(
            PolicyConfig {
                d: 8,
                hidden: 8,
                mlp_hidden: 8,
                max_actions: 200,
            },
            &data.vocab,
            &mut TrainRng::seed_from_u64(7),
        )
        .unwrap();
        let train_query = Triple::new(
            data.vocab.entity("b").unwrap(),
            data.vocab.relation("r1").unwrap(),
            data.vocab.entity("a").unwrap(),
        );
        let mut opts = ReinforceOptions::desk(1);
        opts.epochs = 120;
        opts.batch_size = 1;
        policy
            .train_reinforce(
                &data.vocab,
                &data.adjacency,
                &[train_query],
                &RewardKind::AnswerSearch,
                &opts,
            )
            .unwrap();

        let (metrics, records) =
            evaluate_minerva(&policy, &data, &EvalOptions::desk(1)).unwrap();
        assert_eq!(records.len(), 4);
        let by_query: BTreeMap<String, usize> = records
            .iter()
            .map(|r| {
                (
                    format!(
                        "{} {}",
                        data.vocab.entity_name(r.query.head),
                        data.vocab.entity_name(r.query.tail)
                    ),
                    r.rank,
                )
            })
            .collect();
        // (b, r1, a): b is the policy's favourite path target.
        assert_eq!(by_query["b a"], 1);
        // (d, r1, a): d is unreachable from a; reached a outranks it
        // (b is filtered), unreached c ties with it.
        assert_eq!(by_query["d a"], 3);
        assert!(metrics.mrr > 0.0);
    }

    #[test]
    fn failures_carry_the_query_identity() {
        let data = dataset("a\tr\tb\n", "b\tr\ta\n");
        let other = dataset("a\tr\tb\nb\tr\tc\n", "b\tr\ta\n");
        let predictor = flat_predictor(&other.vocab, Variant::InterEnt);
        let err = evaluate_predictor(
            &predictor,
            &ContextSource::Sampling,
            &data,
            &EvalOptions::desk(1),
        )
        .unwrap_err();
        match err {
            Error::Eval { query, source } => {
                assert!(query.contains('b'), "query string {query}");
                assert!(matches!(*source, Error::Compatibility(_)));
            }
            other => panic!("expected an eval error, got {other:?}"),
        }
    }
}
