//! Policy-gradient path search. A recurrent policy walks the train
//! graph from the query tail; episodes are rewarded either by landing
//! on the answer entity or by how much probability a frozen masked
//! predictor assigns to the answer given the walked path as context.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::diff::layers::{affine, lstm_bias_init, lstm_cell};
use crate::diff::{
    categorical_sample, load_checkpoint, save_checkpoint, Binding, Graph, NodeId, Optimizer,
    ParameterStore, Tensor,
};
use crate::error::{Error, Result};
use crate::kg::{AdjacencyIndex, EntityId, TokenId, Triple, Vocabulary, CLS_TOKEN, UNK_TOKEN};
use crate::predictor::{PredictorModel, WEIGHT_INIT_STD};
use crate::sampler::{mask_head, to_relonly, walk_edges, Chain, ChainFormat, StepLabel};
use crate::TrainRng;

/// One move: follow a labelled edge or stay put via NO_OP.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Action {
    pub label: StepLabel,
    pub dest: EntityId,
}

/// Where the walker stands while answering a query.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct QueryState {
    pub query: Triple,
    pub at: EntityId,
    pub history: Vec<(StepLabel, EntityId)>,
}

impl QueryState {
    /// Walks start at the query tail with an empty history.
    pub fn start(query: Triple) -> Self {
        QueryState {
            at: query.tail,
            history: Vec::new(),
            query,
        }
    }

    pub fn step(&self) -> usize {
        self.history.len()
    }

    pub fn advance(&mut self, action: Action) {
        self.history.push((action.label, action.dest));
        self.at = action.dest;
    }
}

/// Moves the policy may take from `state`: outgoing train edges minus
/// the query edge and its backward connection, in adjacency order,
/// capped at `max_actions` total with NO_OP always kept as the last
/// entry. Never empty.
pub fn available_actions(
    adj: &AdjacencyIndex,
    state: &QueryState,
    max_actions: usize,
) -> Vec<Action> {
    let mut edges = walk_edges(adj, &state.query, state.at);
    edges.truncate(max_actions.saturating_sub(1));
    let mut actions: Vec<Action> = edges
        .into_iter()
        .map(|(r, e)| Action {
            label: StepLabel::Rel(r),
            dest: e,
        })
        .collect();
    actions.push(Action {
        label: StepLabel::NoOp,
        dest: state.at,
    });
    actions
}

/// A completed episode. Steps always form a graph-valid walk from the
/// query tail; log-probs run parallel to the steps.
#[derive(Clone, PartialEq, Debug)]
pub struct Rollout {
    pub query: Triple,
    pub steps: Vec<(StepLabel, EntityId)>,
    pub log_probs: Vec<f64>,
    pub reward: f64,
}

impl Rollout {
    /// The walked path as a predictor context.
    pub fn chain(&self) -> Chain {
        Chain {
            query: self.query,
            steps: self.steps.clone(),
            format: ChainFormat::InterEnt,
        }
    }

    /// Joint log-probability of the whole path.
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Where the walk ended; the query tail if it never moved.
    pub fn terminal(&self) -> EntityId {
        self.steps.last().map_or(self.query.tail, |s| s.1)
    }
}

/// 1 exactly when the walk ended on the answer entity.
pub fn reward_answer_search(rollout: &Rollout, answer: EntityId) -> f64 {
    if rollout.terminal() == answer {
        1.0
    } else {
        0.0
    }
}

/// Probability mass the frozen predictor puts on `answer` when the
/// rollout path is its context. No gradient reaches the predictor;
/// the path is reshaped to relations-only when the predictor expects
/// that format.
pub fn reward_predictor(
    rollout: &Rollout,
    predictor: &PredictorModel,
    vocab: &Vocabulary,
    answer: EntityId,
) -> Result<f64> {
    if predictor.vocab_size != vocab.total_size() {
        return Err(Error::Compatibility(format!(
            "predictor expects {} tokens, vocabulary holds {}",
            predictor.vocab_size,
            vocab.total_size()
        )));
    }
    let chain = match predictor.config.variant.chain_format() {
        ChainFormat::InterEnt => rollout.chain(),
        ChainFormat::RelOnly => to_relonly(rollout.chain())?,
    };
    let mut masked = mask_head(&chain, vocab);
    masked.target = answer;
    predictor.target_probability(&masked)
}

/// Terminal reward source for training.
pub enum RewardKind<'a> {
    AnswerSearch,
    Predictor(&'a PredictorModel),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RolloutMode {
    Sample,
    Greedy,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Token embedding width.
    pub d: usize,
    /// LSTM state width.
    pub hidden: usize,
    /// Width of the action-scoring hidden layer.
    pub mlp_hidden: usize,
    /// Cap on the per-step action list, NO_OP included.
    pub max_actions: usize,
}

impl PolicyConfig {
    pub fn desk() -> Self {
        PolicyConfig {
            d: 16,
            hidden: 32,
            mlp_hidden: 32,
            max_actions: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hidden == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config(
                "policy widths must all be positive".into(),
            ));
        }
        if self.max_actions < 1 {
            return Err(Error::Config(
                "the action budget must admit at least NO_OP".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReinforceOptions {
    pub epochs: usize,
    /// Queries per update.
    pub batch_size: usize,
    /// Sampled episodes per query.
    pub rollouts: usize,
    /// Walk length N.
    pub steps: usize,
    pub optimizer: Optimizer,
    /// Moving-average reward baseline decay.
    pub baseline_decay: f64,
    /// Initial entropy bonus weight; decays per epoch.
    pub entropy_weight: f64,
    pub entropy_decay: f64,
    pub seed: u64,
}

impl ReinforceOptions {
    pub fn desk(steps: usize) -> Self {
        ReinforceOptions {
            epochs: 30,
            batch_size: 4,
            rollouts: 20,
            steps,
            optimizer: Optimizer::adam(1e-2),
            baseline_decay: 0.95,
            entropy_weight: 0.01,
            entropy_decay: 0.9,
            seed: 17,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.rollouts == 0 {
            return Err(Error::Argument(
                "batch size and rollouts per query must be positive".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::Argument("walks need at least one step".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Argument(format!(
                "baseline decay {} outside [0, 1)",
                self.baseline_decay
            )));
        }
        Ok(())
    }
}

/// One point of the training curve, serialized to the metrics stream.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RewardPoint {
    pub epoch: usize,
    pub mean_reward: f64,
    pub entropy: f64,
}

#[derive(Serialize, Deserialize)]
struct PolicyCheckpointMeta {
    config: PolicyConfig,
    vocab_size: usize,
    entity_count: usize,
}

/// LSTM carry between steps, as graph nodes.
struct StepState {
    h: NodeId,
    c: NodeId,
}

/// The walker. Embeds graph tokens, folds the traversal history
/// through an LSTM and scores candidate actions against a projection
/// of (history, current entity, query).
#[derive(Clone, Debug)]
pub struct PolicyModel {
    pub config: PolicyConfig,
    pub vocab_size: usize,
    pub entity_count: usize,
    pub vocab_hash: String,
    pub params: ParameterStore,
}

impl PolicyModel {
    /// Fresh policy. The final scoring layer starts at zero so the
    /// initial distribution is uniform over whatever actions exist.
    pub fn new(config: PolicyConfig, vocab: &Vocabulary, rng: &mut TrainRng) -> Result<Self> {
        config.validate()?;
        let v = vocab.total_size();
        let d = config.d;
        let h = config.hidden;
        let m = config.mlp_hidden;
        let mut params = ParameterStore::new();
        params.insert("emb", Tensor::truncated_normal(v, d, WEIGHT_INIT_STD, rng))?;
        params.insert(
            "lstm.wx",
            Tensor::truncated_normal(2 * d, 4 * h, WEIGHT_INIT_STD, rng),
        )?;
        params.insert(
            "lstm.wh",
            Tensor::truncated_normal(h, 4 * h, WEIGHT_INIT_STD, rng),
        )?;
        params.insert("lstm.b", lstm_bias_init(h))?;
        params.insert(
            "score.w1",
            Tensor::truncated_normal(h + 3 * d, m, WEIGHT_INIT_STD, rng),
        )?;
        params.insert("score.b1", Tensor::zeros(1, m))?;
        params.insert("score.w2", Tensor::zeros(m, 2 * d))?;
        params.insert("score.b2", Tensor::zeros(1, 2 * d))?;
        Ok(PolicyModel {
            config,
            vocab_size: v,
            entity_count: vocab.entity_count(),
            vocab_hash: vocab.hash(),
            params,
        })
    }

    fn embed(&self, g: &mut Graph, binding: &Binding, token: TokenId) -> Result<NodeId> {
        let idx = token.0 as usize;
        if idx >= self.vocab_size {
            return Err(Error::Contract(format!(
                "token id {idx} outside the {}-token vocabulary",
                self.vocab_size
            )));
        }
        let emb = binding.node("emb")?;
        g.gather_rows(emb, &[idx])
    }

    fn action_token(label: StepLabel, vocab: &Vocabulary) -> TokenId {
        match label {
            StepLabel::Rel(r) => vocab.relation_token_id(r),
            StepLabel::NoOp => UNK_TOKEN,
        }
    }

    /// Feeds (CLS, query tail) into a zero LSTM state.
    fn start_state(
        &self,
        g: &mut Graph,
        binding: &Binding,
        vocab: &Vocabulary,
        query: &Triple,
    ) -> Result<StepState> {
        let h0 = g.constant(Tensor::zeros(1, self.config.hidden));
        let c0 = g.constant(Tensor::zeros(1, self.config.hidden));
        let cls = self.embed(g, binding, CLS_TOKEN)?;
        let tail = self.embed(g, binding, vocab.entity_token_id(query.tail))?;
        let x = g.concat_cols(&[cls, tail])?;
        self.lstm(g, binding, x, h0, c0)
    }

    fn advance_state(
        &self,
        g: &mut Graph,
        binding: &Binding,
        vocab: &Vocabulary,
        state: &StepState,
        action: Action,
    ) -> Result<StepState> {
        let rel = self.embed(g, binding, Self::action_token(action.label, vocab))?;
        let ent = self.embed(g, binding, vocab.entity_token_id(action.dest))?;
        let x = g.concat_cols(&[rel, ent])?;
        self.lstm(g, binding, x, state.h, state.c)
    }

    fn lstm(
        &self,
        g: &mut Graph,
        binding: &Binding,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<StepState> {
        let (h, c) = lstm_cell(
            g,
            x,
            h,
            c,
            binding.node("lstm.wx")?,
            binding.node("lstm.wh")?,
            binding.node("lstm.b")?,
        )?;
        Ok(StepState { h, c })
    }

    /// Raw logits row [1, n] over `actions` at the current state; the
    /// policy is the softmax of this row, so it covers available
    /// actions only.
    fn action_logits(
        &self,
        g: &mut Graph,
        binding: &Binding,
        vocab: &Vocabulary,
        state: &StepState,
        walker: &QueryState,
        actions: &[Action],
    ) -> Result<NodeId> {
        if actions.is_empty() {
            return Err(Error::Contract("no actions to score".into()));
        }
        let at = self.embed(g, binding, vocab.entity_token_id(walker.at))?;
        let rq = self.embed(
            g,
            binding,
            vocab.relation_token_id(walker.query.relation),
        )?;
        let ey = self.embed(g, binding, vocab.entity_token_id(walker.query.tail))?;
        let feats = g.concat_cols(&[state.h, at, rq, ey])?;
        let hid = affine(g, feats, binding.node("score.w1")?, binding.node("score.b1")?)?;
        let hid = g.relu(hid)?;
        let proj = affine(g, hid, binding.node("score.w2")?, binding.node("score.b2")?)?;

        let emb = binding.node("emb")?;
        let rel_ids: Vec<usize> = actions
            .iter()
            .map(|a| Self::action_token(a.label, vocab).0 as usize)
            .collect();
        let ent_ids: Vec<usize> = actions
            .iter()
            .map(|a| vocab.entity_token_id(a.dest).0 as usize)
            .collect();
        let rel_emb = g.gather_rows(emb, &rel_ids)?;
        let ent_emb = g.gather_rows(emb, &ent_ids)?;
        let act = g.concat_cols(&[rel_emb, ent_emb])?;
        let proj_t = g.transpose(proj)?;
        let logits = g.matmul(act, proj_t)?;
        g.transpose(logits)
    }

    /// The action distribution after replaying `history` from the
    /// query tail. Pairs each available action with its probability.
    pub fn policy_distribution(
        &self,
        vocab: &Vocabulary,
        adj: &AdjacencyIndex,
        query: Triple,
        history: &[(StepLabel, EntityId)],
    ) -> Result<Vec<(Action, f64)>> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g);
        let mut walker = QueryState::start(query);
        let mut state = self.start_state(&mut g, &binding, vocab, &query)?;
        for &(label, dest) in history {
            let action = Action { label, dest };
            state = self.advance_state(&mut g, &binding, vocab, &state, action)?;
            walker.advance(action);
        }
        let actions = available_actions(adj, &walker, self.config.max_actions);
        let logits = self.action_logits(&mut g, &binding, vocab, &state, &walker, &actions)?;
        let sm = g.softmax_rows(logits, None)?;
        let probs = g.value(sm);
        Ok(actions
            .iter()
            .enumerate()
            .map(|(i, &a)| (a, probs.at(0, i)))
            .collect())
    }

    /// Runs one episode inside an existing graph, returning the
    /// rollout (reward unfilled) plus the per-step log-prob and
    /// entropy nodes the training loss is built from.
    fn run_episode(
        &self,
        g: &mut Graph,
        binding: &Binding,
        vocab: &Vocabulary,
        adj: &AdjacencyIndex,
        query: Triple,
        n: usize,
        mode: RolloutMode,
        rng: &mut TrainRng,
    ) -> Result<(Rollout, Vec<NodeId>, Vec<NodeId>)> {
        if n < 1 {
            return Err(Error::Argument("walks need at least one step".into()));
        }
        let mut walker = QueryState::start(query);
        let mut state = self.start_state(g, binding, vocab, &query)?;
        let mut log_probs = Vec::with_capacity(n);
        let mut log_prob_nodes = Vec::with_capacity(n);
        let mut entropy_nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let actions = available_actions(adj, &walker, self.config.max_actions);
            let logits = self.action_logits(g, binding, vocab, &state, &walker, &actions)?;
            let lsm = g.log_softmax_rows(logits)?;
            let sm = g.softmax_rows(logits, None)?;
            let plogp = g.mul(sm, lsm)?;
            let ent_sum = g.sum_all(plogp)?;
            entropy_nodes.push(g.scale(ent_sum, -1.0)?);
            let idx = match mode {
                RolloutMode::Sample => categorical_sample(g.value(sm), rng)?,
                RolloutMode::Greedy => {
                    let row = g.value(logits);
                    let mut best = 0;
                    for i in 1..row.cols() {
                        if row.at(0, i) > row.at(0, best) {
                            best = i;
                        }
                    }
                    best
                }
            };
            let chosen = g.slice_cols(lsm, idx, idx + 1)?;
            log_probs.push(g.value(chosen).scalar_value()?);
            log_prob_nodes.push(chosen);
            let action = actions[idx];
            state = self.advance_state(g, binding, vocab, &state, action)?;
            walker.advance(action);
        }
        Ok((
            Rollout {
                query,
                steps: walker.history,
                log_probs,
                reward: 0.0,
            },
            log_prob_nodes,
            entropy_nodes,
        ))
    }

    /// One N-step walk for `query`. Sample mode draws each action from
    /// the policy; greedy takes the argmax, breaking ties toward the
    /// lowest action index. The reward field is left at zero.
    pub fn rollout(
        &self,
        vocab: &Vocabulary,
        adj: &AdjacencyIndex,
        query: Triple,
        n: usize,
        mode: RolloutMode,
        rng: &mut TrainRng,
    ) -> Result<Rollout> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g);
        let (rollout, _, _) = self.run_episode(&mut g, &binding, vocab, adj, query, n, mode, rng)?;
        Ok(rollout)
    }

    /// REINFORCE over terminal rewards: per batch, sample `rollouts`
    /// episodes per query, centre rewards on a moving-average
    /// baseline, and ascend advantage-weighted log-probs plus a
    /// decaying entropy bonus. Returns the per-epoch curve. The
    /// predictor behind a `Predictor` reward is read-only throughout.
    pub fn train_reinforce(
        &mut self,
        vocab: &Vocabulary,
        adj: &AdjacencyIndex,
        queries: &[Triple],
        reward: &RewardKind,
        opts: &ReinforceOptions,
    ) -> Result<Vec<RewardPoint>> {
        opts.validate()?;
        if queries.is_empty() {
            return Err(Error::Argument("no queries to train on".into()));
        }
        if let RewardKind::Predictor(p) = reward {
            if p.vocab_hash != self.vocab_hash {
                return Err(Error::Compatibility(format!(
                    "predictor was built on vocabulary {}, policy on {}",
                    p.vocab_hash, self.vocab_hash
                )));
            }
            let need = match p.config.variant.chain_format() {
                ChainFormat::InterEnt => 3 + 2 * opts.steps,
                ChainFormat::RelOnly => 3 + opts.steps,
            };
            if need > p.config.max_seq_len {
                return Err(Error::Compatibility(format!(
                    "{}-step walks serialize to {} tokens, predictor holds {}",
                    opts.steps, need, p.config.max_seq_len
                )));
            }
        }
        let mut rng = TrainRng::seed_from_u64(opts.seed);
        let mut baseline: Option<f64> = None;
        let mut curve = Vec::with_capacity(opts.epochs);
        let mut order: Vec<usize> = (0..queries.len()).collect();
        for epoch in 0..opts.epochs {
            let beta = opts.entropy_weight * opts.entropy_decay.powi(epoch as i32);
            order.shuffle(&mut rng);
            let mut reward_sum = 0.0;
            let mut entropy_sum = 0.0;
            let mut episode_count = 0usize;
            let mut step_count = 0usize;
            for batch in order.chunks(opts.batch_size) {
                let mut g = Graph::new();
                let binding = self.params.bind(&mut g);
                let mut advantagable: Vec<(Vec<NodeId>, f64)> = Vec::new();
                let mut entropies: Vec<NodeId> = Vec::new();
                let mut batch_rewards = Vec::new();
                for &qi in batch {
                    let query = queries[qi];
                    for _ in 0..opts.rollouts {
                        let (rollout, log_nodes, ent_nodes) = self.run_episode(
                            &mut g,
                            &binding,
                            vocab,
                            adj,
                            query,
                            opts.steps,
                            RolloutMode::Sample,
                            &mut rng,
                        )?;
                        let r = match reward {
                            RewardKind::AnswerSearch => {
                                reward_answer_search(&rollout, query.head)
                            }
                            RewardKind::Predictor(p) => {
                                reward_predictor(&rollout, p, vocab, query.head)?
                            }
                        };
                        batch_rewards.push(r);
                        advantagable.push((log_nodes, r));
                        entropies.extend(ent_nodes);
                    }
                }
                let episodes = batch_rewards.len();
                let mean_r = batch_rewards.iter().sum::<f64>() / episodes as f64;
                let b = match baseline {
                    None => mean_r,
                    Some(prev) => {
                        opts.baseline_decay * prev + (1.0 - opts.baseline_decay) * mean_r
                    }
                };
                baseline = Some(b);

                let mut terms: Vec<NodeId> = Vec::new();
                for (log_nodes, r) in &advantagable {
                    let advantage = r - b;
                    if advantage == 0.0 {
                        continue;
                    }
                    let mut path = log_nodes[0];
                    for &node in &log_nodes[1..] {
                        path = g.add(path, node)?;
                    }
                    terms.push(g.scale(path, -advantage / episodes as f64)?);
                }
                let mut ent = entropies[0];
                for &node in &entropies[1..] {
                    ent = g.add(ent, node)?;
                }
                let mean_ent = g.scale(ent, 1.0 / entropies.len() as f64)?;
                terms.push(g.scale(mean_ent, -beta)?);
                let mut loss = terms[0];
                for &t in &terms[1..] {
                    loss = g.add(loss, t)?;
                }
                let grads = g.backward(loss)?;
                self.params.accumulate(&binding, &grads)?;
                self.params.optimizer_step(&opts.optimizer)?;

                reward_sum += batch_rewards.iter().sum::<f64>();
                entropy_sum += g.value(mean_ent).scalar_value()? * entropies.len() as f64;
                episode_count += episodes;
                step_count += entropies.len();
            }
            curve.push(RewardPoint {
                epoch,
                mean_reward: reward_sum / episode_count as f64,
                entropy: entropy_sum / step_count as f64,
            });
        }
        Ok(curve)
    }

    /// Top-`width` walks by joint log-probability, descending. Ties
    /// keep (beam, action) discovery order, so width 1 reproduces the
    /// greedy rollout. Exact whenever width covers every path.
    pub fn beam_search(
        &self,
        vocab: &Vocabulary,
        adj: &AdjacencyIndex,
        query: Triple,
        n: usize,
        width: usize,
    ) -> Result<Vec<Rollout>> {
        if n < 1 {
            return Err(Error::Argument("walks need at least one step".into()));
        }
        if width < 1 {
            return Err(Error::Argument("beam width must be positive".into()));
        }
        struct Beam {
            state: StepState,
            walker: QueryState,
            log_probs: Vec<f64>,
            total: f64,
        }
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g);
        let mut beams = vec![Beam {
            state: self.start_state(&mut g, &binding, vocab, &query)?,
            walker: QueryState::start(query),
            log_probs: Vec::new(),
            total: 0.0,
        }];
        for _ in 0..n {
            let mut candidates: Vec<(usize, Action, f64)> = Vec::new();
            for (bi, beam) in beams.iter().enumerate() {
                let actions = available_actions(adj, &beam.walker, self.config.max_actions);
                let logits = self.action_logits(
                    &mut g,
                    &binding,
                    vocab,
                    &beam.state,
                    &beam.walker,
                    &actions,
                )?;
                let lsm = g.log_softmax_rows(logits)?;
                let row = g.value(lsm);
                for (ai, &action) in actions.iter().enumerate() {
                    candidates.push((bi, action, beam.total + row.at(0, ai)));
                }
            }
            candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));
            candidates.truncate(width);
            let mut next = Vec::with_capacity(candidates.len());
            for (bi, action, total) in candidates {
                let parent = &beams[bi];
                let state =
                    self.advance_state(&mut g, &binding, vocab, &parent.state, action)?;
                let mut walker = parent.walker.clone();
                walker.advance(action);
                let mut log_probs = parent.log_probs.clone();
                log_probs.push(total - parent.total);
                next.push(Beam {
                    state,
                    walker,
                    log_probs,
                    total,
                });
            }
            beams = next;
        }
        Ok(beams
            .into_iter()
            .map(|b| Rollout {
                query,
                steps: b.walker.history,
                log_probs: b.log_probs,
                reward: 0.0,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = PolicyCheckpointMeta {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            entity_count: self.entity_count,
        };
        let config = serde_json::to_value(&meta)
            .map_err(|e| Error::Checkpoint(format!("config serialization failed: {e}")))?;
        save_checkpoint(path, "policy", &config, &self.vocab_hash, &self.params)
    }

    /// Loads a policy checkpoint; when an expected vocabulary hash is
    /// given, a mismatch is a compatibility error.
    pub fn load(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        if header.kind != "policy" {
            return Err(Error::Checkpoint(format!(
                "{} holds a {:?} checkpoint, not a policy",
                path.display(),
                header.kind
            )));
        }
        if let Some(expected) = expected_vocab_hash {
            if expected != header.vocab_hash {
                return Err(Error::Compatibility(format!(
                    "checkpoint was built on vocabulary {}, dataset hashes to {expected}",
                    header.vocab_hash
                )));
            }
        }
        let meta: PolicyCheckpointMeta = serde_json::from_value(header.config)
            .map_err(|e| Error::Checkpoint(format!("bad policy config: {e}")))?;
        meta.config.validate()?;
        let emb = params.value("emb")?;
        if emb.shape() != (meta.vocab_size, meta.config.d) {
            return Err(Error::Checkpoint(format!(
                "embedding table is {}x{}, config says {}x{}",
                emb.rows(),
                emb.cols(),
                meta.vocab_size,
                meta.config.d
            )));
        }
        Ok(PolicyModel {
            config: meta.config,
            vocab_size: meta.vocab_size,
            entity_count: meta.entity_count,
            vocab_hash: header.vocab_hash,
            params,
        })
    }
}
