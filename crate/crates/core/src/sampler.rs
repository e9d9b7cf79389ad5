//! Random-walk context chains. Walks start at the query tail, never
//! traverse the query edge or its backward connection, and pad dead
//! ends with NO_OP steps so every chain has its requested length.

use rand::Rng;
use std::io::Write;

use crate::error::{Error, Result};
use crate::kg::{
    AdjacencyIndex, EntityId, RelationId, TokenId, Triple, Vocabulary, MASK_TOKEN, UNK_TOKEN,
};

/// One walk step: either a real edge label or the stay-in-place NO_OP,
/// which serializes as the UNK token.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum StepLabel {
    Rel(RelationId),
    NoOp,
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum ChainFormat {
    /// e_x, r_q, e_y, then (relation, entity) per step: 3+2N tokens.
    InterEnt,
    /// e_x, r_q, step relations, final entity: 3+N tokens. The query
    /// tail and intermediate entities are dropped.
    RelOnly,
}

/// A query triple plus its sampled context walk. Step i starts at the
/// entity of step i-1; step 0 starts at the query tail.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Chain {
    pub query: Triple,
    pub steps: Vec<(StepLabel, EntityId)>,
    pub format: ChainFormat,
}

impl Chain {
    pub fn token_len(&self) -> usize {
        match self.format {
            ChainFormat::InterEnt => 3 + 2 * self.steps.len(),
            ChainFormat::RelOnly => 3 + self.steps.len(),
        }
    }

    fn step_token(label: StepLabel, vocab: &Vocabulary) -> TokenId {
        match label {
            StepLabel::Rel(r) => vocab.relation_token_id(r),
            StepLabel::NoOp => UNK_TOKEN,
        }
    }

    /// Serializes to token ids. No CLS/SEP delimiters; the sequence is
    /// exactly the head, query relation and context fields.
    pub fn tokens(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.token_len());
        out.push(vocab.entity_token_id(self.query.head));
        out.push(vocab.relation_token_id(self.query.relation));
        match self.format {
            ChainFormat::InterEnt => {
                out.push(vocab.entity_token_id(self.query.tail));
                for &(label, e) in &self.steps {
                    out.push(Self::step_token(label, vocab));
                    out.push(vocab.entity_token_id(e));
                }
            }
            ChainFormat::RelOnly => {
                for &(label, _) in &self.steps {
                    out.push(Self::step_token(label, vocab));
                }
                let last = self.steps.last().expect("chains have at least one step");
                out.push(vocab.entity_token_id(last.1));
            }
        }
        out
    }
}

/// A serialized chain with the head entity hidden for prediction.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MaskedChain {
    /// Position 0 is MASK; the rest matches the chain serialization.
    pub tokens: Vec<TokenId>,
    /// The entity originally at position 0.
    pub target: EntityId,
}

/// Traversable edges at `at` for a walk contextualizing `query`: all
/// train edges minus one instance each of the query edge and of its
/// backward connection, wherever those sit at `at`.
pub fn walk_edges(
    adj: &AdjacencyIndex,
    query: &Triple,
    at: EntityId,
) -> Vec<(RelationId, EntityId)> {
    let mut edges = adj.edges_from(at).to_vec();
    for excluded in [*query, query.inverse()] {
        if excluded.head == at {
            let target = (excluded.relation, excluded.tail);
            if let Some(pos) = edges.iter().position(|&e| e == target) {
                edges.remove(pos);
            }
        }
    }
    edges
}

/// Samples a K-step walk from the query tail, picking uniformly over
/// traversable edges; a dead end emits (NO_OP, current entity) and
/// stays put.
pub fn sample_chain<R: Rng>(
    adj: &AdjacencyIndex,
    query: Triple,
    k: usize,
    rng: &mut R,
) -> Result<Chain> {
    if k < 1 {
        return Err(Error::Argument(format!(
            "chain length must be at least 1, got {k}"
        )));
    }
    let mut steps = Vec::with_capacity(k);
    let mut cur = query.tail;
    for _ in 0..k {
        let edges = walk_edges(adj, &query, cur);
        if edges.is_empty() {
            steps.push((StepLabel::NoOp, cur));
        } else {
            let (r, t) = edges[rng.random_range(0..edges.len())];
            steps.push((StepLabel::Rel(r), t));
            cur = t;
        }
    }
    Ok(Chain {
        query,
        steps,
        format: ChainFormat::InterEnt,
    })
}

/// Step-count policy for pretraining chains.
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum KPolicy {
    Fixed(usize),
    UniformMix { min: usize, max: usize },
}

/// Emits `count` chains per train triple (both directions, since the
/// split is augmented). Fixed lengths pair with InterEnt; the uniform
/// length mix pairs with RelOnly.
pub fn sample_pretraining_set<R: Rng>(
    adj: &AdjacencyIndex,
    train: &[Triple],
    format: ChainFormat,
    count: usize,
    policy: KPolicy,
    rng: &mut R,
) -> Result<Vec<Chain>> {
    match (format, policy) {
        (ChainFormat::InterEnt, KPolicy::Fixed(k)) if k >= 1 => {}
        (ChainFormat::RelOnly, KPolicy::UniformMix { min, max }) if min >= 1 && min <= max => {}
        _ => {
            return Err(Error::Argument(format!(
                "invalid pairing of {format:?} with {policy:?}"
            )))
        }
    }
    let mut out = Vec::with_capacity(train.len() * count);
    for &triple in train {
        for _ in 0..count {
            let k = match policy {
                KPolicy::Fixed(k) => k,
                KPolicy::UniformMix { min, max } => rng.random_range(min..=max),
            };
            let chain = sample_chain(adj, triple, k, rng)?;
            out.push(match format {
                ChainFormat::InterEnt => chain,
                ChainFormat::RelOnly => to_relonly(chain)?,
            });
        }
    }
    Ok(out)
}

/// Reinterprets an entity-interleaved chain in the relations-only
/// format; the steps are unchanged, only serialization differs.
pub fn to_relonly(chain: Chain) -> Result<Chain> {
    if chain.format != ChainFormat::InterEnt {
        return Err(Error::Argument(
            "to_relonly expects an entity-interleaved chain".into(),
        ));
    }
    Ok(Chain {
        format: ChainFormat::RelOnly,
        ..chain
    })
}

/// Serializes and hides the head entity; the target keeps its id.
pub fn mask_head(chain: &Chain, vocab: &Vocabulary) -> MaskedChain {
    let mut tokens = chain.tokens(vocab);
    tokens[0] = MASK_TOKEN;
    MaskedChain {
        tokens,
        target: chain.query.head,
    }
}

/// One chain per line, space-separated token ids.
pub fn dump_chains<W: Write>(
    chains: &[Chain],
    vocab: &Vocabulary,
    w: &mut W,
) -> std::io::Result<()> {
    for chain in chains {
        let line: Vec<String> = chain
            .tokens(vocab)
            .into_iter()
            .map(|t| t.0.to_string())
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}
