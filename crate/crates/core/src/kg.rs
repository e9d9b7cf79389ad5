//! Triple datasets and the graph machinery built from them: vocabulary
//! construction over entities, relations and inverse relations, the
//! inverse-augmented triple set, the traversal adjacency index and the
//! filtered-evaluation candidate sets.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Marker appended to a relation token to name its inverse. Input files
/// must not contain it.
pub const INVERSE_SUFFIX: &str = "^-1";

/// Special tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 4] = ["[MASK]", "[CLS]", "[UNK]", "[SEP]"];

pub const MASK_TOKEN: TokenId = TokenId(0);
pub const CLS_TOKEN: TokenId = TokenId(1);
pub const UNK_TOKEN: TokenId = TokenId(2);
pub const SEP_TOKEN: TokenId = TokenId(3);

/// Index into the entity table.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct EntityId(pub u32);

/// Entities sit directly after the special tokens, so their token
/// index is layout-stable across vocabularies.
pub const fn entity_token_index(e: EntityId) -> usize {
    SPECIAL_TOKENS.len() + e.0 as usize
}

/// A relation in either direction. The low bit flags the inverse, so
/// `inverse()` is an involution independent of the vocabulary size.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct RelationId(u32);

impl RelationId {
    pub fn original(index: u32) -> Self {
        RelationId(index << 1)
    }

    pub fn inverse(self) -> Self {
        RelationId(self.0 ^ 1)
    }

    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    /// Index of the underlying original relation.
    pub fn index(self) -> u32 {
        self.0 >> 1
    }
}

/// Id in the shared token space covering special tokens, entities,
/// relations and inverse relations.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct TokenId(pub u32);

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum TokenKind {
    Special,
    Entity,
    Relation,
    Inverse,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Special => "special",
            TokenKind::Entity => "entity",
            TokenKind::Relation => "relation",
            TokenKind::Inverse => "inverse",
        };
        f.write_str(s)
    }
}

/// Bijection between tokens and ids.
///
/// Id layout: the four special tokens, then entities in first-appearance
/// order, then relations in first-appearance order, then inverse
/// relations at `id(r) + relation_count`.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    ent_index: HashMap<String, u32>,
    rel_index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Original relations only; inverses are derived.
    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// entity_count + 2 * relation_count + 4 special tokens.
    pub fn total_size(&self) -> usize {
        self.entities.len() + 2 * self.relations.len() + SPECIAL_TOKENS.len()
    }

    pub fn entity_token_id(&self, e: EntityId) -> TokenId {
        TokenId(entity_token_index(e) as u32)
    }

    pub fn relation_token_id(&self, r: RelationId) -> TokenId {
        let base = (SPECIAL_TOKENS.len() + self.entities.len()) as u32;
        let offset = if r.is_inverse() {
            self.relations.len() as u32
        } else {
            0
        };
        TokenId(base + r.index() + offset)
    }

    /// Inverse of `entity_token_id`; `None` when the token id is not in
    /// the entity block.
    pub fn entity_of_token(&self, t: TokenId) -> Option<EntityId> {
        let base = SPECIAL_TOKENS.len() as u32;
        let end = base + self.entities.len() as u32;
        (t.0 >= base && t.0 < end).then(|| EntityId(t.0 - base))
    }

    pub fn token_kind(&self, t: TokenId) -> Option<TokenKind> {
        let specials = SPECIAL_TOKENS.len() as u32;
        let ents = self.entities.len() as u32;
        let rels = self.relations.len() as u32;
        match t.0 {
            x if x < specials => Some(TokenKind::Special),
            x if x < specials + ents => Some(TokenKind::Entity),
            x if x < specials + ents + rels => Some(TokenKind::Relation),
            x if x < specials + ents + 2 * rels => Some(TokenKind::Inverse),
            _ => None,
        }
    }

    /// Token string for an id; `None` when out of range.
    pub fn token(&self, t: TokenId) -> Option<String> {
        let specials = SPECIAL_TOKENS.len() as u32;
        let ents = self.entities.len() as u32;
        let rels = self.relations.len() as u32;
        match self.token_kind(t)? {
            TokenKind::Special => Some(SPECIAL_TOKENS[t.0 as usize].to_string()),
            TokenKind::Entity => Some(self.entities[(t.0 - specials) as usize].clone()),
            TokenKind::Relation => Some(self.relations[(t.0 - specials - ents) as usize].clone()),
            TokenKind::Inverse => {
                let idx = (t.0 - specials - ents - rels) as usize;
                Some(format!("{}{}", self.relations[idx], INVERSE_SUFFIX))
            }
        }
    }

    /// Id for a token string; `None` when unknown.
    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        if let Some(pos) = SPECIAL_TOKENS.iter().position(|s| *s == token) {
            return Some(TokenId(pos as u32));
        }
        if let Some(stem) = token.strip_suffix(INVERSE_SUFFIX) {
            if let Some(&idx) = self.rel_index.get(stem) {
                return Some(self.relation_token_id(RelationId::original(idx).inverse()));
            }
        }
        if let Some(&idx) = self.ent_index.get(token) {
            return Some(self.entity_token_id(EntityId(idx)));
        }
        if let Some(&idx) = self.rel_index.get(token) {
            return Some(self.relation_token_id(RelationId::original(idx)));
        }
        None
    }

    pub fn entity(&self, token: &str) -> Option<EntityId> {
        self.ent_index.get(token).map(|&i| EntityId(i))
    }

    pub fn relation(&self, token: &str) -> Option<RelationId> {
        if let Some(stem) = token.strip_suffix(INVERSE_SUFFIX) {
            return self
                .rel_index
                .get(stem)
                .map(|&i| RelationId::original(i).inverse());
        }
        self.rel_index.get(token).map(|&i| RelationId::original(i))
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.entities[e.0 as usize]
    }

    pub fn relation_name(&self, r: RelationId) -> String {
        let stem = &self.relations[r.index() as usize];
        if r.is_inverse() {
            format!("{stem}{INVERSE_SUFFIX}")
        } else {
            stem.clone()
        }
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entities.len() as u32).map(EntityId)
    }

    /// Manifest as TSV lines `token<TAB>id<TAB>kind`, in id order.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for id in 0..self.total_size() as u32 {
            let t = TokenId(id);
            let token = self.token(t).expect("id in range");
            let kind = self.token_kind(t).expect("id in range");
            out.push_str(&format!("{token}\t{id}\t{kind}\n"));
        }
        out
    }

    /// Hex SHA-256 of the manifest; stored in checkpoints for
    /// compatibility checks.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.manifest().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One directed labeled edge. The relation may be an inverse.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }

    /// The reversed triple (tail, r^-1, head).
    pub fn inverse(&self) -> Triple {
        Triple {
            head: self.tail,
            relation: self.relation.inverse(),
            tail: self.head,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

/// The train/valid/test triple sets, before or after inverse
/// augmentation. Splits are kept sorted and deduplicated.
#[derive(Clone, Debug)]
pub struct TripleStore {
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    augmented: bool,
}

impl TripleStore {
    pub fn from_splits(train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> Self {
        let normalize = |mut v: Vec<Triple>| {
            v.sort_unstable();
            v.dedup();
            v
        };
        TripleStore {
            train: normalize(train),
            valid: normalize(valid),
            test: normalize(test),
            augmented: false,
        }
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        Split::ALL
            .iter()
            .any(|&s| self.split(s).binary_search(triple).is_ok())
    }
}

/// Adds the reversed triple for every triple of every split. The result
/// is exactly double the size per split.
pub fn augment_inverse(store: TripleStore) -> Result<TripleStore> {
    if store.augmented {
        return Err(Error::State(
            "triple store is already inverse-augmented".into(),
        ));
    }
    let extend = |split: &[Triple]| {
        let mut out: Vec<Triple> = split.iter().flat_map(|t| [*t, t.inverse()]).collect();
        out.sort_unstable();
        out.dedup();
        debug_assert_eq!(out.len(), 2 * split.len());
        out
    };
    Ok(TripleStore {
        train: extend(&store.train),
        valid: extend(&store.valid),
        test: extend(&store.test),
        augmented: true,
    })
}

/// Incrementally builds a vocabulary while loading triple files, so ids
/// follow first appearance across train, valid and test.
#[derive(Default)]
pub struct VocabBuilder {
    entities: Vec<String>,
    relations: Vec<String>,
    ent_index: HashMap<String, u32>,
    rel_index: HashMap<String, u32>,
}

impl VocabBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn intern_entity(&mut self, token: &str) -> Result<EntityId> {
        check_reserved(token)?;
        if let Some(&i) = self.ent_index.get(token) {
            return Ok(EntityId(i));
        }
        let i = self.entities.len() as u32;
        self.entities.push(token.to_string());
        self.ent_index.insert(token.to_string(), i);
        Ok(EntityId(i))
    }

    fn intern_relation(&mut self, token: &str) -> Result<RelationId> {
        check_reserved(token)?;
        if let Some(&i) = self.rel_index.get(token) {
            return Ok(RelationId::original(i));
        }
        let i = self.relations.len() as u32;
        self.relations.push(token.to_string());
        self.rel_index.insert(token.to_string(), i);
        Ok(RelationId::original(i))
    }

    /// Loads one split, extending the vocabulary with unseen tokens.
    pub fn load_split(&mut self, path: &Path) -> Result<Vec<Triple>> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut triples = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::ParseTriple {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    found: fields.len(),
                });
            }
            let head = self.intern_entity(fields[0])?;
            let relation = self.intern_relation(fields[1])?;
            let tail = self.intern_entity(fields[2])?;
            triples.push(Triple::new(head, relation, tail));
        }
        triples.sort_unstable();
        triples.dedup();
        Ok(triples)
    }

    pub fn finish(self) -> Vocabulary {
        Vocabulary {
            entities: self.entities,
            relations: self.relations,
            ent_index: self.ent_index,
            rel_index: self.rel_index,
        }
    }
}

fn check_reserved(token: &str) -> Result<()> {
    if token.ends_with(INVERSE_SUFFIX) {
        return Err(Error::Vocabulary(format!(
            "token {token:?} ends with the reserved inverse marker {INVERSE_SUFFIX:?}"
        )));
    }
    if SPECIAL_TOKENS.contains(&token) {
        return Err(Error::Vocabulary(format!(
            "token {token:?} collides with a special token"
        )));
    }
    Ok(())
}

/// Loads one triple file. Without a vocabulary a fresh one is built from
/// the file; with one, unknown tokens are an error (evaluation splits
/// must not introduce entities).
pub fn load_triples(path: &Path, vocab: Option<&Vocabulary>) -> Result<(Vec<Triple>, Vocabulary)> {
    match vocab {
        None => {
            let mut builder = VocabBuilder::new();
            let triples = builder.load_split(path)?;
            Ok((triples, builder.finish()))
        }
        Some(v) => {
            let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let mut triples = Vec::new();
            for (idx, line) in content.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(Error::ParseTriple {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        found: fields.len(),
                    });
                }
                let unknown = |token: &str| Error::UnknownToken {
                    token: token.to_string(),
                    path: path.to_path_buf(),
                    line: idx + 1,
                };
                let head = v.entity(fields[0]).ok_or_else(|| unknown(fields[0]))?;
                let relation = v.relation(fields[1]).ok_or_else(|| unknown(fields[1]))?;
                let tail = v.entity(fields[2]).ok_or_else(|| unknown(fields[2]))?;
                triples.push(Triple::new(head, relation, tail));
            }
            triples.sort_unstable();
            triples.dedup();
            Ok((triples, v.clone()))
        }
    }
}

/// Per-entity sorted outgoing edges over the augmented train split.
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct AdjacencyIndex {
    offsets: Vec<usize>,
    edges: Vec<(RelationId, EntityId)>,
}

impl AdjacencyIndex {
    /// Builds the traversal graph from the augmented train split.
    pub fn from_store(store: &TripleStore, entity_count: usize) -> Result<Self> {
        if !store.augmented {
            return Err(Error::State(
                "adjacency index requires the inverse-augmented store".into(),
            ));
        }
        Ok(Self::from_edges(
            entity_count,
            store
                .split(Split::Train)
                .iter()
                .map(|t| (t.head, t.relation, t.tail)),
        ))
    }

    /// Builds from raw edges. Duplicate edges are preserved.
    pub fn from_edges(
        entity_count: usize,
        iter: impl IntoIterator<Item = (EntityId, RelationId, EntityId)>,
    ) -> Self {
        let mut all: Vec<(EntityId, RelationId, EntityId)> = iter.into_iter().collect();
        all.sort_unstable();
        let mut offsets = vec![0usize; entity_count + 1];
        for &(h, _, _) in &all {
            offsets[h.0 as usize + 1] += 1;
        }
        for i in 1..offsets.len() {
            offsets[i] += offsets[i - 1];
        }
        let edges = all.into_iter().map(|(_, r, t)| (r, t)).collect();
        AdjacencyIndex { offsets, edges }
    }

    pub fn entity_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edges_from(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        let i = e.0 as usize;
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn out_degree(&self, e: EntityId) -> usize {
        self.edges_from(e).len()
    }
}

/// All train edges from `e`, minus at most one instance of `excluded`,
/// in deterministic (relation, target) order.
pub fn outgoing_edges(
    adj: &AdjacencyIndex,
    e: EntityId,
    excluded: Option<(RelationId, EntityId)>,
) -> Vec<(RelationId, EntityId)> {
    let edges = adj.edges_from(e);
    match excluded {
        None => edges.to_vec(),
        Some(ex) => {
            let mut out = Vec::with_capacity(edges.len());
            let mut skipped = false;
            for &edge in edges {
                if !skipped && edge == ex {
                    skipped = true;
                    continue;
                }
                out.push(edge);
            }
            out
        }
    }
}

/// Every entity `e` with (query.head, query.relation, e) known in any
/// split, excluding the query's own tail. Direct-scan form; use
/// [`FilterIndex`] for bulk evaluation.
pub fn filtered_candidates(query: &Triple, store: &TripleStore) -> BTreeSet<EntityId> {
    let mut out = BTreeSet::new();
    for &split in &Split::ALL {
        for t in store.split(split) {
            if t.head == query.head && t.relation == query.relation && t.tail != query.tail {
                out.insert(t.tail);
            }
        }
    }
    out
}

/// (head, relation) -> known tails over all splits, built once for
/// filtered ranking.
pub struct FilterIndex {
    map: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn from_store(store: &TripleStore) -> Self {
        let mut map: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for &split in &Split::ALL {
            for t in store.split(split) {
                map.entry((t.head, t.relation)).or_default().push(t.tail);
            }
        }
        for tails in map.values_mut() {
            tails.sort_unstable();
            tails.dedup();
        }
        FilterIndex { map }
    }

    /// Same contract as [`filtered_candidates`].
    pub fn candidates(&self, query: &Triple) -> Vec<EntityId> {
        match self.map.get(&(query.head, query.relation)) {
            None => Vec::new(),
            Some(tails) => tails
                .iter()
                .copied()
                .filter(|&t| t != query.tail)
                .collect(),
        }
    }
}

/// A loaded dataset directory: vocabulary, augmented store and the
/// derived indexes.
pub struct Dataset {
    pub vocab: Vocabulary,
    pub store: TripleStore,
    pub adjacency: AdjacencyIndex,
    pub filter: FilterIndex,
}

/// Loads `train.txt`, `valid.txt`, `test.txt` from a directory, builds
/// the vocabulary in first-appearance order, augments with inverses and
/// builds the traversal and filter indexes.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut builder = VocabBuilder::new();
    let train = builder.load_split(&dir.join("train.txt"))?;
    let valid = builder.load_split(&dir.join("valid.txt"))?;
    let test = builder.load_split(&dir.join("test.txt"))?;
    let vocab = builder.finish();
    let store = augment_inverse(TripleStore::from_splits(train, valid, test))?;
    let adjacency = AdjacencyIndex::from_store(&store, vocab.entity_count())?;
    let filter = FilterIndex::from_store(&store);
    Ok(Dataset {
        vocab,
        store,
        adjacency,
        filter,
    })
}
