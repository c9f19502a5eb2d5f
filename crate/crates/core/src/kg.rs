//! Triple store with inverse relations and per-relation endpoint indexes.
//!
//! Entity and relation ids are dense and assigned in first-seen order. When
//! inverses are enabled, base relation `i` gets id `2i` and its inverse
//! (labelled with the reserved `⁻¹` suffix) gets id `2i + 1`, so the inverse
//! of any id is `id ^ 1`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Suffix marking inverse relation labels. Never valid in input files.
pub const INVERSE_SUFFIX: &str = "⁻¹";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub usize);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Which end of a relation's edges to collect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

/// Bijective label maps for entities and base relations.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entities: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relations: Vec<String>,
    relation_index: HashMap<String, usize>,
    inverses: bool,
}

impl Vocabulary {
    pub fn new(add_inverses: bool) -> Self {
        Vocabulary {
            inverses: add_inverses,
            ..Default::default()
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Number of relation ids, counting inverses.
    pub fn num_relations(&self) -> usize {
        if self.inverses {
            2 * self.relations.len()
        } else {
            self.relations.len()
        }
    }

    pub fn has_inverses(&self) -> bool {
        self.inverses
    }

    fn intern_entity(&mut self, label: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(label) {
            return id;
        }
        let id = EntityId(self.entities.len());
        self.entities.push(label.to_string());
        self.entity_index.insert(label.to_string(), id);
        id
    }

    fn intern_relation(&mut self, label: &str) -> usize {
        if let Some(&id) = self.relation_index.get(label) {
            return id;
        }
        let id = self.relations.len();
        self.relations.push(label.to_string());
        self.relation_index.insert(label.to_string(), id);
        id
    }

    fn base_to_id(&self, base: usize) -> RelationId {
        if self.inverses {
            RelationId(2 * base)
        } else {
            RelationId(base)
        }
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        &self.entities[id.0]
    }

    pub fn relation_label(&self, id: RelationId) -> String {
        if self.inverses {
            let base = &self.relations[id.0 / 2];
            if id.0 % 2 == 1 {
                format!("{base}{INVERSE_SUFFIX}")
            } else {
                base.clone()
            }
        } else {
            self.relations[id.0].clone()
        }
    }

    pub fn entity(&self, label: &str) -> Result<EntityId> {
        self.entity_index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownEntity(label.to_string()))
    }

    pub fn relation(&self, label: &str) -> Result<RelationId> {
        let unknown = || Error::UnknownRelation(label.to_string());
        match label.strip_suffix(INVERSE_SUFFIX) {
            Some(base) if self.inverses => {
                let b = *self.relation_index.get(base).ok_or_else(unknown)?;
                Ok(RelationId(2 * b + 1))
            }
            Some(_) => Err(unknown()),
            None => {
                let b = *self.relation_index.get(label).ok_or_else(unknown)?;
                Ok(self.base_to_id(b))
            }
        }
    }
}

/// Reads triple files into one shared vocabulary so that several graphs
/// (train, train+valid, full) agree on ids.
#[derive(Debug, Clone)]
pub struct KgBuilder {
    vocab: Vocabulary,
}

/// A triple over base relation indices, before inverse expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawTriple {
    pub head: EntityId,
    pub relation: usize,
    pub tail: EntityId,
}

impl KgBuilder {
    pub fn new(add_inverses: bool) -> Self {
        KgBuilder {
            vocab: Vocabulary::new(add_inverses),
        }
    }

    pub fn read_file(&mut self, path: impl AsRef<Path>) -> Result<Vec<RawTriple>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.read_str(&text)
    }

    /// Parses tab-separated triples. Blank and `#` lines are skipped.
    pub fn read_str(&mut self, text: &str) -> Result<Vec<RawTriple>> {
        let mut out = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "empty field".into(),
                });
            }
            if fields[1].ends_with(INVERSE_SUFFIX) {
                return Err(Error::ReservedSuffix(fields[1].to_string()));
            }
            let head = self.vocab.intern_entity(fields[0]);
            let relation = self.vocab.intern_relation(fields[1]);
            let tail = self.vocab.intern_entity(fields[2]);
            out.push(RawTriple {
                head,
                relation,
                tail,
            });
        }
        Ok(out)
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Builds a graph over the current vocabulary from the given triples.
    pub fn build(&self, raw: &[RawTriple]) -> Result<KnowledgeGraph> {
        KnowledgeGraph::from_raw(Arc::new(self.vocab.clone()), raw)
    }
}

type SampleKey = (RelationId, bool, usize, u64);

/// Indexed, immutable knowledge graph.
#[derive(Debug)]
pub struct KnowledgeGraph {
    vocab: Arc<Vocabulary>,
    /// All stored triples sorted by (head, relation, tail).
    triples: Vec<Triple>,
    /// `head_offsets[e]..head_offsets[e+1]` is the slice of triples with head `e`.
    head_offsets: Vec<usize>,
    heads: Vec<Vec<EntityId>>,
    tails: Vec<Vec<EntityId>>,
    sample_cache: RwLock<HashMap<SampleKey, Arc<[EntityId]>>>,
}

impl KnowledgeGraph {
    fn from_raw(vocab: Arc<Vocabulary>, raw: &[RawTriple]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut triples = Vec::with_capacity(raw.len() * 2);
        for t in raw {
            let r = vocab.base_to_id(t.relation);
            triples.push(Triple {
                head: t.head,
                relation: r,
                tail: t.tail,
            });
            if vocab.inverses {
                triples.push(Triple {
                    head: t.tail,
                    relation: RelationId(r.0 + 1),
                    tail: t.head,
                });
            }
        }
        triples.sort_unstable();
        triples.dedup();

        let n = vocab.num_entities();
        let mut head_offsets = vec![0usize; n + 1];
        for t in &triples {
            head_offsets[t.head.0 + 1] += 1;
        }
        for i in 0..n {
            head_offsets[i + 1] += head_offsets[i];
        }

        let nr = vocab.num_relations();
        let mut heads = vec![Vec::new(); nr];
        let mut tails = vec![Vec::new(); nr];
        for t in &triples {
            heads[t.relation.0].push(t.head);
            tails[t.relation.0].push(t.tail);
        }
        for list in heads.iter_mut().chain(tails.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }

        Ok(KnowledgeGraph {
            vocab,
            triples,
            head_offsets,
            heads,
            tails,
            sample_cache: RwLock::new(HashMap::new()),
        })
    }

    /// Parses a triple file held in memory into a standalone graph.
    pub fn parse(text: &str, add_inverses: bool) -> Result<Self> {
        let mut builder = KgBuilder::new(add_inverses);
        let raw = builder.read_str(text)?;
        builder.build(&raw)
    }

    /// Loads a triple file into a standalone graph.
    pub fn load_triples(path: impl AsRef<Path>, add_inverses: bool) -> Result<Self> {
        let mut builder = KgBuilder::new(add_inverses);
        let raw = builder.read_file(path)?;
        builder.build(&raw)
    }

    /// Convenience constructor for labelled triples.
    pub fn from_labels<'a>(
        triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
        add_inverses: bool,
    ) -> Result<Self> {
        let text: String = triples
            .into_iter()
            .map(|(h, r, t)| format!("{h}\t{r}\t{t}\n"))
            .collect();
        Self::parse(&text, add_inverses)
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity(&self, label: &str) -> Result<EntityId> {
        self.vocab.entity(label)
    }

    pub fn relation(&self, label: &str) -> Result<RelationId> {
        self.vocab.relation(label)
    }

    pub fn inverse(&self, r: RelationId) -> Option<RelationId> {
        self.vocab.inverses.then_some(RelationId(r.0 ^ 1))
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.check_entity(t.head).is_ok()
            && self.check_relation(t.relation).is_ok()
            && self.triple_slice(t.head).binary_search(&t).is_ok()
    }

    pub(crate) fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.0 < self.num_entities() {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                kind: "entity",
                id: e.0,
                size: self.num_entities(),
            })
        }
    }

    pub(crate) fn check_relation(&self, r: RelationId) -> Result<()> {
        if r.0 < self.num_relations() {
            Ok(())
        } else {
            Err(Error::IdOutOfRange {
                kind: "relation",
                id: r.0,
                size: self.num_relations(),
            })
        }
    }

    fn triple_slice(&self, head: EntityId) -> &[Triple] {
        &self.triples[self.head_offsets[head.0]..self.head_offsets[head.0 + 1]]
    }

    /// All outgoing triples of `e`, sorted by relation then tail.
    pub fn outgoing(&self, e: EntityId) -> Result<&[Triple]> {
        self.check_entity(e)?;
        Ok(self.triple_slice(e))
    }

    /// Sorted tails `t` such that `(e, r, t)` is stored.
    pub fn neighbors(&self, e: EntityId, r: RelationId) -> Result<Vec<EntityId>> {
        Ok(self.neighbor_slice(e, r)?.iter().map(|t| t.tail).collect())
    }

    pub(crate) fn neighbor_slice(&self, e: EntityId, r: RelationId) -> Result<&[Triple]> {
        self.check_entity(e)?;
        self.check_relation(r)?;
        let slice = self.triple_slice(e);
        let lo = slice.partition_point(|t| t.relation < r);
        let hi = slice.partition_point(|t| t.relation <= r);
        Ok(&slice[lo..hi])
    }

    /// Sorted set of all heads (or tails) of relation `r`.
    pub fn relation_endpoints(&self, r: RelationId, side: Side) -> Result<&[EntityId]> {
        self.check_relation(r)?;
        Ok(match side {
            Side::Head => &self.heads[r.0],
            Side::Tail => &self.tails[r.0],
        })
    }

    /// Up to `k` endpoint ids of `r`, sorted.
    ///
    /// When the endpoint set is larger than `k` a uniform sample without
    /// replacement is drawn from a ChaCha8 stream seeded by `seed` and
    /// selected by `(relation, side)`, so every key gets an independent,
    /// reproducible stream. Results are memoised per key.
    pub fn sample_context_ids(
        &self,
        r: RelationId,
        side: Side,
        k: usize,
        seed: u64,
    ) -> Result<Arc<[EntityId]>> {
        let endpoints = self.relation_endpoints(r, side)?;
        let key = (r, side == Side::Head, k, seed);
        if let Some(hit) = self.sample_cache.read().expect("cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let sample: Arc<[EntityId]> = if endpoints.len() <= k {
            endpoints.into()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2 * r.0 as u64 + u64::from(side == Side::Tail));
            let mut picked: Vec<EntityId> = rand::seq::index::sample(&mut rng, endpoints.len(), k)
                .into_iter()
                .map(|i| endpoints[i])
                .collect();
            picked.sort_unstable();
            picked.into()
        };
        self.sample_cache
            .write()
            .expect("cache poisoned")
            .insert(key, sample.clone());
        Ok(sample)
    }
}
