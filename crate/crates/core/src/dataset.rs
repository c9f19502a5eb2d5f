//! Line-delimited query files and batch query generation.
//!
//! Each line is one record
//! `{"type", "anchors", "relations", "easy_answers", "hard_answers"}` with
//! labels resolved against the knowledge-graph vocabulary.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::oracle::{EntitySet, Grounder, GroundingOptions, QueryInstance};
use crate::query::QueryType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    #[serde(rename = "type")]
    pub query_type: String,
    pub anchors: Vec<String>,
    pub relations: Vec<String>,
    pub easy_answers: Vec<String>,
    pub hard_answers: Vec<String>,
}

impl QueryRecord {
    pub fn from_instance(kg: &KnowledgeGraph, inst: &QueryInstance) -> Self {
        let v = kg.vocabulary();
        let ents = |s: &EntitySet| s.iter().map(|&e| v.entity_label(e).to_string()).collect();
        QueryRecord {
            query_type: inst.query_type.to_string(),
            anchors: inst
                .anchors
                .iter()
                .map(|&e| v.entity_label(e).to_string())
                .collect(),
            relations: inst
                .relations
                .iter()
                .map(|&r| v.relation_label(r))
                .collect(),
            easy_answers: ents(&inst.easy),
            hard_answers: ents(&inst.hard),
        }
    }

    pub fn to_instance(&self, kg: &KnowledgeGraph) -> Result<QueryInstance> {
        let query_type: QueryType = self.query_type.parse()?;
        let entities = |labels: &[String]| -> Result<Vec<EntityId>> {
            labels.iter().map(|l| kg.entity(l)).collect()
        };
        let relations: Vec<RelationId> = self
            .relations
            .iter()
            .map(|l| kg.relation(l))
            .collect::<Result<_>>()?;
        let anchors = entities(&self.anchors)?;
        let mut inst = QueryInstance::new(query_type, anchors, relations);
        inst.graph()?;
        inst.easy = entities(&self.easy_answers)?.into_iter().collect();
        inst.hard = entities(&self.hard_answers)?.into_iter().collect();
        if inst.easy.intersection(&inst.hard).next().is_some() {
            return Err(Error::InvalidQueryGraph(
                "easy and hard answers overlap".into(),
            ));
        }
        Ok(inst)
    }
}

/// Parses a query file; errors carry the 1-based line number.
pub fn parse_queries(kg: &KnowledgeGraph, text: &str) -> Result<Vec<QueryInstance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wrap = |reason: String| Error::QueryRecord {
            line: i + 1,
            reason,
        };
        let record: QueryRecord = serde_json::from_str(line).map_err(|e| wrap(e.to_string()))?;
        out.push(record.to_instance(kg).map_err(|e| wrap(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_queries(kg: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<Vec<QueryInstance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_queries(kg, &text)
}

pub fn format_queries(kg: &KnowledgeGraph, instances: &[QueryInstance]) -> Result<String> {
    let mut s = String::new();
    for inst in instances {
        s.push_str(&serde_json::to_string(&QueryRecord::from_instance(
            kg, inst,
        ))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_queries(
    kg: &KnowledgeGraph,
    instances: &[QueryInstance],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = format_queries(kg, instances)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Grounds `count` instances of each type in `types`. Instance `i` of the
/// `j`-th type uses its own ChaCha8 stream, so output is independent of
/// scheduling.
pub fn generate_queries(
    kg_train: &KnowledgeGraph,
    kg_full: &KnowledgeGraph,
    types: &[QueryType],
    count: usize,
    seed: u64,
    options: GroundingOptions,
) -> Result<Vec<QueryInstance>> {
    let grounder = Grounder::new(kg_train, kg_full);
    let jobs: Vec<(usize, QueryType, usize)> = types
        .iter()
        .enumerate()
        .flat_map(|(j, &t)| (0..count).map(move |i| (j, t, i)))
        .collect();
    jobs.par_iter()
        .map(|&(j, t, i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((j as u64) << 32) | i as u64);
            grounder.ground(t, &mut rng, options)
        })
        .collect()
}
