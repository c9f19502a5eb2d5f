//! Filtered ranking, per-type MRR / Hits@k, and improvement over a
//! baseline report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::model::Model;
use crate::oracle::{EntitySet, QueryInstance};
use crate::query::QueryType;

/// Mid-rank of `target` among entities not in `filter_out`:
/// `1 + #smaller + #(equal, not target) / 2`.
pub fn filtered_rank(distances: &[f64], target: EntityId, filter_out: &EntitySet) -> Result<f64> {
    if filter_out.contains(&target) {
        return Err(Error::TargetFiltered(target.0));
    }
    let t = *distances.get(target.0).ok_or(Error::IdOutOfRange {
        kind: "entity",
        id: target.0,
        size: distances.len(),
    })?;
    let (mut smaller, mut ties) = (0usize, 0usize);
    for (i, &d) in distances.iter().enumerate() {
        if i == target.0 || filter_out.contains(&EntityId(i)) {
            continue;
        }
        if d < t {
            smaller += 1;
        } else if d == t {
            ties += 1;
        }
    }
    Ok(1.0 + smaller as f64 + ties as f64 / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
}

impl Metrics {
    fn from_ranks(ranks: &[f64]) -> Self {
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits_at_1: hits(1.0),
            hits_at_3: hits(3.0),
            hits_at_10: hits(10.0),
        }
    }

    fn mean(all: &[Metrics]) -> Self {
        let n = all.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Metrics {
            mrr: avg(|m| m.mrr),
            hits_at_1: avg(|m| m.hits_at_1),
            hits_at_3: avg(|m| m.hits_at_3),
            hits_at_10: avg(|m| m.hits_at_10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeReport {
    pub query_type: QueryType,
    /// Number of ranked targets.
    pub count: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: Vec<TypeReport>,
    /// Unweighted mean over query types.
    pub average: Metrics,
    /// Percentage change of average MRR relative to a baseline.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub improvement: Option<f64>,
}

impl EvalReport {
    pub fn get(&self, t: QueryType) -> Option<&TypeReport> {
        self.per_type.iter().find(|r| r.query_type == t)
    }

    /// Text table with percentages, one row per type plus the average.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "type", "count", "MRR", "H@1", "H@3", "H@10"
        );
        let row = |s: &mut String, name: &str, count: String, m: &Metrics| {
            let _ = writeln!(
                s,
                "{:<6} {:>7} {:>7.2} {:>7.2} {:>7.2} {:>7.2}",
                name,
                count,
                100.0 * m.mrr,
                100.0 * m.hits_at_1,
                100.0 * m.hits_at_3,
                100.0 * m.hits_at_10
            );
        };
        for r in &self.per_type {
            row(&mut s, r.query_type.name(), r.count.to_string(), &r.metrics);
        }
        row(&mut s, "avg", String::new(), &self.average);
        if let Some(imp) = self.improvement {
            let _ = writeln!(s, "imp    {imp:+.1}%");
        }
        s
    }
}

/// Builds a report from ranks grouped by query type.
pub fn aggregate_metrics(groups: &BTreeMap<QueryType, Vec<f64>>) -> Result<EvalReport> {
    if groups.is_empty() {
        return Err(Error::EmptyGroup("all".into()));
    }
    let mut per_type = Vec::with_capacity(groups.len());
    for (t, ranks) in groups {
        if ranks.is_empty() {
            return Err(Error::EmptyGroup(t.to_string()));
        }
        per_type.push(TypeReport {
            query_type: *t,
            count: ranks.len(),
            metrics: Metrics::from_ranks(ranks),
        });
    }
    let average = Metrics::mean(&per_type.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(EvalReport {
        per_type,
        average,
        improvement: None,
    })
}

/// `100 (ours - base) / base` on average MRR.
pub fn improvement_percent(base: f64, ours: f64) -> f64 {
    100.0 * (ours - base) / base
}

/// Improvement of `ours` over `base`; both must cover the same types.
pub fn improvement_report(base: &EvalReport, ours: &EvalReport) -> Result<f64> {
    let types = |r: &EvalReport| r.per_type.iter().map(|t| t.query_type).collect::<Vec<_>>();
    if types(base) != types(ours) {
        return Err(Error::CoverageMismatch);
    }
    Ok(improvement_percent(base.average.mrr, ours.average.mrr))
}

/// Which answers of an instance are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Targets {
    /// Hard answers only, the held-out protocol.
    Hard,
    /// Every answer; used to measure fit on training data.
    All,
}

/// Ranks every target of every instance. Each target is ranked with all
/// other answers of its instance filtered out. Instances without targets
/// are skipped.
pub fn evaluate(
    model: &Model,
    kg: &KnowledgeGraph,
    instances: &[QueryInstance],
    targets: Targets,
    workers: usize,
) -> Result<EvalReport> {
    let entity_values = model.entity_values();
    let rank_one = |inst: &QueryInstance| -> Result<(QueryType, Vec<f64>)> {
        let chosen: Vec<EntityId> = match targets {
            Targets::Hard => inst.hard.iter().copied().collect(),
            Targets::All => inst.all_answers().into_iter().collect(),
        };
        if chosen.is_empty() {
            return Ok((inst.query_type, Vec::new()));
        }
        let graph = inst.graph()?;
        let qs = model.answer_embeddings(kg, &graph)?;
        let distances = model.distances(&entity_values, &qs);
        let mut filter = inst.all_answers();
        let mut ranks = Vec::with_capacity(chosen.len());
        for t in chosen {
            filter.remove(&t);
            ranks.push(filtered_rank(&distances, t, &filter)?);
            filter.insert(t);
        }
        Ok((inst.query_type, ranks))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<Result<(QueryType, Vec<f64>)>> =
        pool.install(|| instances.par_iter().map(rank_one).collect());
    let mut groups: BTreeMap<QueryType, Vec<f64>> = BTreeMap::new();
    for r in results {
        let (t, ranks) = r?;
        if !ranks.is_empty() {
            groups.entry(t).or_default().extend(ranks);
        }
    }
    aggregate_metrics(&groups)
}
