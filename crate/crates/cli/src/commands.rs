//! Subcommand bodies.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};

use anyhow::{Context, Result};
use qembed_core::autodiff::primitive_suite;
use qembed_core::dataset::{generate_queries, read_queries, write_queries};
use qembed_core::eval::{evaluate, improvement_report};
use qembed_core::train::{checkpoint, loss_grad_check};
use qembed_core::{
    synthetic, Backend, EvalReport, GroundingOptions, KgBuilder, KnowledgeGraph, Model,
    ModelConfig, QueryInstance, QueryType, StructureDims, Trainer,
};
use serde_json::json;

use crate::bench::{busiest_chain, mean_context_time};
use crate::config::{ConfigError, RunConfig, Split};
use crate::{Command, NumericFailure};

const PRIMITIVE_TOLERANCE: f64 = 1e-4;
const FULL_LOSS_TOLERANCE: f64 = 1e-3;

pub fn dispatch(
    command: &Command,
    cfg: &RunConfig,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<()> {
    match command {
        Command::BuildKg => build_kg(cfg, out),
        Command::MakeQueries => make_queries(cfg, out),
        Command::Train => train(cfg, out, log),
        Command::Eval => eval(cfg, out),
        Command::Answer {
            query_type,
            anchors,
            relations,
        } => answer(cfg, query_type, anchors, relations, out),
        Command::Gradcheck => gradcheck(cfg, out),
        Command::BenchContext => bench_context(cfg, out),
    }
}

fn required<'a>(
    value: &'a Option<String>,
    key: &str,
    command: &str,
) -> Result<&'a str, ConfigError> {
    value
        .as_deref()
        .ok_or_else(|| ConfigError::new(key, format!("required by {command}")))
}

/// Training and full graphs over one vocabulary. Without a full-graph
/// file both are the training graph.
pub fn load_graphs(cfg: &RunConfig, command: &str) -> Result<(KnowledgeGraph, KnowledgeGraph)> {
    let train_path = required(&cfg.train_triples, "train_triples", command)?;
    let mut builder = KgBuilder::new(cfg.inverses);
    let train = builder.read_file(train_path)?;
    let full = match &cfg.full_triples {
        Some(p) => {
            let extra = builder.read_file(p)?;
            train.iter().chain(&extra).copied().collect()
        }
        None => train.clone(),
    };
    Ok((builder.build(&train)?, builder.build(&full)?))
}

fn write_file(path: &str, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {path}"))
}

fn build_kg(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    if cfg.synthetic_entities > 0 {
        let train_path = required(&cfg.train_triples, "train_triples", "build-kg")?;
        let triples = match cfg.synthetic_triples {
            0 => 4 * cfg.synthetic_entities,
            n => n,
        };
        let text = synthetic::random_triples_text(
            cfg.synthetic_entities,
            cfg.synthetic_relations,
            triples,
            cfg.seed,
        );
        let (train, full) = synthetic::split_lines(
            &text,
            cfg.synthetic_entities,
            cfg.synthetic_holdout,
            cfg.seed,
        );
        write_file(train_path, train.as_bytes())?;
        if let Some(p) = &cfg.full_triples {
            write_file(p, full.as_bytes())?;
        }
    }
    let (train, full) = load_graphs(cfg, "build-kg")?;
    writeln!(
        out,
        "{}",
        json!({
            "entities": full.num_entities(),
            "relations": full.num_relations(),
            "train_triples": train.num_triples(),
            "full_triples": full.num_triples(),
        })
    )?;
    Ok(())
}

fn make_queries(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let output = required(&cfg.queries_output, "queries_output", "make-queries")?;
    let (train, full) = load_graphs(cfg, "make-queries")?;
    let instances = match cfg.queries_split {
        Split::Train => generate_queries(
            &train,
            &train,
            &cfg.query_types,
            cfg.queries_per_type,
            cfg.seed,
            GroundingOptions::default(),
        )?,
        Split::Eval => generate_queries(
            &train,
            &full,
            &cfg.query_types,
            cfg.queries_per_type,
            cfg.seed,
            GroundingOptions {
                require_hard: true,
                ..GroundingOptions::default()
            },
        )?,
    };
    write_queries(&full, &instances, output)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for inst in &instances {
        *counts.entry(inst.query_type.to_string()).or_default() += 1;
    }
    writeln!(
        out,
        "{}",
        json!({"written": instances.len(), "per_type": counts})
    )?;
    Ok(())
}

fn train(cfg: &RunConfig, out: &mut dyn Write, log: &mut dyn Write) -> Result<()> {
    let queries = required(&cfg.train_queries, "train_queries", "train")?;
    let (kg, _) = load_graphs(cfg, "train")?;
    let data = read_queries(&kg, queries)?;
    let model = Model::new(cfg.model_config(), kg.num_entities(), kg.num_relations())?;
    let mut trainer = Trainer::new(model, &kg, data, cfg.train_config())?;
    let mut metrics = match &cfg.metrics_log {
        Some(p) => Some(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {p}"))?,
        )),
        None => None,
    };
    let mut io_error = None;
    trainer.run(|record, model| {
        let step = record.step + 1;
        if let Some(m) = metrics.as_mut() {
            if let Err(e) = writeln!(m, "{}", serde_json::to_string(record)?) {
                io_error.get_or_insert(e);
            }
        }
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            let _ = writeln!(
                log,
                "step {step} loss {:.6} qe {:.6} var {:.6}",
                record.loss, record.qe_loss, record.var_loss
            );
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.max_steps {
            let path = format!("{}.step{step}", cfg.checkpoint);
            checkpoint::save(model, &metadata(cfg, step), &path)?;
        }
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(e).context("writing metrics log");
    }
    if let Some(mut m) = metrics {
        m.flush()?;
    }
    let steps = trainer.steps_taken();
    let model = trainer.into_model();
    checkpoint::save(&model, &metadata(cfg, steps), &cfg.checkpoint)?;
    writeln!(
        out,
        "{}",
        json!({"checkpoint": cfg.checkpoint, "steps": steps})
    )?;
    if let Some(path) = &cfg.eval_queries {
        let instances = read_queries(&kg, path)?;
        let report = evaluate(&model, &kg, &instances, cfg.eval_targets, cfg.workers)?;
        for r in &report.per_type {
            writeln!(log, "valid {} mrr {:.6}", r.query_type, r.metrics.mrr)?;
        }
        write!(out, "{}", report.to_table())?;
    }
    Ok(())
}

fn metadata(cfg: &RunConfig, steps: usize) -> Vec<(&'static str, String)> {
    vec![("steps", steps.to_string()), ("seed", cfg.seed.to_string())]
}

/// Loads the checkpoint and checks it against the graph vocabulary.
fn load_model(cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<Model> {
    let ckpt = checkpoint::load(&cfg.checkpoint)?;
    let model = ckpt.model;
    if model.num_entities() != kg.num_entities() || model.num_relations() != kg.num_relations() {
        return Err(qembed_core::Error::Checkpoint(format!(
            "checkpoint has {} entities and {} relations, graph has {} and {}",
            model.num_entities(),
            model.num_relations(),
            kg.num_entities(),
            kg.num_relations()
        ))
        .into());
    }
    Ok(model)
}

fn eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let queries = required(&cfg.eval_queries, "eval_queries", "eval")?;
    let (kg, _) = load_graphs(cfg, "eval")?;
    let model = load_model(cfg, &kg)?;
    let instances = read_queries(&kg, queries)?;
    let mut report = evaluate(&model, &kg, &instances, cfg.eval_targets, cfg.workers)?;
    if let Some(base) = &cfg.baseline_report {
        let text = fs::read_to_string(base).with_context(|| format!("reading {base}"))?;
        let base: EvalReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {base}"))?;
        report.improvement = Some(improvement_report(&base, &report)?);
    }
    if let Some(path) = &cfg.report {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        write_file(path, text.as_bytes())?;
    }
    write!(out, "{}", report.to_table())?;
    Ok(())
}

fn answer(
    cfg: &RunConfig,
    query_type: &str,
    anchors: &[String],
    relations: &[String],
    out: &mut dyn Write,
) -> Result<()> {
    let (kg, _) = load_graphs(cfg, "answer")?;
    let model = load_model(cfg, &kg)?;
    let t: QueryType = query_type.parse()?;
    let anchors = anchors
        .iter()
        .map(|a| kg.entity(a))
        .collect::<qembed_core::Result<Vec<_>>>()?;
    let relations = relations
        .iter()
        .map(|r| kg.relation(r))
        .collect::<qembed_core::Result<Vec<_>>>()?;
    let graph = QueryInstance::new(t, anchors, relations).graph()?;
    let distances = model.score_all(&kg, &graph)?;
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let vocab = kg.vocabulary();
    for (rank, &e) in order.iter().take(cfg.top_k).enumerate() {
        writeln!(
            out,
            "{}\t{}\t{:.6}",
            rank + 1,
            vocab.entity_label(qembed_core::EntityId(e)),
            distances[e]
        )?;
    }
    Ok(())
}

fn gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let mut failures = Vec::new();
    for (name, r) in primitive_suite(20, cfg.seed)? {
        let ok = r.max_rel_error < PRIMITIVE_TOLERANCE;
        writeln!(
            out,
            "primitive {name} max_rel_error={:.3e} threshold={PRIMITIVE_TOLERANCE:.0e} {}",
            r.max_rel_error,
            if ok { "ok" } else { "FAIL" }
        )?;
        if !ok {
            failures.push(name.to_string());
        }
    }
    // A tiny model keeps one central difference per parameter cheap; the
    // context flags follow the configuration.
    let kg = synthetic::random_kg(24, 3, 90, cfg.seed)?;
    for backend in [Backend::Box, Backend::Beta] {
        let types: Vec<QueryType> = QueryType::ALL
            .into_iter()
            .filter(|t| backend.supports_negation() || !t.has_negation())
            .collect();
        let data = generate_queries(&kg, &kg, &types, 1, cfg.seed, GroundingOptions::default())?;
        let mut mc = ModelConfig {
            backend,
            dim: 3,
            structure: StructureDims::uniform(2),
            context_samples: 4,
            init_range: 0.8,
            ..cfg.model_config()
        };
        mc.init_seed = cfg.seed;
        let model = Model::new(mc, kg.num_entities(), kg.num_relations())?;
        for inst in &data {
            let r = loss_grad_check(&model, &kg, inst, 2.0, cfg.variance_weight, 3)?;
            let ok = r.max_rel_error < FULL_LOSS_TOLERANCE;
            writeln!(
                out,
                "full_loss {backend} {} max_rel_error={:.3e} threshold={FULL_LOSS_TOLERANCE:.0e} {}",
                inst.query_type,
                r.max_rel_error,
                if ok { "ok" } else { "FAIL" }
            )?;
            if !ok {
                failures.push(format!("{backend}/{}", inst.query_type));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(NumericFailure(format!(
            "gradient check above threshold: {}",
            failures.join(", ")
        ))
        .into())
    }
}

fn bench_context(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let kg = match &cfg.train_triples {
        Some(_) => load_graphs(cfg, "bench-context")?.0,
        None => {
            let n = if cfg.synthetic_entities > 0 {
                cfg.synthetic_entities
            } else {
                3000
            };
            let triples = if cfg.synthetic_triples > 0 {
                cfg.synthetic_triples
            } else {
                20 * n
            };
            synthetic::random_kg(n, cfg.synthetic_relations, triples, cfg.seed)?
        }
    };
    let model = Model::new(cfg.model_config(), kg.num_entities(), kg.num_relations())?;
    let graph = busiest_chain(&kg)?;
    let mut first = None;
    for &k in &cfg.bench_samples {
        let mean = mean_context_time(&model, &kg, &graph, 1, k, cfg.bench_calls)?;
        let us = mean.as_secs_f64() * 1e6;
        let base = *first.get_or_insert(us);
        writeln!(
            out,
            "{}",
            json!({"K": k, "calls": cfg.bench_calls, "mean_us": us, "ratio": us / base})
        )?;
    }
    Ok(())
}
