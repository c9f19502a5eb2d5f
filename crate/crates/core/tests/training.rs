//! Training behaviour on small synthetic graphs.

use qembed_core::dataset::generate_queries;
use qembed_core::eval::evaluate;
use qembed_core::train::checkpoint;
use qembed_core::*;

fn setup(backend: Backend) -> (KnowledgeGraph, Vec<QueryInstance>, Model) {
    let kg = synthetic::random_kg(50, 4, 300, 2).unwrap();
    let types: Vec<QueryType> = match backend {
        Backend::Box => vec![QueryType::P1, QueryType::P2, QueryType::I2, QueryType::U2],
        Backend::Beta => vec![QueryType::P1, QueryType::I2, QueryType::In2, QueryType::Pin],
    };
    let queries = generate_queries(
        &kg,
        &kg,
        &types,
        30,
        2,
        GroundingOptions {
            max_tries: 1000,
            ..Default::default()
        },
    )
    .unwrap();
    let mut mc = ModelConfig::new(backend, 8);
    mc.structure = StructureDims::uniform(8);
    mc.context_samples = 8;
    mc.init_range = 1.0;
    let model = Model::new(mc, kg.num_entities(), kg.num_relations()).unwrap();
    (kg, queries, model)
}

fn config() -> TrainConfig {
    TrainConfig {
        gamma: 6.0,
        negatives: 8,
        learning_rate: 0.01,
        batch_size: 16,
        max_steps: 300,
        ..TrainConfig::default()
    }
}

#[test]
fn moving_average_loss_decreases() {
    for backend in [Backend::Box, Backend::Beta] {
        let (kg, queries, model) = setup(backend);
        let mut trainer = Trainer::new(model, &kg, queries, config()).unwrap();
        let losses: Vec<f64> = trainer
            .run(|_, _| Ok(()))
            .unwrap()
            .iter()
            .map(|r| r.loss)
            .collect();
        assert!(losses.iter().all(|l| l.is_finite()));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let early = mean(&losses[..50]);
        let late = mean(&losses[losses.len() - 50..]);
        assert!(late < 0.8 * early, "{backend:?}: {early} -> {late}");
    }
}

#[test]
fn saved_model_scores_identically() {
    let dir = tempfile::tempdir().unwrap();
    for backend in [Backend::Box, Backend::Beta] {
        let (kg, queries, model) = setup(backend);
        let mut trainer = Trainer::new(
            model,
            &kg,
            queries.clone(),
            TrainConfig {
                max_steps: 40,
                ..config()
            },
        )
        .unwrap();
        trainer.run(|_, _| Ok(())).unwrap();
        let path = dir.path().join(format!("{}.ckpt", backend.name()));
        checkpoint::save(trainer.model(), &[("steps", "40".into())], &path).unwrap();
        let loaded = checkpoint::load(&path).unwrap();
        assert_eq!(loaded.metadata["steps"], "40");
        for inst in &queries {
            let g = inst.graph().unwrap();
            let a = trainer.model().score_all(&kg, &g).unwrap();
            let b = loaded.model.score_all(&kg, &g).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let before = evaluate(trainer.model(), &kg, &queries, Targets::All, 1).unwrap();
        let after = evaluate(&loaded.model, &kg, &queries, Targets::All, 1).unwrap();
        assert_eq!(before, after);
    }
}
