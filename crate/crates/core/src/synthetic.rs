//! Random knowledge graphs for tests, benchmarks and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kg::{KgBuilder, KnowledgeGraph};

/// Tab-separated text of up to `triples` random facts over entities
/// `e0..` and relations `r0..`. Every entity appears at least once.
pub fn random_triples_text(entities: usize, relations: usize, triples: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    let line = |out: &mut String, h: usize, r: usize, t: usize| {
        out.push_str(&format!("e{h}\tr{r}\te{t}\n"));
    };
    // A ring guarantees coverage of every entity.
    for h in 0..entities {
        line(&mut out, h, rng.gen_range(0..relations), (h + 1) % entities);
    }
    for _ in entities..triples.max(entities) {
        let h = rng.gen_range(0..entities);
        let t = rng.gen_range(0..entities);
        line(&mut out, h, rng.gen_range(0..relations), t);
    }
    out
}

/// Random graph with inverse relations.
pub fn random_kg(
    entities: usize,
    relations: usize,
    triples: usize,
    seed: u64,
) -> Result<KnowledgeGraph> {
    KnowledgeGraph::parse(
        &random_triples_text(entities, relations, triples, seed),
        true,
    )
}

/// Splits triple text into `(train, full)`. The first `keep` lines are
/// always in the training part; each later line is held out with
/// probability `holdout`.
pub fn split_lines(text: &str, keep: usize, holdout: f64, seed: u64) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut train = String::new();
    for (i, line) in text.lines().enumerate() {
        if i < keep || rng.gen::<f64>() >= holdout {
            train.push_str(line);
            train.push('\n');
        }
    }
    (train, text.to_string())
}

/// A random full graph and a training graph missing roughly
/// `holdout` of its facts, over one shared vocabulary.
pub fn random_split(
    entities: usize,
    relations: usize,
    triples: usize,
    holdout: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, KnowledgeGraph)> {
    let text = random_triples_text(entities, relations, triples, seed);
    let (train_text, full_text) = split_lines(&text, entities, holdout, seed);
    let mut builder = KgBuilder::new(true);
    let train = builder.read_str(&train_text)?;
    let full = builder.read_str(&full_text)?;
    Ok((builder.build(&train)?, builder.build(&full)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_subset_with_shared_ids() {
        let (train, full) = random_split(30, 3, 120, 0.2, 4).unwrap();
        assert_eq!(train.num_entities(), full.num_entities());
        assert!(train.num_triples() < full.num_triples());
        assert!(train.triples().iter().all(|t| full.contains(*t)));
    }
}
