//! Query-embedding backends: axis-aligned boxes and per-dimension Beta
//! distributions.
//!
//! Both backends represent a query as one flat vector of width `2d`
//! (`center ‖ offset` for boxes, `alpha ‖ beta` for Beta embeddings), which
//! is also the width the context integration network maps back to.

mod beta;
mod boxe;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub use beta::{beta_kl, beta_validity, beta_variance, BetaOperators, BETA_MAX, BETA_MIN};
pub use boxe::{box_distance, BoxOperators};

/// Default weight of the inside-box distance term.
pub const DEFAULT_ALPHA_IN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Box,
    Beta,
}

impl Backend {
    /// Width of an entity embedding for embedding dimension `d`.
    pub fn entity_width(self, d: usize) -> usize {
        match self {
            Backend::Box => d,
            Backend::Beta => 2 * d,
        }
    }

    /// Width of a query embedding for embedding dimension `d`.
    pub fn query_width(self, d: usize) -> usize {
        2 * d
    }

    pub fn supports_negation(self) -> bool {
        matches!(self, Backend::Beta)
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Box => "box",
            Backend::Beta => "beta",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Backend::Box),
            "beta" => Ok(Backend::Beta),
            other => Err(Error::InvalidConfig(format!("unknown backend `{other}`"))),
        }
    }
}

/// Box query value.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxEmbedding {
    pub center: Vec<f64>,
    pub offset: Vec<f64>,
}

/// Beta query value.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaEmbedding {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// A query embedding read back from a tape.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryEmbedding {
    Box(BoxEmbedding),
    Beta(BetaEmbedding),
}

impl QueryEmbedding {
    /// Splits a flat `2d` vector according to `backend`.
    pub fn from_flat(backend: Backend, flat: &[f64]) -> Self {
        let d = flat.len() / 2;
        let (a, b) = (flat[..d].to_vec(), flat[d..].to_vec());
        match backend {
            Backend::Box => QueryEmbedding::Box(BoxEmbedding {
                center: a,
                offset: b,
            }),
            Backend::Beta => QueryEmbedding::Beta(BetaEmbedding { alpha: a, beta: b }),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let (a, b) = match self {
            QueryEmbedding::Box(q) => (&q.center, &q.offset),
            QueryEmbedding::Beta(q) => (&q.alpha, &q.beta),
        };
        a.iter().chain(b).copied().collect()
    }

    pub fn is_valid(&self) -> bool {
        match self {
            QueryEmbedding::Box(q) => {
                q.center.iter().all(|x| x.is_finite())
                    && q.offset.iter().all(|&x| x.is_finite() && x >= 0.0)
            }
            QueryEmbedding::Beta(q) => q
                .alpha
                .iter()
                .chain(&q.beta)
                .all(|&x| (BETA_MIN..=BETA_MAX).contains(&x)),
        }
    }
}

/// Orders tape values lexicographically by their data so that order
/// dependent reductions see the same sequence for any input permutation.
pub(crate) fn canonical_order(tape: &Tape, inputs: &[Var]) -> Vec<Var> {
    let mut order = inputs.to_vec();
    order.sort_by(|a, b| {
        let (x, y) = (tape.value(*a).data(), tape.value(*b).data());
        x.iter()
            .zip(y)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or_else(|| x.len().cmp(&y.len()))
    });
    order
}

/// Softmax weights from per-input scalar scores, each returned as a
/// length-one vector ready for broadcasting.
pub(crate) fn attention_weights(tape: &mut Tape, scores: &[Var]) -> Result<Vec<Var>> {
    let stacked = tape.concat(scores)?;
    let weights = tape.softmax(stacked);
    (0..scores.len())
        .map(|i| tape.slice(weights, i, 1))
        .collect()
}

/// `Σ w_i x_i` for length-one weights `w_i`.
pub(crate) fn weighted_sum(tape: &mut Tape, weights: &[Var], xs: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (&w, &x) in weights.iter().zip(xs) {
        let n = tape.value(x).len();
        let wb = tape.broadcast(w, n)?;
        let term = tape.mul(wb, x)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    acc.ok_or(Error::FewerThanTwo)
}

/// Maps a raw `2d` vector onto a valid query embedding of `backend`.
pub fn apply_validity(tape: &mut Tape, backend: Backend, raw: Var) -> Result<Var> {
    match backend {
        Backend::Box => {
            let d = tape.value(raw).len() / 2;
            let center = tape.slice(raw, 0, d)?;
            let offset = tape.slice(raw, d, d)?;
            let offset = tape.softplus(offset);
            tape.concat(&[center, offset])
        }
        Backend::Beta => Ok(BetaOperators::validity(tape, raw)),
    }
}
