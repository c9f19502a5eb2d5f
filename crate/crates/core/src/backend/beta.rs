use rand::Rng;

use super::{attention_weights, canonical_order, weighted_sum};
use crate::autodiff::special::{digamma, lgamma};
use crate::autodiff::{softplus, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kg::RelationId;
use crate::nn::{uniform_matrix, Mlp};

pub const BETA_MIN: f64 = 0.05;
pub const BETA_MAX: f64 = 1e9;

/// Relation embeddings and operator networks of the Beta backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BetaOperators {
    pub dim: usize,
    pub num_relations: usize,
    /// `[R, 2d]` relation embeddings fed to the projection network.
    pub relation: ParamId,
    pub projection: Mlp,
    pub scorer: Mlp,
}

impl BetaOperators {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        num_relations: usize,
        dim: usize,
        init_range: f64,
    ) -> Self {
        let relation = store.add(
            "beta.relation",
            uniform_matrix(rng, num_relations, 2 * dim, init_range),
        );
        let projection = Mlp::register(store, rng, "beta.projection", 4 * dim, 2 * dim, 2 * dim);
        let scorer = Mlp::register(store, rng, "beta.scorer", 2 * dim, 2 * dim, 1);
        BetaOperators {
            dim,
            num_relations,
            relation,
            projection,
            scorer,
        }
    }

    /// `clamp(softplus(x) + 0.05, 0.05, 1e9)`, elementwise.
    pub fn validity(tape: &mut Tape, raw: Var) -> Var {
        let sp = tape.softplus(raw);
        let shifted = tape.shift(sp, BETA_MIN);
        tape.clamp(shifted, BETA_MIN, BETA_MAX)
    }

    pub fn project(&self, tape: &mut Tape, q: Var, r: RelationId) -> Result<Var> {
        if r.0 >= self.num_relations {
            return Err(Error::UnknownRelation(r.to_string()));
        }
        let rel = tape.param_row(self.relation, r.0)?;
        let input = tape.concat(&[q, rel])?;
        let raw = self.projection.forward(tape, input)?;
        Ok(Self::validity(tape, raw))
    }

    /// Convex combination of the inputs under learned attention.
    pub fn intersect(&self, tape: &mut Tape, qs: &[Var]) -> Result<Var> {
        if qs.len() < 2 {
            return Err(Error::FewerThanTwo);
        }
        let qs = canonical_order(tape, qs);
        let scores = qs
            .iter()
            .map(|&q| self.scorer.forward(tape, q))
            .collect::<Result<Vec<_>>>()?;
        let weights = attention_weights(tape, &scores)?;
        weighted_sum(tape, &weights, &qs)
    }

    /// Reciprocal parameters, clamped back into range.
    pub fn negate(&self, tape: &mut Tape, q: Var) -> Result<Var> {
        let ones = tape.constant(Tensor::vector(vec![1.0; 2 * self.dim]));
        let inv = tape.div(ones, q)?;
        Ok(tape.clamp(inv, BETA_MIN, BETA_MAX))
    }

    /// `Σ_i KL(Beta(entity_i) ‖ Beta(query_i))`.
    pub fn distance(&self, tape: &mut Tape, entity: Var, q: Var) -> Result<Var> {
        let d = self.dim;
        let a1 = tape.slice(entity, 0, d)?;
        let b1 = tape.slice(entity, d, d)?;
        let a2 = tape.slice(q, 0, d)?;
        let b2 = tape.slice(q, d, d)?;
        let log_b_q = log_beta_fn(tape, a2, b2)?;
        let log_b_e = log_beta_fn(tape, a1, b1)?;
        let s1 = tape.add(a1, b1)?;
        let (da, db) = (tape.sub(a1, a2)?, tape.sub(b1, b2)?);
        let dab = tape.add(da, db)?;
        let psi_a = tape.digamma(a1)?;
        let psi_b = tape.digamma(b1)?;
        let psi_s = tape.digamma(s1)?;
        let ta = tape.mul(da, psi_a)?;
        let tb = tape.mul(db, psi_b)?;
        let ts = tape.mul(dab, psi_s)?;
        let kl = tape.sub(log_b_q, log_b_e)?;
        let kl = tape.add(kl, ta)?;
        let kl = tape.add(kl, tb)?;
        let kl = tape.sub(kl, ts)?;
        Ok(tape.sum(kl))
    }

    /// Per-dimension variances `αβ / ((α+β)² (α+β+1))`.
    pub fn variance(&self, tape: &mut Tape, q: Var) -> Result<Var> {
        let d = self.dim;
        let a = tape.slice(q, 0, d)?;
        let b = tape.slice(q, d, d)?;
        let s = tape.add(a, b)?;
        let num = tape.mul(a, b)?;
        let s2 = tape.mul(s, s)?;
        let s1 = tape.shift(s, 1.0);
        let den = tape.mul(s2, s1)?;
        tape.div(num, den)
    }
}

fn log_beta_fn(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let s = tape.add(a, b)?;
    let la = tape.lgamma(a)?;
    let lb = tape.lgamma(b)?;
    let ls = tape.lgamma(s)?;
    let t = tape.add(la, lb)?;
    tape.sub(t, ls)
}

/// Plain evaluation of the Beta validity mapping.
pub fn beta_validity(x: f64) -> f64 {
    (softplus(x) + BETA_MIN).clamp(BETA_MIN, BETA_MAX)
}

/// Plain evaluation of [`BetaOperators::distance`] for one dimension set.
pub fn beta_kl(a1: &[f64], b1: &[f64], a2: &[f64], b2: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..a1.len() {
        let (p, q, r, s) = (a1[i], b1[i], a2[i], b2[i]);
        let log_b_q = lgamma(r) + lgamma(s) - lgamma(r + s);
        let log_b_e = lgamma(p) + lgamma(q) - lgamma(p + q);
        let (da, db) = (p - r, q - s);
        let kl = log_b_q - log_b_e + da * digamma(p) + db * digamma(q) - (da + db) * digamma(p + q);
        total += kl;
    }
    total
}

/// Closed-form Beta variance.
pub fn beta_variance(alpha: f64, beta: f64) -> f64 {
    let s = alpha + beta;
    alpha * beta / (s * s * (s + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops(d: usize) -> (ParamStore, BetaOperators) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let ops = BetaOperators::register(&mut store, &mut rng, 2, d, 1.0);
        (store, ops)
    }

    #[test]
    fn negation_values() {
        let (store, ops) = ops(1);
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![1.0, 1.0]);
        let n = ops.negate(&mut tape, q).unwrap();
        assert_eq!(tape.value(n).data(), &[1.0, 1.0]);
        let q = tape.constant_vector(vec![2.0, 5.0]);
        let n = ops.negate(&mut tape, q).unwrap();
        assert_eq!(tape.value(n).data(), &[0.5, 0.2]);
        let nn = ops.negate(&mut tape, n).unwrap();
        assert_eq!(tape.value(nn).data(), &[2.0, 5.0]);
    }

    #[test]
    fn kl_of_identical_is_zero_and_asymmetric_otherwise() {
        assert_eq!(beta_kl(&[2.0], &[3.0], &[2.0], &[3.0]), 0.0);
        let pq = beta_kl(&[2.0], &[3.0], &[0.7], &[1.4]);
        let qp = beta_kl(&[0.7], &[1.4], &[2.0], &[3.0]);
        assert!(pq > 0.0 && qp > 0.0 && (pq - qp).abs() > 1e-3);
    }

    #[test]
    fn kl_against_closed_form() {
        // KL(Beta(2,2) ‖ Beta(1,1)) = ln 6 - 5/3.
        let want = 6f64.ln() - 5.0 / 3.0;
        assert!((beta_kl(&[2.0], &[2.0], &[1.0], &[1.0]) - want).abs() < 1e-12);
    }

    #[test]
    fn tape_kl_matches_plain() {
        let (store, ops) = ops(2);
        let mut tape = Tape::new(&store);
        let e = tape.constant_vector(vec![0.4, 3.0, 1.2, 0.9]);
        let q = tape.constant_vector(vec![2.5, 0.3, 0.8, 7.0]);
        let d = ops.distance(&mut tape, e, q).unwrap();
        let plain = beta_kl(&[0.4, 3.0], &[1.2, 0.9], &[2.5, 0.3], &[0.8, 7.0]);
        assert!((tape.scalar_value(d) - plain).abs() < 1e-12);
    }

    #[test]
    fn variance_values() {
        assert!((beta_variance(1.0, 1.0) - 1.0 / 12.0).abs() < 1e-15);
        assert!((beta_variance(2.0, 2.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn validity_floor() {
        assert!(beta_validity(-1e6) >= BETA_MIN);
        assert!((beta_validity(0.0) - (std::f64::consts::LN_2 + 0.05)).abs() < 1e-15);
    }
}
