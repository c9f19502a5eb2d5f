use rand::Rng;

use super::{attention_weights, canonical_order, weighted_sum};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kg::RelationId;
use crate::nn::{uniform_matrix, Mlp};

/// Relation tables and intersection networks of the box backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxOperators {
    pub dim: usize,
    pub num_relations: usize,
    pub relation_center: ParamId,
    pub relation_offset: ParamId,
    /// Scores each input box for the attention over centers.
    pub center_scorer: Mlp,
    /// Maps the mean input offset to per-dimension shrink gates.
    pub offset_gate: Mlp,
}

impl BoxOperators {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        num_relations: usize,
        dim: usize,
        init_range: f64,
    ) -> Self {
        let relation_center = store.add(
            "box.relation_center",
            uniform_matrix(rng, num_relations, dim, init_range),
        );
        let relation_offset = store.add(
            "box.relation_offset",
            uniform_matrix(rng, num_relations, dim, init_range),
        );
        let center_scorer = Mlp::register(store, rng, "box.center_scorer", 2 * dim, 2 * dim, 1);
        let offset_gate = Mlp::register(store, rng, "box.offset_gate", dim, 2 * dim, dim);
        BoxOperators {
            dim,
            num_relations,
            relation_center,
            relation_offset,
            center_scorer,
            offset_gate,
        }
    }

    /// Entity point lifted to a zero-size box.
    pub fn point(&self, tape: &mut Tape, entity: Var) -> Result<Var> {
        let zeros = tape.constant(Tensor::zeros(&[self.dim]));
        tape.concat(&[entity, zeros])
    }

    /// Translates the center and grows the offset by `softplus` of the
    /// relation offset.
    pub fn project(&self, tape: &mut Tape, q: Var, r: RelationId) -> Result<Var> {
        if r.0 >= self.num_relations {
            return Err(Error::UnknownRelation(r.to_string()));
        }
        let d = self.dim;
        let center = tape.slice(q, 0, d)?;
        let offset = tape.slice(q, d, d)?;
        let rc = tape.param_row(self.relation_center, r.0)?;
        let ro = tape.param_row(self.relation_offset, r.0)?;
        let grow = tape.softplus(ro);
        let center = tape.add(center, rc)?;
        let offset = tape.add(offset, grow)?;
        tape.concat(&[center, offset])
    }

    /// Attention-weighted center; offset is the elementwise minimum
    /// scaled by a sigmoid gate, so it never exceeds any input offset.
    pub fn intersect(&self, tape: &mut Tape, boxes: &[Var]) -> Result<Var> {
        if boxes.len() < 2 {
            return Err(Error::FewerThanTwo);
        }
        let d = self.dim;
        let boxes = canonical_order(tape, boxes);
        let mut scores = Vec::with_capacity(boxes.len());
        let mut centers = Vec::with_capacity(boxes.len());
        let mut offsets = Vec::with_capacity(boxes.len());
        for &b in &boxes {
            scores.push(self.center_scorer.forward(tape, b)?);
            centers.push(tape.slice(b, 0, d)?);
            offsets.push(tape.slice(b, d, d)?);
        }
        let weights = attention_weights(tape, &scores)?;
        let center = weighted_sum(tape, &weights, &centers)?;
        let smallest = tape.min_of(&offsets)?;
        let mean = tape.mean(&offsets)?;
        let gate = self.offset_gate.forward(tape, mean)?;
        let gate = tape.sigmoid(gate);
        let offset = tape.mul(smallest, gate)?;
        tape.concat(&[center, offset])
    }

    /// Outside distance plus `alpha_in` times inside distance.
    pub fn distance(&self, tape: &mut Tape, entity: Var, q: Var, alpha_in: f64) -> Result<Var> {
        let d = self.dim;
        let center = tape.slice(q, 0, d)?;
        let offset = tape.slice(q, d, d)?;
        let delta = tape.sub(entity, center)?;
        let gap = tape.abs(delta);
        let beyond = tape.sub(gap, offset)?;
        let outside = tape.relu(beyond);
        let inside = tape.min_of(&[gap, offset])?;
        let outside = tape.sum(outside);
        let inside = tape.sum(inside);
        let inside = tape.scale(inside, alpha_in);
        tape.add(outside, inside)
    }
}

/// Plain evaluation of [`BoxOperators::distance`].
pub fn box_distance(entity: &[f64], center: &[f64], offset: &[f64], alpha_in: f64) -> f64 {
    let mut outside = 0.0;
    let mut inside = 0.0;
    for ((&e, &c), &o) in entity.iter().zip(center).zip(offset) {
        let gap = (e - c).abs();
        outside += (gap - o).max(0.0);
        inside += if o < gap { o } else { gap };
    }
    outside + alpha_in * inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ops(d: usize) -> (ParamStore, BoxOperators) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let ops = BoxOperators::register(&mut store, &mut rng, 4, d, 1.0);
        (store, ops)
    }

    #[test]
    fn zero_relation_grows_offset_by_ln2() {
        let (mut store, ops) = ops(3);
        store.get_mut(ops.relation_center).data_mut().fill(0.0);
        store.get_mut(ops.relation_offset).data_mut().fill(0.0);
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![1.0, 2.0, 3.0, 0.5, 0.0, 1.0]);
        let p = ops.project(&mut tape, q, RelationId(1)).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(&tape.value(p).data()[..3], &[1.0, 2.0, 3.0]);
        for (got, want) in tape.value(p).data()[3..].iter().zip([0.5, 0.0, 1.0]) {
            assert!((got - (want + ln2)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_projections_differ_from_doubled_relation() {
        let (mut store, ops) = ops(2);
        let twice = {
            let mut tape = Tape::new(&store);
            let q = tape.constant_vector(vec![0.0; 4]);
            let a = ops.project(&mut tape, q, RelationId(0)).unwrap();
            let b = ops.project(&mut tape, a, RelationId(0)).unwrap();
            tape.value(b).clone()
        };
        for x in store.get_mut(ops.relation_center).row_mut(0) {
            *x *= 2.0;
        }
        for x in store.get_mut(ops.relation_offset).row_mut(0) {
            *x *= 2.0;
        }
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![0.0; 4]);
        let once = ops.project(&mut tape, q, RelationId(0)).unwrap();
        assert_eq!(&twice.data()[..2], &tape.value(once).data()[..2]);
        assert_ne!(&twice.data()[2..], &tape.value(once).data()[2..]);
    }

    #[test]
    fn unknown_relation() {
        let (store, ops) = ops(2);
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![0.0; 4]);
        assert!(matches!(
            ops.project(&mut tape, q, RelationId(4)),
            Err(Error::UnknownRelation(_))
        ));
    }

    #[test]
    fn intersection_of_identical_boxes_keeps_center() {
        let (store, ops) = ops(3);
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![0.3, -0.7, 1.1, 0.2, 0.4, 0.9]);
        let r = tape.constant_vector(vec![0.3, -0.7, 1.1, 0.2, 0.4, 0.9]);
        let i = ops.intersect(&mut tape, &[q, r, q]).unwrap();
        for (got, want) in tape.value(i).data()[..3].iter().zip([0.3, -0.7, 1.1]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn intersection_needs_two_inputs() {
        let (store, ops) = ops(2);
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![0.0; 4]);
        assert!(matches!(
            ops.intersect(&mut tape, &[q]),
            Err(Error::FewerThanTwo)
        ));
    }

    #[test]
    fn distance_cases() {
        let (store, ops) = ops(2);
        let mut tape = Tape::new(&store);
        let q = tape.constant_vector(vec![1.0, -1.0, 0.5, 2.0]);
        let at_center = tape.constant_vector(vec![1.0, -1.0]);
        let d0 = ops.distance(&mut tape, at_center, q, 0.02).unwrap();
        assert_eq!(tape.scalar_value(d0), 0.0);
        let corner = tape.constant_vector(vec![1.5, 1.0]);
        let d1 = ops.distance(&mut tape, corner, q, 0.02).unwrap();
        assert!((tape.scalar_value(d1) - 0.02 * 2.5).abs() < 1e-15);
        assert!((box_distance(&[1.5, 1.0], &[1.0, -1.0], &[0.5, 2.0], 0.02) - 0.05).abs() < 1e-15);
        // A degenerate box is plain L1 distance.
        assert_eq!(
            box_distance(&[3.0, 0.0], &[1.0, -1.0], &[0.0, 0.0], 0.02),
            3.0
        );
    }
}
