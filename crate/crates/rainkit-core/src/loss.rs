//! Training objective: L1 reconstruction, hinge adversarial terms and the
//! hinge domain-verification terms, combined as
//! L(D, D_v) = l1*L_adv(D) + l2*L_v(D_v) and
//! L(G) = l1*L_adv(G) + l2*L_v(G) + l3*L_rec with l1 = l2 = 1, l3 = 100.

use crate::error::Result;
use crate::graph::{Tape, Var};
use crate::tensor::Element;
use serde::Deserialize;

/// Loss term weights (lambda_1, lambda_2, lambda_3).
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub adv: f64,
    pub ver: f64,
    pub rec: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { adv: 1.0, ver: 1.0, rec: 100.0 }
    }
}

/// Mean absolute error over all elements. The norm is averaged rather than
/// summed so the weight is independent of batch and image size.
pub fn rec_loss<T: Element>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d);
    Ok(tape.mean_all(a))
}

/// Hinge discriminator loss: E[max(0, 1 - s_real)] + E[max(0, 1 + s_fake)].
/// Expectations are batch means; scores are (N,1,1,1).
pub fn hinge_d<T: Element>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<Var> {
    let nr = tape.neg(real);
    let r1 = tape.add_scalar(nr, 1.0);
    let rr = tape.relu(r1);
    let lr = tape.mean_all(rr);
    let f1 = tape.add_scalar(fake, 1.0);
    let rf = tape.relu(f1);
    let lf = tape.mean_all(rf);
    tape.add(lr, lf)
}

/// Generator-side score loss: -E[s_fake].
pub fn hinge_g<T: Element>(tape: &mut Tape<T>, fake: Var) -> Var {
    let m = tape.mean_all(fake);
    tape.neg(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn scores(tape: &mut Tape<f64>, v: Vec<f64>) -> Var {
        let n = v.len();
        tape.leaf(Tensor::from_vec(Shape::new(n, 1, 1, 1), v).unwrap())
    }

    #[test]
    fn rec_loss_of_identical_tensors_is_zero() {
        let mut tape = Tape::<f64>::new(false);
        let a = tape.leaf(Tensor::full(Shape::new(2, 3, 4, 4), 0.37));
        let b = tape.leaf(Tensor::full(Shape::new(2, 3, 4, 4), 0.37));
        let l = rec_loss(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
    }

    #[test]
    fn rec_loss_of_constant_offset_is_the_offset() {
        let mut tape = Tape::<f64>::new(false);
        let a = tape.leaf(Tensor::full(Shape::new(1, 3, 4, 4), 0.75));
        let b = tape.leaf(Tensor::full(Shape::new(1, 3, 4, 4), 0.25));
        let l = rec_loss(&mut tape, a, b).unwrap();
        assert!((tape.value(l).data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hinge_is_zero_when_margins_are_met() {
        let mut tape = Tape::<f64>::new(false);
        let real = scores(&mut tape, vec![1.0, 1.5]);
        let fake = scores(&mut tape, vec![-1.0, -2.0]);
        let l = hinge_d(&mut tape, real, fake).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
    }

    #[test]
    fn hinge_at_zero_scores_is_two() {
        let mut tape = Tape::<f64>::new(false);
        let real = scores(&mut tape, vec![0.0, 0.0, 0.0]);
        let fake = scores(&mut tape, vec![0.0, 0.0, 0.0]);
        let l = hinge_d(&mut tape, real, fake).unwrap();
        assert!((tape.value(l).data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hinge_is_nonnegative_and_zero_iff_margins() {
        let mut rng = crate::rng::rng_from(101, "hinge", 0);
        for _ in 0..50 {
            let rv: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            let fv: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            let mut tape = Tape::<f64>::new(false);
            let real = scores(&mut tape, rv.clone());
            let fake = scores(&mut tape, fv.clone());
            let l = hinge_d(&mut tape, real, fake).unwrap();
            let v = tape.value(l).data()[0];
            assert!(v >= 0.0);
            let margins = rv.iter().all(|r| *r >= 1.0) && fv.iter().all(|f| *f <= -1.0);
            assert_eq!(v == 0.0, margins, "real {rv:?} fake {fv:?} loss {v}");
        }
    }

    #[test]
    fn generator_loss_decreases_as_fake_scores_rise() {
        let mut tape = Tape::<f64>::new(false);
        let low = scores(&mut tape, vec![-1.0, -0.5]);
        let high = scores(&mut tape, vec![0.5, 1.0]);
        let ll = hinge_g(&mut tape, low);
        let lh = hinge_g(&mut tape, high);
        assert!(tape.value(lh).data()[0] < tape.value(ll).data()[0]);
    }

    #[test]
    fn rec_loss_matches_scalar_loop_oracle() {
        let mut rng = crate::rng::rng_from(102, "recoracle", 0);
        let a = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 5, 5), -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(Shape::new(2, 3, 5, 5), -1.0, 1.0, &mut rng);
        let oracle: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.shape().numel() as f64;
        let mut tape = Tape::<f64>::new(false);
        let av = tape.leaf(a);
        let bv = tape.leaf(b);
        let l = rec_loss(&mut tape, av, bv).unwrap();
        assert!((tape.value(l).data()[0] - oracle).abs() < 1e-12);
    }
}
