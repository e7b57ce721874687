use crate::config::TrainDomains;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

use super::models::{student_forward, BoundModel};
use super::LossWeights;

/// `sum_i gamma^(K-1-i) * masked_mean(|pred_i - gt|)`; the last prediction
/// has weight 1.
pub fn disparity_seq_loss<T: Scalar>(
    tape: &mut Tape<T>,
    preds: &[Var],
    gt: Var,
    mask: Option<&[bool]>,
    gamma: f64,
) -> Result<Var> {
    if preds.is_empty() {
        return Err(Error::InvalidArgument("sequence loss needs at least one prediction".into()));
    }
    let n = tape.value(gt).len();
    let weights = match mask {
        Some(m) if m.len() != n => {
            return Err(Error::shape("disparity_seq_loss", format!("mask of {} for {n} pixels", m.len())))
        }
        Some(m) => {
            let count = m.iter().filter(|&&v| v).count();
            if count == 0 {
                return Err(Error::EmptyMask);
            }
            let w = T::from_f64(1.0 / count as f64);
            let data = m.iter().map(|&v| if v { w } else { T::zero() }).collect();
            Some(tape.constant(Tensor::from_vec(tape.shape(gt), data)?))
        }
        None if n == 0 => return Err(Error::EmptyMask),
        None => None,
    };
    let k = preds.len();
    let mut total: Option<Var> = None;
    for (i, &p) in preds.iter().enumerate() {
        let diff = tape.sub(p, gt)?;
        let err = tape.abs(diff);
        let term = match weights {
            Some(w) => {
                let e = tape.mul(err, w)?;
                tape.sum(e)
            }
            None => tape.mean(err),
        };
        let term = tape.scale(term, gamma.powi((k - 1 - i) as i32));
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one prediction"))
}

/// `(1/C) * sum_c ||norm(a_c) - norm(b_c)||^2`, with each channel map
/// L2-normalised over space. Lies in `[0, 4]`.
pub fn channel_norm_distance<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(
            "channel_norm_distance",
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    let c = *tape.shape(a).last().unwrap_or(&1);
    let na = tape.channel_normalize(a)?;
    let nb = tape.channel_normalize(b)?;
    let d = tape.sub(na, nb)?;
    let sq = tape.square(d);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / c as f64))
}

/// `max(D(anchor, positive) - D(anchor, negative) + margin, 0)`.
pub fn triplet_contrastive_loss<T: Scalar>(
    tape: &mut Tape<T>,
    anchor: Var,
    positive: Var,
    negative: Var,
    margin: f64,
) -> Result<Var> {
    let pos = channel_norm_distance(tape, anchor, positive)?;
    let neg = channel_norm_distance(tape, anchor, negative)?;
    let gap = tape.sub(pos, neg)?;
    let gap = tape.add_scalar(gap, margin);
    Ok(tape.relu(gap))
}

/// `mean|T - S_clean| + mean|T - S_fog|`. The teacher side is detached.
pub fn distillation_loss<T: Scalar>(
    tape: &mut Tape<T>,
    teacher_fused: Var,
    student_clean: Var,
    student_fog: Var,
) -> Result<Var> {
    let target = tape.detach(teacher_fused);
    let mut terms = Vec::with_capacity(2);
    for s in [student_clean, student_fog] {
        if tape.shape(s) != tape.shape(target) {
            return Err(Error::shape(
                "distillation_loss",
                format!("student {:?} vs teacher {:?}", tape.shape(s), tape.shape(target)),
            ));
        }
        let d = tape.sub(target, s)?;
        let a = tape.abs(d);
        terms.push(tape.mean(a));
    }
    tape.add(terms[0], terms[1])
}

/// Which student loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StudentLossSwitches {
    pub domains: TrainDomains,
    pub use_dist: bool,
    pub use_cont: bool,
}

/// Individual student loss terms, unweighted.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub disp_clean: f64,
    pub disp_fog: f64,
    pub dist: f64,
    pub cont: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `disp_clean + disp_fog + lambda1 * dist + lambda2 * cont`.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        self.disp_clean + self.disp_fog + w.lambda1 * self.dist + w.lambda2 * self.cont
    }
}

/// Student objective on a tape.
#[derive(Clone, Debug)]
pub struct StudentLoss {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    /// Final full-resolution prediction of every supervised domain.
    pub final_preds: Vec<Var>,
}

/// Full student objective for one scene.
///
/// `clean` and `fog` are `(left, right)` image leaves, `teacher_fused` the
/// teacher's fused `(left, right)` features (required when distillation is
/// on). Distillation and contrast are averaged over the two views.
#[allow(clippy::too_many_arguments)]
pub fn student_total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel,
    clean: (Var, Var),
    fog: (Var, Var),
    gt: Var,
    mask: Option<&[bool]>,
    teacher_fused: Option<(Var, Var)>,
    weights: &LossWeights,
    switches: StudentLossSwitches,
    iters: usize,
) -> Result<StudentLoss> {
    let want_clean = switches.domains != TrainDomains::Fog;
    let want_fog = switches.domains != TrainDomains::Clean;
    let need_both = switches.use_dist || switches.use_cont;
    let zero = tape.constant(Tensor::scalar(T::zero()));
    let mut breakdown = LossBreakdown::default();
    let mut total = zero;
    let mut final_preds = Vec::new();

    let sc = if want_clean || need_both {
        Some(student_forward(tape, model, clean, iters, want_clean)?)
    } else {
        None
    };
    let sf = if want_fog || need_both {
        Some(student_forward(tape, model, fog, iters, want_fog)?)
    } else {
        None
    };

    for (out, slot) in [(&sc, &mut breakdown.disp_clean), (&sf, &mut breakdown.disp_fog)] {
        if let Some(seq) = out.as_ref().and_then(|o| o.seq.as_ref()) {
            let l = disparity_seq_loss(tape, &seq.preds, gt, mask, weights.gamma)?;
            *slot = tape.value(l).item().as_f64();
            total = tape.add(total, l)?;
            final_preds.push(seq.last());
        }
    }

    if need_both {
        let (sc, sf) = (sc.as_ref().expect("clean pass"), sf.as_ref().expect("fog pass"));
        if switches.use_dist {
            let (tl, tr) = teacher_fused
                .ok_or_else(|| Error::InvalidArgument("distillation needs teacher features".into()))?;
            let dl = distillation_loss(tape, tl, sc.converted.0, sf.converted.0)?;
            let dr = distillation_loss(tape, tr, sc.converted.1, sf.converted.1)?;
            let d = tape.add(dl, dr)?;
            let d = tape.scale(d, 0.5);
            breakdown.dist = tape.value(d).item().as_f64();
            let d = tape.scale(d, weights.lambda1);
            total = tape.add(total, d)?;
        }
        if switches.use_cont {
            let cl = triplet_contrastive_loss(tape, sf.converted.0, sc.converted.0, sf.raw.0, weights.margin)?;
            let cr = triplet_contrastive_loss(tape, sf.converted.1, sc.converted.1, sf.raw.1, weights.margin)?;
            let c = tape.add(cl, cr)?;
            let c = tape.scale(c, 0.5);
            breakdown.cont = tape.value(c).item().as_f64();
            let c = tape.scale(c, weights.lambda2);
            total = tape.add(total, c)?;
        }
    }
    breakdown.total = tape.value(total).item().as_f64();
    Ok(StudentLoss {
        loss: total,
        breakdown,
        final_preds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mode;

    fn tape() -> Tape<f64> {
        Tape::new(Mode::Strict)
    }

    fn full(shape: &[usize], v: f64) -> Tensor<f64> {
        Tensor::full(shape, v)
    }

    #[test]
    fn sequence_loss_hand_values() {
        let mut t = tape();
        let gt = t.constant(full(&[2, 3, 1], 4.0));
        let p1 = t.constant(full(&[2, 3, 1], 5.0));
        let p2 = t.constant(full(&[2, 3, 1], 3.5));
        let l = disparity_seq_loss(&mut t, &[p1, p2], gt, None, 0.95).unwrap();
        assert!((t.value(l).item() - 1.45).abs() < 1e-15);
        let single = disparity_seq_loss(&mut t, &[p2], gt, None, 0.95).unwrap();
        assert_eq!(t.value(single).item(), 0.5);
        let exact = disparity_seq_loss(&mut t, &[gt, gt], gt, None, 0.95).unwrap();
        assert_eq!(t.value(exact).item(), 0.0);
    }

    #[test]
    fn sequence_loss_respects_mask() {
        let mut t = tape();
        let gt = t.constant(Tensor::from_vec(&[1, 2, 1], vec![1.0, 1.0]).unwrap());
        let p = t.constant(Tensor::from_vec(&[1, 2, 1], vec![1.0, 100.0]).unwrap());
        let l = disparity_seq_loss(&mut t, &[p], gt, Some(&[true, false]), 0.9).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        assert!(matches!(
            disparity_seq_loss(&mut t, &[p], gt, Some(&[false, false]), 0.9),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn distance_of_orthogonal_channels_is_two() {
        let mut t = tape();
        // Each channel map of a is orthogonal to the same channel map of b.
        let a = t.constant(Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 3.0]).unwrap());
        let b = t.constant(Tensor::from_vec(&[1, 2, 2], vec![0.0, 2.0, 5.0, 0.0]).unwrap());
        let d = channel_norm_distance(&mut t, a, b).unwrap();
        assert!((t.value(d).item() - 2.0).abs() < 1e-15);
        let same = channel_norm_distance(&mut t, a, a).unwrap();
        assert_eq!(t.value(same).item(), 0.0);
    }

    #[test]
    fn triplet_hand_values() {
        let mut t = tape();
        let a = t.constant(Tensor::from_vec(&[1, 2, 1], vec![1.0, 2.0]).unwrap());
        let l = triplet_contrastive_loss(&mut t, a, a, a, 1.0).unwrap();
        assert_eq!(t.value(l).item(), 1.0);
        let neg = t.constant(Tensor::from_vec(&[1, 2, 1], vec![-1.0, -2.0]).unwrap());
        // D_pos = 0, D_neg = 4
        let l = triplet_contrastive_loss(&mut t, a, a, neg, 1.0).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn distillation_hand_value_and_detached_teacher() {
        let mut t = tape();
        let teacher = t.leaf(full(&[2, 2, 3], 1.0), true);
        let sc = t.leaf(full(&[2, 2, 3], 1.1), true);
        let sf = t.leaf(full(&[2, 2, 3], 0.7), true);
        let l = distillation_loss(&mut t, teacher, sc, sf).unwrap();
        assert!((t.value(l).item() - 0.4).abs() < 1e-12);
        t.backward(l).unwrap();
        assert!(t.grad(teacher).is_none());
        assert!(t.grad(sc).is_some());
    }
}
