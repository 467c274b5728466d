use crate::error::{Error, Result};
use crate::metrics::neg_si_sdr_accumulate;
use crate::scalar::Scalar;
use crate::signal::{mix, permute_batch, BatchPermutation, SourceEstimates, WaveBatch};

fn check_targets<S: Scalar>(est: &SourceEstimates<S>, targets: &[&WaveBatch<S>]) -> Result<()> {
    for t in targets {
        if t.shape() != [est.batch(), est.len()] {
            return Err(Error::shape(format!("estimates {:?}", est.shape()), format!("target {:?}", t.shape())));
        }
    }
    Ok(())
}

/// `mean_b [L(s_hat_b, s_b) + L(n_hat_b, n_b)]` where `s_hat` is slot 0 and
/// `n_hat` the sum of the remaining slots. Returns the loss and its gradient
/// with respect to every slot.
pub fn supervised_loss<S: Scalar>(
    est: &SourceEstimates<S>,
    speech: &WaveBatch<S>,
    noise: &WaveBatch<S>,
) -> Result<(S, Vec<S>)> {
    check_targets(est, &[speech, noise])?;
    let (slots, batch, len) = (est.slots(), est.batch(), est.len());
    if slots < 2 {
        return Err(Error::Invalid(format!("supervised loss needs at least 2 slots, got {slots}")));
    }
    let weight = S::one() / S::of(batch as f64);
    let noise_hat = est.sum_slots_from(1);
    let mut grad = vec![S::zero(); slots * batch * len];
    let mut noise_grad = vec![S::zero(); batch * len];
    let mut total = S::zero();
    for b in 0..batch {
        let span = b * len..(b + 1) * len;
        total += neg_si_sdr_accumulate(est.item(0, b), speech.row(b), weight, &mut grad[span.clone()])?;
        total += neg_si_sdr_accumulate(noise_hat.row(b), noise.row(b), weight, &mut noise_grad[span])?;
    }
    for i in 1..slots {
        grad[i * batch * len..(i + 1) * batch * len].copy_from_slice(&noise_grad);
    }
    Ok((total * weight, grad))
}

/// Mixture of mixtures `m + n2`.
pub fn mixit_make_mom<S: Scalar>(m: &WaveBatch<S>, n2: &WaveBatch<S>) -> Result<WaveBatch<S>> {
    mix(m, n2)
}

/// Slot grouping chosen by [`mixit_loss`] for one item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    /// Slots 0 and 1 reconstruct `m`, slot 2 reconstructs `n2`.
    First,
    /// Slots 0 and 2 reconstruct `m`, slot 1 reconstructs `n2`.
    Second,
}

impl Assignment {
    pub const ALL: [Assignment; 2] = [Assignment::First, Assignment::Second];

    /// `(slot joining slot 0, slot matched to n2)`.
    pub fn slots(self) -> (usize, usize) {
        match self {
            Assignment::First => (1, 2),
            Assignment::Second => (2, 1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MixitLoss<S> {
    pub loss: S,
    pub grad: Vec<S>,
    pub assignments: Vec<Assignment>,
}

/// Loss of one item under one assignment, with its gradient on the three
/// slot rows (each of length `len`).
fn mixit_item<S: Scalar>(
    est: &SourceEstimates<S>,
    b: usize,
    a: Assignment,
    m: &[S],
    n2: &[S],
    weight: S,
) -> Result<(S, [Vec<S>; 3])> {
    let len = est.len();
    let (join, lone) = a.slots();
    let pair: Vec<S> = est.item(0, b).iter().zip(est.item(join, b)).map(|(&x, &y)| x + y).collect();
    let mut g_pair = vec![S::zero(); len];
    let mut g_lone = vec![S::zero(); len];
    let l = neg_si_sdr_accumulate(&pair, m, weight, &mut g_pair)? + neg_si_sdr_accumulate(est.item(lone, b), n2, weight, &mut g_lone)?;
    let mut g: [Vec<S>; 3] = [g_pair.clone(), Vec::new(), Vec::new()];
    g[join] = g_pair;
    g[lone] = g_lone;
    Ok((l, g))
}

/// Value of every assignment per item: `[item][assignment]`.
pub fn mixit_enumerate<S: Scalar>(est: &SourceEstimates<S>, m: &WaveBatch<S>, n2: &WaveBatch<S>) -> Result<Vec<[S; 2]>> {
    check_mixit(est, m, n2)?;
    (0..est.batch())
        .map(|b| {
            let first = mixit_item(est, b, Assignment::First, m.row(b), n2.row(b), S::one())?.0;
            let second = mixit_item(est, b, Assignment::Second, m.row(b), n2.row(b), S::one())?.0;
            Ok([first, second])
        })
        .collect()
}

fn check_mixit<S: Scalar>(est: &SourceEstimates<S>, m: &WaveBatch<S>, n2: &WaveBatch<S>) -> Result<()> {
    if est.slots() != 3 {
        return Err(Error::Invalid(format!("MixIT needs 3 slots, got {}", est.slots())));
    }
    check_targets(est, &[m, n2])
}

/// Per item, the smaller of the two assignment losses (ties go to
/// [`Assignment::First`]), averaged over the batch. The gradient follows the
/// chosen assignment only.
pub fn mixit_loss<S: Scalar>(est: &SourceEstimates<S>, m: &WaveBatch<S>, n2: &WaveBatch<S>) -> Result<MixitLoss<S>> {
    check_mixit(est, m, n2)?;
    let (batch, len) = (est.batch(), est.len());
    let weight = S::one() / S::of(batch as f64);
    let mut grad = vec![S::zero(); 3 * batch * len];
    let mut total = S::zero();
    let mut assignments = Vec::with_capacity(batch);
    for b in 0..batch {
        let first = mixit_item(est, b, Assignment::First, m.row(b), n2.row(b), weight)?;
        let second = mixit_item(est, b, Assignment::Second, m.row(b), n2.row(b), weight)?;
        let (a, (l, g)) = if second.0 < first.0 { (Assignment::Second, second) } else { (Assignment::First, first) };
        for (i, row) in g.iter().enumerate() {
            let at = (i * batch + b) * len;
            grad[at..at + len].copy_from_slice(row);
        }
        total += l;
        assignments.push(a);
    }
    let loss = total * weight;
    debug_assert!({
        let brute: S = mixit_enumerate(est, m, n2)?.iter().map(|v| v[0].min(v[1])).sum::<S>() * weight;
        (brute - loss).abs() <= S::of(1e-9) * (S::one() + loss.abs())
    });
    Ok(MixitLoss { loss, grad, assignments })
}

/// Student targets built from teacher estimates: `s~`, `P n~` and their sum.
#[derive(Clone, Debug)]
pub struct RemixTargets<S> {
    pub speech: WaveBatch<S>,
    pub noise: WaveBatch<S>,
    pub mixture: WaveBatch<S>,
}

/// Slot 0 of the teacher output is speech; the remaining slots are summed
/// into one noise estimate, which is permuted across the batch and added
/// back to the speech estimates.
pub fn remix<S: Scalar>(teacher_est: &SourceEstimates<S>, perm: &BatchPermutation) -> Result<RemixTargets<S>> {
    if teacher_est.slots() < 2 {
        return Err(Error::Invalid(format!("teacher needs at least 2 slots, got {}", teacher_est.slots())));
    }
    let speech = teacher_est.slot(0);
    let noise = permute_batch(&teacher_est.sum_slots_from(1), perm)?;
    let mixture = mix(&speech, &noise)?;
    Ok(RemixTargets { speech, noise, mixture })
}
