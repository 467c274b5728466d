//! Scale-invariant SDR: the reported metric, its improvement over the input
//! mixture, and the smooth negative-SI-SDR training loss.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reported SI-SDR values are clamped to +/- this many dB.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Stabilizer added to both energies inside the loss ratio.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiSdrResult<S> {
    /// Clamped to `[-100, 100]` dB.
    pub value_db: S,
    /// Unclamped value; infinite when the estimate is exactly proportional
    /// to the reference or orthogonal to it.
    pub raw_db: S,
    /// Projection coefficient `est . ref / ||ref||^2`.
    pub alpha: S,
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn check_pair<S: Scalar>(est: &[S], reference: &[S]) -> Result<S> {
    if est.len() != reference.len() {
        return Err(Error::shape(format!("estimate of {}", est.len()), format!("reference of {}", reference.len())));
    }
    let energy = dot(reference, reference);
    if energy <= S::zero() {
        return Err(Error::ZeroReference);
    }
    Ok(energy)
}

pub fn si_sdr<S: Scalar>(est: &[S], reference: &[S]) -> Result<SiSdrResult<S>> {
    let ref_energy = check_pair(est, reference)?;
    let cap = S::of(SI_SDR_CAP_DB);
    let alpha = dot(est, reference) / ref_energy;
    if alpha == S::zero() {
        return Ok(SiSdrResult { value_db: -cap, raw_db: S::neg_infinity(), alpha });
    }
    let mut target = S::zero();
    let mut distortion = S::zero();
    for (&e, &r) in est.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        let d = t - e;
        distortion += d * d;
    }
    if distortion == S::zero() {
        return Ok(SiSdrResult { value_db: cap, raw_db: S::infinity(), alpha });
    }
    let raw = S::of(10.0) * (target / distortion).log10();
    Ok(SiSdrResult { value_db: raw.max(-cap).min(cap), raw_db: raw, alpha })
}

/// `si_sdr(est, ref) - si_sdr(mixture, ref)` on clamped values.
pub fn si_sdr_improvement<S: Scalar>(est: &[S], reference: &[S], mixture: &[S]) -> Result<S> {
    Ok(si_sdr(est, reference)?.value_db - si_sdr(mixture, reference)?.value_db)
}

/// Negative SI-SDR with its exact gradient with respect to `est`.
///
/// `loss = -10 log10((||a r||^2 + eps) / (||a r - est||^2 + eps))`,
/// `a = est . r / ||r||^2`.
pub fn neg_si_sdr_loss_and_grad<S: Scalar>(est: &[S], reference: &[S]) -> Result<(S, Vec<S>)> {
    let mut grad = vec![S::zero(); est.len()];
    let loss = neg_si_sdr_accumulate(est, reference, S::one(), &mut grad)?;
    Ok((loss, grad))
}

/// Adds `weight * d loss / d est` into `grad` and returns the unweighted loss.
pub(crate) fn neg_si_sdr_accumulate<S: Scalar>(est: &[S], reference: &[S], weight: S, grad: &mut [S]) -> Result<S> {
    let ref_energy = check_pair(est, reference)?;
    let eps = S::of(LOSS_EPS);
    let cross = dot(est, reference);
    let alpha = cross / ref_energy;
    let est_energy = dot(est, est);
    // ||a r||^2 = (e.r)^2 / ||r||^2 and ||a r - e||^2 = ||e||^2 - ||a r||^2
    let target = alpha * cross;
    let distortion = (est_energy - target).max(S::zero());
    let num = target + eps;
    let den = distortion + eps;
    let scale = S::of(10.0) / S::LN_10();
    let loss = -scale * (num.ln() - den.ln());
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "negative SI-SDR loss".into() });
    }
    // d num / d e = 2 a r,  d den / d e = 2 (e - a r)
    let two = S::of(2.0);
    let c_ref = -scale * weight * two * alpha * (S::one() / num + S::one() / den);
    let c_est = -scale * weight * (-two / den);
    for ((g, &e), &r) in grad.iter_mut().zip(est).zip(reference) {
        *g += c_ref * r + c_est * e;
    }
    Ok(loss)
}
