//! Objective terms: adversarial (logistic by default, least-squares behind a
//! config flag), cycle-consistency, identity, categorical cross-entropy, and
//! their weighted compositions. All reductions are means over every element
//! (batch, channels, patches), so magnitudes are resolution-independent.
//!
//! Each term has a value-only form and a `*_grad` form returning the
//! gradient with respect to its tensor inputs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{AdversarialObjective, LossWeights};
use crate::error::{Error, Result};
use crate::nn::{rf, Images, Real};

/// Which side of the adversarial game is being optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvSide {
    Generator,
    Discriminator,
}

fn check_finite<F: Real>(name: &str, xs: &Images<F>) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { what: name.into() });
    }
    Ok(())
}

/// Numerically stable ln(1 + e^x).
#[inline]
fn softplus<F: Real>(x: F) -> F {
    if x > F::zero() {
        x + (F::one() + (-x).exp()).ln()
    } else {
        (F::one() + x.exp()).ln()
    }
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Spec-facing entry point: scores on real and fake, one side of the game.
/// The generator side only consumes the fake-map scores.
pub fn adversarial_loss<F: Real>(
    real_scores: &Images<F>,
    fake_scores: &Images<F>,
    side: AdvSide,
    objective: AdversarialObjective,
) -> Result<F> {
    match side {
        AdvSide::Generator => generator_adversarial_loss(fake_scores, objective),
        AdvSide::Discriminator => {
            discriminator_adversarial_loss(real_scores, fake_scores, objective)
                .map(|(loss, _, _)| loss)
        }
    }
}

/// Non-saturating generator objective: mean of -log sigma(fake) (logistic)
/// or mean of (fake - 1)^2 (least squares).
pub fn generator_adversarial_loss<F: Real>(
    fake_scores: &Images<F>,
    objective: AdversarialObjective,
) -> Result<F> {
    generator_adversarial_grad(fake_scores, objective).map(|(l, _)| l)
}

pub fn generator_adversarial_grad<F: Real>(
    fake_scores: &Images<F>,
    objective: AdversarialObjective,
) -> Result<(F, Images<F>)> {
    check_finite("generator adversarial scores", fake_scores)?;
    let n = rf::<F>(fake_scores.len() as f64);
    match objective {
        AdversarialObjective::Logistic => {
            let loss = fake_scores.iter().map(|&v| softplus(-v)).sum::<F>() / n;
            let grad = fake_scores.mapv(|v| -(F::one() - sigmoid(v)) / n);
            Ok((loss, grad))
        }
        AdversarialObjective::LeastSquares => {
            let loss = fake_scores
                .iter()
                .map(|&v| (v - F::one()) * (v - F::one()))
                .sum::<F>()
                / n;
            let grad = fake_scores.mapv(|v| rf::<F>(2.0) * (v - F::one()) / n);
            Ok((loss, grad))
        }
    }
}

/// Discriminator objective with gradients for both score maps:
/// mean[-log sigma(real)] + mean[-log(1 - sigma(fake))] (logistic), or
/// mean[(real-1)^2] + mean[fake^2] (least squares).
pub fn discriminator_adversarial_loss<F: Real>(
    real_scores: &Images<F>,
    fake_scores: &Images<F>,
    objective: AdversarialObjective,
) -> Result<(F, Images<F>, Images<F>)> {
    check_finite("discriminator real scores", real_scores)?;
    check_finite("discriminator fake scores", fake_scores)?;
    let nr = rf::<F>(real_scores.len() as f64);
    let nf = rf::<F>(fake_scores.len() as f64);
    match objective {
        AdversarialObjective::Logistic => {
            let real_term = real_scores.iter().map(|&v| softplus(-v)).sum::<F>() / nr;
            let fake_term = fake_scores.iter().map(|&v| softplus(v)).sum::<F>() / nf;
            let dreal = real_scores.mapv(|v| -(F::one() - sigmoid(v)) / nr);
            let dfake = fake_scores.mapv(|v| sigmoid(v) / nf);
            Ok((real_term + fake_term, dreal, dfake))
        }
        AdversarialObjective::LeastSquares => {
            let real_term = real_scores
                .iter()
                .map(|&v| (v - F::one()) * (v - F::one()))
                .sum::<F>()
                / nr;
            let fake_term = fake_scores.iter().map(|&v| v * v).sum::<F>() / nf;
            let dreal = real_scores.mapv(|v| rf::<F>(2.0) * (v - F::one()) / nr);
            let dfake = fake_scores.mapv(|v| rf::<F>(2.0) * v / nf);
            Ok((real_term + fake_term, dreal, dfake))
        }
    }
}

/// Mean absolute error over every element.
pub fn mean_abs<F: Real>(a: &Images<F>, b: &Images<F>) -> Result<F> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            got: format!("{:?}", b.shape()),
        });
    }
    let n = rf::<F>(a.len() as f64);
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        s += (x - y).abs();
    }
    Ok(s / n)
}

/// d mean|a - b| / da, scaled by `weight`.
fn mean_abs_grad<F: Real>(a: &Images<F>, b: &Images<F>, weight: f64) -> Images<F> {
    let scale = rf::<F>(weight / a.len() as f64);
    let mut g = a.clone();
    g.zip_mut_with(b, |av, &bv| {
        *av = if *av > bv {
            scale
        } else if *av < bv {
            -scale
        } else {
            F::zero()
        };
    });
    g
}

/// eta1 * mean|rec_source - source| + eta2 * mean|rec_target - target|.
pub fn cycle_loss<F: Real>(
    source: &Images<F>,
    rec_source: &Images<F>,
    target: &Images<F>,
    rec_target: &Images<F>,
    eta1: f64,
    eta2: f64,
) -> Result<F> {
    Ok(rf::<F>(eta1) * mean_abs(rec_source, source)? + rf::<F>(eta2) * mean_abs(rec_target, target)?)
}

/// Gradients of `cycle_loss` with respect to the two reconstructions.
pub fn cycle_loss_grad<F: Real>(
    source: &Images<F>,
    rec_source: &Images<F>,
    target: &Images<F>,
    rec_target: &Images<F>,
    eta1: f64,
    eta2: f64,
) -> Result<(F, Images<F>, Images<F>)> {
    let loss = cycle_loss(source, rec_source, target, rec_target, eta1, eta2)?;
    Ok((
        loss,
        mean_abs_grad(rec_source, source, eta1),
        mean_abs_grad(rec_target, target, eta2),
    ))
}

/// eta3 * mean|idt_target - target| + eta4 * mean|idt_source - source|,
/// where idt_target is the source->target generator applied to real target
/// images (and vice versa).
pub fn identity_loss<F: Real>(
    target: &Images<F>,
    idt_target: &Images<F>,
    source: &Images<F>,
    idt_source: &Images<F>,
    eta3: f64,
    eta4: f64,
) -> Result<F> {
    Ok(rf::<F>(eta3) * mean_abs(idt_target, target)? + rf::<F>(eta4) * mean_abs(idt_source, source)?)
}

pub fn identity_loss_grad<F: Real>(
    target: &Images<F>,
    idt_target: &Images<F>,
    source: &Images<F>,
    idt_source: &Images<F>,
    eta3: f64,
    eta4: f64,
) -> Result<(F, Images<F>, Images<F>)> {
    let loss = identity_loss(target, idt_target, source, idt_source, eta3, eta4)?;
    Ok((
        loss,
        mean_abs_grad(idt_target, target, eta3),
        mean_abs_grad(idt_source, source, eta4),
    ))
}

/// Adversarial + cycle + identity pieces of one step, before mixing.
#[derive(Debug, Clone, Copy)]
pub struct CycleGanParts<F: Real> {
    pub adv_gen_st: F,
    pub adv_gen_ts: F,
    pub cycle: F,
    pub identity: F,
}

/// lambda_a * (adv_st + adv_ts) + lambda_b * cycle + lambda_c * identity.
pub fn cyclegan_total<F: Real>(parts: &CycleGanParts<F>, w: &LossWeights) -> F {
    rf::<F>(w.lambda_a) * (parts.adv_gen_st + parts.adv_gen_ts)
        + rf::<F>(w.lambda_b) * parts.cycle
        + rf::<F>(w.lambda_c) * parts.identity
}

/// Batch-mean negative log softmax probability of the true class.
pub fn cross_entropy<F: Real>(logits: &Array2<F>, labels: &[usize]) -> Result<F> {
    cross_entropy_grad(logits, labels).map(|(l, _)| l)
}

/// Loss plus gradient w.r.t. logits: (softmax - onehot) / B.
pub fn cross_entropy_grad<F: Real>(
    logits: &Array2<F>,
    labels: &[usize],
) -> Result<(F, Array2<F>)> {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            expected: format!("{b} labels"),
            got: format!("{}", labels.len()),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            what: "logits".into(),
        });
    }
    for &l in labels {
        if l >= k {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes: k,
            });
        }
    }
    let bf = rf::<F>(b as f64);
    let mut loss = F::zero();
    let mut grad = Array2::<F>::zeros((b, k));
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut denom = F::zero();
        for &v in row.iter() {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss += log_denom - (row[labels[i]] - max);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / denom;
            let target = if j == labels[i] { F::one() } else { F::zero() };
            grad[[i, j]] = (p - target) / bf;
        }
    }
    Ok((loss / bf, grad))
}

/// Per-step loss record: every component plus the composed total.
/// The discriminator terms are tracked for reporting; they do not enter the
/// generator-side total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_gen_st: f64,
    pub adv_gen_ts: f64,
    pub adv_disc_source: f64,
    pub adv_disc_target: f64,
    pub cycle: f64,
    pub identity: f64,
    pub ce_source: f64,
    pub ce_target: f64,
    pub lambda_ce: f64,
    pub total: f64,
}

/// Compose the transductive total from CycleGAN and classifier pieces:
/// total = cyclegan + lambda_ce * (ce_source + ce_target).
pub fn transductive_total<F: Real>(cyclegan: F, ce_source: F, ce_target: F, lambda_ce: f64) -> F {
    cyclegan + rf::<F>(lambda_ce) * (ce_source + ce_target)
}

impl LossBreakdown {
    #[allow(clippy::too_many_arguments)]
    pub fn compose<F: Real>(
        parts: &CycleGanParts<F>,
        adv_disc_source: F,
        adv_disc_target: F,
        ce_source: F,
        ce_target: F,
        weights: &LossWeights,
    ) -> LossBreakdown {
        let cyclegan = cyclegan_total(parts, weights);
        let total = transductive_total(cyclegan, ce_source, ce_target, weights.lambda_ce);
        LossBreakdown {
            adv_gen_st: parts.adv_gen_st.to_f64c(),
            adv_gen_ts: parts.adv_gen_ts.to_f64c(),
            adv_disc_source: adv_disc_source.to_f64c(),
            adv_disc_target: adv_disc_target.to_f64c(),
            cycle: parts.cycle.to_f64c(),
            identity: parts.identity.to_f64c(),
            ce_source: ce_source.to_f64c(),
            ce_target: ce_target.to_f64c(),
            lambda_ce: weights.lambda_ce,
            total: total.to_f64c(),
        }
    }

    /// The composition identity the record must satisfy.
    pub fn composition_residual(&self, w: &LossWeights) -> f64 {
        let expect = w.lambda_a * (self.adv_gen_st + self.adv_gen_ts)
            + w.lambda_b * self.cycle
            + w.lambda_c * self.identity
            + self.lambda_ce * (self.ce_source + self.ce_target);
        (self.total - expect).abs()
    }
}
