use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tape, Var};

/// Smoothing constant of the Dice loss.
pub const DICE_EPS: f64 = 1e-6;

fn check_shapes<T: Real>(op: &'static str, tape: &Tape<T>, pred: Var, target: Var) -> Result<()> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::shape(op, tape.shape(pred), tape.shape(target)));
    }
    Ok(())
}

/// `-(1/N) Σ [y log ŷ + (1-y) log(1-ŷ)]`, with both log arguments clamped at 1e-12.
pub fn bce_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    check_shapes("bce_loss", tape, pred, target)?;
    let log_p = tape.log(pred)?;
    let neg_p = tape.scale(pred, -T::one())?;
    let one_minus_p = tape.add_scalar(neg_p, T::one())?;
    let log_q = tape.log(one_minus_p)?;
    let neg_y = tape.scale(target, -T::one())?;
    let one_minus_y = tape.add_scalar(neg_y, T::one())?;
    let pos = tape.mul(target, log_p)?;
    let neg = tape.mul(one_minus_y, log_q)?;
    let both = tape.add(pos, neg)?;
    let mean = tape.mean(both)?;
    tape.scale(mean, -T::one())
}

/// `1 - 2(Σ yŷ + ε) / (Σ y + Σ ŷ + ε)`.
pub fn dice_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var, eps: f64) -> Result<Var> {
    check_shapes("dice_loss", tape, pred, target)?;
    if eps <= 0.0 {
        return Err(Error::invalid(
            "dice_loss",
            format!("epsilon must be positive, got {eps}"),
        ));
    }
    let eps = T::of(eps);
    let prod = tape.mul(target, pred)?;
    let inter = tape.sum(prod)?;
    let inter = tape.add_scalar(inter, eps)?;
    let num = tape.scale(inter, T::of(2.0))?;
    let sy = tape.sum(target)?;
    let sp = tape.sum(pred)?;
    let den = tape.add(sy, sp)?;
    let den = tape.add_scalar(den, eps)?;
    let ratio = tape.div(num, den)?;
    let neg = tape.scale(ratio, -T::one())?;
    tape.add_scalar(neg, T::one())
}
