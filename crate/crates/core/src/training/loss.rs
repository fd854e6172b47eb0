use alloc::format;

use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::tokenizer::Mask;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    L1,
    /// Huber with δ = 1.
    SmoothL1,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mse, LossKind::L1, LossKind::SmoothL1];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::L1 => "l1",
            LossKind::SmoothL1 => "smooth_l1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Elementwise penalty of a residual.
    pub fn penalty(self, d: f64) -> f64 {
        match self {
            LossKind::Mse => d * d,
            LossKind::L1 => d.abs(),
            LossKind::SmoothL1 => {
                if d.abs() < 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                }
            }
        }
    }
}

fn check<T: Scalar>(pred_shape: &[usize], target: &Tensor<T>, mask: &Mask) -> Result<()> {
    let m = mask.masked_count();
    if m == 0 {
        return Err(Error::EmptyMask);
    }
    if pred_shape.len() != 2 || pred_shape[0] != mask.len() {
        return Err(Error::shape("masked_loss", format!("pred {pred_shape:?} for mask of {}", mask.len())));
    }
    if target.rank() != 2 || target.rows() != m || target.cols() != pred_shape[1] {
        return Err(Error::shape(
            "masked_loss",
            format!("target {:?} for {m} masked rows of width {}", target.shape(), pred_shape[1]),
        ));
    }
    Ok(())
}

/// Mean penalty over the masked rows of `pred` (`[N, K]`) against `target`
/// (`[M, K]`, masked-index order). Visible rows never contribute.
pub fn masked_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mask: &Mask, kind: LossKind) -> Result<f64> {
    check(pred.shape(), target, mask)?;
    let mut sum = 0.0;
    for (r, i) in mask.masked_indices().into_iter().enumerate() {
        for (a, b) in pred.row(i).iter().zip(target.row(r)) {
            sum += kind.penalty(a.as_f64() - b.as_f64());
        }
    }
    Ok(sum / target.numel() as f64)
}

/// Differentiable form of [`masked_loss`].
pub fn masked_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    mask: &Mask,
    kind: LossKind,
) -> Result<Var> {
    check(tape.value(pred).shape(), target, mask)?;
    let sel = tape.gather_rows(pred, &mask.masked_indices())?;
    let t = tape.constant(target.clone())?;
    let d = tape.sub(sel, t)?;
    let e = match kind {
        LossKind::Mse => tape.square(d)?,
        LossKind::L1 => tape.abs(d)?,
        LossKind::SmoothL1 => tape.smooth_l1(d)?,
    };
    tape.mean(e)
}

/// `space + λ·time` with absent terms dropped.
pub fn total_loss(space: Option<f64>, time: Option<f64>, lambda: f64) -> Result<f64> {
    match (space, time) {
        (None, None) => Err(Error::invalid("total_loss", "no loss component present")),
        (s, t) => Ok(s.unwrap_or(0.0) + t.map_or(0.0, |t| lambda * t)),
    }
}

/// Differentiable form of [`total_loss`].
pub fn total_loss_var<T: Scalar>(tape: &mut Tape<T>, space: Option<Var>, time: Option<Var>, lambda: f64) -> Result<Var> {
    match (space, time) {
        (None, None) => Err(Error::invalid("total_loss", "no loss component present")),
        (Some(s), None) => Ok(s),
        (None, Some(t)) => tape.scale(t, T::from_f64(lambda)),
        (Some(s), Some(t)) => {
            let t = tape.scale(t, T::from_f64(lambda))?;
            tape.add(s, t)
        }
    }
}
