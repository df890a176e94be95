use super::NetError;
use crate::nnengine::{Scalar, Tensor};

pub const BACKGROUND_WEIGHT: f64 = 0.1;
pub const FOREGROUND_WEIGHT: f64 = 0.9;

/// Smoothed soft Dice `2 S / (Y + P + 1)` and its derivative with respect to
/// each prediction, given `S = sum p y`, `Y = sum y`, `P = sum p`.
fn dice_terms(s: f64, y: f64, p: f64) -> (f64, f64) {
    let den = y + p + 1.0;
    (2.0 * s / den, 2.0 * s / (den * den))
}

/// Weighted soft Dice loss `1 - (0.1 D_bg + 0.9 D_fg)`, averaged over the
/// batch, together with its gradient with respect to `pred`.
///
/// The background term applies the same formula to `1 - p` and `1 - y`.
pub fn weighted_dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>), NetError> {
    target.ensure_shape(pred.shape(), "dice target")?;
    if let Some(i) = target.data().iter().position(|&v| v != T::zero() && v != T::one()) {
        return Err(NetError::Target {
            index: i,
            value: target.data()[i].as_f64(),
        });
    }
    pred.ensure_finite("dice prediction")?;
    let n = pred.batch();
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = 0.0;
    for b in 0..n {
        let p = pred.item(b);
        let y = target.item(b);
        let (mut s_fg, mut y_fg, mut p_fg) = (0.0, 0.0, 0.0);
        let (mut s_bg, mut y_bg, mut p_bg) = (0.0, 0.0, 0.0);
        for (&pv, &yv) in p.iter().zip(y.iter()) {
            let (pv, yv) = (pv.as_f64(), yv.as_f64());
            s_fg += pv * yv;
            y_fg += yv;
            p_fg += pv;
            s_bg += (1.0 - pv) * (1.0 - yv);
            y_bg += 1.0 - yv;
            p_bg += 1.0 - pv;
        }
        let (d_fg, c_fg) = dice_terms(s_fg, y_fg, p_fg);
        let (d_bg, c_bg) = dice_terms(s_bg, y_bg, p_bg);
        total += 1.0 - (BACKGROUND_WEIGHT * d_bg + FOREGROUND_WEIGHT * d_fg);
        let den_fg = y_fg + p_fg + 1.0;
        let den_bg = y_bg + p_bg + 1.0;
        let g = grad.item_mut(b);
        for (gv, &yv) in g.iter_mut().zip(y.iter()) {
            let yv = yv.as_f64();
            // dD/dp_i = 2 y_i / den - 2 S / den^2; the background term sees
            // 1 - p_i, hence the sign flip
            let dfg = 2.0 * yv / den_fg - c_fg;
            let dbg = -(2.0 * (1.0 - yv) / den_bg - c_bg);
            let dl = -(BACKGROUND_WEIGHT * dbg + FOREGROUND_WEIGHT * dfg);
            *gv = T::from_f64_lossy(dl / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}
