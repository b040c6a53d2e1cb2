//! Finite-difference audit of the analytic gradients.

use crate::error::{Error, Result};
use crate::nn::NetworkSegment;
use crate::tensor::Tensor;

/// Loss functions usable with the checker: map (output, labels) to a scalar
/// loss and its gradient with respect to the output.
pub type LossFn<'a> = &'a dyn Fn(&Tensor, &Tensor) -> Result<(f64, Tensor)>;

/// Compares every analytic parameter gradient of `seg` against central
/// differences `(loss(w+h) − loss(w−h)) / 2h` and returns the worst relative
/// error, with the denominator floored at 1 so that near-zero gradients are
/// judged on absolute error.
///
/// The check assumes no ReLU pre-activation sits within `10h` of its kink at
/// the probe point; use [`relu_kink_margin`] to enforce that before calling.
pub fn finite_difference_gradcheck(
    seg: &mut NetworkSegment,
    loss_fn: LossFn,
    input: &Tensor,
    labels: &Tensor,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Argument(format!("step size must be positive, got {h}")));
    }

    seg.zero_grads();
    let out = seg.forward(input)?;
    let (loss, dout) = loss_fn(&out, labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("gradcheck loss".into()));
    }
    seg.backward(&dout)?;
    let analytic: Vec<Tensor> = seg.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    for pi in 0..analytic.len() {
        let n = analytic[pi].len();
        for k in 0..n {
            let original = seg.params()[pi].value.data()[k];

            set_param(seg, pi, k, original + h)?;
            let plus = eval_loss(seg, loss_fn, input, labels)?;
            set_param(seg, pi, k, original - h)?;
            let minus = eval_loss(seg, loss_fn, input, labels)?;
            set_param(seg, pi, k, original)?;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    seg.zero_grads();
    Ok(worst)
}

fn eval_loss(
    seg: &NetworkSegment,
    loss_fn: LossFn,
    input: &Tensor,
    labels: &Tensor,
) -> Result<f64> {
    let out = seg.infer(input)?;
    let (loss, _) = loss_fn(&out, labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("gradcheck loss".into()));
    }
    Ok(loss)
}

fn set_param(seg: &mut NetworkSegment, pi: usize, k: usize, v: f64) -> Result<()> {
    let p = &mut seg.params_mut()[pi];
    let mut data = p.value.data().to_vec();
    data[k] = v;
    p.value = Tensor::new(p.value.shape().to_vec(), data)?;
    Ok(())
}

/// Smallest |pre-activation| seen by any ReLU in the segment for the given
/// input, or +inf when the segment has no ReLU. Probe points closer to the
/// kink than ~10h make central differences meaningless there.
pub fn relu_kink_margin(seg: &NetworkSegment, input: &Tensor) -> Result<f64> {
    let mut margin = f64::INFINITY;
    let mut x = input.clone();
    for i in 0..seg.layers().len() {
        if matches!(seg.layers()[i], crate::nn::LayerSpec::ReLU) {
            for &v in x.data() {
                margin = margin.min(v.abs());
            }
        }
        x = seg.infer_layer(i, &x)?;
    }
    Ok(margin)
}
