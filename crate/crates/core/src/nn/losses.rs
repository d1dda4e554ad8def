//! Numerically stable loss building blocks.

use crate::autodiff::{sigmoid, AutodiffError, CustomOp, Tape, Tensor, Var};

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Bce {
    targets: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl CustomOp for Bce {
    fn name(&self) -> &'static str {
        "bce_with_logits"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let z = inputs[0];
        let g = grad.item() / self.total;
        let data = z.data().iter().enumerate().map(|(i, &zi)| g * self.weights[i] * (sigmoid(zi) - self.targets[i])).collect();
        vec![Tensor::new(z.rows(), z.cols(), data).expect("same shape")]
    }
}

/// Weighted mean binary cross-entropy of `sigmoid(logits)` against `targets`:
/// `sum_i w_i l_i / sum_i w_i`. Entries with zero weight are ignored.
pub fn bce_with_logits(tape: &mut Tape, logits: Var, targets: &[f64], weights: Option<&[f64]>) -> Result<Var, AutodiffError> {
    let z = tape.value(logits);
    let n = z.len();
    let weights = weights.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; n]);
    if targets.len() != n || weights.len() != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "bce_with_logits",
            detail: format!("{n} logits, {} targets, {} weights", targets.len(), weights.len()),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(AutodiffError::ShapeMismatch { op: "bce_with_logits", detail: "weights sum to zero".into() });
    }
    let loss: f64 =
        z.data().iter().zip(targets).zip(&weights).map(|((&zi, &y), &w)| w * (softplus(zi) - y * zi)).sum::<f64>() / total;
    tape.custom(&[logits], Tensor::scalar(loss), Box::new(Bce { targets: targets.to_vec(), weights, total }))
}

struct LogSoftmax;

impl CustomOp for LogSoftmax {
    fn name(&self) -> &'static str {
        "log_softmax"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let mut d = Tensor::zeros(output.rows(), output.cols());
        for r in 0..output.rows() {
            let (y, g) = (output.row_slice(r), grad.row_slice(r));
            let gsum: f64 = g.iter().sum();
            for (c, o) in d.row_slice_mut(r).iter_mut().enumerate() {
                *o = g[c] - y[c].exp() * gsum;
            }
        }
        vec![d]
    }
}

/// Row-wise `log(softmax(x))` computed with the max-shift trick.
pub fn log_softmax_rows(tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
    let mut out = tape.value(x).clone();
    for r in 0..out.rows() {
        let row = out.row_slice_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    tape.custom(&[x], out, Box::new(LogSoftmax))
}

/// `-(1/R) sum_r sum_c target[r,c] * log_softmax(logits)[r,c]`.
pub fn soft_cross_entropy(tape: &mut Tape, logits: Var, target: &Tensor) -> Result<Var, AutodiffError> {
    let rows = tape.value(logits).rows();
    let lp = log_softmax_rows(tape, logits)?;
    let t = tape.constant(target.clone())?;
    let prod = tape.mul(lp, t)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0 / rows as f64)
}
