//! Attention-weighted Epanechnikov mean-shift, on raw points and on a tape.

use std::collections::HashMap;

use crate::autodiff::{AutodiffError, CustomOp, Tape, Tensor, Var};
use crate::mesh::Point;

/// Epanechnikov kernel `max(1 - d2 / h^2, 0)` of a squared distance.
#[inline]
pub fn epanechnikov(d2: f64, h: f64) -> f64 {
    (1.0 - d2 / (h * h)).max(0.0)
}

/// Uniform grid hash with cell size `h` for fixed-radius queries.
struct CellGrid {
    h: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl CellGrid {
    fn new(points: &[[f64; 3]], h: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, h)).or_default().push(i);
        }
        Self { h, cells }
    }

    fn key(p: &[f64; 3], h: f64) -> [i64; 3] {
        [(p[0] / h).floor() as i64, (p[1] / h).floor() as i64, (p[2] / h).floor() as i64]
    }

    /// Indices `u` with `|p_u - p|^2 < h^2`, with their squared distances,
    /// in a fixed order.
    fn window(&self, points: &[[f64; 3]], p: &[f64; 3], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let k = Self::key(p, self.h);
        let h2 = self.h * self.h;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &u in list {
                            let q = &points[u];
                            let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
                            if d2 < h2 {
                                out.push((u, d2));
                            }
                        }
                    }
                }
            }
        }
    }
}

fn rows3(t: &Tensor) -> Vec<[f64; 3]> {
    (0..t.rows()).map(|r| {
        let s = t.row_slice(r);
        [s[0], s[1], s[2]]
    }).collect()
}

/// One mean-shift step. A point whose window carries zero weight stays put.
fn step(points: &[[f64; 3]], attention: &[f64], h: f64) -> Vec<[f64; 3]> {
    let grid = CellGrid::new(points, h);
    let mut window = Vec::new();
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        grid.window(points, p, &mut window);
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for &(u, d2) in &window {
            let w = attention[u] * epanechnikov(d2, h);
            den += w;
            for c in 0..3 {
                num[c] += w * points[u][c];
            }
        }
        if den > 0.0 {
            out.push([num[0] / den, num[1] / den, num[2] / den]);
        } else {
            out.push(*p);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ConvergeReport {
    pub points: Vec<Point>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates until no point moves more than `eps` (or `max_iter` steps).
pub fn mean_shift_converge(points: &[Point], attention: &[f64], h: f64, eps: f64, max_iter: usize) -> ConvergeReport {
    let mut cur: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let next = step(&cur, attention, h);
        iterations += 1;
        let shift = cur
            .iter()
            .zip(&next)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        cur = next;
        if shift <= eps {
            converged = true;
            break;
        }
    }
    ConvergeReport { points: cur.into_iter().map(|p| Point::new(p[0], p[1], p[2])).collect(), iterations, converged }
}

struct MeanShiftOp;

impl CustomOp for MeanShiftOp {
    fn name(&self) -> &'static str {
        "mean_shift_step"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let q = rows3(inputs[0]);
        let a = inputs[1].data();
        let log_h = inputs[2].item();
        let h = log_h.exp();
        let h2 = h * h;
        let n = q.len();
        let mut dq = Tensor::zeros(n, 3);
        let mut da = Tensor::zeros(n, 1);
        let mut dlogh = 0.0;
        let grid = CellGrid::new(&q, h);
        let mut window = Vec::new();
        for v in 0..n {
            let g = grad.row_slice(v);
            grid.window(&q, &q[v], &mut window);
            let s: f64 = window.iter().map(|&(u, d2)| a[u] * epanechnikov(d2, h)).sum();
            if !(s > 0.0) {
                for c in 0..3 {
                    dq.data_mut()[v * 3 + c] += g[c];
                }
                continue;
            }
            let out = output.row_slice(v);
            for &(u, d2) in &window {
                let k = epanechnikov(d2, h);
                let w = a[u] * k;
                // dL/dw_uv through the normalized weighted mean.
                let c_uv: f64 = (0..3).map(|c| g[c] * (q[u][c] - out[c])).sum::<f64>() / s;
                for c in 0..3 {
                    dq.data_mut()[u * 3 + c] += w * g[c] / s;
                }
                da.data_mut()[u] += c_uv * k;
                if k > 0.0 {
                    let dk = c_uv * a[u];
                    dlogh += dk * 2.0 * d2 / h2;
                    let dd2 = -dk / h2;
                    for c in 0..3 {
                        let diff = 2.0 * (q[u][c] - q[v][c]) * dd2;
                        dq.data_mut()[u * 3 + c] += diff;
                        dq.data_mut()[v * 3 + c] -= diff;
                    }
                }
            }
        }
        vec![dq, da, Tensor::scalar(dlogh)]
    }
}

fn check_inputs(tape: &Tape, q: Var, a: Var, log_h: Var) -> Result<(), AutodiffError> {
    let (tq, ta, th) = (tape.value(q), tape.value(a), tape.value(log_h));
    if tq.cols() != 3 || ta.shape() != [tq.rows(), 1] || th.shape() != [1, 1] {
        return Err(AutodiffError::ShapeMismatch {
            op: "mean_shift_step",
            detail: format!("q {:?}, a {:?}, log_h {:?}", tq.shape(), ta.shape(), th.shape()),
        });
    }
    Ok(())
}

/// One differentiable step on `q [N,3]` with attention `a [N,1]` and
/// bandwidth `exp(log_h)`, sparse over each point's kernel window.
pub fn mean_shift_step(tape: &mut Tape, q: Var, a: Var, log_h: Var) -> Result<Var, AutodiffError> {
    check_inputs(tape, q, a, log_h)?;
    let pts = rows3(tape.value(q));
    let h = tape.value(log_h).item().exp();
    let next = step(&pts, tape.value(a).data(), h);
    let out = Tensor::from_rows(&next);
    tape.custom(&[q, a, log_h], out, Box::new(MeanShiftOp))
}

/// The same step composed from dense primitive ops (`O(N^2)` memory).
/// Every point must carry positive attention.
pub fn mean_shift_step_dense(tape: &mut Tape, q: Var, a: Var, log_h: Var) -> Result<Var, AutodiffError> {
    check_inputs(tape, q, a, log_h)?;
    let n = tape.value(q).rows();
    let d = tape.sq_dist(q, q)?;
    let m2 = tape.scale(log_h, -2.0)?;
    let inv_h2 = tape.exp(m2)?;
    let inv_col = tape.gather(inv_h2, &vec![0; n])?;
    let scaled = tape.mul_col(d, inv_col)?;
    let neg = tape.neg(scaled)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    let k = tape.relu(one_minus)?;
    // K is symmetric, so scaling its rows by a_u and transposing gives w[v,u] = a_u K[v,u].
    let wt = tape.mul_col(k, a)?;
    let w = tape.transpose(wt)?;
    let num = tape.matmul(w, q)?;
    let den = tape.sum_axis(w, 1)?;
    tape.div_col(num, den)
}

/// `steps` unrolled differentiable iterations.
pub fn mean_shift_unrolled(tape: &mut Tape, q: Var, a: Var, log_h: Var, steps: usize) -> Result<Var, AutodiffError> {
    let mut cur = q;
    for _ in 0..steps {
        cur = mean_shift_step(tape, cur, a, log_h)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_is_fixed() {
        let r = mean_shift_converge(&[Point::new(0.1, 0.2, 0.3)], &[1.0], 0.05, 1e-3, 10);
        assert_eq!(r.points, vec![Point::new(0.1, 0.2, 0.3)]);
        assert!(r.converged);
    }

    #[test]
    fn distant_points_do_not_move() {
        let pts = [Point::new(0.0, 0.0, 0.0), Point::new(0.2, 0.0, 0.0)];
        let r = mean_shift_converge(&pts, &[1.0, 1.0], 0.1, 1e-3, 10);
        assert_eq!(r.points, pts.to_vec());
    }

    #[test]
    fn zero_weight_window_stays_fixed() {
        let pts = [Point::new(0.0, 0.0, 0.0), Point::new(0.01, 0.0, 0.0)];
        let r = mean_shift_converge(&pts, &[0.0, 0.0], 0.1, 1e-3, 10);
        assert_eq!(r.points, pts.to_vec());
    }
}
