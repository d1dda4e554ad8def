//! Central finite-difference checks of tape gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{AutodiffError, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central difference step.
    pub eps: f64,
    /// Denominator floor for the relative error, so exact zeros compare cleanly.
    pub floor: f64,
    /// Entries sampled per parameter; `None` checks every entry.
    pub samples_per_param: Option<usize>,
    /// Extra steps at `eps / 10`, `eps / 100`, ... Of the adjacent pair of
    /// estimates that agree best, the larger step is kept. Large steps can
    /// straddle a kink, small ones drown in roundoff.
    pub ladder: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { eps: 1e-5, floor: 1e-6, samples_per_param: None, ladder: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// First estimate of the adjacent pair with the smallest relative gap.
fn most_consistent(estimates: &[f64], floor: f64) -> f64 {
    let mut best = (f64::INFINITY, estimates[0]);
    for w in estimates.windows(2) {
        let gap = relative_error(w[0], w[1], floor);
        if gap < best.0 {
            best = (gap, w[0]);
        }
    }
    best.1
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheck {
    /// Compares `d loss / d param` for parameters of `store` against central differences.
    /// `loss` must read parameters through [`Tape::param`].
    pub fn run<F, R>(&self, store: &ParamStore, rng: &mut R, loss: F) -> Result<GradCheckReport, AutodiffError>
    where
        F: Fn(&mut Tape, &ParamStore) -> Result<Var, AutodiffError>,
        R: Rng + ?Sized,
    {
        let mut tape = Tape::new();
        let out = loss(&mut tape, store)?;
        let grads = tape.backward(out)?.for_store(store);

        let eval = |s: &ParamStore| -> Result<f64, AutodiffError> {
            let mut t = Tape::new();
            let v = loss(&mut t, s)?;
            Ok(t.value(v).item())
        };

        let mut report = GradCheckReport::default();
        let mut probe = store.clone();
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let base = store.get(&name).expect("listed").clone();
            let n = base.len();
            let entries: Vec<usize> = match self.samples_per_param {
                Some(k) if k < n => sample(rng, n, k).into_vec(),
                _ => (0..n).collect(),
            };
            for i in entries {
                let mut estimates = Vec::with_capacity(self.ladder + 1);
                let mut eps = self.eps;
                for _ in 0..=self.ladder {
                    let mut plus = base.clone();
                    plus.data_mut()[i] += eps;
                    probe.set(&name, plus)?;
                    let fp = eval(&probe)?;
                    let mut minus = base.clone();
                    minus.data_mut()[i] -= eps;
                    probe.set(&name, minus)?;
                    let fm = eval(&probe)?;
                    estimates.push((fp - fm) / (2.0 * eps));
                    eps /= 10.0;
                }
                probe.set(&name, base.clone())?;
                let numeric = most_consistent(&estimates, self.floor);
                let analytic = grads[&name].data()[i];
                let err = relative_error(analytic, numeric, self.floor);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    if err >= report.max_rel_error {
                        report.worst = Some((name.clone(), i, analytic, numeric));
                    }
                }
            }
        }
        Ok(report)
    }
}
