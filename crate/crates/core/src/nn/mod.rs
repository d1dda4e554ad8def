//! Dense layers, MLPs and the mesh graph convolution networks.

mod gmedge;
mod losses;

pub use gmedge::{
    gmedge_conv_edgewise, GMEdgeConv, GMEdgeNet, GMEdgeNetConfig, NeighborIndex, SkinNet, SkinNetConfig, Trunk,
    TrunkConfig,
};
pub use losses::{bce_with_logits, log_softmax_rows, soft_cross_entropy};

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};

/// Slope of every hidden LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

/// `y = x W + b` with `W` stored as `<name>.w` (`in x out`) and `b` as `<name>.b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self { name: name.into(), in_dim, out_dim }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        store.insert(self.weight_name(), Tensor::glorot(self.in_dim, self.out_dim, rng))?;
        store.insert(self.bias_name(), Tensor::zeros(1, self.out_dim))
    }

    pub fn init_zero(&self, store: &mut ParamStore) -> Result<(), AutodiffError> {
        store.insert(self.weight_name(), Tensor::zeros(self.in_dim, self.out_dim))?;
        store.insert(self.bias_name(), Tensor::zeros(1, self.out_dim))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, &self.weight_name())?;
        let b = tape.param(store, &self.bias_name())?;
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Stack of [`Linear`] layers with LeakyReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activate_last: bool,
}

impl Mlp {
    /// `widths` includes the input width, so `[a, b, c]` is two layers.
    pub fn new(prefix: &str, widths: &[usize], activate_last: bool) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths.windows(2).enumerate().map(|(i, w)| Linear::new(format!("{prefix}.{i}"), w[0], w[1])).collect();
        Self { layers, activate_last }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    /// Zeroes the final layer so the MLP initially outputs zero.
    pub fn init_zero_last<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            if i + 1 == n {
                l.init_zero(store)?;
            } else {
                l.init(store, rng)?;
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let first = self.layers[0].forward(tape, store, x)?;
        self.finish(tape, store, first)
    }

    /// `forward` on `[x, context]` with the single `context` row repeated for
    /// every row of `x`. The context half of the first layer runs once.
    pub fn forward_with_context(&self, tape: &mut Tape, store: &ParamStore, x: Var, context: Var) -> Result<Var, AutodiffError> {
        let l = &self.layers[0];
        let split = tape.value(x).cols();
        let w = tape.param(store, &l.weight_name())?;
        let b = tape.param(store, &l.bias_name())?;
        let w_x = tape.slice_rows(w, 0, split)?;
        let w_c = tape.slice_rows(w, split, l.in_dim)?;
        let c = tape.matmul(context, w_c)?;
        let c = tape.add(c, b)?;
        let y = tape.matmul(x, w_x)?;
        let first = tape.add_row(y, c)?;
        self.finish(tape, store, first)
    }

    /// Activation after the first layer, then the remaining layers.
    fn finish(&self, tape: &mut Tape, store: &ParamStore, first: Var) -> Result<Var, AutodiffError> {
        let n = self.layers.len();
        let mut h = first;
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                h = l.forward(tape, store, h)?;
            }
            if i + 1 < n || self.activate_last {
                h = tape.leaky_relu(h, LEAKY_SLOPE)?;
            }
        }
        Ok(h)
    }
}

/// Scales a hidden width, keeping at least `min`.
pub fn scale_width(width: usize, factor: f64, min: usize) -> usize {
    ((width as f64 * factor).round() as usize).max(min)
}

/// Max-pools rows and tiles the result back to `rows` rows.
pub fn pool_and_tile(tape: &mut Tape, x: Var, rows: usize) -> Result<(Var, Var), AutodiffError> {
    let pooled = tape.max_reduce(x, 0)?;
    let tiled = tape.gather(pooled, &vec![0; rows])?;
    Ok((pooled, tiled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::GradCheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn context_split_matches_tiled_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new("m", &[7, 6, 2], false);
        let mut store = ParamStore::new();
        mlp.init(&mut store, &mut rng).unwrap();
        let x = Tensor::uniform(5, 3, -1.0, 1.0, &mut rng);
        let c = Tensor::uniform(1, 4, -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, cv) = (tape.constant(x.clone()).unwrap(), tape.constant(c.clone()).unwrap());
        let split = mlp.forward_with_context(&mut tape, &store, xv, cv).unwrap();
        let tiled = tape.gather(cv, &[0; 5]).unwrap();
        let cat = tape.concat(&[xv, tiled], 1).unwrap();
        let full = mlp.forward(&mut tape, &store, cat).unwrap();
        for (a, b) in tape.value(split).data().iter().zip(tape.value(full).data()) {
            assert!((a - b).abs() < 1e-14);
        }
        let report = GradCheck::default()
            .run(&store, &mut rng, |t, s| {
                let xv = t.constant(x.clone())?;
                let cv = t.constant(c.clone())?;
                let y = mlp.forward_with_context(t, s, xv, cv)?;
                let y = t.square(y)?;
                t.sum(y)
            })
            .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }
}
