//! GMEdgeConv and the GMEdgeNet family built on it.

use rand::Rng;

use super::{pool_and_tile, scale_width, Linear, Mlp, LEAKY_SLOPE};
use crate::autodiff::{AutodiffError, CustomOp, ParamStore, Tape, Tensor, Var};
use crate::mesh::VertexGraph;

/// Directed edge lists `(source u, target v)` for both neighborhoods.
/// A vertex with an empty list gets a self-loop.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborIndex {
    pub vertex_count: usize,
    pub ring: (Vec<usize>, Vec<usize>),
    pub geo: (Vec<usize>, Vec<usize>),
}

impl NeighborIndex {
    pub fn new(graph: &VertexGraph) -> Self {
        let edges = |lists: &[Vec<usize>]| {
            let mut src = Vec::new();
            let mut tgt = Vec::new();
            for (v, list) in lists.iter().enumerate() {
                if list.is_empty() {
                    src.push(v);
                    tgt.push(v);
                }
                for &u in list {
                    src.push(u);
                    tgt.push(v);
                }
            }
            (src, tgt)
        };
        Self {
            vertex_count: graph.ring_neighbors.len(),
            ring: edges(&graph.ring_neighbors),
            geo: edges(&graph.geodesic_neighbors),
        }
    }
}

/// `out[v] = max over edges (u -> v) of x[u]`, per column; ties keep the
/// first edge. Every target must have at least one edge.
struct NeighborMax {
    rows: usize,
    argmax: Vec<usize>,
}

impl CustomOp for NeighborMax {
    fn name(&self) -> &'static str {
        "neighbor_max"
    }

    fn backward(&self, _inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let cols = output.cols();
        let mut d = Tensor::zeros(self.rows, cols);
        for (slot, &u) in self.argmax.iter().enumerate() {
            let c = slot % cols;
            d.data_mut()[u * cols + c] += grad.data()[slot];
        }
        vec![d]
    }
}

fn neighbor_max(tape: &mut Tape, x: Var, src: &[usize], tgt: &[usize], out_rows: usize) -> Result<Var, AutodiffError> {
    let t = tape.value(x);
    let cols = t.cols();
    let mut out = vec![f64::NEG_INFINITY; out_rows * cols];
    let mut argmax = vec![usize::MAX; out_rows * cols];
    for (&u, &v) in src.iter().zip(tgt) {
        let row = t.row_slice(u);
        let base = v * cols;
        for c in 0..cols {
            if argmax[base + c] == usize::MAX || row[c] > out[base + c] {
                out[base + c] = row[c];
                argmax[base + c] = u;
            }
        }
    }
    if argmax.iter().any(|&a| a == usize::MAX) {
        return Err(AutodiffError::ShapeMismatch { op: "neighbor_max", detail: "vertex without neighbors".into() });
    }
    let rows = t.rows();
    let out = Tensor::new(out_rows, cols, out)?;
    tape.custom(&[x], out, Box::new(NeighborMax { rows, argmax }))
}

/// One GMEdgeConv layer: separate single-layer edge MLPs over the one-ring
/// and geodesic neighborhoods, max-aggregated, concatenated and combined.
#[derive(Clone, Debug, PartialEq)]
pub struct GMEdgeConv {
    pub in_dim: usize,
    pub out_dim: usize,
    pub mesh: Linear,
    pub geo: Linear,
    pub combine: Linear,
}

impl GMEdgeConv {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            mesh: Linear::new(format!("{prefix}.mesh"), 2 * in_dim, out_dim),
            geo: Linear::new(format!("{prefix}.geo"), 2 * in_dim, out_dim),
            combine: Linear::new(format!("{prefix}.combine"), 2 * out_dim, out_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        self.mesh.init(store, rng)?;
        self.geo.init(store, rng)?;
        self.combine.init(store, rng)
    }

    /// Evaluates `max_u act([x_v, x_u - x_v] W + b)` as
    /// `act(x_v (W_top - W_bot) + max_u x_u W_bot + b)`, which is exact
    /// because the activation is monotone.
    fn branch(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        lin: &Linear,
        x: Var,
        edges: &(Vec<usize>, Vec<usize>),
        rows: usize,
    ) -> Result<Var, AutodiffError> {
        let w = tape.param(store, &lin.weight_name())?;
        let b = tape.param(store, &lin.bias_name())?;
        let top = tape.slice_rows(w, 0, self.in_dim)?;
        let bot = tape.slice_rows(w, self.in_dim, 2 * self.in_dim)?;
        let diff = tape.sub(top, bot)?;
        let own = tape.matmul(x, diff)?;
        let nb = tape.matmul(x, bot)?;
        let pooled = neighbor_max(tape, nb, &edges.0, &edges.1, rows)?;
        let pre = tape.add(own, pooled)?;
        let pre = tape.add_row(pre, b)?;
        tape.leaky_relu(pre, LEAKY_SLOPE)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, index: &NeighborIndex) -> Result<Var, AutodiffError> {
        let t = tape.value(x);
        if t.cols() != self.in_dim || t.rows() != index.vertex_count {
            return Err(AutodiffError::ShapeMismatch {
                op: "gmedge_conv",
                detail: format!("input {:?}, expected [{}, {}]", t.shape(), index.vertex_count, self.in_dim),
            });
        }
        let rows = index.vertex_count;
        let m = self.branch(tape, store, &self.mesh, x, &index.ring, rows)?;
        let g = self.branch(tape, store, &self.geo, x, &index.geo, rows)?;
        let cat = tape.concat(&[m, g], 1)?;
        let out = self.combine.forward(tape, store, cat)?;
        tape.leaky_relu(out, LEAKY_SLOPE)
    }
}

/// Reference GMEdgeConv that materializes every edge feature
/// `[x_v, x_u - x_v]`. Slow; used to check [`GMEdgeConv::forward`].
pub fn gmedge_conv_edgewise(
    conv: &GMEdgeConv,
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    index: &NeighborIndex,
) -> Result<Var, AutodiffError> {
    let rows = index.vertex_count;
    let mut branch = |lin: &Linear, edges: &(Vec<usize>, Vec<usize>)| -> Result<Var, AutodiffError> {
        let xv = tape.gather(x, &edges.1)?;
        let xu = tape.gather(x, &edges.0)?;
        let d = tape.sub(xu, xv)?;
        let feat = tape.concat(&[xv, d], 1)?;
        let h = lin.forward(tape, store, feat)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        tape.scatter_max(h, &edges.1, rows)
    };
    let m = branch(&conv.mesh, &index.ring)?;
    let g = branch(&conv.geo, &index.geo)?;
    let cat = tape.concat(&[m, g], 1)?;
    let out = conv.combine.forward(tape, store, cat)?;
    tape.leaky_relu(out, LEAKY_SLOPE)
}

/// Three stacked convolutions, a per-vertex MLP over their concatenation
/// and a global max-pool.
#[derive(Clone, Debug, PartialEq)]
pub struct TrunkConfig {
    pub in_dim: usize,
    pub conv: Vec<usize>,
    /// Output widths of the MLP applied to the concatenated conv features.
    pub global: Vec<usize>,
}

impl TrunkConfig {
    /// Joint-stage trunk: convs 3 -> 64 -> 256 -> 512, MLP [832, 1024].
    pub fn joint() -> Self {
        Self { in_dim: 3, conv: vec![64, 256, 512], global: vec![1024] }
    }

    /// Connectivity shape encoder: convs 3 -> 64 -> 128 -> 256, MLP [448, 512, 256, 128].
    pub fn shape_encoder() -> Self {
        Self { in_dim: 3, conv: vec![64, 128, 256], global: vec![512, 256, 128] }
    }

    /// Hidden widths scaled by `factor`. With `keep_output` the last
    /// global width is left unchanged.
    pub fn scaled(&self, factor: f64, keep_output: bool) -> Self {
        let n = self.global.len();
        Self {
            in_dim: self.in_dim,
            conv: self.conv.iter().map(|&w| scale_width(w, factor, 4)).collect(),
            global: self
                .global
                .iter()
                .enumerate()
                .map(|(i, &w)| if keep_output && i + 1 == n { w } else { scale_width(w, factor, 4) })
                .collect(),
        }
    }

    pub fn concat_width(&self) -> usize {
        self.conv.iter().sum()
    }

    pub fn global_width(&self) -> usize {
        *self.global.last().expect("non-empty")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub config: TrunkConfig,
    pub convs: Vec<GMEdgeConv>,
    pub global: Mlp,
}

pub struct TrunkOutput {
    /// `x_0` (the input) followed by each conv output.
    pub layers: Vec<Var>,
    /// Pooled global feature, `1 x G`.
    pub pooled: Var,
    /// Pooled feature tiled to every vertex.
    pub tiled: Var,
}

impl Trunk {
    pub fn new(prefix: &str, config: TrunkConfig) -> Self {
        let mut convs = Vec::new();
        let mut d = config.in_dim;
        for (i, &w) in config.conv.iter().enumerate() {
            convs.push(GMEdgeConv::new(&format!("{prefix}.conv{i}"), d, w));
            d = w;
        }
        let mut widths = vec![config.concat_width()];
        widths.extend(&config.global);
        let global = Mlp::new(&format!("{prefix}.global"), &widths, true);
        Self { config, convs, global }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        for c in &self.convs {
            c.init(store, rng)?;
        }
        self.global.init(store, rng)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, index: &NeighborIndex) -> Result<TrunkOutput, AutodiffError> {
        let mut layers = vec![x];
        let mut h = x;
        for c in &self.convs {
            h = c.forward(tape, store, h, index)?;
            layers.push(h);
        }
        let cat = tape.concat(&layers[1..], 1)?;
        let g = self.global.forward(tape, store, cat)?;
        let (pooled, tiled) = pool_and_tile(tape, g, index.vertex_count)?;
        Ok(TrunkOutput { layers, pooled, tiled })
    }
}

/// Trunk plus a per-vertex head over `[x_0, .., x_3, x_glb]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GMEdgeNetConfig {
    pub trunk: TrunkConfig,
    /// Head widths after the concatenation, ending in the output width.
    pub head: Vec<usize>,
}

impl GMEdgeNetConfig {
    /// The joint-stage network: head MLP [1859, 1024, 256, out].
    pub fn joint(out: usize) -> Self {
        Self { trunk: TrunkConfig::joint(), head: vec![1024, 256, out] }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let n = self.head.len();
        Self {
            trunk: self.trunk.scaled(factor, false),
            head: self.head.iter().enumerate().map(|(i, &w)| if i + 1 == n { w } else { scale_width(w, factor, 4) }).collect(),
        }
    }

    pub fn head_in_width(&self) -> usize {
        self.trunk.in_dim + self.trunk.concat_width() + self.trunk.global_width()
    }

    pub fn out_width(&self) -> usize {
        *self.head.last().expect("non-empty")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GMEdgeNet {
    pub config: GMEdgeNetConfig,
    pub trunk: Trunk,
    pub head: Mlp,
}

impl GMEdgeNet {
    pub fn new(prefix: &str, config: GMEdgeNetConfig) -> Self {
        let trunk = Trunk::new(prefix, config.trunk.clone());
        let mut widths = vec![config.head_in_width()];
        widths.extend(&config.head);
        let head = Mlp::new(&format!("{prefix}.head"), &widths, false);
        Self { config, trunk, head }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        self.trunk.init(store, rng)?;
        self.head.init(store, rng)
    }

    /// Same as [`init`](Self::init) but with a zero final layer.
    pub fn init_zero_output<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        self.trunk.init(store, rng)?;
        self.head.init_zero_last(store, rng)
    }

    /// Per-vertex output (`V x out`) and the pooled global feature.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, index: &NeighborIndex) -> Result<(Var, Var), AutodiffError> {
        let t = self.trunk.forward(tape, store, x, index)?;
        let mut parts = t.layers.clone();
        parts.push(t.tiled);
        let cat = tape.concat(&parts, 1)?;
        let out = self.head.forward(tape, store, cat)?;
        Ok((out, t.pooled))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinNetConfig {
    pub in_dim: usize,
    pub pre: Vec<usize>,
    pub conv: [usize; 3],
    pub global: Vec<usize>,
    pub head: Vec<usize>,
}

impl SkinNetConfig {
    /// MLP [38, 128, 64], convs 64 -> 512 -> 256 -> 256, global MLP
    /// [512, 512, 1024], head [1280, 1024, 512, 5].
    pub fn full_width(k: usize) -> Self {
        Self { in_dim: 3 + 7 * k, pre: vec![128, 64], conv: [512, 256, 256], global: vec![512, 1024], head: vec![1024, 512, k] }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |w: &usize| scale_width(*w, factor, 4);
        let n = self.head.len();
        Self {
            in_dim: self.in_dim,
            pre: self.pre.iter().map(s).collect(),
            conv: [s(&self.conv[0]), s(&self.conv[1]), s(&self.conv[2])],
            global: self.global.iter().map(s).collect(),
            head: self.head.iter().enumerate().map(|(i, w)| if i + 1 == n { *w } else { s(w) }).collect(),
        }
    }

    pub fn head_in_width(&self) -> usize {
        self.global.last().expect("non-empty") + self.conv[2]
    }
}

/// The skinning network; outputs per-vertex logits over the K bone slots.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinNet {
    pub config: SkinNetConfig,
    pub pre: Mlp,
    pub convs: [GMEdgeConv; 3],
    pub global: Mlp,
    pub head: Mlp,
}

impl SkinNet {
    pub fn new(prefix: &str, config: SkinNetConfig) -> Self {
        let mut pw = vec![config.in_dim];
        pw.extend(&config.pre);
        let pre = Mlp::new(&format!("{prefix}.pre"), &pw, true);
        let p = *pw.last().expect("non-empty");
        let convs = [
            GMEdgeConv::new(&format!("{prefix}.conv0"), p, config.conv[0]),
            GMEdgeConv::new(&format!("{prefix}.conv1"), config.conv[0], config.conv[1]),
            GMEdgeConv::new(&format!("{prefix}.conv2"), config.conv[1], config.conv[2]),
        ];
        let mut gw = vec![config.conv[0]];
        gw.extend(&config.global);
        let global = Mlp::new(&format!("{prefix}.global"), &gw, true);
        let mut hw = vec![config.head_in_width()];
        hw.extend(&config.head);
        let head = Mlp::new(&format!("{prefix}.head"), &hw, false);
        Self { config, pre, convs, global, head }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        self.pre.init(store, rng)?;
        for c in &self.convs {
            c.init(store, rng)?;
        }
        self.global.init(store, rng)?;
        self.head.init(store, rng)
    }

    /// Per-vertex logits `V x K` (softmax is left to the caller).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, index: &NeighborIndex) -> Result<Var, AutodiffError> {
        let x0 = self.pre.forward(tape, store, h)?;
        let x1 = self.convs[0].forward(tape, store, x0, index)?;
        let (pooled, _) = pool_and_tile(tape, x1, 1)?;
        let g = self.global.forward(tape, store, pooled)?;
        let glb = tape.gather(g, &vec![0; index.vertex_count])?;
        let x2 = self.convs[1].forward(tape, store, x1, index)?;
        let x3 = self.convs[2].forward(tape, store, x2, index)?;
        let cat = tape.concat(&[glb, x3], 1)?;
        self.head.forward(tape, store, cat)
    }
}
