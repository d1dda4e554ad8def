//! Connectivity training: pairwise BCE with online hard-example mining and
//! root cross-entropy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets::{ConnFeatures, ConnNets};
use crate::autodiff::{adam_step, sigmoid, AdamConfig, AutodiffError, GradMap, ParamStore, Tape, Tensor};
use crate::mesh::{build_vertex_graph, sample_edge_dropout, Mesh, SymmetryPlane, VertexGraph, VolumetricGrid};
use crate::nn::{bce_with_logits, soft_cross_entropy, NeighborIndex};
use super::Skeleton;

/// A training rig for the connectivity stage.
#[derive(Clone, Debug)]
pub struct ConnSample {
    pub name: String,
    pub positions: Tensor,
    pub graph: VertexGraph,
    pub features: ConnFeatures,
    /// 1 for pairs joined by a reference bone, else 0.
    pub targets: Vec<f64>,
    pub root: usize,
}

impl ConnSample {
    pub fn new(name: impl Into<String>, mesh: &Mesh, grid: &VolumetricGrid, skeleton: &Skeleton, radius: f64) -> Self {
        let (graph, _) = build_vertex_graph(mesh, radius);
        let features = ConnFeatures::new(skeleton.joints(), grid, &SymmetryPlane::x0());
        let targets = features
            .pairs
            .iter()
            .map(|&(i, j)| if skeleton.parent(i) == Some(j) || skeleton.parent(j) == Some(i) { 1.0 } else { 0.0 })
            .collect();
        let positions = crate::joints::points_tensor(mesh.vertices());
        Self { name: name.into(), positions, graph, features, targets, root: skeleton.root() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    /// Hard negatives kept per positive.
    pub negative_ratio: usize,
    pub max_edges: usize,
    pub seed: u64,
}

impl Default for ConnTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, batch: 12, steps: 500, negative_ratio: 3, max_edges: 15, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConnTrainReport {
    pub losses: Vec<f64>,
    pub diverged: bool,
}

/// Per-pair BCE weights: every positive, plus the `ratio * positives`
/// negatives with the highest loss (lower index wins ties).
pub fn ohem_weights(losses: &[f64], targets: &[f64], ratio: usize) -> Vec<f64> {
    let mut weights: Vec<f64> = targets.iter().map(|&t| if t > 0.5 { 1.0 } else { 0.0 }).collect();
    let positives = weights.iter().filter(|&&w| w > 0.0).count();
    let mut negatives: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] <= 0.5).collect();
    negatives.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    for &i in negatives.iter().take(ratio * positives) {
        weights[i] = 1.0;
    }
    weights
}

fn bce_value(logit: f64, target: f64) -> f64 {
    let p = sigmoid(logit).clamp(1e-15, 1.0 - 1e-15);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Bone and root loss of a batch on one tape.
fn batch_loss(
    nets: &ConnNets,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &[(&ConnSample, VertexGraph)],
    ratio: usize,
) -> Result<crate::autodiff::Var, AutodiffError> {
    let mut pair_logits = Vec::new();
    let mut targets = Vec::new();
    let mut root_terms = Vec::new();
    for (s, graph) in batch {
        let index = NeighborIndex::new(graph);
        let x = tape.constant(s.positions.clone())?;
        let f = nets.forward(tape, store, x, &index, &s.features)?;
        if let Some(p) = f.pair_logits {
            pair_logits.push(p);
            targets.extend_from_slice(&s.targets);
        }
        let row = tape.transpose(f.root_logits)?;
        let mut onehot = Tensor::zeros(1, s.features.joints.len());
        onehot.set(0, s.root, 1.0);
        root_terms.push(soft_cross_entropy(tape, row, &onehot)?);
    }
    let mut total = root_terms[0];
    for &t in &root_terms[1..] {
        total = tape.add(total, t)?;
    }
    total = tape.scale(total, 1.0 / root_terms.len() as f64)?;
    if !pair_logits.is_empty() {
        let logits = tape.concat(&pair_logits, 0)?;
        let values: Vec<f64> = tape.value(logits).data().iter().zip(&targets).map(|(&z, &t)| bce_value(z, t)).collect();
        let weights = ohem_weights(&values, &targets, ratio);
        if weights.iter().any(|&w| w > 0.0) {
            let bone = bce_with_logits(tape, logits, &targets, Some(&weights))?;
            total = tape.add(total, bone)?;
        }
    }
    Ok(total)
}

/// Trains encoders, BoneNet and RootNet on reference skeletons. Samples
/// with fewer than two joints are skipped.
pub fn train_connectivity(
    nets: &ConnNets,
    store: &mut ParamStore,
    samples: &[ConnSample],
    cfg: &ConnTrainConfig,
    mut monitor: impl FnMut(usize, &ParamStore) -> bool,
) -> Result<ConnTrainReport, AutodiffError> {
    let usable: Vec<&ConnSample> = samples.iter().filter(|s| s.features.joints.len() >= 2).collect();
    if usable.len() < samples.len() {
        log::warn!("skipped {} rigs with fewer than two joints", samples.len() - usable.len());
    }
    let mut report = ConnTrainReport::default();
    if usable.is_empty() {
        return Ok(report);
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut pos = order.len();
    for step in 0..cfg.steps {
        let mut batch = Vec::new();
        while batch.len() < cfg.batch.max(1).min(usable.len()) {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let s = usable[order[pos]];
            pos += 1;
            batch.push((s, sample_edge_dropout(&s.graph, cfg.max_edges, rng.gen())));
        }
        let mut tape = Tape::new();
        let loss = match batch_loss(nets, &mut tape, store, &batch, cfg.negative_ratio) {
            Ok(l) => l,
            Err(AutodiffError::NonFinite { .. }) => {
                log::error!("connectivity step {step}: non-finite loss, keeping the last finite parameters");
                report.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let grads: GradMap = tape.backward(loss)?.for_store(store);
        adam_step(store, &grads, &adam)?;
        let l = tape.value(loss).item();
        report.losses.push(l);
        if step % 50 == 0 {
            log::info!("connectivity step {step}: loss {l:.5}");
        }
        if monitor(step, store) {
            break;
        }
    }
    Ok(report)
}

/// Fraction of pairs whose thresholded probability matches the reference,
/// and whether the most probable root is the reference root.
pub fn evaluate_sample(nets: &ConnNets, store: &ParamStore, sample: &ConnSample) -> Result<(f64, bool), AutodiffError> {
    let mut tape = Tape::new();
    let index = NeighborIndex::new(&sample.graph);
    let x = tape.constant(sample.positions.clone())?;
    let f = nets.forward(&mut tape, store, x, &index, &sample.features)?;
    let accuracy = match f.pair_logits {
        Some(p) => {
            let z = tape.value(p).data();
            let correct = z.iter().zip(&sample.targets).filter(|(&z, &t)| (sigmoid(z) > 0.5) == (t > 0.5)).count();
            correct as f64 / z.len() as f64
        }
        None => 1.0,
    };
    let root = super::mst::argmax(tape.value(f.root_logits).data());
    Ok((accuracy, root == sample.root))
}
