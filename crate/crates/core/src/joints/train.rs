//! Two-phase joint-stage training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_attention_mask, chamfer_tape, mean_shift_unrolled, points_tensor, AttentionMask, JointError, JointNets, BANDWIDTH_PARAM};
use crate::autodiff::{adam_step, AdamConfig, AutodiffError, GradMap, ParamStore, Tape, Tensor};
use crate::connectivity::Skeleton;
use crate::mesh::{build_vertex_graph, sample_edge_dropout, Mesh, Point, VertexGraph};
use crate::nn::{bce_with_logits, NeighborIndex};

/// A training character for the joint stage.
#[derive(Clone, Debug)]
pub struct JointSample {
    pub name: String,
    pub mesh: Mesh,
    pub graph: VertexGraph,
    pub joints: Vec<Point>,
    pub mask: AttentionMask,
}

impl JointSample {
    pub fn new(name: impl Into<String>, mesh: Mesh, skeleton: &Skeleton, radius: f64) -> Self {
        let (graph, _) = build_vertex_graph(&mesh, radius);
        let mask = build_attention_mask(&mesh, skeleton);
        Self { name: name.into(), mesh, graph, joints: skeleton.joints().to_vec(), mask }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointTrainConfig {
    pub attention_lr: f64,
    pub attention_epochs: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Unrolled mean-shift iterations.
    pub unroll: usize,
    pub max_edges: usize,
    pub seed: u64,
    /// Steps on the displaced-point Chamfer term alone before fine-tuning.
    pub displace_warmup: usize,
    pub warmup_lr: f64,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self {
            attention_lr: 1e-4,
            attention_epochs: 50,
            lr: 1e-6,
            steps: 2000,
            batch: 2,
            unroll: 10,
            max_edges: 15,
            seed: 0,
            displace_warmup: 0,
            warmup_lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct JointTrainReport {
    /// Mean mask loss per attention epoch.
    pub attention_losses: Vec<f64>,
    /// Batch loss per warm-up step.
    pub warmup_losses: Vec<f64>,
    /// Batch loss per fine-tuning step.
    pub losses: Vec<f64>,
    pub bandwidth: f64,
    /// Training stopped on a non-finite loss; the store holds the last finite step.
    pub diverged: bool,
}

fn add_into(acc: &mut GradMap, grads: GradMap) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => a.add_assign(&g),
            None => {
                acc.insert(name, g);
            }
        }
    }
}

fn scale_grads(acc: &mut GradMap, s: f64) {
    for g in acc.values_mut() {
        *g = g.map(|v| v * s);
    }
}

/// Shuffled sample order, refreshed every pass through the set.
struct Batches {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        Self { order: (0..n).collect(), pos: n, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    fn seed(&mut self) -> u64 {
        self.rng.gen()
    }
}

fn is_divergence(e: &AutodiffError) -> bool {
    matches!(e, AutodiffError::NonFinite { .. })
}

/// Pretrains the attention network on the mask cross-entropy alone.
/// Returns the mean loss of every epoch.
pub fn train_attention(nets: &JointNets, store: &mut ParamStore, samples: &[JointSample], cfg: &JointTrainConfig) -> Result<Vec<f64>, JointError> {
    if samples.is_empty() {
        return Err(JointError::NoSamples);
    }
    let adam = AdamConfig::with_lr(cfg.attention_lr);
    let mut batches = Batches::new(samples.len(), cfg.seed);
    let per_epoch = samples.len().div_ceil(cfg.batch.max(1));
    let mut losses = Vec::with_capacity(cfg.attention_epochs);
    for epoch in 0..cfg.attention_epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..per_epoch {
            let batch = batches.next(cfg.batch.max(1));
            let mut acc = GradMap::new();
            let mut batch_loss = 0.0;
            for &i in &batch {
                let s = &samples[i];
                let graph = sample_edge_dropout(&s.graph, cfg.max_edges, batches.seed());
                let index = NeighborIndex::new(&graph);
                let mut tape = Tape::new();
                let x = tape.constant(points_tensor(s.mesh.vertices()))?;
                let logits = nets.attention_logits(&mut tape, store, x, &index)?;
                let targets: Vec<f64> = s.mask.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                let loss = bce_with_logits(&mut tape, logits, &targets, None)?;
                batch_loss += tape.value(loss).item();
                add_into(&mut acc, tape.backward(loss)?.for_store(store));
            }
            scale_grads(&mut acc, 1.0 / batch.len() as f64);
            adam_step(store, &acc, &adam)?;
            epoch_loss += batch_loss / batch.len() as f64;
        }
        let mean = epoch_loss / per_epoch as f64;
        log::info!("attention epoch {epoch}: mask loss {mean:.5}");
        losses.push(mean);
    }
    Ok(losses)
}

/// Loss `L_cd + L_cd'` of one sample: Chamfer of the collapsed points and of
/// the displaced points against the reference joints. Without `unroll` only
/// the displaced-point term is computed.
pub(crate) fn joint_loss(
    nets: &JointNets,
    tape: &mut Tape,
    store: &ParamStore,
    sample: &JointSample,
    graph: &VertexGraph,
    unroll: Option<usize>,
) -> Result<crate::autodiff::Var, AutodiffError> {
    let index = NeighborIndex::new(graph);
    let x = tape.constant(points_tensor(sample.mesh.vertices()))?;
    let target = tape.constant(points_tensor(&sample.joints))?;
    let Some(unroll) = unroll else {
        let (disp, _) = nets.displace.forward(tape, store, x, &index)?;
        let q = tape.add(x, disp)?;
        return chamfer_tape(tape, q, target);
    };
    let f = nets.forward(tape, store, x, &index)?;
    let a = tape.sigmoid(f.logits)?;
    let log_h = tape.param(store, BANDWIDTH_PARAM)?;
    let collapsed = mean_shift_unrolled(tape, f.q, a, log_h, unroll)?;
    let l_cd = chamfer_tape(tape, collapsed, target)?;
    let l_disp = chamfer_tape(tape, f.q, target)?;
    tape.add(l_cd, l_disp)
}

/// Runs `steps` Adam steps of `joint_loss`; returns the per-step losses and
/// whether a non-finite value stopped the run.
#[allow(clippy::too_many_arguments)]
fn run_steps(
    nets: &JointNets,
    store: &mut ParamStore,
    samples: &[JointSample],
    cfg: &JointTrainConfig,
    steps: usize,
    lr: f64,
    unroll: Option<usize>,
    batches: &mut Batches,
    first_step: usize,
    monitor: &mut dyn FnMut(usize, &ParamStore) -> bool,
) -> Result<(Vec<f64>, bool, bool), JointError> {
    let adam = AdamConfig::with_lr(lr);
    let mut losses = Vec::with_capacity(steps);
    for k in 0..steps {
        let step = first_step + k;
        let batch = batches.next(cfg.batch.max(1));
        let mut acc = GradMap::new();
        let mut batch_loss = 0.0;
        for &i in &batch {
            let graph = sample_edge_dropout(&samples[i].graph, cfg.max_edges, batches.seed());
            let mut tape = Tape::new();
            let loss = match joint_loss(nets, &mut tape, store, &samples[i], &graph, unroll) {
                Ok(l) => l,
                Err(e) if is_divergence(&e) => {
                    log::error!("step {step}: non-finite loss, keeping the last finite parameters");
                    return Ok((losses, true, true));
                }
                Err(e) => return Err(e.into()),
            };
            batch_loss += tape.value(loss).item();
            add_into(&mut acc, tape.backward(loss)?.for_store(store));
        }
        scale_grads(&mut acc, 1.0 / batch.len() as f64);
        if acc.values().any(|g: &Tensor| !g.is_finite()) {
            log::error!("step {step}: non-finite gradient, keeping the last finite parameters");
            return Ok((losses, true, true));
        }
        adam_step(store, &acc, &adam)?;
        let loss = batch_loss / batch.len() as f64;
        losses.push(loss);
        if step % 50 == 0 {
            log::info!("joint step {step}: loss {loss:.5}, h {:.4}", JointNets::bandwidth(store).unwrap_or(f64::NAN));
        }
        if monitor(step, store) {
            return Ok((losses, false, true));
        }
    }
    Ok((losses, false, false))
}

/// Attention pretraining, an optional displacement warm-up, then joint
/// fine-tuning of displacement, attention and bandwidth through the
/// unrolled mean-shift.
///
/// `monitor` is called after every warm-up and fine-tuning step with a
/// running step index and may stop training early by returning `true`.
pub fn train_joint_stage(
    nets: &JointNets,
    store: &mut ParamStore,
    samples: &[JointSample],
    cfg: &JointTrainConfig,
    mut monitor: impl FnMut(usize, &ParamStore) -> bool,
) -> Result<JointTrainReport, JointError> {
    let mut report = JointTrainReport { attention_losses: train_attention(nets, store, samples, cfg)?, ..Default::default() };
    let mut batches = Batches::new(samples.len(), cfg.seed.wrapping_add(1));
    let (losses, diverged, stop) =
        run_steps(nets, store, samples, cfg, cfg.displace_warmup, cfg.warmup_lr, None, &mut batches, 0, &mut monitor)?;
    report.warmup_losses = losses;
    report.diverged = diverged;
    if !stop {
        let first = report.warmup_losses.len();
        let (losses, diverged, _) =
            run_steps(nets, store, samples, cfg, cfg.steps, cfg.lr, Some(cfg.unroll), &mut batches, first, &mut monitor)?;
        report.losses = losses;
        report.diverged = diverged;
    }
    report.bandwidth = JointNets::bandwidth(store).unwrap_or(f64::NAN);
    Ok(report)
}
