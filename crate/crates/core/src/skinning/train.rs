//! Cross-entropy training of the skinning network.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{compute_skin_features, SkinError, SkinFeatures, SkinNets, K};
use crate::autodiff::{adam_step, AdamConfig, AutodiffError, GradMap, ParamStore, Tape, Tensor};
use crate::connectivity::Skeleton;
use crate::mesh::{build_vertex_graph, sample_edge_dropout, volumetric_geodesic, voxelize, Mesh, VertexGraph};
use crate::nn::{soft_cross_entropy, NeighborIndex};

/// Projects a dense reference row onto the ranked bone slots. Mass on
/// bones outside the slots is dropped; a repeated bone takes its mass in
/// its first slot only. Returns `None` when more than half the mass is lost.
pub fn project_reference(reference: &[f64], slots: &[usize; K]) -> Option<[f64; K]> {
    let total: f64 = reference.iter().sum();
    let mut out = [0.0; K];
    for (r, &b) in slots.iter().enumerate() {
        if !slots[..r].contains(&b) {
            out[r] = reference[b];
        }
    }
    let kept: f64 = out.iter().sum();
    if !(total > 0.0) || kept < 0.5 * total {
        return None;
    }
    out.iter_mut().for_each(|w| *w /= kept);
    Some(out)
}

/// A training rig for the skinning stage.
#[derive(Clone, Debug)]
pub struct SkinSample {
    pub name: String,
    pub mesh: Mesh,
    pub skeleton: Skeleton,
    pub graph: VertexGraph,
    pub features: SkinFeatures,
    /// Reference weights, `V x B`.
    pub reference: Tensor,
    /// Vertices with a usable projected target, and those targets.
    pub rows: Vec<usize>,
    pub targets: Tensor,
    pub skipped: usize,
}

impl SkinSample {
    pub fn new(
        name: impl Into<String>,
        mesh: Mesh,
        skeleton: Skeleton,
        reference: Tensor,
        radius: f64,
        voxel_resolution: usize,
    ) -> Result<Self, SkinError> {
        let grid = voxelize(&mesh, voxel_resolution)?;
        let geo = volumetric_geodesic(&grid, &mesh, &skeleton.bone_segments())?;
        let features = compute_skin_features(&mesh, &skeleton, &geo)?;
        if reference.rows() != mesh.vertex_count() {
            return Err(SkinError::RowMismatch(reference.rows(), mesh.vertex_count()));
        }
        let mut rows = Vec::new();
        let mut target_rows = Vec::new();
        for (v, slots) in features.bones.iter().enumerate() {
            if let Some(t) = project_reference(reference.row_slice(v), slots) {
                rows.push(v);
                target_rows.push(t);
            }
        }
        let skipped = mesh.vertex_count() - rows.len();
        let name = name.into();
        if skipped > 0 {
            log::warn!("{name}: {skipped} vertices lose more than half their reference weight and are skipped");
        }
        let (graph, _) = build_vertex_graph(&mesh, radius);
        let targets = if target_rows.is_empty() { Tensor::zeros(0, K) } else { Tensor::from_rows(&target_rows) };
        Ok(Self { name, mesh, skeleton, graph, features, reference, rows, targets, skipped })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub max_edges: usize,
    pub seed: u64,
}

impl Default for SkinTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, batch: 2, steps: 2000, max_edges: 15, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkinTrainReport {
    pub losses: Vec<f64>,
    pub diverged: bool,
}

fn sample_loss(nets: &SkinNets, tape: &mut Tape, store: &ParamStore, s: &SkinSample, graph: &VertexGraph) -> Result<crate::autodiff::Var, AutodiffError> {
    let h = tape.constant(s.features.features.clone())?;
    let logits = nets.net.forward(tape, store, h, &NeighborIndex::new(graph))?;
    let kept = tape.gather(logits, &s.rows)?;
    soft_cross_entropy(tape, kept, &s.targets)
}

pub fn train_skinning(
    nets: &SkinNets,
    store: &mut ParamStore,
    samples: &[SkinSample],
    cfg: &SkinTrainConfig,
    mut monitor: impl FnMut(usize, &ParamStore) -> bool,
) -> Result<SkinTrainReport, SkinError> {
    let usable: Vec<&SkinSample> = samples.iter().filter(|s| !s.rows.is_empty()).collect();
    let mut report = SkinTrainReport::default();
    if usable.is_empty() {
        return Ok(report);
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut pos = order.len();
    'steps: for step in 0..cfg.steps {
        let size = cfg.batch.max(1).min(usable.len());
        let mut acc = GradMap::new();
        let mut batch_loss = 0.0;
        for _ in 0..size {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let s = usable[order[pos]];
            pos += 1;
            let graph = sample_edge_dropout(&s.graph, cfg.max_edges, rng.gen());
            let mut tape = Tape::new();
            let loss = match sample_loss(nets, &mut tape, store, s, &graph) {
                Ok(l) => l,
                Err(AutodiffError::NonFinite { .. }) => {
                    log::error!("skinning step {step}: non-finite loss, keeping the last finite parameters");
                    report.diverged = true;
                    break 'steps;
                }
                Err(e) => return Err(e.into()),
            };
            batch_loss += tape.value(loss).item();
            for (name, g) in tape.backward(loss)?.for_store(store) {
                match acc.get_mut(&name) {
                    Some(a) => a.add_assign(&g),
                    None => {
                        acc.insert(name, g);
                    }
                }
            }
        }
        for g in acc.values_mut() {
            *g = g.map(|v| v / size as f64);
        }
        adam_step(store, &acc, &adam)?;
        let l = batch_loss / size as f64;
        report.losses.push(l);
        if step % 50 == 0 {
            log::info!("skinning step {step}: loss {l:.5}");
        }
        if monitor(step, store) {
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_renormalizes_and_skips() {
        let r = [0.5, 0.3, 0.2, 0.0, 0.0, 0.0];
        let p = project_reference(&r, &[0, 1, 3, 4, 5]).unwrap();
        assert!((p[0] - 0.625).abs() < 1e-15 && (p[1] - 0.375).abs() < 1e-15);
        assert!(project_reference(&r, &[2, 3, 4, 5, 5]).is_none());
        let p = project_reference(&[1.0, 0.0], &[0, 1, 1, 1, 1]).unwrap();
        assert_eq!(p, [1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
