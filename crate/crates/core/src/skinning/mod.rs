//! Skeleton-aware vertex features, the skinning network, weight scatter and
//! linear blend skinning.

mod lbs;
mod train;

pub use lbs::{lbs_deform, sample_random_pose, Pose, MAX_POSE_ANGLE};
pub use train::{project_reference, train_skinning, SkinSample, SkinTrainConfig, SkinTrainReport};

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor};
use crate::connectivity::Skeleton;
use crate::mesh::{GeodesicField, Mesh, VertexGraph};
use crate::nn::{NeighborIndex, SkinNet, SkinNetConfig};

/// Nearest bones per vertex.
pub const K: usize = 5;
pub const FEATURE_WIDTH: usize = 3 + 7 * K;
/// Smallest distance used in the inverse-distance feature.
pub const MIN_DISTANCE: f64 = 1e-4;
/// Influence threshold for export and metrics.
pub const INFLUENCE_THRESHOLD: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum SkinError {
    #[error("skeleton has no bones")]
    NoBones,
    #[error("geodesic field has {field} bones but the skeleton has {skeleton}")]
    BoneCountMismatch { field: usize, skeleton: usize },
    #[error("vertex {vertex} references bone {bone} of {count}")]
    BoneOutOfRange { vertex: usize, bone: usize, count: usize },
    #[error("{0} rows where {1} were expected")]
    RowMismatch(usize, usize),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Per-vertex `[v, (start, end, 1/D) x K]` rows and the ranked bone slots.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinFeatures {
    pub features: Tensor,
    pub bones: Vec<[usize; K]>,
}

/// Ranks bones by geodesic distance (bone index breaks ties) and builds the
/// 38-wide features. With fewer than `K` bones the last ranked bone repeats.
pub fn compute_skin_features(mesh: &Mesh, skeleton: &Skeleton, geo: &GeodesicField) -> Result<SkinFeatures, SkinError> {
    let segments = skeleton.bone_segments();
    if segments.is_empty() {
        return Err(SkinError::NoBones);
    }
    if geo.bone_count() != segments.len() {
        return Err(SkinError::BoneCountMismatch { field: geo.bone_count(), skeleton: segments.len() });
    }
    let n = mesh.vertex_count();
    let mut data = Vec::with_capacity(n * FEATURE_WIDTH);
    let mut bones = Vec::with_capacity(n);
    for (v, p) in mesh.vertices().iter().enumerate() {
        let row = geo.row(v);
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let mut slots = [0; K];
        for (r, slot) in slots.iter_mut().enumerate() {
            *slot = order[r.min(order.len() - 1)];
        }
        data.extend_from_slice(&[p.x, p.y, p.z]);
        for &b in &slots {
            let (a, e) = segments[b];
            data.extend_from_slice(&[a.x, a.y, a.z, e.x, e.y, e.z, 1.0 / row[b].max(MIN_DISTANCE)]);
        }
        bones.push(slots);
    }
    Ok(SkinFeatures { features: Tensor::new(n, FEATURE_WIDTH, data)?, bones })
}

/// Per-vertex weights over the vertex's `K` ranked bones.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinField {
    pub weights: Vec<[f64; K]>,
    pub bones: Vec<[usize; K]>,
}

/// Dense `V x B` weights; repeated slots of one bone are summed.
pub fn scatter_weights(field: &SkinField, bone_count: usize) -> Result<Tensor, SkinError> {
    if field.weights.len() != field.bones.len() {
        return Err(SkinError::RowMismatch(field.weights.len(), field.bones.len()));
    }
    let mut dense = Tensor::zeros(field.weights.len(), bone_count);
    for (v, (w, b)) in field.weights.iter().zip(&field.bones).enumerate() {
        let row = dense.row_slice_mut(v);
        for (&wi, &bi) in w.iter().zip(b) {
            if bi >= bone_count {
                return Err(SkinError::BoneOutOfRange { vertex: v, bone: bi, count: bone_count });
            }
            row[bi] += wi;
        }
    }
    Ok(dense)
}

/// Sparse `(bone, weight)` rows: weights below the influence threshold are
/// dropped and the rest renormalized.
pub fn sparse_rows(dense: &Tensor) -> Vec<Vec<(usize, f64)>> {
    (0..dense.rows())
        .map(|v| {
            let row = dense.row_slice(v);
            let mut kept: Vec<(usize, f64)> = row.iter().enumerate().filter(|(_, &w)| w >= INFLUENCE_THRESHOLD).map(|(b, &w)| (b, w)).collect();
            if kept.is_empty() {
                let b = crate::connectivity::argmax(row);
                kept.push((b, 1.0));
            }
            let s: f64 = kept.iter().map(|(_, w)| w).sum();
            kept.iter_mut().for_each(|(_, w)| *w /= s);
            kept
        })
        .collect()
}

/// Dense `V x B` matrix from sparse rows.
pub fn dense_from_sparse(rows: &[Vec<(usize, f64)>], bone_count: usize) -> Result<Tensor, SkinError> {
    let mut dense = Tensor::zeros(rows.len(), bone_count);
    for (v, row) in rows.iter().enumerate() {
        for &(b, w) in row {
            if b >= bone_count {
                return Err(SkinError::BoneOutOfRange { vertex: v, bone: b, count: bone_count });
            }
            dense.data_mut()[v * bone_count + b] += w;
        }
    }
    Ok(dense)
}

pub fn skin_net_config(scale: f64) -> SkinNetConfig {
    let base = SkinNetConfig::full_width(K);
    if scale == 1.0 {
        base
    } else {
        base.scaled(scale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinNets {
    pub net: SkinNet,
}

impl SkinNets {
    pub fn new(config: SkinNetConfig) -> Self {
        Self { net: SkinNet::new("skin", config) }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        self.net.init(store, rng)
    }

    /// Softmax weights per vertex over its ranked bones.
    pub fn predict(&self, store: &ParamStore, features: &SkinFeatures, graph: &VertexGraph) -> Result<SkinField, SkinError> {
        let mut tape = Tape::new();
        let h = tape.constant(features.features.clone())?;
        let logits = self.net.forward(&mut tape, store, h, &NeighborIndex::new(graph))?;
        let s = tape.softmax(logits, 1)?;
        let out = tape.value(s);
        let weights = (0..out.rows())
            .map(|v| {
                let mut w = [0.0; K];
                w.copy_from_slice(out.row_slice(v));
                w
            })
            .collect();
        Ok(SkinField { weights, bones: features.bones.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_slots_merge() {
        let f = SkinField { weights: vec![[0.2; K]], bones: vec![[0; K]] };
        let d = scatter_weights(&f, 3).unwrap();
        assert!((d.get(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(d.get(0, 1), 0.0);
    }

    #[test]
    fn distinct_slots_are_placed() {
        let f = SkinField { weights: vec![[0.5, 0.2, 0.1, 0.1, 0.1]], bones: vec![[4, 3, 2, 1, 0]] };
        let d = scatter_weights(&f, 5).unwrap();
        assert_eq!(d.row_slice(0), &[0.1, 0.1, 0.1, 0.2, 0.5]);
        assert!(scatter_weights(&f, 4).is_err());
    }

    #[test]
    fn sparse_rows_prune_and_renormalize() {
        let d = Tensor::from_rows(&[[0.99995, 0.00005, 0.0]]);
        assert_eq!(sparse_rows(&d), vec![vec![(0, 1.0)]]);
    }
}
