//! Skeleton and skinning evaluation measures.

mod hungarian;
mod tree_edit;

pub use hungarian::hungarian;
pub use tree_edit::{ordered_tree_edit_distance, OrderedTree};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::connectivity::Skeleton;
use crate::mesh::{point_segment_distance, raycast, Mesh, Point};
use crate::skinning::{lbs_deform, sample_random_pose, INFLUENCE_THRESHOLD};

/// Samples per bone for the bone-to-bone Chamfer distance.
pub const B2B_SAMPLES: usize = 32;
/// Rays cast per incident bone when measuring the local shape diameter.
pub const DIAMETER_RAYS: usize = 14;
/// Random poses used for the deformation distance.
pub const EVAL_POSES: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("skeleton has no bones")]
    NoBones,
    #[error("weight matrices disagree: {pred:?} vs {reference:?}")]
    ShapeMismatch { pred: [usize; 2], reference: [usize; 2] },
    #[error("weights have {weights} bones but the skeleton has {skeleton}")]
    BoneCountMismatch { weights: usize, skeleton: usize },
    #[error("weights have {weights} rows but the mesh has {vertices} vertices")]
    RowMismatch { weights: usize, vertices: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonReport {
    pub cd_j2j: f64,
    pub cd_j2b: f64,
    pub cd_b2b: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub tree_edit_distance: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkinReport {
    pub precision: f64,
    pub recall: f64,
    pub avg_l1: f64,
    pub avg_dist: f64,
    pub max_dist: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Average of the two directed mean nearest distances.
fn symmetric_chamfer(a: &[Point], b: &[Point], a_to_b: impl Fn(&Point) -> f64, b_to_a: impl Fn(&Point) -> f64) -> f64 {
    0.5 * (mean(a.iter().map(a_to_b)) + mean(b.iter().map(b_to_a)))
}

fn nearest_point(p: &Point, set: &[Point]) -> f64 {
    set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

fn nearest_segment(p: &Point, segs: &[(Point, Point)]) -> f64 {
    segs.iter().map(|(a, b)| point_segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
}

fn bone_segments(s: &Skeleton) -> Result<Vec<(Point, Point)>, MetricsError> {
    let segs = s.bone_segments();
    if segs.is_empty() {
        return Err(MetricsError::NoBones);
    }
    Ok(segs)
}

pub fn cd_j2j(pred: &Skeleton, reference: &Skeleton) -> f64 {
    let (a, b) = (pred.joints(), reference.joints());
    symmetric_chamfer(a, b, |p| nearest_point(p, b), |p| nearest_point(p, a))
}

pub fn cd_j2b(pred: &Skeleton, reference: &Skeleton) -> Result<f64, MetricsError> {
    let (sa, sb) = (bone_segments(pred)?, bone_segments(reference)?);
    Ok(symmetric_chamfer(pred.joints(), reference.joints(), |p| nearest_segment(p, &sb), |p| nearest_segment(p, &sa)))
}

/// Evenly spaced points along every bone, endpoints included.
pub fn sample_bones(segs: &[(Point, Point)], per_bone: usize) -> Vec<Point> {
    let denom = (per_bone.max(2) - 1) as f64;
    segs.iter()
        .flat_map(|(a, b)| (0..per_bone).map(move |k| a + (b - a) * (k as f64 / denom)))
        .collect()
}

pub fn cd_b2b(pred: &Skeleton, reference: &Skeleton) -> Result<f64, MetricsError> {
    let (sa, sb) = (bone_segments(pred)?, bone_segments(reference)?);
    Ok(0.5 * (sampled_to_segments(&sa, &sb) + sampled_to_segments(&sb, &sa)))
}

/// Mean over the samples of `from` of the distance to `to`. A sample lies
/// exactly on its own segment, so a copy of that segment in `to` scores 0.
fn sampled_to_segments(from: &[(Point, Point)], to: &[(Point, Point)]) -> f64 {
    let mut total = 0.0;
    for seg in from {
        let shared = to.iter().any(|(a, b)| (a, b) == (&seg.0, &seg.1) || (a, b) == (&seg.1, &seg.0));
        if !shared {
            total += sample_bones(std::slice::from_ref(seg), B2B_SAMPLES).iter().map(|p| nearest_segment(p, to)).sum::<f64>();
        }
    }
    total / (from.len() * B2B_SAMPLES) as f64
}

/// Mean distance from `joint` to the surface along rays perpendicular to its
/// incident bones. Twice this value is the local shape diameter.
pub fn joint_surface_distance(mesh: &Mesh, skeleton: &Skeleton, joint: usize) -> Option<f64> {
    let mut axes = skeleton.incident_bone_directions(joint);
    if axes.is_empty() {
        axes.push(crate::mesh::Vec3::y());
    }
    let origin = skeleton.joints()[joint];
    let hits: Vec<f64> = axes
        .iter()
        .flat_map(|axis| raycast::perpendicular_directions(axis, DIAMETER_RAYS))
        .filter_map(|dir| raycast::first_hit(mesh, &origin, &dir).map(|h| h.t))
        .collect();
    (!hits.is_empty()).then(|| mean(hits.into_iter()))
}

/// Matching tolerance per reference joint: half the local shape diameter.
/// Joints whose rays all miss use the mean over the others.
pub fn joint_tolerances(mesh: &Mesh, reference: &Skeleton) -> Vec<f64> {
    let raw: Vec<Option<f64>> = (0..reference.joint_count()).map(|j| joint_surface_distance(mesh, reference, j)).collect();
    let known: Vec<f64> = raw.iter().flatten().copied().collect();
    let fallback = if known.is_empty() { 0.5 * 0.1 * mesh.longest_extent() } else { mean(known.into_iter()) };
    raw.into_iter()
        .enumerate()
        .map(|(j, t)| {
            t.unwrap_or_else(|| {
                log::warn!("reference joint {j}: no diameter ray hit the mesh, using mean tolerance");
                fallback
            })
        })
        .collect()
}

/// Pairs `(pred, ref)` from a minimum-cost assignment on Euclidean distance.
pub fn match_joints(pred: &[Point], reference: &[Point]) -> Vec<(usize, usize)> {
    let cost: Vec<Vec<f64>> = pred.iter().map(|p| reference.iter().map(|r| (p - r).norm()).collect()).collect();
    hungarian(&cost).into_iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect()
}

/// `(iou, precision, recall)` given a tolerance per reference joint.
pub fn iou_precision_recall_with(pred: &Skeleton, reference: &Skeleton, tolerance: &[f64]) -> (f64, f64, f64) {
    let (p, r) = (pred.joints(), reference.joints());
    let matched = match_joints(p, r).into_iter().filter(|&(i, j)| (p[i] - r[j]).norm() <= tolerance[j]).count() as f64;
    let (np, nr) = (p.len() as f64, r.len() as f64);
    (matched / (np + nr - matched), matched / np, matched / nr)
}

pub fn iou_precision_recall(pred: &Skeleton, reference: &Skeleton, mesh: &Mesh) -> (f64, f64, f64) {
    iou_precision_recall_with(pred, reference, &joint_tolerances(mesh, reference))
}

/// Edit distance with relabel cost 0 when a predicted joint lies within the
/// tolerance of the reference joint it is mapped to.
pub fn tree_edit_distance_with(pred: &Skeleton, reference: &Skeleton, tolerance: &[f64]) -> usize {
    let (a, b) = (OrderedTree::canonical(pred), OrderedTree::canonical(reference));
    let (pj, rj) = (pred.joints(), reference.joints());
    ordered_tree_edit_distance(&a, &b, |i, j| usize::from((pj[i] - rj[j]).norm() > tolerance[j]))
}

pub fn tree_edit_distance(pred: &Skeleton, reference: &Skeleton, mesh: &Mesh) -> usize {
    tree_edit_distance_with(pred, reference, &joint_tolerances(mesh, reference))
}

pub fn skeleton_report(pred: &Skeleton, reference: &Skeleton, mesh: &Mesh) -> Result<SkeletonReport, MetricsError> {
    let tol = joint_tolerances(mesh, reference);
    let (iou, precision, recall) = iou_precision_recall_with(pred, reference, &tol);
    Ok(SkeletonReport {
        cd_j2j: cd_j2j(pred, reference),
        cd_j2b: cd_j2b(pred, reference)?,
        cd_b2b: cd_b2b(pred, reference)?,
        iou,
        precision,
        recall,
        tree_edit_distance: tree_edit_distance_with(pred, reference, &tol),
    })
}

fn influences(row: &[f64]) -> Vec<bool> {
    row.iter().map(|&w| w > INFLUENCE_THRESHOLD).collect()
}

/// Skinning precision/recall, mean L1 and deformation gaps over random poses
/// seeded `seed..seed + poses`.
pub fn skin_report(
    pred: &Tensor,
    reference: &Tensor,
    skeleton: &Skeleton,
    mesh: &Mesh,
    poses: usize,
    seed: u64,
) -> Result<SkinReport, MetricsError> {
    if pred.shape() != reference.shape() {
        return Err(MetricsError::ShapeMismatch { pred: pred.shape(), reference: reference.shape() });
    }
    if pred.cols() != skeleton.bone_count() {
        return Err(MetricsError::BoneCountMismatch { weights: pred.cols(), skeleton: skeleton.bone_count() });
    }
    if pred.rows() != mesh.vertex_count() {
        return Err(MetricsError::RowMismatch { weights: pred.rows(), vertices: mesh.vertex_count() });
    }
    let v = pred.rows();
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut l1 = 0.0;
    for i in 0..v {
        let (p, r) = (pred.row_slice(i), reference.row_slice(i));
        let (ip, ir) = (influences(p), influences(r));
        let both = ip.iter().zip(&ir).filter(|(a, b)| **a && **b).count() as f64;
        let np = ip.iter().filter(|x| **x).count() as f64;
        let nr = ir.iter().filter(|x| **x).count() as f64;
        precision += if np > 0.0 { both / np } else { if nr == 0.0 { 1.0 } else { 0.0 } };
        recall += if nr > 0.0 { both / nr } else { 1.0 };
        l1 += p.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    let mut dist_sum = 0.0;
    let mut max_dist: f64 = 0.0;
    for k in 0..poses {
        let pose = sample_random_pose(skeleton, seed + k as u64);
        let a = lbs_deform(mesh.vertices(), skeleton, pred, &pose);
        let b = lbs_deform(mesh.vertices(), skeleton, reference, &pose);
        for (x, y) in a.iter().zip(&b) {
            let d = (x - y).norm();
            dist_sum += d;
            max_dist = max_dist.max(d);
        }
    }
    let n = v as f64;
    Ok(SkinReport {
        precision: precision / n,
        recall: recall / n,
        avg_l1: l1 / n,
        avg_dist: if poses == 0 { 0.0 } else { dist_sum / (n * poses as f64) },
        max_dist,
    })
}

pub const SKELETON_CSV_HEADER: &str = "shape,cd_j2j,cd_j2b,cd_b2b,iou,precision,recall,tree_edit_distance";
pub const SKIN_CSV_HEADER: &str = "shape,precision,recall,avg_l1,avg_dist,max_dist";

impl SkeletonReport {
    pub fn csv_row(&self, shape: &str) -> String {
        format!(
            "{shape},{},{},{},{},{},{},{}",
            self.cd_j2j, self.cd_j2b, self.cd_b2b, self.iou, self.precision, self.recall, self.tree_edit_distance
        )
    }
}

impl SkinReport {
    pub fn csv_row(&self, shape: &str) -> String {
        format!("{shape},{},{},{},{},{}", self.precision, self.recall, self.avg_l1, self.avg_dist, self.max_dist)
    }
}
