//! Joint prediction: displacement and attention networks, differentiable
//! mean-shift, mode extraction and symmetrization.

mod mean_shift;
mod modes;
mod train;

pub use mean_shift::{
    epanechnikov, mean_shift_converge, mean_shift_step, mean_shift_step_dense, mean_shift_unrolled, ConvergeReport,
};
pub use modes::{extract_modes, extract_modes_filtered, JointSet};
pub use train::{train_attention, train_joint_stage, JointSample, JointTrainConfig, JointTrainReport};

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::connectivity::Skeleton;
use crate::mesh::{raycast, Mesh, Point, SymmetryPlane, VertexGraph};
use crate::nn::{GMEdgeNet, GMEdgeNetConfig, NeighborIndex};

pub const DEFAULT_BANDWIDTH: f64 = 0.05;
/// Range accepted for a user bandwidth override.
pub const BANDWIDTH_RANGE: (f64, f64) = (0.01, 0.1);
pub const BANDWIDTH_PARAM: &str = "bandwidth.log_h";
pub const MASK_RAYS: usize = 14;
/// Stopping threshold of converge-mode mean-shift.
pub const DEFAULT_MS_EPS: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum JointError {
    #[error("{points} points but {attention} attention values")]
    LengthMismatch { points: usize, attention: usize },
    #[error("attention value {0} outside [0, 1]")]
    AttentionRange(f64),
    #[error("chamfer distance of an empty point set")]
    EmptySet,
    #[error("bandwidth {0} outside [0.01, 0.1]")]
    BandwidthRange(f64),
    #[error("no training samples")]
    NoSamples,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Displaced points with their per-point attention.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacedCloud {
    points: Vec<Point>,
    attention: Vec<f64>,
}

impl DisplacedCloud {
    pub fn new(points: Vec<Point>, attention: Vec<f64>) -> Result<Self, JointError> {
        if points.len() != attention.len() {
            return Err(JointError::LengthMismatch { points: points.len(), attention: attention.len() });
        }
        if let Some(&a) = attention.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(JointError::AttentionRange(a));
        }
        Ok(Self { points, attention })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn attention(&self) -> &[f64] {
        &self.attention
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Originals followed by their reflections, attention duplicated.
pub fn symmetrize_cloud(cloud: &DisplacedCloud, plane: &SymmetryPlane) -> DisplacedCloud {
    let mut points = cloud.points.clone();
    points.extend(crate::mesh::reflect(&cloud.points, plane));
    let mut attention = cloud.attention.clone();
    attention.extend_from_slice(&cloud.attention);
    DisplacedCloud { points, attention }
}

/// Share of the total density under which a collapsed point is discarded.
pub const DEFAULT_DENSITY_THRESHOLD: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterParams {
    pub bandwidth: f64,
    pub eps: f64,
    pub density_threshold: f64,
    pub symmetry: Option<SymmetryPlane>,
}

impl ClusterParams {
    pub fn new(bandwidth: f64) -> Self {
        Self { bandwidth, eps: DEFAULT_MS_EPS, density_threshold: DEFAULT_DENSITY_THRESHOLD, symmetry: Some(SymmetryPlane::x0()) }
    }
}

/// Optional symmetrization, converge-mode mean-shift and filtered mode extraction.
pub fn predict_joints(cloud: &DisplacedCloud, params: &ClusterParams) -> JointSet {
    let sym;
    let cloud = match &params.symmetry {
        Some(plane) => {
            sym = symmetrize_cloud(cloud, plane);
            &sym
        }
        None => cloud,
    };
    let collapsed = mean_shift_converge(&cloud.points, &cloud.attention, params.bandwidth, params.eps, 500);
    if !collapsed.converged {
        log::warn!("mean-shift stopped after {} iterations without converging", collapsed.iterations);
    }
    extract_modes_filtered(&collapsed.points, &cloud.attention, params.bandwidth, params.density_threshold)
}

/// Converge-mode clustering followed by mode extraction.
pub fn cluster(cloud: &DisplacedCloud, h: f64, eps: f64) -> JointSet {
    let collapsed = mean_shift_converge(&cloud.points, &cloud.attention, h, eps, 500);
    if !collapsed.converged {
        log::warn!("mean-shift stopped after {} iterations without converging", collapsed.iterations);
    }
    extract_modes(&collapsed.points, &cloud.attention, h)
}

/// Symmetric Chamfer distance: mean nearest distance from `a` to `b` plus
/// the mean from `b` to `a`.
pub fn chamfer_symmetric(a: &[Point], b: &[Point]) -> Result<f64, JointError> {
    if a.is_empty() || b.is_empty() {
        return Err(JointError::EmptySet);
    }
    let one_way = |x: &[Point], y: &[Point]| {
        x.iter().map(|p| y.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()).sum::<f64>()
            / x.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// [`chamfer_symmetric`] on the tape; `a` is `[Na,3]`, `b` is `[Nb,3]`.
/// Adds 1e-12 under the square root so coincident points stay differentiable.
pub fn chamfer_tape(tape: &mut Tape, a: Var, b: Var) -> Result<Var, AutodiffError> {
    let d = tape.sq_dist(a, b)?;
    let mut total = None;
    for axis in [1, 0] {
        let m = tape.min_reduce(d, axis)?;
        let m = tape.add_scalar(m, 1e-12)?;
        let m = tape.sqrt(m)?;
        let m = tape.mean(m)?;
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m)?,
        });
    }
    Ok(total.expect("two terms"))
}

pub fn points_tensor(points: &[Point]) -> Tensor {
    Tensor::new(points.len(), 3, points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()).expect("3 columns")
}

pub fn tensor_points(t: &Tensor) -> Vec<Point> {
    (0..t.rows()).map(|r| {
        let s = t.row_slice(r);
        Point::new(s[0], s[1], s[2])
    }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub labels: Vec<bool>,
    /// Reference joints whose rays marked no vertex.
    pub unmarked_joints: Vec<usize>,
}

impl AttentionMask {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }
}

/// Marks, for every joint, the mesh vertices nearest to where rays cast
/// perpendicular to its incident bones first hit the surface.
pub fn build_attention_mask(mesh: &Mesh, skeleton: &Skeleton) -> AttentionMask {
    let mut labels = vec![false; mesh.vertex_count()];
    let mut unmarked_joints = Vec::new();
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let mut axes = skeleton.incident_bone_directions(j);
        if axes.is_empty() {
            axes.push(crate::mesh::Vec3::y());
        }
        let mut marked = false;
        for axis in &axes {
            for dir in raycast::perpendicular_directions(axis, MASK_RAYS) {
                if let Some(hit) = raycast::first_hit(mesh, joint, &dir) {
                    labels[raycast::nearest_vertex(mesh, &hit.point)] = true;
                    marked = true;
                }
            }
        }
        if !marked {
            log::warn!("joint {j} at {:?}: no mask ray hit the mesh", joint.coords);
            unmarked_joints.push(j);
        }
    }
    AttentionMask { labels, unmarked_joints }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointNetConfig {
    pub displace: GMEdgeNetConfig,
    pub attention: GMEdgeNetConfig,
}

impl JointNetConfig {
    pub fn full_width() -> Self {
        Self { displace: GMEdgeNetConfig::joint(3), attention: GMEdgeNetConfig::joint(1) }
    }

    pub fn scaled(factor: f64) -> Self {
        let t = Self::full_width();
        Self { displace: t.displace.scaled(factor), attention: t.attention.scaled(factor) }
    }
}

/// Displacement and attention networks plus the learned bandwidth.
#[derive(Clone, Debug, PartialEq)]
pub struct JointNets {
    pub displace: GMEdgeNet,
    pub attention: GMEdgeNet,
}

/// Tape handles of one joint-stage forward pass.
pub struct JointForward {
    /// Displaced points `q = x + f_d(x)`, `V x 3`.
    pub q: Var,
    /// Attention logits, `V x 1`.
    pub logits: Var,
}

impl JointNets {
    pub fn new(config: &JointNetConfig) -> Self {
        Self {
            displace: GMEdgeNet::new("displace", config.displace.clone()),
            attention: GMEdgeNet::new("attn", config.attention.clone()),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        self.displace.init_zero_output(store, rng)?;
        self.attention.init(store, rng)?;
        store.insert(BANDWIDTH_PARAM, Tensor::scalar(DEFAULT_BANDWIDTH.ln()))
    }

    pub fn bandwidth(store: &ParamStore) -> Option<f64> {
        store.get(BANDWIDTH_PARAM).map(|t| t.item().exp())
    }

    pub fn attention_logits(&self, tape: &mut Tape, store: &ParamStore, x: Var, index: &NeighborIndex) -> Result<Var, AutodiffError> {
        Ok(self.attention.forward(tape, store, x, index)?.0)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, index: &NeighborIndex) -> Result<JointForward, AutodiffError> {
        let (disp, _) = self.displace.forward(tape, store, x, index)?;
        let q = tape.add(x, disp)?;
        let logits = self.attention_logits(tape, store, x, index)?;
        Ok(JointForward { q, logits })
    }

    /// Displaced points and attention for a mesh.
    pub fn predict(&self, store: &ParamStore, mesh: &Mesh, graph: &VertexGraph) -> Result<DisplacedCloud, JointError> {
        let index = NeighborIndex::new(graph);
        let mut tape = Tape::new();
        let x = tape.constant(points_tensor(mesh.vertices()))?;
        let f = self.forward(&mut tape, store, x, &index)?;
        let points = tensor_points(tape.value(f.q));
        let attention = tape.value(f.logits).data().iter().map(|&z| crate::autodiff::sigmoid(z)).collect();
        DisplacedCloud::new(points, attention)
    }
}

/// Validates a user bandwidth override.
pub fn check_bandwidth(h: f64) -> Result<f64, JointError> {
    if (BANDWIDTH_RANGE.0..=BANDWIDTH_RANGE.1).contains(&h) {
        Ok(h)
    } else {
        Err(JointError::BandwidthRange(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_hand_values() {
        let a = [Point::new(0.0, 0.0, 0.0)];
        let b = [Point::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer_symmetric(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer_symmetric(&a, &a).unwrap(), 0.0);
        assert!(matches!(chamfer_symmetric(&a, &[]), Err(JointError::EmptySet)));
    }

    #[test]
    fn symmetrize_single_point() {
        let c = DisplacedCloud::new(vec![Point::new(0.3, 0.1, 0.0)], vec![0.7]).unwrap();
        let s = symmetrize_cloud(&c, &SymmetryPlane::x0());
        assert_eq!(s.points(), &[Point::new(0.3, 0.1, 0.0), Point::new(-0.3, 0.1, 0.0)]);
        assert_eq!(s.attention(), &[0.7, 0.7]);
    }

    #[test]
    fn attention_outside_unit_interval_is_rejected() {
        assert!(DisplacedCloud::new(vec![Point::origin()], vec![1.5]).is_err());
    }

    #[test]
    fn bandwidth_range() {
        assert!(check_bandwidth(0.01).is_ok());
        assert!(check_bandwidth(0.1).is_ok());
        assert!(check_bandwidth(0.2).is_err());
    }
}
