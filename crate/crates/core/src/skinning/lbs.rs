//! Linear blend skinning and random poses.

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::connectivity::Skeleton;
use crate::mesh::{Point, Vec3};

/// Largest random joint rotation, in radians (30 degrees).
pub const MAX_POSE_ANGLE: f64 = std::f64::consts::PI / 6.0;

/// Per-joint local rotations and a global root translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity(joint_count: usize) -> Self {
        Self { rotations: vec![UnitQuaternion::identity(); joint_count], translation: Vec3::zeros() }
    }

    /// Skinning transform of every joint: posed global frame composed with
    /// the inverse rest frame.
    pub fn joint_transforms(&self, skeleton: &Skeleton) -> Vec<Isometry3<f64>> {
        let joints = skeleton.joints();
        let mut global = vec![Isometry3::identity(); joints.len()];
        for j in skeleton.preorder() {
            let local = match skeleton.parent(j) {
                None => Isometry3::from_parts(Translation3::from(joints[j].coords + self.translation), self.rotations[j]),
                Some(p) => {
                    let offset = Isometry3::from_parts(Translation3::from(joints[j] - joints[p]), self.rotations[j]);
                    global[p] * offset
                }
            };
            global[j] = local;
        }
        global.iter().zip(joints).map(|(g, t)| g * Translation3::from(-t.coords)).collect()
    }
}

/// `v' = sum_b w_vb T_b v`, where bone `b` moves with its parent joint.
pub fn lbs_deform(vertices: &[Point], skeleton: &Skeleton, weights: &Tensor, pose: &Pose) -> Vec<Point> {
    let transforms = pose.joint_transforms(skeleton);
    let bone_tf: Vec<Isometry3<f64>> = skeleton.bones().iter().map(|&(p, _)| transforms[p]).collect();
    vertices
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let row = weights.row_slice(v);
            let mut out = Vec3::zeros();
            for (b, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    out += (bone_tf[b] * p).coords * w;
                }
            }
            Point::from(out)
        })
        .collect()
}

/// Axis uniform on the sphere, angle uniform in [-30, 30] degrees, zero
/// root translation.
pub fn sample_random_pose(skeleton: &Skeleton, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotations = (0..skeleton.joint_count())
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let axis = Unit::new_normalize(Vec3::new(r * phi.cos(), r * phi.sin(), z));
            UnitQuaternion::from_axis_angle(&axis, rng.gen_range(-MAX_POSE_ANGLE..=MAX_POSE_ANGLE))
        })
        .collect();
    Pose { rotations, translation: Vec3::zeros() }
}
