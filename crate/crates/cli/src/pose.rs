//! Pose JSON: `{"rotations": {"<joint>": [x, y, z, w]}, "translation": [x, y, z]}`.

use std::collections::BTreeMap;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::Deserialize;

use rigforge_core::mesh::Vec3;
use rigforge_core::skinning::Pose;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    #[serde(default)]
    pub rotations: BTreeMap<String, [f64; 4]>,
    #[serde(default)]
    pub translation: Option<[f64; 3]>,
}

impl PoseSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("pose: {e}")))
    }

    /// Resolves joint names against `names`; unnamed joints keep the identity.
    pub fn to_pose(&self, names: &[String]) -> Result<Pose, CliError> {
        let mut pose = Pose::identity(names.len());
        for (joint, q) in &self.rotations {
            let j = names.iter().position(|n| n == joint).ok_or_else(|| CliError::Validation(format!("pose: unknown joint `{joint}`")))?;
            let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
            if !(quat.norm() > 1e-12) || q.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Validation(format!("pose: rotation of `{joint}` is not a valid quaternion")));
            }
            pose.rotations[j] = UnitQuaternion::from_quaternion(quat);
        }
        if let Some(t) = self.translation {
            pose.translation = Vec3::new(t[0], t[1], t[2]);
        }
        Ok(pose)
    }
}
