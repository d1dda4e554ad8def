//! Directory of `<name>.obj` meshes with matching `<name>.rig` files.

use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::connectivity::Skeleton;
use crate::mesh::Mesh;
use crate::synth::SynthCharacter;

use super::file::RigFile;
use super::PipelineError;

/// A rigged character in the normalized frame.
#[derive(Clone, Debug)]
pub struct Character {
    pub name: String,
    pub mesh: Mesh,
    pub joint_names: Vec<String>,
    pub skeleton: Skeleton,
    /// Reference weights, `V x B` with bones as in [`Skeleton::bones`].
    pub skin: Tensor,
}

impl Character {
    /// Loads a mesh and its rig; joints are moved into the mesh's normalized frame.
    pub fn load(name: &str, obj: &[u8], rig_text: &str) -> Result<Self, PipelineError> {
        let raw = Mesh::from_obj(obj)?;
        let mesh = raw.normalized()?;
        let (rig, _) = RigFile::parse(rig_text)?;
        if let Some((v, _)) = rig.skin.last() {
            if *v >= mesh.vertex_count() {
                return Err(PipelineError::Invalid(format!("{name}: skin vertex {v} beyond {} vertices", mesh.vertex_count())));
            }
        }
        let rig = rig.normalized(&mesh.normalization());
        let skin = rig.skin_matrix(mesh.vertex_count())?;
        Ok(Self {
            name: name.to_string(),
            joint_names: rig.joints.iter().map(|j| j.0.clone()).collect(),
            skeleton: rig.skeleton()?,
            mesh,
            skin,
        })
    }

    pub fn from_synth(c: &SynthCharacter) -> Result<Self, PipelineError> {
        let skin = crate::skinning::dense_from_sparse(&c.skin, c.skeleton.bone_count())?;
        Ok(Self { name: c.name.clone(), mesh: c.mesh.clone(), joint_names: c.joint_names.clone(), skeleton: c.skeleton.clone(), skin })
    }

    /// The reference rig in original mesh coordinates.
    pub fn rig_file(&self) -> Result<RigFile, PipelineError> {
        let rig = RigFile::from_skeleton(&self.joint_names, &self.skeleton, Some(&self.skin))?;
        let n = self.mesh.normalization();
        Ok(rig.map_joints(|p| n.invert(p)))
    }

    /// Mesh in original coordinates as OBJ text.
    pub fn original_obj(&self) -> String {
        let n = self.mesh.normalization();
        let verts = self.mesh.vertices().iter().map(|p| n.invert(p)).collect();
        Mesh::new(verts, self.mesh.triangles().to_vec()).map(|m| m.to_obj()).unwrap_or_default()
    }

    /// Writes `<dir>/<name>.obj` and `<dir>/<name>.rig`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.obj", self.name)), self.original_obj())?;
        std::fs::write(dir.join(format!("{}.rig", self.name)), self.rig_file()?.to_text()?)?;
        Ok(())
    }
}

/// `(name, obj path, rig path)` for every mesh in `dir` with a rig, sorted by name.
pub fn dataset_entries(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, PipelineError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("obj") {
            continue;
        }
        let rig = path.with_extension("rig");
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if !rig.exists() {
            return Err(PipelineError::Invalid(format!("{} has no matching .rig", path.display())));
        }
        out.push((name, path, rig));
    }
    out.sort();
    if out.is_empty() {
        return Err(PipelineError::Invalid(format!("no .obj/.rig pairs in {}", dir.display())));
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Character>, PipelineError> {
    dataset_entries(dir)?
        .into_iter()
        .map(|(name, obj, rig)| Character::load(&name, &std::fs::read(obj)?, &std::fs::read_to_string(rig)?))
        .collect()
}
