//! Shared fixtures for the criterion benches.

use std::path::{Path, PathBuf};

use rigforge_core::mesh::Mesh;
use rigforge_core::rig::RigFile;

pub fn asset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

/// Mesh and reference rig of a bundled character.
pub fn character(name: &str) -> (Mesh, RigFile) {
    let dir = asset_dir();
    let mesh = Mesh::from_obj(&std::fs::read(dir.join(format!("{name}.obj"))).expect("bundled mesh")).expect("valid mesh");
    let text = std::fs::read_to_string(dir.join(format!("{name}.rig"))).expect("bundled rig");
    (mesh, RigFile::parse(&text).expect("valid rig").0)
}
