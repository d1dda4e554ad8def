use rigforge_bench::{asset_dir, character};

#[test]
fn bundled_fixtures_load() {
    for name in ["humanoid", "quadruped", "bird", "robot", "spider"] {
        let (mesh, rig) = character(name);
        rig.validate().unwrap();
        assert_eq!(rig.skin_matrix(mesh.vertex_count()).unwrap().rows(), mesh.vertex_count());
    }
    assert!(asset_dir().join("ckpt/run.toml").exists());
}
