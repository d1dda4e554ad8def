use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rigforge_core::mesh::Mesh;
use rigforge_core::rig::RigFile;

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets").join(name)
}

fn rigforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigforge")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn rig_output_is_valid_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = asset("bird.obj");
    let (a, b) = (dir.path().join("a.rig"), dir.path().join("b.rig"));
    for out in [&a, &b] {
        let o = rigforge(&["rig", mesh.to_str().unwrap(), "--seed", "3", "-o", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let (rig, warnings) = RigFile::parse(&text).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    rig.validate().unwrap();
    let v = Mesh::from_obj(&std::fs::read(&mesh).unwrap()).unwrap().vertex_count();
    assert_eq!(rig.skin.len(), v);
    assert_eq!(rig.to_text().unwrap(), text);
}

#[test]
fn bandwidth_out_of_range_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.rig");
    for h in ["0.2", "0.005"] {
        let o = rigforge(&["rig", asset("bird.obj").to_str().unwrap(), "--bandwidth", h, "-o", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("[0.01, 0.1]"), "{}", stderr(&o));
    }
    assert!(!out.exists());
}

#[test]
fn missing_input_and_bad_usage_exit_2() {
    let o = rigforge(&["rig", "/nonexistent/mesh.obj", "-o", "/tmp/never.rig"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/mesh.obj"));
    assert_eq!(rigforge(&["rig"]).status.code(), Some(2));
    assert_eq!(rigforge(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(rigforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_rig_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.rig");
    std::fs::write(&bad, "joints a 0 0 0\nroot b\n").unwrap();
    let mesh = asset("bird.obj");
    let o = rigforge(&["eval", "--pred", bad.to_str().unwrap(), "--ref", asset("bird.rig").to_str().unwrap(), "--mesh", mesh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn eval_pred_equals_ref_is_exact() {
    let rig = asset("humanoid.rig");
    let o = rigforge(&[
        "eval",
        "--pred",
        rig.to_str().unwrap(),
        "--ref",
        rig.to_str().unwrap(),
        "--mesh",
        asset("humanoid.obj").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["shape"], "humanoid");
    let sk = &v["skeleton"];
    for k in ["cd_j2j", "cd_j2b", "cd_b2b"] {
        assert_eq!(sk[k].as_f64(), Some(0.0), "{k}");
    }
    for k in ["iou", "precision", "recall"] {
        assert_eq!(sk[k].as_f64(), Some(1.0), "{k}");
    }
    assert_eq!(sk["tree_edit_distance"].as_u64(), Some(0));
    let skin = &v["skin"];
    for k in ["precision", "recall"] {
        assert_eq!(skin[k].as_f64(), Some(1.0), "{k}");
    }
    for k in ["avg_l1", "avg_dist", "max_dist"] {
        assert_eq!(skin[k].as_f64(), Some(0.0), "{k}");
    }
}

#[test]
fn eval_csv_has_header_and_row() {
    let rig = asset("spider.rig");
    let o = rigforge(&[
        "eval",
        "--pred",
        rig.to_str().unwrap(),
        "--ref",
        rig.to_str().unwrap(),
        "--mesh",
        asset("spider.obj").to_str().unwrap(),
        "--csv",
        "--poses",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], rigforge_cli::commands::EVAL_CSV_HEADER);
    assert_eq!(lines[1].split(',').count(), lines[0].split(',').count());
    assert!(lines[1].starts_with("spider,0,0,0,1,1,1,0,1,1,0,0,0"), "{}", lines[1]);
}

#[test]
fn deform_identity_pose_keeps_vertices() {
    let dir = tempfile::tempdir().unwrap();
    let pose = dir.path().join("pose.json");
    let out = dir.path().join("out.obj");
    std::fs::write(&pose, r#"{"rotations": {}}"#).unwrap();
    let mesh = asset("robot.obj");
    let o = rigforge(&[
        "deform",
        "--mesh",
        mesh.to_str().unwrap(),
        "--rig",
        asset("robot.rig").to_str().unwrap(),
        "--pose",
        pose.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let before = Mesh::from_obj(&std::fs::read(&mesh).unwrap()).unwrap();
    let after = Mesh::from_obj(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(before.triangles(), after.triangles());
    for (p, q) in before.vertices().iter().zip(after.vertices()) {
        assert!((p - q).norm() < 1e-9);
    }
}

#[test]
fn deform_translation_and_unknown_joint() {
    let dir = tempfile::tempdir().unwrap();
    let pose = dir.path().join("pose.json");
    let out = dir.path().join("out.obj");
    let mesh = asset("robot.obj");
    let rig = asset("robot.rig");
    let args = |p: &Path, o: &Path| {
        vec![
            "deform".to_string(),
            "--mesh".into(),
            mesh.to_str().unwrap().into(),
            "--rig".into(),
            rig.to_str().unwrap().into(),
            "--pose".into(),
            p.to_str().unwrap().into(),
            "-o".into(),
            o.to_str().unwrap().into(),
        ]
    };
    std::fs::write(&pose, r#"{"translation": [1.0, -2.0, 0.5]}"#).unwrap();
    let a = args(&pose, &out);
    let o = rigforge(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let before = Mesh::from_obj(&std::fs::read(&mesh).unwrap()).unwrap();
    let after = Mesh::from_obj(&std::fs::read(&out).unwrap()).unwrap();
    let shift = nalgebra::Vector3::new(1.0, -2.0, 0.5);
    for (p, q) in before.vertices().iter().zip(after.vertices()) {
        assert!((p + shift - q).norm() < 1e-9);
    }

    std::fs::write(&pose, r#"{"rotations": {"no_such_joint": [0, 0, 0, 1]}}"#).unwrap();
    let o = rigforge(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_joint"));
}

#[test]
fn synth_writes_mini_set() {
    let dir = tempfile::tempdir().unwrap();
    let o = rigforge(&["synth", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["humanoid", "quadruped", "bird", "robot", "spider"] {
        let generated = std::fs::read_to_string(dir.path().join(format!("{name}.rig"))).unwrap();
        let bundled = std::fs::read_to_string(asset(&format!("{name}.rig"))).unwrap();
        assert_eq!(generated, bundled, "{name}");
    }
}
