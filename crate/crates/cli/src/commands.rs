//! Subcommands: rig, train, eval, deform, serve, synth.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rigforge_core::autodiff::Tensor;
use rigforge_core::connectivity::Skeleton;
use rigforge_core::joints::{check_bandwidth, BANDWIDTH_RANGE};
use rigforge_core::mesh::Mesh;
use rigforge_core::metrics::{skeleton_report, skin_report, SkeletonReport, SkinReport, EVAL_POSES};
use rigforge_core::rig::{load_dataset, Character, Models, RigFile, RigOptions, RunConfig, Stage};
use rigforge_core::skinning::lbs_deform;

use crate::pose::PoseSpec;
use crate::{read_input, CliError};

#[derive(Debug, Parser)]
#[command(name = "rigforge", version, about = "Skeleton and skinning prediction for 3D character meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict a rig for a mesh.
    Rig(RigArgs),
    /// Train one stage on a directory of rigged meshes.
    Train(TrainArgs),
    /// Compare a predicted rig against a reference rig.
    Eval(EvalArgs),
    /// Pose a rigged mesh with linear blend skinning.
    Deform(DeformArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Write the bundled synthetic characters.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RigArgs {
    pub mesh: PathBuf,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub no_symmetry: bool,
    /// Checkpoint directory; without it the networks are untrained.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StageArg {
    Joints,
    Conn,
    Skin,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub stage: StageArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint directory; other stages already there are kept.
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub csv: bool,
    #[arg(long, default_value_t = EVAL_POSES)]
    pub poses: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DeformArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Rig(a) => rig(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Deform(a) => deform(&a),
        Command::Serve(a) => serve(&a),
        Command::Synth(a) => synth(&a),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Models from a checkpoint directory, or freshly seeded ones.
pub fn load_models(ckpt: Option<&Path>, config: Option<&Path>, seed: Option<u64>) -> Result<Models, CliError> {
    match ckpt {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::Validation(format!("checkpoint directory {} not found", dir.display())));
            }
            let mut models = match config {
                Some(_) => Models::load_with_config(dir, &load_config(config, seed)?)?,
                None => Models::load(dir)?,
            };
            if let Some(s) = seed {
                models.config.seed = s;
            }
            Ok(models)
        }
        None => {
            log::warn!("no checkpoint given; using untrained networks");
            Ok(Models::init(&load_config(config, seed)?)?)
        }
    }
}

fn parse_mesh(path: &Path) -> Result<Mesh, CliError> {
    Mesh::from_obj(&read_input(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn parse_rig(path: &Path) -> Result<RigFile, CliError> {
    let text = String::from_utf8(read_input(path)?).map_err(|_| CliError::Validation(format!("{}: not UTF-8", path.display())))?;
    let (rig, warnings) = RigFile::parse(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    for w in warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(rig)
}

pub fn rig(a: &RigArgs) -> Result<(), CliError> {
    if let Some(h) = a.bandwidth {
        check_bandwidth(h).map_err(|_| {
            CliError::Validation(format!("bandwidth {h} outside the valid range [{}, {}]", BANDWIDTH_RANGE.0, BANDWIDTH_RANGE.1))
        })?;
    }
    let mesh = parse_mesh(&a.mesh)?;
    let models = load_models(a.ckpt.as_deref(), a.config.as_deref(), a.seed)?;
    let prepared = models.prepare(&mesh)?;
    let rig = models.rig(&prepared, &RigOptions { bandwidth: a.bandwidth, symmetry: !a.no_symmetry })?;
    std::fs::write(&a.out, rig.to_text().map_err(|e| CliError::Internal(e.to_string()))?)?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(a.config.as_deref(), a.seed)?;
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    let characters = load_dataset(&a.data).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut models = if a.out.is_dir() { Models::load_with_config(&a.out, &cfg)? } else { Models::init(&cfg)? };
    let every = 100;
    let (stage, losses) = match a.stage {
        StageArg::Joints => {
            let r = models.train_joints(&characters, |_, _| false)?;
            log::info!("bandwidth after training: {}", r.bandwidth);
            (Stage::Joints, r.losses)
        }
        StageArg::Conn => {
            let samples = models.conn_samples(&characters)?;
            (Stage::Conn, models.train_conn(&samples, |_, _| false)?.losses)
        }
        StageArg::Skin => {
            let samples = models.skin_samples(&characters)?;
            (Stage::Skin, models.train_skin(&samples, |_, _| false)?.losses)
        }
    };
    for (i, l) in losses.iter().enumerate().filter(|(i, _)| i % every == 0) {
        log::info!("step {i}: loss {l:.6}");
    }
    models.save_stage(&a.out, stage)?;
    let summary = serde_json::json!({
        "stage": format!("{stage:?}").to_lowercase(),
        "steps": losses.len(),
        "final_loss": losses.last(),
    });
    println!("{summary}");
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub shape: String,
    pub skeleton: SkeletonReport,
    pub skin: Option<SkinReport>,
}

pub const EVAL_CSV_HEADER: &str =
    "shape,cd_j2j,cd_j2b,cd_b2b,iou,precision,recall,tree_edit_distance,skin_precision,skin_recall,avg_l1,avg_dist,max_dist";

impl EvalOutput {
    pub fn csv_row(&self) -> String {
        let skin = match &self.skin {
            Some(s) => format!("{},{},{},{},{}", s.precision, s.recall, s.avg_l1, s.avg_dist, s.max_dist),
            None => ",,,,".to_string(),
        };
        format!("{},{}", self.skeleton.csv_row(&self.shape), skin)
    }
}

/// Predicted weights re-indexed onto the reference bones, when both rigs
/// share joint names and hierarchy.
fn aligned_skin(pred: &RigFile, reference: &RigFile, vertices: usize) -> Result<Option<Tensor>, CliError> {
    let key = |r: &RigFile| {
        let mut h = r.hier.clone();
        h.sort();
        let mut j: Vec<&String> = r.joints.iter().map(|x| &x.0).collect();
        j.sort();
        (h, j.into_iter().cloned().collect::<Vec<_>>(), r.root.clone())
    };
    if pred.skin.is_empty() || reference.skin.is_empty() || key(pred) != key(reference) {
        return Ok(None);
    }
    let bad = |e: rigforge_core::rig::RigError| CliError::Validation(e.to_string());
    let (ps, rs) = (pred.skeleton().map_err(bad)?, reference.skeleton().map_err(bad)?);
    let pw = pred.skin_matrix(vertices).map_err(bad)?;
    let mut out = Tensor::zeros(vertices, rs.bone_count());
    for (rb, &(_, rc)) in rs.bones().iter().enumerate() {
        let name = &reference.joints[rc].0;
        let pc = pred.joints.iter().position(|j| &j.0 == name).expect("same joint names");
        let pb = ps.bone_of_child(pc).expect("non-root child");
        for v in 0..vertices {
            out.set(v, rb, pw.get(v, pb));
        }
    }
    Ok(Some(out))
}

pub fn evaluate(pred: &RigFile, reference: &RigFile, mesh: &Mesh, shape: &str, poses: usize, seed: u64) -> Result<EvalOutput, CliError> {
    let mesh = mesh.normalized().map_err(|e| CliError::Validation(e.to_string()))?;
    let n = mesh.normalization();
    let (pred_n, ref_n) = (pred.normalized(&n), reference.normalized(&n));
    let bad = |e: rigforge_core::rig::RigError| CliError::Validation(e.to_string());
    let ps: Skeleton = pred_n.skeleton().map_err(bad)?;
    let rs: Skeleton = ref_n.skeleton().map_err(bad)?;
    let skeleton = skeleton_report(&ps, &rs, &mesh).map_err(|e| CliError::Validation(e.to_string()))?;
    let skin = match aligned_skin(&pred_n, &ref_n, mesh.vertex_count())? {
        Some(pw) => {
            let rw = ref_n.skin_matrix(mesh.vertex_count()).map_err(bad)?;
            Some(skin_report(&pw, &rw, &rs, &mesh, poses, seed).map_err(|e| CliError::Validation(e.to_string()))?)
        }
        None => None,
    };
    Ok(EvalOutput { shape: shape.to_string(), skeleton, skin })
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let pred = parse_rig(&a.pred)?;
    let reference = parse_rig(&a.reference)?;
    let mesh = parse_mesh(&a.mesh)?;
    let shape = a.mesh.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
    let out = evaluate(&pred, &reference, &mesh, shape, a.poses, a.seed)?;
    if a.csv {
        println!("{EVAL_CSV_HEADER}\n{}", out.csv_row());
    } else {
        println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::Internal(e.to_string()))?);
    }
    Ok(())
}

pub fn deform(a: &DeformArgs) -> Result<(), CliError> {
    let mesh = parse_mesh(&a.mesh)?;
    let rig = parse_rig(&a.rig)?;
    let text = String::from_utf8(read_input(&a.pose)?).map_err(|_| CliError::Validation("pose: not UTF-8".into()))?;
    let spec = PoseSpec::parse(&text)?;
    let names: Vec<String> = rig.joints.iter().map(|j| j.0.clone()).collect();
    let pose = spec.to_pose(&names)?;
    let skeleton = rig.skeleton().map_err(|e| CliError::Validation(e.to_string()))?;
    let weights = rig.skin_matrix(mesh.vertex_count()).map_err(|e| CliError::Validation(e.to_string()))?;
    let moved = lbs_deform(mesh.vertices(), &skeleton, &weights, &pose);
    let out = Mesh::new(moved, mesh.triangles().to_vec()).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&a.out, out.to_obj())?;
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let models = load_models(a.ckpt.as_deref(), a.config.as_deref(), a.seed)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, crate::server::router(models)).await
    })?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    for spec in rigforge_core::synth::mini_set_specs() {
        let c = spec.build().map_err(|e| CliError::Internal(e.to_string()))?;
        let ch = Character::from_synth(&c)?;
        ch.write(&a.out)?;
        eprintln!("wrote {} ({} vertices, {} joints)", ch.name, ch.mesh.vertex_count(), ch.skeleton.joint_count());
    }
    Ok(())
}
