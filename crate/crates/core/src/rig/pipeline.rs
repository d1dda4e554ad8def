//! Inference and training over the three stages, with checkpoints.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tensor};
use crate::connectivity::{
    extract_skeleton, train_connectivity, ConnFeatures, ConnNetConfig, ConnNets, ConnSample, ConnTrainConfig, ConnTrainReport, Skeleton,
};
use crate::joints::{
    check_bandwidth, points_tensor, predict_joints, train_joint_stage, ClusterParams, DisplacedCloud, JointNetConfig, JointNets,
    JointSample, JointTrainConfig, JointTrainReport, BANDWIDTH_RANGE,
};
use crate::mesh::{build_vertex_graph, volumetric_geodesic, voxelize, Mesh, SymmetryPlane, VertexGraph, VolumetricGrid};
use crate::skinning::{
    compute_skin_features, dense_from_sparse, scatter_weights, skin_net_config, sparse_rows, train_skinning, SkinNets, SkinSample,
    SkinTrainConfig, SkinTrainReport,
};

use super::config::RunConfig;
use super::dataset::Character;
use super::file::RigFile;
use super::PipelineError;

pub const JOINT_CKPT: &str = "joints.ckpt";
pub const CONN_CKPT: &str = "conn.ckpt";
pub const SKIN_CKPT: &str = "skin.ckpt";
pub const CONFIG_FILE: &str = "run.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Joints,
    Conn,
    Skin,
}

impl Stage {
    pub fn file(self) -> &'static str {
        match self {
            Stage::Joints => JOINT_CKPT,
            Stage::Conn => CONN_CKPT,
            Stage::Skin => SKIN_CKPT,
        }
    }
}

/// All three stages' networks and parameters.
#[derive(Clone, Debug)]
pub struct Models {
    pub config: RunConfig,
    pub joints: JointNets,
    pub joint_store: ParamStore,
    pub conn: ConnNets,
    pub conn_store: ParamStore,
    pub skin: SkinNets,
    pub skin_store: ParamStore,
}

/// Per-mesh data reused across bandwidth changes: the displaced cloud,
/// its attention and the shape code.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub mesh: Mesh,
    pub graph: VertexGraph,
    pub grid: VolumetricGrid,
    pub cloud: DisplacedCloud,
    pub shape_code: Tensor,
    pub learned_bandwidth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigOptions {
    pub bandwidth: Option<f64>,
    pub symmetry: bool,
}

impl Default for RigOptions {
    fn default() -> Self {
        Self { bandwidth: None, symmetry: true }
    }
}

impl Models {
    /// Fresh networks at the config's width, seeded from `config.seed`.
    pub fn init(config: &RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let s = config.width_scale;
        let joint_cfg = if s == 1.0 { JointNetConfig::full_width() } else { JointNetConfig::scaled(s) };
        let conn_cfg = if s == 1.0 { ConnNetConfig::full_width() } else { ConnNetConfig::scaled(s) };
        let joints = JointNets::new(&joint_cfg);
        let conn = ConnNets::new(conn_cfg);
        let skin = SkinNets::new(skin_net_config(s));
        let mut joint_store = ParamStore::new();
        let mut conn_store = ParamStore::new();
        let mut skin_store = ParamStore::new();
        joints.init(&mut joint_store, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
        conn.init(&mut conn_store, &mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)))?;
        skin.init(&mut skin_store, &mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2)))?;
        Ok(Self { config: config.clone(), joints, joint_store, conn, conn_store, skin, skin_store })
    }

    /// Loads a checkpoint directory. Widths come from its `run.toml`; a
    /// missing stage file leaves that stage at its seeded initialization.
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let cfg_path = dir.join(CONFIG_FILE);
        let config = if cfg_path.exists() { RunConfig::load(&cfg_path)? } else { RunConfig::default() };
        Self::load_with_config(dir, &config)
    }

    /// Like [`Models::load`] but with the caller's config; stage files must
    /// match its widths.
    pub fn load_with_config(dir: &Path, config: &RunConfig) -> Result<Self, PipelineError> {
        let mut m = Self::init(config)?;
        for stage in [Stage::Joints, Stage::Conn, Stage::Skin] {
            let path = dir.join(stage.file());
            if !path.exists() {
                log::warn!("{} missing, stage uses untrained weights", path.display());
                continue;
            }
            let saved = ParamStore::read_checkpoint(std::io::BufReader::new(std::fs::File::open(&path)?))?;
            let store = m.store_mut(stage);
            let copied = store.load_matching(&saved)?;
            if copied != store.len() {
                return Err(PipelineError::Invalid(format!("{}: {copied} of {} parameters found", path.display(), store.len())));
            }
        }
        Ok(m)
    }

    fn store_mut(&mut self, stage: Stage) -> &mut ParamStore {
        match stage {
            Stage::Joints => &mut self.joint_store,
            Stage::Conn => &mut self.conn_store,
            Stage::Skin => &mut self.skin_store,
        }
    }

    fn store(&self, stage: Stage) -> &ParamStore {
        match stage {
            Stage::Joints => &self.joint_store,
            Stage::Conn => &self.conn_store,
            Stage::Skin => &self.skin_store,
        }
    }

    /// Writes `run.toml` and one stage's checkpoint into `dir`.
    pub fn save_stage(&self, dir: &Path, stage: Stage) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), self.config.to_toml()?)?;
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join(stage.file()))?);
        self.store(stage).write_checkpoint(f)?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        for stage in [Stage::Joints, Stage::Conn, Stage::Skin] {
            self.save_stage(dir, stage)?;
        }
        Ok(())
    }

    /// Runs the networks whose output does not depend on the bandwidth.
    pub fn prepare(&self, mesh: &Mesh) -> Result<Prepared, PipelineError> {
        let mesh = mesh.normalized()?;
        let (graph, _) = build_vertex_graph(&mesh, self.config.radius);
        let grid = voxelize(&mesh, self.config.voxel_resolution)?;
        let cloud = self.joints.predict(&self.joint_store, &mesh, &graph)?;
        let shape_code = self.conn.shape_code(&self.conn_store, &points_tensor(mesh.vertices()), &graph)?;
        let learned = JointNets::bandwidth(&self.joint_store).unwrap_or(RunConfig::fallback_bandwidth());
        let learned_bandwidth = learned.clamp(BANDWIDTH_RANGE.0, BANDWIDTH_RANGE.1);
        Ok(Prepared { mesh, graph, grid, cloud, shape_code, learned_bandwidth })
    }

    /// Bandwidth used for `options`: the override, else the config's, else the learned one.
    pub fn bandwidth(&self, prepared: &Prepared, options: &RigOptions) -> Result<f64, PipelineError> {
        match options.bandwidth.or(self.config.bandwidth) {
            Some(h) => Ok(check_bandwidth(h)?),
            None => Ok(prepared.learned_bandwidth),
        }
    }

    /// Clustering plus connectivity, in the normalized frame.
    pub fn skeleton(&self, prepared: &Prepared, options: &RigOptions) -> Result<Skeleton, PipelineError> {
        let h = self.bandwidth(prepared, options)?;
        let mut params = ClusterParams::new(h);
        if !options.symmetry {
            params.symmetry = None;
        }
        let set = predict_joints(&prepared.cloud, &params);
        if set.joints.len() < 2 {
            return Err(PipelineError::TooFewJoints(set.joints.len()));
        }
        let features = ConnFeatures::new(&set.joints, &prepared.grid, &SymmetryPlane::x0());
        let (probs, root) = self.conn.predict(&self.conn_store, &prepared.shape_code, &features)?;
        Ok(extract_skeleton(&probs, &root, &set.joints))
    }

    /// Dense pruned weights, `V x B`.
    pub fn skin_weights(&self, prepared: &Prepared, skeleton: &Skeleton) -> Result<Tensor, PipelineError> {
        let geo = volumetric_geodesic(&prepared.grid, &prepared.mesh, &skeleton.bone_segments())?;
        let features = compute_skin_features(&prepared.mesh, skeleton, &geo)?;
        let field = self.skin.predict(&self.skin_store, &features, &prepared.graph)?;
        let dense = scatter_weights(&field, skeleton.bone_count())?;
        Ok(dense_from_sparse(&sparse_rows(&dense), skeleton.bone_count())?)
    }

    /// A complete rig in the original mesh coordinates.
    pub fn rig(&self, prepared: &Prepared, options: &RigOptions) -> Result<RigFile, PipelineError> {
        let skeleton = self.skeleton(prepared, options)?;
        let weights = self.skin_weights(prepared, &skeleton)?;
        Ok(to_rig_file(&skeleton, &weights, &prepared.mesh)?)
    }

    pub fn train_joints(
        &mut self,
        characters: &[Character],
        monitor: impl FnMut(usize, &ParamStore) -> bool,
    ) -> Result<JointTrainReport, PipelineError> {
        let c = &self.config;
        let samples: Vec<JointSample> =
            characters.iter().map(|ch| JointSample::new(&ch.name, ch.mesh.clone(), &ch.skeleton, c.radius)).collect();
        let cfg = JointTrainConfig {
            attention_lr: c.attention_lr,
            attention_epochs: c.attention_epochs,
            lr: c.joint_lr,
            steps: c.joint_steps,
            batch: c.joint_batch,
            unroll: c.unroll_steps,
            max_edges: c.max_edges,
            seed: c.seed,
            displace_warmup: c.joint_warmup_steps,
            warmup_lr: c.joint_warmup_lr,
        };
        Ok(train_joint_stage(&self.joints, &mut self.joint_store, &samples, &cfg, monitor)?)
    }

    pub fn conn_samples(&self, characters: &[Character]) -> Result<Vec<ConnSample>, PipelineError> {
        characters
            .iter()
            .map(|ch| {
                let grid = voxelize(&ch.mesh, self.config.voxel_resolution)?;
                Ok(ConnSample::new(&ch.name, &ch.mesh, &grid, &ch.skeleton, self.config.radius))
            })
            .collect()
    }

    pub fn train_conn(
        &mut self,
        samples: &[ConnSample],
        monitor: impl FnMut(usize, &ParamStore) -> bool,
    ) -> Result<ConnTrainReport, PipelineError> {
        let c = &self.config;
        let cfg = ConnTrainConfig {
            lr: c.conn_lr,
            batch: c.conn_batch,
            steps: c.conn_steps,
            negative_ratio: c.negative_ratio,
            max_edges: c.max_edges,
            seed: c.seed,
        };
        Ok(train_connectivity(&self.conn, &mut self.conn_store, samples, &cfg, monitor)?)
    }

    pub fn skin_samples(&self, characters: &[Character]) -> Result<Vec<SkinSample>, PipelineError> {
        characters
            .iter()
            .map(|ch| {
                let s = SkinSample::new(
                    &ch.name,
                    ch.mesh.clone(),
                    ch.skeleton.clone(),
                    ch.skin.clone(),
                    self.config.radius,
                    self.config.voxel_resolution,
                )?;
                if s.skipped > 0 {
                    log::warn!("{}: {} vertices skipped (reference mass outside the nearest bones)", ch.name, s.skipped);
                }
                Ok(s)
            })
            .collect()
    }

    pub fn train_skin(
        &mut self,
        samples: &[SkinSample],
        monitor: impl FnMut(usize, &ParamStore) -> bool,
    ) -> Result<SkinTrainReport, PipelineError> {
        let c = &self.config;
        let cfg = SkinTrainConfig { lr: c.skin_lr, batch: c.skin_batch, steps: c.skin_steps, max_edges: c.max_edges, seed: c.seed };
        Ok(train_skinning(&self.skin, &mut self.skin_store, samples, &cfg, monitor)?)
    }
}

/// Names joints `j0, j1, ...` in hierarchy preorder and maps them back to
/// the mesh's original frame.
pub fn to_rig_file(skeleton: &Skeleton, weights: &Tensor, mesh: &Mesh) -> Result<RigFile, PipelineError> {
    let mut names = vec![String::new(); skeleton.joint_count()];
    for (rank, j) in skeleton.preorder().into_iter().enumerate() {
        names[j] = format!("j{rank}");
    }
    let rig = RigFile::from_skeleton(&names, skeleton, Some(weights))?;
    let n = mesh.normalization();
    Ok(rig.map_joints(|p| n.invert(p)))
}
