//! Shape and skeleton encoders, BoneNet and RootNet.

use rand::Rng;
use rayon::prelude::*;

use super::mst::{joint_pairs, BoneProbMatrix};
use crate::autodiff::{sigmoid, AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::mesh::{bone_exterior_ratio, Point, SymmetryPlane, VolumetricGrid};
use crate::nn::{scale_width, Mlp, NeighborIndex, Trunk, TrunkConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ConnNetConfig {
    pub shape: TrunkConfig,
    /// Per-joint MLP of the skeleton encoder, from 3.
    pub joint_point: Vec<usize>,
    /// Skeleton encoder MLP after pooling.
    pub joint_global: Vec<usize>,
    /// Raw-feature embedding, shared layout by BoneNet (from 8) and RootNet (from 4).
    pub embed: Vec<usize>,
    /// Classifier after `[f, g_s, g_t]`, ending in 1.
    pub classifier: Vec<usize>,
}

impl ConnNetConfig {
    pub fn full_width() -> Self {
        Self {
            shape: TrunkConfig::shape_encoder(),
            joint_point: vec![64, 128, 1024],
            joint_global: vec![256, 128],
            embed: vec![32, 64, 128, 256],
            classifier: vec![128, 32, 1],
        }
    }

    pub fn scaled(factor: f64) -> Self {
        let t = Self::full_width();
        let s = |v: &[usize]| v.iter().map(|&w| scale_width(w, factor, 4)).collect::<Vec<_>>();
        let mut classifier = s(&t.classifier);
        *classifier.last_mut().expect("non-empty") = 1;
        Self {
            shape: t.shape.scaled(factor, false),
            joint_point: s(&t.joint_point),
            joint_global: s(&t.joint_global),
            embed: s(&t.embed),
            classifier,
        }
    }

    pub fn classifier_in_width(&self) -> usize {
        self.embed.last().expect("non-empty") + self.shape.global_width() + self.joint_global.last().expect("non-empty")
    }
}

fn widths(input: usize, rest: &[usize]) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(rest);
    w
}

/// Encoders plus the bone and root heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnNets {
    pub config: ConnNetConfig,
    pub shape: Trunk,
    pub joint_point: Mlp,
    pub joint_global: Mlp,
    pub bone_embed: Mlp,
    pub bone_head: Mlp,
    pub root_embed: Mlp,
    pub root_head: Mlp,
}

/// Precomputed per-skeleton inputs.
#[derive(Clone, Debug)]
pub struct ConnFeatures {
    pub joints: Vec<Point>,
    pub pairs: Vec<(usize, usize)>,
    /// `[t_i, t_j, d_ij, o_ij]` per pair.
    pub pair_raw: Tensor,
    /// `[t_i, |d_ic|]` per joint.
    pub root_raw: Tensor,
}

impl ConnFeatures {
    pub fn new(joints: &[Point], grid: &VolumetricGrid, plane: &SymmetryPlane) -> Self {
        let pairs = joint_pairs(joints.len());
        let pair_rows: Vec<[f64; 8]> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let (a, b) = (joints[i], joints[j]);
                [a.x, a.y, a.z, b.x, b.y, b.z, (a - b).norm(), bone_exterior_ratio(grid, &a, &b)]
            })
            .collect();
        let root_rows: Vec<[f64; 4]> = joints.iter().map(|p| [p.x, p.y, p.z, plane.signed_distance(p).abs()]).collect();
        let pair_raw = if pair_rows.is_empty() { Tensor::zeros(0, 8) } else { Tensor::from_rows(&pair_rows) };
        Self { joints: joints.to_vec(), pairs, pair_raw, root_raw: Tensor::from_rows(&root_rows) }
    }
}

/// Tape handles of one connectivity forward pass.
pub struct ConnForward {
    /// One logit per pair, `P x 1` (absent with a single joint).
    pub pair_logits: Option<Var>,
    /// One logit per joint, `J x 1`.
    pub root_logits: Var,
}

impl ConnNets {
    pub fn new(config: ConnNetConfig) -> Self {
        let g_s = config.shape.global_width();
        let g_t = *config.joint_global.last().expect("non-empty");
        let emb = *config.embed.last().expect("non-empty");
        let pooled = *config.joint_point.last().expect("non-empty");
        let cls = widths(emb + g_s + g_t, &config.classifier);
        Self {
            shape: Trunk::new("shape_enc", config.shape.clone()),
            joint_point: Mlp::new("skel_enc.point", &widths(3, &config.joint_point), true),
            joint_global: Mlp::new("skel_enc.global", &widths(pooled, &config.joint_global), false),
            bone_embed: Mlp::new("bone.embed", &widths(8, &config.embed), true),
            bone_head: Mlp::new("bone.head", &cls, false),
            root_embed: Mlp::new("root.embed", &widths(4, &config.embed), true),
            root_head: Mlp::new("root.head", &cls, false),
            config,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<(), AutodiffError> {
        self.shape.init(store, rng)?;
        for m in [&self.joint_point, &self.joint_global, &self.bone_embed, &self.bone_head, &self.root_embed, &self.root_head] {
            m.init(store, rng)?;
        }
        Ok(())
    }

    /// Global shape code `g_s`, `1 x 128`.
    pub fn encode_shape(&self, tape: &mut Tape, store: &ParamStore, positions: Var, index: &NeighborIndex) -> Result<Var, AutodiffError> {
        Ok(self.shape.forward(tape, store, positions, index)?.pooled)
    }

    /// Skeleton code `g_t`, `1 x 128`, invariant to joint order.
    pub fn encode_joints(&self, tape: &mut Tape, store: &ParamStore, joints: &[Point]) -> Result<Var, AutodiffError> {
        let rows: Vec<[f64; 3]> = joints.iter().map(|p| [p.x, p.y, p.z]).collect();
        let x = tape.constant(Tensor::from_rows(&rows))?;
        let h = self.joint_point.forward(tape, store, x)?;
        let pooled = tape.max_reduce(h, 0)?;
        self.joint_global.forward(tape, store, pooled)
    }

    fn head(&self, tape: &mut Tape, store: &ParamStore, embed: &Mlp, head: &Mlp, raw: &Tensor, context: Var) -> Result<Var, AutodiffError> {
        let x = tape.constant(raw.clone())?;
        let f = embed.forward(tape, store, x)?;
        head.forward_with_context(tape, store, f, context)
    }

    /// Bone and root logits given a precomputed `g_s`.
    pub fn forward_with_shape(&self, tape: &mut Tape, store: &ParamStore, g_s: Var, features: &ConnFeatures) -> Result<ConnForward, AutodiffError> {
        let g_t = self.encode_joints(tape, store, &features.joints)?;
        let context = tape.concat(&[g_s, g_t], 1)?;
        let pair_logits = if features.pairs.is_empty() {
            None
        } else {
            Some(self.head(tape, store, &self.bone_embed, &self.bone_head, &features.pair_raw, context)?)
        };
        let root_logits = self.head(tape, store, &self.root_embed, &self.root_head, &features.root_raw, context)?;
        Ok(ConnForward { pair_logits, root_logits })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        positions: Var,
        index: &NeighborIndex,
        features: &ConnFeatures,
    ) -> Result<ConnForward, AutodiffError> {
        let g_s = self.encode_shape(tape, store, positions, index)?;
        self.forward_with_shape(tape, store, g_s, features)
    }

    /// `g_s` for a mesh, evaluated once and reusable across skeletons.
    pub fn shape_code(&self, store: &ParamStore, positions: &Tensor, graph: &crate::mesh::VertexGraph) -> Result<Tensor, AutodiffError> {
        let mut tape = Tape::new();
        let x = tape.constant(positions.clone())?;
        let g = self.encode_shape(&mut tape, store, x, &NeighborIndex::new(graph))?;
        Ok(tape.value(g).clone())
    }

    /// Bone probability matrix and root distribution from a cached `g_s`.
    /// Pair rows are scored in chunks on fresh tapes so memory stays bounded for large joint sets.
    pub fn predict(&self, store: &ParamStore, g_s: &Tensor, features: &ConnFeatures) -> Result<(BoneProbMatrix, Vec<f64>), AutodiffError> {
        const PAIR_CHUNK: usize = 16_384;
        let mut tape = Tape::new();
        let g = tape.constant(g_s.clone())?;
        let g_t = self.encode_joints(&mut tape, store, &features.joints)?;
        let context = tape.concat(&[g, g_t], 1)?;
        let context_value = tape.value(context).clone();
        let root_logits = self.head(&mut tape, store, &self.root_embed, &self.root_head, &features.root_raw, context)?;
        let root_row = tape.transpose(root_logits)?;
        let root = tape.softmax(root_row, 1)?;
        let root = tape.value(root).data().to_vec();

        let cols = features.pair_raw.cols();
        let mut probs = Vec::with_capacity(features.pairs.len());
        for chunk in features.pair_raw.data().chunks(PAIR_CHUNK * cols.max(1)) {
            if chunk.is_empty() {
                continue;
            }
            let mut tape = Tape::new();
            let context = tape.constant(context_value.clone())?;
            let raw = Tensor::new(chunk.len() / cols, cols, chunk.to_vec())?;
            let logits = self.head(&mut tape, store, &self.bone_embed, &self.bone_head, &raw, context)?;
            probs.extend(tape.value(logits).data().iter().map(|&z| sigmoid(z)));
        }
        Ok((BoneProbMatrix::from_pairs(features.joints.len(), &features.pairs, &probs), root))
    }
}
