//! Deterministic synthetic rigged characters: capsule skeletons turned into
//! watertight meshes, with reference skinning weights from volumetric
//! geodesic falloff.

pub mod shapes;
mod surface_nets;

pub use surface_nets::{capsule, smooth_min, surface_nets};

use crate::connectivity::Skeleton;
use crate::mesh::{self, Mesh, MeshError, Point, Vec3};

/// Skin entries kept per vertex in the reference weights.
const SKIN_TOP: usize = 3;
/// Falloff length of the reference weights, in normalized units.
const SKIN_FALLOFF: f64 = 0.02;
const SKIN_PRUNE: f64 = 0.02;
const BLEND: f64 = 0.03;

#[derive(Clone, Debug)]
struct JointSpec {
    name: String,
    parent: Option<String>,
    pos: Point,
    /// Radius of the capsule from the parent to this joint.
    radius: f64,
}

#[derive(Clone, Debug)]
pub struct CharacterSpec {
    name: String,
    joints: Vec<JointSpec>,
    blobs: Vec<(Point, f64)>,
    cells: usize,
}

impl CharacterSpec {
    fn new(name: &str, cells: usize) -> Self {
        Self { name: name.to_string(), joints: Vec::new(), blobs: Vec::new(), cells }
    }

    fn joint(mut self, name: &str, parent: Option<&str>, pos: [f64; 3], radius: f64) -> Self {
        self.joints.push(JointSpec {
            name: name.to_string(),
            parent: parent.map(str::to_string),
            pos: Point::new(pos[0], pos[1], pos[2]),
            radius,
        });
        self
    }

    /// Adds a left-side joint named `l_<name>` and its mirror `r_<name>`.
    fn pair(self, name: &str, parent: &str, pos: [f64; 3], radius: f64) -> Self {
        let side = |s: &str, p: &str| if p.starts_with("l_") { format!("{s}{}", &p[2..]) } else { p.to_string() };
        let l = format!("l_{name}");
        let r = format!("r_{name}");
        let lp = side("l_", parent);
        let rp = side("r_", parent);
        self.joint(&l, Some(&lp), pos, radius).joint(&r, Some(&rp), [-pos[0], pos[1], pos[2]], radius)
    }

    fn blob(mut self, pos: [f64; 3], radius: f64) -> Self {
        self.blobs.push((Point::new(pos[0], pos[1], pos[2]), radius));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn index_of(&self, name: &str) -> usize {
        self.joints.iter().position(|j| j.name == name).unwrap_or_else(|| panic!("unknown joint {name}"))
    }

    fn sdf(&self, p: &Point) -> f64 {
        let mut d = f64::INFINITY;
        for j in &self.joints {
            if let Some(parent) = &j.parent {
                let a = self.joints[self.index_of(parent)].pos;
                d = smooth_min(d, capsule(p, &a, &j.pos, j.radius), BLEND);
            }
        }
        for (c, r) in &self.blobs {
            d = smooth_min(d, (p - c).norm() - r, BLEND);
        }
        d
    }

    /// Builds the normalized mesh, skeleton and reference weights.
    pub fn build(&self) -> Result<SynthCharacter, MeshError> {
        let margin = self.joints.iter().map(|j| j.radius).chain(self.blobs.iter().map(|b| b.1)).fold(0.0, f64::max) * 2.0;
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in self.joints.iter().map(|j| j.pos).chain(self.blobs.iter().map(|b| b.0)) {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let lo = lo - Vec3::repeat(margin);
        let hi = hi + Vec3::repeat(margin);
        // Keep the grid symmetric about x = 0.
        let x = lo.x.abs().max(hi.x.abs());
        let raw = surface_nets(|p| self.sdf(p), Point::new(-x, lo.y, lo.z), Point::new(x, hi.y, hi.z), self.cells)?;
        let mesh = raw.normalized()?;
        let norm = mesh.normalization();

        let parents: Vec<Option<usize>> =
            self.joints.iter().map(|j| j.parent.as_ref().map(|p| self.index_of(p))).collect();
        let joints: Vec<Point> = self.joints.iter().map(|j| norm.apply(&j.pos)).collect();
        let skeleton = Skeleton::new(joints, parents, 0).map_err(|e| MeshError::Parse { line: 0, msg: e.to_string() })?;
        let skin = reference_skin(&mesh, &skeleton)?;
        Ok(SynthCharacter {
            name: self.name.clone(),
            mesh,
            joint_names: self.joints.iter().map(|j| j.name.clone()).collect(),
            skeleton,
            skin,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SynthCharacter {
    pub name: String,
    pub mesh: Mesh,
    pub joint_names: Vec<String>,
    pub skeleton: Skeleton,
    /// Per-vertex `(bone index, weight)` lists, bones as in [`Skeleton::bones`].
    pub skin: Vec<Vec<(usize, f64)>>,
}

/// Reference weights: the nearest bones by volumetric geodesic distance with
/// exponential falloff, pruned and renormalized.
pub fn reference_skin(mesh: &Mesh, skeleton: &Skeleton) -> Result<Vec<Vec<(usize, f64)>>, MeshError> {
    let grid = mesh::voxelize(mesh, 88)?;
    let field = mesh::volumetric_geodesic(&grid, mesh, &skeleton.bone_segments())?;
    let mut out = Vec::with_capacity(mesh.vertex_count());
    for v in 0..mesh.vertex_count() {
        let row = field.row(v);
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let best = row[order[0]];
        let mut w: Vec<(usize, f64)> =
            order.iter().take(SKIN_TOP).map(|&b| (b, (-(row[b] - best) / SKIN_FALLOFF).exp())).collect();
        let total: f64 = w.iter().map(|x| x.1).sum();
        w.iter_mut().for_each(|x| x.1 /= total);
        w.retain(|x| x.1 >= SKIN_PRUNE);
        let total: f64 = w.iter().map(|x| x.1).sum();
        w.iter_mut().for_each(|x| x.1 /= total);
        w.sort_by_key(|x| x.0);
        out.push(w);
    }
    Ok(out)
}

pub fn humanoid() -> CharacterSpec {
    CharacterSpec::new("humanoid", 54)
        .joint("hips", None, [0.0, 0.95, 0.0], 0.0)
        .joint("spine", Some("hips"), [0.0, 1.15, 0.0], 0.13)
        .joint("chest", Some("spine"), [0.0, 1.35, 0.0], 0.15)
        .joint("neck", Some("chest"), [0.0, 1.55, 0.0], 0.06)
        .joint("head", Some("neck"), [0.0, 1.7, 0.0], 0.06)
        .joint("head_end", Some("head"), [0.0, 1.88, 0.0], 0.09)
        .blob([0.0, 1.78, 0.02], 0.12)
        .pair("shoulder", "chest", [0.18, 1.45, 0.0], 0.06)
        .pair("elbow", "l_shoulder", [0.45, 1.45, 0.0], 0.045)
        .pair("wrist", "l_elbow", [0.7, 1.45, 0.0], 0.04)
        .pair("hand_end", "l_wrist", [0.84, 1.45, 0.0], 0.035)
        .pair("hip", "hips", [0.11, 0.88, 0.0], 0.08)
        .pair("knee", "l_hip", [0.11, 0.5, 0.0], 0.065)
        .pair("ankle", "l_knee", [0.11, 0.1, 0.0], 0.05)
        .pair("toe", "l_ankle", [0.11, 0.04, 0.16], 0.04)
}

pub fn quadruped() -> CharacterSpec {
    CharacterSpec::new("quadruped", 50)
        .joint("pelvis", None, [0.0, 0.6, -0.3], 0.0)
        .joint("spine", Some("pelvis"), [0.0, 0.62, 0.0], 0.14)
        .joint("chest", Some("spine"), [0.0, 0.62, 0.3], 0.15)
        .joint("neck", Some("chest"), [0.0, 0.8, 0.45], 0.07)
        .joint("head", Some("neck"), [0.0, 0.92, 0.56], 0.07)
        .joint("nose", Some("head"), [0.0, 0.86, 0.76], 0.06)
        .blob([0.0, 0.9, 0.6], 0.1)
        .joint("tail", Some("pelvis"), [0.0, 0.66, -0.52], 0.05)
        .joint("tail_end", Some("tail"), [0.0, 0.72, -0.78], 0.03)
        .pair("shoulder", "chest", [0.12, 0.52, 0.32], 0.07)
        .pair("front_knee", "l_shoulder", [0.12, 0.3, 0.34], 0.045)
        .pair("front_paw", "l_front_knee", [0.12, 0.06, 0.34], 0.04)
        .pair("front_toe", "l_front_paw", [0.12, 0.03, 0.44], 0.035)
        .pair("thigh", "pelvis", [0.12, 0.52, -0.3], 0.08)
        .pair("hind_knee", "l_thigh", [0.12, 0.3, -0.36], 0.05)
        .pair("hind_paw", "l_hind_knee", [0.12, 0.06, -0.3], 0.04)
        .pair("hind_toe", "l_hind_paw", [0.12, 0.03, -0.2], 0.035)
}

pub fn bird() -> CharacterSpec {
    CharacterSpec::new("bird", 54)
        .joint("body", None, [0.0, 0.5, 0.0], 0.0)
        .joint("chest", Some("body"), [0.0, 0.56, 0.16], 0.12)
        .joint("neck", Some("chest"), [0.0, 0.7, 0.24], 0.06)
        .joint("head", Some("neck"), [0.0, 0.84, 0.27], 0.05)
        .joint("beak", Some("head"), [0.0, 0.83, 0.44], 0.025)
        .blob([0.0, 0.86, 0.28], 0.07)
        .joint("tail", Some("body"), [0.0, 0.46, -0.2], 0.07)
        .joint("tail_end", Some("tail"), [0.0, 0.43, -0.38], 0.03)
        .pair("wing", "chest", [0.12, 0.58, 0.1], 0.06)
        .pair("wing_mid", "l_wing", [0.38, 0.62, 0.05], 0.04)
        .pair("wing_tip", "l_wing_mid", [0.66, 0.64, -0.02], 0.03)
        .pair("leg", "body", [0.07, 0.36, 0.03], 0.04)
        .pair("shin", "l_leg", [0.08, 0.18, 0.05], 0.035)
        .pair("foot", "l_shin", [0.08, 0.05, 0.14], 0.032)
}

pub fn robot() -> CharacterSpec {
    CharacterSpec::new("robot", 48)
        .joint("hips", None, [0.0, 0.8, 0.0], 0.0)
        .joint("spine", Some("hips"), [0.0, 1.02, 0.0], 0.2)
        .joint("chest", Some("spine"), [0.0, 1.26, 0.0], 0.22)
        .joint("head", Some("chest"), [0.0, 1.52, 0.0], 0.1)
        .joint("head_end", Some("head"), [0.0, 1.72, 0.0], 0.12)
        .pair("shoulder", "chest", [0.28, 1.32, 0.0], 0.09)
        .pair("elbow", "l_shoulder", [0.42, 1.06, 0.0], 0.07)
        .pair("wrist", "l_elbow", [0.5, 0.8, 0.0], 0.065)
        .pair("hand_end", "l_wrist", [0.53, 0.64, 0.0], 0.06)
        .pair("hip", "hips", [0.15, 0.74, 0.0], 0.1)
        .pair("knee", "l_hip", [0.16, 0.42, 0.0], 0.09)
        .pair("ankle", "l_knee", [0.16, 0.12, 0.0], 0.08)
        .pair("toe", "l_ankle", [0.16, 0.06, 0.18], 0.06)
}

pub fn spider() -> CharacterSpec {
    let mut s = CharacterSpec::new("spider", 44)
        .joint("body", None, [0.0, 0.3, 0.0], 0.0)
        .joint("abdomen", Some("body"), [0.0, 0.34, -0.32], 0.15)
        .joint("head", Some("body"), [0.0, 0.32, 0.2], 0.1);
    for (k, z) in [0.12, 0.0, -0.12].into_iter().enumerate() {
        let a = format!("leg{k}");
        let b = format!("leg{k}_knee");
        let c = format!("leg{k}_tip");
        s = s
            .pair(&a, "body", [0.1, 0.3, z], 0.06)
            .pair(&b, &format!("l_{a}"), [0.34, 0.46, z * 1.6], 0.035)
            .pair(&c, &format!("l_{b}"), [0.56, 0.05, z * 2.2], 0.03);
    }
    s
}

/// The five bundled characters.
pub fn mini_set_specs() -> Vec<CharacterSpec> {
    vec![humanoid(), quadruped(), bird(), robot(), spider()]
}

/// Humanoid with the left arm raised and the right arm lowered.
pub fn asymmetric_humanoid() -> CharacterSpec {
    let mut s = humanoid();
    s.name = "asymmetric_humanoid".into();
    for j in &mut s.joints {
        let p = j.pos;
        match j.name.as_str() {
            "l_elbow" => j.pos = Point::new(0.38, 1.68, 0.0),
            "l_wrist" => j.pos = Point::new(0.52, 1.9, 0.0),
            "l_hand_end" => j.pos = Point::new(0.58, 2.02, 0.0),
            "r_elbow" => j.pos = Point::new(-0.36, 1.22, 0.0),
            "r_wrist" => j.pos = Point::new(-0.5, 1.02, 0.0),
            "r_hand_end" => j.pos = Point::new(-0.56, 0.9, 0.0),
            _ => j.pos = p,
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn characters_are_valid() {
        for spec in mini_set_specs() {
            let c = spec.build().unwrap();
            let n = c.mesh.vertex_count();
            assert!((1000..=5000).contains(&n), "{}: {n} vertices", c.name);
            assert!(!c.mesh.has_boundary(), "{}", c.name);
            assert_eq!(c.skin.len(), n);
            for w in &c.skin {
                let s: f64 = w.iter().map(|x| x.1).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}
