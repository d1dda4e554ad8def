//! Text rig format: `joints`, `root`, `skin` and `hier` lines.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::connectivity::Skeleton;
use crate::mesh::{Normalization, Point};

/// Tolerance on per-vertex weight sums before renormalizing.
pub const WEIGHT_SUM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RigError {
    #[error("line {line}: unknown keyword `{word}`")]
    UnknownKeyword { line: usize, word: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: duplicate joint `{name}`")]
    DuplicateJoint { line: usize, name: String },
    #[error("line {line}: duplicate root")]
    DuplicateRoot { line: usize },
    #[error("no root line")]
    MissingRoot,
    #[error("line {line}: hier references unknown joint `{name}`")]
    DanglingHier { line: usize, name: String },
    #[error("root `{0}` is not a declared joint")]
    UnknownRoot(String),
    #[error("line {line}: skin references unknown bone `{name}`")]
    UnknownSkinBone { line: usize, name: String },
    #[error("line {line}: vertex {vertex} has more than one skin line")]
    DuplicateSkinVertex { line: usize, vertex: usize },
    #[error("line {line}: weights of vertex {vertex} sum to {sum}")]
    BadWeights { line: usize, vertex: usize, sum: f64 },
    #[error("hierarchy is not a tree: {0}")]
    NotATree(String),
    #[error("joint name `{0}` is empty or contains whitespace")]
    BadName(String),
    #[error("skin matrix has {got} columns, skeleton has {expected} bones")]
    SkinWidth { got: usize, expected: usize },
}

/// A rig as named joints, a root, parent/child pairs and sparse skin weights.
/// Skin entries name the child joint of a bone; an entry naming the root
/// goes to the first bone leaving the root.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RigFile {
    pub joints: Vec<(String, Point)>,
    pub root: String,
    pub hier: Vec<(String, String)>,
    /// Ascending by vertex index.
    pub skin: Vec<(usize, Vec<(String, f64)>)>,
}

fn parse_f64(tok: Option<&str>, line: usize, what: &str) -> Result<f64, RigError> {
    let tok = tok.ok_or_else(|| RigError::Syntax { line, msg: format!("missing {what}") })?;
    let v: f64 = tok.parse().map_err(|_| RigError::Syntax { line, msg: format!("bad {what} `{tok}`") })?;
    if !v.is_finite() {
        return Err(RigError::Syntax { line, msg: format!("non-finite {what}") });
    }
    Ok(v)
}

impl RigFile {
    /// Parses and validates rig text. Weight rows off by more than
    /// [`WEIGHT_SUM_TOL`] are renormalized and reported in the warnings.
    pub fn parse(text: &str) -> Result<(RigFile, Vec<String>), RigError> {
        let mut rig = RigFile::default();
        let mut warnings = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut root_line = None;
        let mut hier_lines = Vec::new();
        let mut skin_lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let mut toks = raw.split_whitespace();
            let Some(word) = toks.next() else { continue };
            match word {
                "joints" => {
                    let name = toks.next().ok_or(RigError::Syntax { line, msg: "missing joint name".into() })?;
                    let p = Point::new(
                        parse_f64(toks.next(), line, "x")?,
                        parse_f64(toks.next(), line, "y")?,
                        parse_f64(toks.next(), line, "z")?,
                    );
                    if index.insert(name.to_string(), rig.joints.len()).is_some() {
                        return Err(RigError::DuplicateJoint { line, name: name.into() });
                    }
                    rig.joints.push((name.to_string(), p));
                }
                "root" => {
                    if root_line.is_some() {
                        return Err(RigError::DuplicateRoot { line });
                    }
                    let name = toks.next().ok_or(RigError::Syntax { line, msg: "missing root name".into() })?;
                    rig.root = name.to_string();
                    root_line = Some(line);
                }
                "hier" => {
                    let p = toks.next().ok_or(RigError::Syntax { line, msg: "missing parent".into() })?;
                    let c = toks.next().ok_or(RigError::Syntax { line, msg: "missing child".into() })?;
                    hier_lines.push((line, p.to_string(), c.to_string()));
                }
                "skin" => {
                    let v = toks.next().ok_or(RigError::Syntax { line, msg: "missing vertex index".into() })?;
                    let v: usize = v.parse().map_err(|_| RigError::Syntax { line, msg: format!("bad vertex index `{v}`") })?;
                    let rest: Vec<&str> = toks.collect();
                    if rest.is_empty() || rest.len() % 2 != 0 {
                        return Err(RigError::Syntax { line, msg: "skin needs (bone weight) pairs".into() });
                    }
                    let mut entries = Vec::with_capacity(rest.len() / 2);
                    for pair in rest.chunks(2) {
                        let w = parse_f64(Some(pair[1]), line, "weight")?;
                        if w < 0.0 {
                            return Err(RigError::Syntax { line, msg: "negative weight".into() });
                        }
                        entries.push((pair[0].to_string(), w));
                    }
                    skin_lines.push((line, v, entries));
                }
                other => return Err(RigError::UnknownKeyword { line, word: other.to_string() }),
            }
        }
        if root_line.is_none() {
            return Err(RigError::MissingRoot);
        }
        if !index.contains_key(&rig.root) {
            return Err(RigError::UnknownRoot(rig.root));
        }
        for (line, p, c) in hier_lines {
            for name in [&p, &c] {
                if !index.contains_key(name) {
                    return Err(RigError::DanglingHier { line, name: name.clone() });
                }
            }
            rig.hier.push((p, c));
        }
        rig.skeleton()?;
        let mut skin: BTreeMap<usize, Vec<(String, f64)>> = BTreeMap::new();
        for (line, v, mut entries) in skin_lines {
            for (name, _) in &entries {
                if !index.contains_key(name) {
                    return Err(RigError::UnknownSkinBone { line, name: name.clone() });
                }
            }
            let sum: f64 = entries.iter().map(|e| e.1).sum();
            if !(sum > 0.0) {
                return Err(RigError::BadWeights { line, vertex: v, sum });
            }
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                let msg = format!("line {line}: weights of vertex {v} sum to {sum}, renormalized");
                log::warn!("{msg}");
                warnings.push(msg);
                entries.iter_mut().for_each(|e| e.1 /= sum);
            }
            if skin.insert(v, entries).is_some() {
                return Err(RigError::DuplicateSkinVertex { line, vertex: v });
            }
        }
        rig.skin = skin.into_iter().collect();
        Ok((rig, warnings))
    }

    /// Skeleton with joints in `self.joints` order.
    pub fn skeleton(&self) -> Result<Skeleton, RigError> {
        let index: HashMap<&str, usize> = self.joints.iter().enumerate().map(|(i, j)| (j.0.as_str(), i)).collect();
        let root = *index.get(self.root.as_str()).ok_or_else(|| RigError::UnknownRoot(self.root.clone()))?;
        let mut parent = vec![None; self.joints.len()];
        for (p, c) in &self.hier {
            let (Some(&pi), Some(&ci)) = (index.get(p.as_str()), index.get(c.as_str())) else {
                return Err(RigError::NotATree(format!("unknown joint in `{p} {c}`")));
            };
            if parent[ci].replace(pi).is_some() {
                return Err(RigError::NotATree(format!("joint `{c}` has two parents")));
            }
        }
        let joints = self.joints.iter().map(|j| j.1).collect();
        Skeleton::new(joints, parent, root).map_err(|e| RigError::NotATree(e.to_string()))
    }

    /// Bone index for each skin name: bones are named by their child joint,
    /// the root maps to its first child bone.
    fn bone_lookup(&self, skeleton: &Skeleton) -> HashMap<String, usize> {
        let mut out = HashMap::new();
        let bones = skeleton.bones();
        for (b, &(p, c)) in bones.iter().enumerate() {
            out.insert(self.joints[c].0.clone(), b);
            if p == skeleton.root() {
                out.entry(self.joints[p].0.clone()).or_insert(b);
            }
        }
        out
    }

    /// Dense `vertices x bones` weights; vertices without a skin line get zeros.
    pub fn skin_matrix(&self, vertex_count: usize) -> Result<Tensor, RigError> {
        let skeleton = self.skeleton()?;
        let lookup = self.bone_lookup(&skeleton);
        let mut w = Tensor::zeros(vertex_count, skeleton.bone_count());
        for (v, entries) in &self.skin {
            if *v >= vertex_count {
                continue;
            }
            for (name, x) in entries {
                let b = *lookup.get(name).ok_or_else(|| RigError::UnknownSkinBone { line: 0, name: name.clone() })?;
                w.set(*v, b, w.get(*v, b) + x);
            }
        }
        Ok(w)
    }

    /// Builds a rig from a skeleton and optional dense weights (`V x B`).
    /// Zero weights are omitted.
    pub fn from_skeleton(names: &[String], skeleton: &Skeleton, skin: Option<&Tensor>) -> Result<RigFile, RigError> {
        for n in names {
            if n.is_empty() || n.contains(char::is_whitespace) {
                return Err(RigError::BadName(n.clone()));
            }
        }
        let joints = names.iter().cloned().zip(skeleton.joints().iter().copied()).collect();
        let hier = skeleton.bones().iter().map(|&(p, c)| (names[p].clone(), names[c].clone())).collect();
        let mut rig = RigFile { joints, root: names[skeleton.root()].clone(), hier, skin: Vec::new() };
        if let Some(w) = skin {
            let bones = skeleton.bones();
            if w.cols() != bones.len() {
                return Err(RigError::SkinWidth { got: w.cols(), expected: bones.len() });
            }
            for v in 0..w.rows() {
                let entries: Vec<(String, f64)> = w
                    .row_slice(v)
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x > 0.0)
                    .map(|(b, &x)| (names[bones[b].1].clone(), x))
                    .collect();
                if !entries.is_empty() {
                    rig.skin.push((v, entries));
                }
            }
        }
        Ok(rig)
    }

    /// Canonical text: joints in hierarchy preorder, then the root, skin
    /// lines ascending by vertex with entries in joint order, then hier lines
    /// in preorder of the child.
    pub fn to_text(&self) -> Result<String, RigError> {
        let skeleton = self.skeleton()?;
        let order = skeleton.preorder();
        let mut rank = vec![0; order.len()];
        for (r, &j) in order.iter().enumerate() {
            rank[j] = r;
        }
        let index: HashMap<&str, usize> = self.joints.iter().enumerate().map(|(i, j)| (j.0.as_str(), i)).collect();
        let mut out = String::new();
        for &j in &order {
            let (name, p) = &self.joints[j];
            let _ = writeln!(out, "joints {name} {} {} {}", p.x, p.y, p.z);
        }
        let _ = writeln!(out, "root {}", self.root);
        let mut skin = self.skin.clone();
        skin.sort_by_key(|s| s.0);
        for (v, entries) in &skin {
            let mut e = entries.clone();
            e.sort_by_key(|(n, _)| index.get(n.as_str()).map_or(usize::MAX, |&i| rank[i]));
            let _ = write!(out, "skin {v}");
            for (n, w) in e {
                let _ = write!(out, " {n} {w}");
            }
            out.push('\n');
        }
        for &c in &order {
            if let Some(p) = skeleton.parent(c) {
                let _ = writeln!(out, "hier {} {}", self.joints[p].0, self.joints[c].0);
            }
        }
        Ok(out)
    }

    /// Same rig with every joint mapped through `f`.
    pub fn map_joints(&self, f: impl Fn(&Point) -> Point) -> RigFile {
        let mut r = self.clone();
        r.joints.iter_mut().for_each(|j| j.1 = f(&j.1));
        r
    }

    /// Joints moved from original mesh coordinates into the normalized frame.
    pub fn normalized(&self, n: &Normalization) -> RigFile {
        self.map_joints(|p| n.apply(p))
    }

    /// Checks the invariants a loaded rig must satisfy: a tree with one root
    /// and per-vertex weights summing to 1.
    pub fn validate(&self) -> Result<(), RigError> {
        self.skeleton()?;
        let mut seen = std::collections::HashSet::new();
        for (n, _) in &self.joints {
            if n.is_empty() || n.contains(char::is_whitespace) {
                return Err(RigError::BadName(n.clone()));
            }
            if !seen.insert(n) {
                return Err(RigError::DuplicateJoint { line: 0, name: n.clone() });
            }
        }
        for (v, e) in &self.skin {
            for (name, _) in e {
                if !seen.contains(name) {
                    return Err(RigError::UnknownSkinBone { line: 0, name: name.clone() });
                }
            }
            let sum: f64 = e.iter().map(|x| x.1).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(RigError::BadWeights { line: 0, vertex: *v, sum });
            }
        }
        Ok(())
    }
}
