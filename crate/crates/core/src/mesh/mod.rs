//! Triangle meshes: OBJ ingestion, normalization, neighborhood graphs,
//! symmetry, voxelization and volumetric geodesic distances.

mod geodesic;
mod graph;
pub mod raycast;
mod symmetry;
mod voxel;

use std::collections::BTreeSet;

use nalgebra::{Point3, Vector3};

pub use geodesic::{point_segment_distance, volumetric_geodesic, GeodesicField};
pub use graph::{build_vertex_graph, sample_edge_dropout, GraphReport, VertexGraph};
pub use symmetry::{reflect, SymmetryPlane};
pub use voxel::{bone_exterior_ratio, voxelize, VolumetricGrid};

pub type Point = Point3<f64>;
pub type Vec3 = Vector3<f64>;

pub const MIN_VERTICES: usize = 3;
pub const MAX_VERTICES: usize = 100_000;

/// Tolerance under which a mesh already counts as normalized.
const NORMALIZED_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: face with {count} vertices cannot be triangulated")]
    NonTriangulableFace { line: usize, count: usize },
    #[error("triangle {tri} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { tri: usize, index: usize, count: usize },
    #[error("mesh has {0} vertices, expected between 3 and 100000")]
    VertexCount(usize),
    #[error("bounding box has zero extent")]
    EmptyBoundingBox,
    #[error("mesh has no triangles")]
    NoTriangles,
    #[error("no bones given")]
    NoBones,
    #[error("voxel resolution {0} is below the minimum of 8")]
    Resolution(usize),
}

/// Similarity transform taking original coordinates to normalized ones:
/// `normalized = (original - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { center: Vec3::zeros(), scale: 1.0 }
    }
}

impl Normalization {
    pub fn apply(&self, p: &Point) -> Point {
        Point::from((p.coords - self.center) * self.scale)
    }

    pub fn invert(&self, p: &Point) -> Point {
        Point::from(p.coords / self.scale + self.center)
    }

    /// The composition `other ∘ self`.
    pub fn then(&self, other: &Normalization) -> Normalization {
        Normalization { center: self.center + other.center / self.scale, scale: self.scale * other.scale }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<(usize, usize)>,
    /// Maps the coordinates the mesh was loaded in to its current frame.
    normalization: Normalization,
}

impl Mesh {
    /// Validates indices and vertex count and drops zero-area triangles.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if !(MIN_VERTICES..=MAX_VERTICES).contains(&vertices.len()) {
            return Err(MeshError::VertexCount(vertices.len()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange { tri: t, index, count: vertices.len() });
                }
            }
        }
        let triangles: Vec<[usize; 3]> = triangles
            .into_iter()
            .filter(|&[a, b, c]| {
                let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
                n.norm_squared() > 0.0
            })
            .collect();
        let mut edges = BTreeSet::new();
        for &[a, b, c] in &triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                edges.insert((u.min(v), u.max(v)));
            }
        }
        Ok(Self { vertices, triangles, edges: edges.into_iter().collect(), normalization: Normalization::default() })
    }

    /// Parses ASCII OBJ `v`/`f` records (1-based or negative indices);
    /// polygons are fan-triangulated and other records ignored.
    pub fn from_obj(bytes: &[u8]) -> Result<Self, MeshError> {
        let text = std::str::from_utf8(bytes).map_err(|e| MeshError::Parse { line: 0, msg: e.to_string() })?;
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let raw = raw.split('#').next().unwrap_or("");
            let mut parts = raw.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|s| s.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| MeshError::Parse { line, msg: format!("bad vertex: {e}") })?;
                    if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                        return Err(MeshError::Parse { line, msg: "vertex needs 3 finite coordinates".into() });
                    }
                    vertices.push(Point::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let mut face = Vec::new();
                    for token in parts {
                        let index_str = token.split('/').next().unwrap_or("");
                        let idx: i64 = index_str
                            .parse()
                            .map_err(|_| MeshError::Parse { line, msg: format!("bad face index {token:?}") })?;
                        let resolved = match idx {
                            i if i > 0 => i - 1,
                            i if i < 0 => vertices.len() as i64 + i,
                            _ => -1,
                        };
                        if resolved < 0 {
                            return Err(MeshError::Parse { line, msg: format!("face index {idx} out of range") });
                        }
                        face.push(resolved as usize);
                    }
                    if face.len() < 3 {
                        return Err(MeshError::NonTriangulableFace { line, count: face.len() });
                    }
                    for k in 1..face.len() - 1 {
                        triangles.push([face[0], face[k], face[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }

    /// Writes `v` and `f` records with 1-based indices.
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 40);
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        out
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for i in 0..3 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        (lo, hi)
    }

    pub fn longest_extent(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).max()
    }

    pub fn centroid(&self) -> Point {
        let sum = self.vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v.coords);
        Point::from(sum / self.vertices.len() as f64)
    }

    /// Centers the vertex centroid at the origin and scales the longest
    /// bounding-box extent to 1. A mesh already within 1e-9 of that frame
    /// is returned unchanged, so the operation is idempotent.
    pub fn normalized(&self) -> Result<Mesh, MeshError> {
        let extent = self.longest_extent();
        if !(extent > 0.0) {
            return Err(MeshError::EmptyBoundingBox);
        }
        let centroid = self.centroid();
        if centroid.coords.norm() <= NORMALIZED_TOL && (extent - 1.0).abs() <= NORMALIZED_TOL {
            return Ok(self.clone());
        }
        let step = Normalization { center: centroid.coords, scale: 1.0 / extent };
        let vertices = self.vertices.iter().map(|v| step.apply(v)).collect();
        Ok(Mesh {
            vertices,
            triangles: self.triangles.clone(),
            edges: self.edges.clone(),
            normalization: self.normalization.then(&step),
        })
    }

    /// Signed enclosed volume by the divergence theorem (positive for outward winding).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                self.vertices[a].coords.dot(&self.vertices[b].coords.cross(&self.vertices[c].coords)) / 6.0
            })
            .sum()
    }

    /// True when some edge is used by exactly one triangle.
    pub fn has_boundary(&self) -> bool {
        let mut counts = std::collections::HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *counts.entry((u.min(v), u.max(v))).or_insert(0usize) += 1;
            }
        }
        counts.values().any(|&n| n == 1)
    }

    /// Reorders vertices so that new vertex `i` is old vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Mesh, MeshError> {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let vertices = perm.iter().map(|&old| self.vertices[old]).collect();
        let triangles = self.triangles.iter().map(|t| [inverse[t[0]], inverse[t[1]], inverse[t[2]]]).collect();
        let mut m = Mesh::new(vertices, triangles)?;
        m.normalization = self.normalization;
        Ok(m)
    }
}

/// Parses OBJ bytes and normalizes the result.
pub fn load_and_normalize(obj_bytes: &[u8]) -> Result<Mesh, MeshError> {
    Mesh::from_obj(obj_bytes)?.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CUBE_OBJ: &str = "\
v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1\n\
f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n";

    #[test]
    fn unit_cube_normalizes() {
        let m = load_and_normalize(CUBE_OBJ.as_bytes()).unwrap();
        assert_eq!(m.vertex_count(), 8);
        assert_eq!(m.triangles().len(), 12);
        assert!((m.longest_extent() - 1.0).abs() < 1e-12);
        assert!(m.centroid().coords.norm() < 1e-12);
    }

    #[test]
    fn similarity_invariance() {
        let scaled: String = CUBE_OBJ
            .lines()
            .map(|l| {
                if let Some(rest) = l.strip_prefix("v ") {
                    let c: Vec<f64> = rest.split_whitespace().map(|s| s.parse().unwrap()).collect();
                    format!("v {} {} {}\n", c[0] * 7.0 + 3.0, c[1] * 7.0 - 11.0, c[2] * 7.0 + 0.5)
                } else {
                    format!("{l}\n")
                }
            })
            .collect();
        let a = load_and_normalize(CUBE_OBJ.as_bytes()).unwrap();
        let b = load_and_normalize(scaled.as_bytes()).unwrap();
        for (p, q) in a.vertices().iter().zip(b.vertices()) {
            assert!((p - q).norm() < 1e-12);
        }
        let back = b.normalization().invert(&b.vertices()[6]);
        assert!((back - Point::new(10.0, -4.0, 7.5)).norm() < 1e-12);
    }

    #[test]
    fn normalization_is_idempotent() {
        let m = load_and_normalize(CUBE_OBJ.as_bytes()).unwrap();
        assert_eq!(m.normalized().unwrap(), m);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Mesh::from_obj(b"v 0 0\n"), Err(MeshError::Parse { line: 1, .. })));
        assert!(matches!(
            Mesh::from_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n"),
            Err(MeshError::NonTriangulableFace { line: 4, count: 2 })
        ));
        assert!(matches!(Mesh::from_obj(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"), Err(MeshError::IndexOutOfRange { .. })));
        let flat = b"v 1 1 1\nv 1 1 1\nv 1 1 1\nf 1 2 3\n";
        assert!(matches!(load_and_normalize(flat), Err(MeshError::EmptyBoundingBox)));
        assert!(matches!(Mesh::from_obj(b"v 0 0 0\n"), Err(MeshError::VertexCount(1))));
    }

    #[test]
    fn obj_extras_are_ignored() {
        let src = "# comment\nv 0 0 0\nv 1 0 0\nvn 0 0 1\nvt 0 0\nv 0 1 0\nf 1/1/1 2//1 -1/3\n";
        let m = Mesh::from_obj(src.as_bytes()).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn degenerate_triangles_dropped() {
        let m = Mesh::from_obj(b"v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nf 1 2 3\nf 1 2 4\n").unwrap();
        assert_eq!(m.triangles().len(), 1);
    }

    #[test]
    fn edges_are_unique_and_ordered() {
        let m = Mesh::from_obj(CUBE_OBJ.as_bytes()).unwrap();
        // 12 cube edges plus 6 face diagonals from the fan split
        assert_eq!(m.edges().len(), 18);
        assert!(m.edges().iter().all(|&(a, b)| a < b));
    }

    #[test]
    fn closed_cube_volume() {
        let m = load_and_normalize(CUBE_OBJ.as_bytes()).unwrap();
        assert!(!m.has_boundary());
        assert!((m.signed_volume().abs() - 1.0).abs() < 1e-12);
    }
}
