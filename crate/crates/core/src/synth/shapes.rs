//! Simple analytic test shapes.

use std::collections::HashMap;

use super::surface_nets::{capsule, surface_nets};
use crate::mesh::{Mesh, MeshError, Point};

/// Icosahedron subdivided `levels` times and projected onto a sphere.
/// Level 3 gives 642 vertices.
pub fn icosphere(radius: f64, levels: usize) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Point::from(Point::new(p[0], p[1], p[2]).coords.normalize() * radius))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Point>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (verts[a].coords + verts[b].coords).normalize() * radius;
                verts.push(Point::from(m));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    Mesh::new(verts, faces).expect("icosphere is valid")
}

/// Closed cylinder along y from `-half_height` to `half_height`.
pub fn cylinder(radius: f64, half_height: f64, segments: usize, rings: usize) -> Mesh {
    let mut verts = Vec::new();
    for r in 0..=rings {
        let y = -half_height + 2.0 * half_height * r as f64 / rings as f64;
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            verts.push(Point::new(radius * a.cos(), y, radius * a.sin()));
        }
    }
    let bottom = verts.len();
    verts.push(Point::new(0.0, -half_height, 0.0));
    let top = verts.len();
    verts.push(Point::new(0.0, half_height, 0.0));
    let id = |r: usize, s: usize| r * segments + s % segments;
    let mut tris = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            let (a, b, c, d) = (id(r, s), id(r, s + 1), id(r + 1, s + 1), id(r + 1, s));
            tris.push([a, c, b]);
            tris.push([a, d, c]);
        }
    }
    for s in 0..segments {
        tris.push([bottom, id(0, s), id(0, s + 1)]);
        tris.push([top, id(rings, s + 1), id(rings, s)]);
    }
    Mesh::new(verts, tris).expect("cylinder is valid")
}

/// A U-shaped tube: two vertical arms `gap` apart joined at the bottom.
pub fn u_tube(radius: f64, arm: f64, gap: f64, cells: usize) -> Result<Mesh, MeshError> {
    let x = gap / 2.0;
    let a0 = Point::new(-x, arm, 0.0);
    let a1 = Point::new(-x, 0.0, 0.0);
    let b1 = Point::new(x, 0.0, 0.0);
    let b0 = Point::new(x, arm, 0.0);
    let m = radius * 1.5;
    surface_nets(
        |p| capsule(p, &a0, &a1, radius).min(capsule(p, &a1, &b1, radius)).min(capsule(p, &b1, &b0, radius)),
        Point::new(-x - m, -m, -m),
        Point::new(x + m, arm + m, m),
        cells,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        let m = icosphere(1.0, 3);
        assert_eq!(m.vertex_count(), 642);
        assert_eq!(m.triangles().len(), 1280);
        assert!(!m.has_boundary());
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn cylinder_is_closed_and_outward() {
        let m = cylinder(0.2, 0.5, 24, 10);
        assert!(!m.has_boundary());
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn u_tube_is_closed() {
        let m = u_tube(0.08, 0.8, 0.5, 48).unwrap();
        assert!(!m.has_boundary());
        assert!(m.signed_volume() > 0.0);
    }
}
