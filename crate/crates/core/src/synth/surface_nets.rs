//! Naive surface nets over a sampled signed distance function.

use std::collections::HashMap;

use crate::mesh::{Mesh, MeshError, Point, Vec3};

/// Polygonizes the zero level set of `sdf` (negative inside) on a grid of
/// `cells` cubes along the longest side of `[lo, hi]`. The box must enclose
/// the surface with some margin; output faces are oriented outward.
pub fn surface_nets(sdf: impl Fn(&Point) -> f64 + Sync, lo: Point, hi: Point, cells: usize) -> Result<Mesh, MeshError> {
    let extent = hi - lo;
    let h = extent.max() / cells as f64;
    let n = [
        (extent.x / h).ceil() as usize,
        (extent.y / h).ceil() as usize,
        (extent.z / h).ceil() as usize,
    ];
    // Recentre so the grid is symmetric about the box centre.
    let mid = lo + extent / 2.0;
    let origin = mid - Vec3::new(n[0] as f64, n[1] as f64, n[2] as f64) * (h / 2.0);
    let sample_dims = [n[0] + 1, n[1] + 1, n[2] + 1];
    let sidx = |i: usize, j: usize, k: usize| (i * sample_dims[1] + j) * sample_dims[2] + k;
    let pos = |i: usize, j: usize, k: usize| origin + Vec3::new(i as f64, j as f64, k as f64) * h;

    use rayon::prelude::*;
    let values: Vec<f64> = (0..sample_dims[0] * sample_dims[1] * sample_dims[2])
        .into_par_iter()
        .map(|s| {
            let k = s % sample_dims[2];
            let j = (s / sample_dims[2]) % sample_dims[1];
            let i = s / (sample_dims[1] * sample_dims[2]);
            sdf(&pos(i, j, k))
        })
        .collect();
    let inside = |i: usize, j: usize, k: usize| values[sidx(i, j, k)] < 0.0;

    // One vertex per cell with a sign change, at the mean of edge crossings.
    let mut cell_vertex: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    const CORNERS: [[usize; 3]; 8] =
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]];
    const EDGES: [(usize, usize); 12] =
        [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)];
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let c: Vec<[usize; 3]> = CORNERS.iter().map(|o| [i + o[0], j + o[1], k + o[2]]).collect();
                let v: Vec<f64> = c.iter().map(|p| values[sidx(p[0], p[1], p[2])]).collect();
                let mut sum = Vec3::zeros();
                let mut count = 0;
                for &(a, b) in &EDGES {
                    if (v[a] < 0.0) != (v[b] < 0.0) {
                        let t = v[a] / (v[a] - v[b]);
                        let pa = pos(c[a][0], c[a][1], c[a][2]);
                        let pb = pos(c[b][0], c[b][1], c[b][2]);
                        sum += pa.coords + (pb - pa) * t;
                        count += 1;
                    }
                }
                if count > 0 {
                    cell_vertex.insert([i, j, k], vertices.len());
                    vertices.push(Point::from(sum / count as f64));
                }
            }
        }
    }

    let mut triangles = Vec::new();
    let mut emit = |quad: [[usize; 3]; 4], flip: bool| {
        let ids: Option<Vec<usize>> = quad.iter().map(|c| cell_vertex.get(c).copied()).collect();
        let Some(mut q) = ids else { return };
        if flip {
            q.reverse();
        }
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
    };
    for i in 0..=n[0] {
        for j in 0..=n[1] {
            for k in 0..=n[2] {
                let a = inside(i, j, k);
                if i < n[0] && j > 0 && k > 0 && j < n[1] && k < n[2] && a != inside(i + 1, j, k) {
                    emit([[i, j - 1, k - 1], [i, j, k - 1], [i, j, k], [i, j - 1, k]], !a);
                }
                if j < n[1] && i > 0 && k > 0 && i < n[0] && k < n[2] && a != inside(i, j + 1, k) {
                    emit([[i - 1, j, k - 1], [i - 1, j, k], [i, j, k], [i, j, k - 1]], !a);
                }
                if k < n[2] && i > 0 && j > 0 && i < n[0] && j < n[1] && a != inside(i, j, k + 1) {
                    emit([[i - 1, j - 1, k], [i, j - 1, k], [i, j, k], [i - 1, j, k]], !a);
                }
            }
        }
    }
    Mesh::new(vertices, triangles)
}

/// Signed distance to the capsule around segment `ab`.
pub fn capsule(p: &Point, a: &Point, b: &Point, radius: f64) -> f64 {
    crate::mesh::point_segment_distance(p, a, b) - radius
}

/// Polynomial smooth minimum with blend width `k`.
pub fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_is_closed_and_outward() {
        let m = surface_nets(|p| p.coords.norm() - 0.5, Point::new(-0.6, -0.6, -0.6), Point::new(0.6, 0.6, 0.6), 24)
            .unwrap();
        assert!(!m.has_boundary());
        let v = m.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((v - exact).abs() / exact < 0.05, "{v} vs {exact}");
    }
}
