//! Ray-triangle queries against a mesh.

use super::{Mesh, Point, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point,
    pub triangle: usize,
}

/// Möller–Trumbore intersection; returns the ray parameter of a hit with `t > t_min`.
pub fn ray_triangle(origin: &Point, dir: &Vec3, a: &Point, b: &Point, c: &Point, t_min: f64) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > t_min).then_some(t)
}

/// First intersection of the ray `origin + t * dir` (t > 1e-9) with `mesh`.
pub fn first_hit(mesh: &Mesh, origin: &Point, dir: &Vec3) -> Option<Hit> {
    let verts = mesh.vertices();
    let mut best: Option<Hit> = None;
    for (i, &[a, b, c]) in mesh.triangles().iter().enumerate() {
        if let Some(t) = ray_triangle(origin, dir, &verts[a], &verts[b], &verts[c], 1e-9) {
            if best.map_or(true, |h| t < h.t) {
                best = Some(Hit { t, point: origin + dir * t, triangle: i });
            }
        }
    }
    best
}

/// Index of the mesh vertex closest to `p` (lowest index on ties).
pub fn nearest_vertex(mesh: &Mesh, p: &Point) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, v) in mesh.vertices().iter().enumerate() {
        let d = (v - p).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// `count` unit directions evenly spaced in the plane perpendicular to `axis`.
pub fn perpendicular_directions(axis: &Vec3, count: usize) -> Vec<Vec3> {
    let n = if axis.norm() > 1e-12 { axis.normalize() } else { Vec3::y() };
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
    let u = n.cross(&helper).normalize();
    let w = n.cross(&u);
    (0..count)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            u * theta.cos() + w * theta.sin()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hits_triangle_front() {
        let m = Mesh::new(
            vec![Point::new(-1.0, -1.0, 1.0), Point::new(1.0, -1.0, 1.0), Point::new(0.0, 1.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let hit = first_hit(&m, &Point::origin(), &Vec3::z()).unwrap();
        assert!((hit.t - 1.0).abs() < 1e-12);
        assert!(first_hit(&m, &Point::origin(), &-Vec3::z()).is_none());
    }

    #[test]
    fn directions_are_perpendicular_units() {
        let axis = Vec3::new(0.3, 1.0, -0.2);
        let dirs = perpendicular_directions(&axis, 14);
        assert_eq!(dirs.len(), 14);
        for d in dirs {
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!(d.dot(&axis).abs() < 1e-12);
        }
    }
}
