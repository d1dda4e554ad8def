use nalgebra::Unit;

use super::{Point, Vec3};

/// Plane `normal · p = offset` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetryPlane {
    normal: Unit<Vec3>,
    offset: f64,
}

impl SymmetryPlane {
    /// Returns `None` for a zero normal.
    pub fn new(normal: Vec3, offset: f64) -> Option<Self> {
        let norm = normal.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        Some(Self { normal: Unit::new_normalize(normal), offset: offset / norm })
    }

    /// The plane `x = 0` of a normalized, front-facing character.
    pub fn x0() -> Self {
        Self { normal: Vec3::x_axis(), offset: 0.0 }
    }

    pub fn normal(&self) -> Vec3 {
        self.normal.into_inner()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    pub fn reflect_point(&self, p: &Point) -> Point {
        p - self.normal.into_inner() * (2.0 * self.signed_distance(p))
    }
}

/// Mirrors every point across `plane`.
pub fn reflect(points: &[Point], plane: &SymmetryPlane) -> Vec<Point> {
    points.iter().map(|p| plane.reflect_point(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_plane_is_fixed() {
        let p = Point::new(0.0, 0.3, -0.2);
        assert_eq!(reflect(&[p], &SymmetryPlane::x0()), vec![p]);
    }

    #[test]
    fn axis_reflection() {
        let out = reflect(&[Point::new(0.3, 0.0, 0.0)], &SymmetryPlane::x0());
        assert_eq!(out, vec![Point::new(-0.3, 0.0, 0.0)]);
    }

    #[test]
    fn normal_is_unit() {
        let plane = SymmetryPlane::new(Vec3::new(3.0, 4.0, 0.0), 10.0).unwrap();
        assert!((plane.normal().norm() - 1.0).abs() < 1e-12);
        assert!((plane.offset() - 2.0).abs() < 1e-12);
        assert!(SymmetryPlane::new(Vec3::zeros(), 1.0).is_none());
    }
}
