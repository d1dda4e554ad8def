use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{Mesh, MeshError, Point, VolumetricGrid};

/// Per-vertex, per-bone volumetric geodesic distances (row-major, vertices by bones).
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicField {
    distances: Vec<f64>,
    bone_count: usize,
    /// `(vertex, bone)` pairs that fell back to Euclidean distance.
    pub fallback: Vec<(usize, usize)>,
}

impl GeodesicField {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let bone_count = rows.first().map_or(0, Vec::len);
        Self { distances: rows.concat(), bone_count, fallback: Vec::new() }
    }

    pub fn vertex_count(&self) -> usize {
        if self.bone_count == 0 {
            0
        } else {
            self.distances.len() / self.bone_count
        }
    }

    pub fn bone_count(&self) -> usize {
        self.bone_count
    }

    pub fn get(&self, vertex: usize, bone: usize) -> f64 {
        self.distances[vertex * self.bone_count + bone]
    }

    pub fn row(&self, vertex: usize) -> &[f64] {
        &self.distances[vertex * self.bone_count..(vertex + 1) * self.bone_count]
    }
}

pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_squared();
    let t = if len_sq > 0.0 { (p - a).dot(&ab) / len_sq } else { 0.0 };
    if t <= 0.0 {
        (p - a).norm()
    } else if t >= 1.0 {
        (p - b).norm()
    } else {
        (p - (a + ab * t)).norm()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra over the 26-connected occupied voxels, seeded from
/// the occupied voxels a bone passes through (at their center-to-bone
/// distance). A vertex reads the best of its occupied 1-neighborhood plus the
/// Euclidean hop from that voxel center; unreachable vertices get their
/// Euclidean point-to-segment distance and are listed in `fallback`.
pub fn volumetric_geodesic(
    grid: &VolumetricGrid,
    mesh: &Mesh,
    bones: &[(Point, Point)],
) -> Result<GeodesicField, MeshError> {
    if bones.is_empty() {
        return Err(MeshError::NoBones);
    }
    let columns: Vec<(Vec<f64>, Vec<usize>)> =
        bones.par_iter().map(|(a, b)| bone_column(grid, mesh, a, b)).collect();
    let n = mesh.vertex_count();
    let bone_count = bones.len();
    let mut distances = vec![0.0; n * bone_count];
    let mut fallback = Vec::new();
    for (b, (col, missed)) in columns.into_iter().enumerate() {
        for (v, d) in col.into_iter().enumerate() {
            distances[v * bone_count + b] = d;
        }
        fallback.extend(missed.into_iter().map(|v| (v, b)));
    }
    fallback.sort_unstable();
    if !fallback.is_empty() {
        log::warn!("{} vertex-bone pairs used the Euclidean fallback", fallback.len());
    }
    Ok(GeodesicField { distances, bone_count, fallback })
}

const NEIGHBOR_OFFSETS: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut n = 0;
    let mut i = -1;
    while i <= 1 {
        let mut j = -1;
        while j <= 1 {
            let mut k = -1;
            while k <= 1 {
                if !(i == 0 && j == 0 && k == 0) {
                    out[n] = [i, j, k];
                    n += 1;
                }
                k += 1;
            }
            j += 1;
        }
        i += 1;
    }
    out
};

fn bone_column(grid: &VolumetricGrid, mesh: &Mesh, a: &Point, b: &Point) -> (Vec<f64>, Vec<usize>) {
    let h = grid.voxel_size();
    let dims = grid.dims();
    let mut dist = vec![f64::INFINITY; grid.len()];
    let mut heap = BinaryHeap::new();

    let length = (b - a).norm();
    let steps = ((length / (0.25 * h)).ceil() as usize).max(1);
    for s in 0..=steps {
        let p = a + (b - a) * (s as f64 / steps as f64);
        if let Some(v) = grid.voxel_of(&p) {
            let idx = grid.index(v);
            if grid.occupied_index(idx) {
                let d = point_segment_distance(&grid.center(v), a, b);
                if d < dist[idx] {
                    dist[idx] = d;
                    heap.push(Entry { dist: d, index: idx });
                }
            }
        }
    }

    let steps_len: Vec<f64> = NEIGHBOR_OFFSETS
        .iter()
        .map(|o| h * ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64).sqrt())
        .collect();
    while let Some(Entry { dist: d, index }) = heap.pop() {
        if d > dist[index] {
            continue;
        }
        let v = grid.coords(index);
        for (o, &w) in NEIGHBOR_OFFSETS.iter().zip(&steps_len) {
            let n = [v[0] as i64 + o[0], v[1] as i64 + o[1], v[2] as i64 + o[2]];
            if (0..3).any(|ax| n[ax] < 0 || n[ax] as usize >= dims[ax]) {
                continue;
            }
            let ni = grid.index([n[0] as usize, n[1] as usize, n[2] as usize]);
            if !grid.occupied_index(ni) {
                continue;
            }
            let nd = d + w;
            if nd < dist[ni] {
                dist[ni] = nd;
                heap.push(Entry { dist: nd, index: ni });
            }
        }
    }

    let mut missed = Vec::new();
    let column = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(vi, p)| {
            let best = nearest_voxel_cell(grid, p)
                .map(|cell| {
                    grid.neighborhood(cell)
                        .filter_map(|n| {
                            let d = dist[grid.index(n)];
                            d.is_finite().then(|| d + (p - grid.center(n)).norm())
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .unwrap_or(f64::INFINITY);
            if best.is_finite() {
                best
            } else {
                missed.push(vi);
                point_segment_distance(p, a, b)
            }
        })
        .collect();
    (column, missed)
}

/// Containing voxel, clamped into the grid for points on its outer faces.
fn nearest_voxel_cell(grid: &VolumetricGrid, p: &Point) -> Option<[usize; 3]> {
    let dims = grid.dims();
    let mut out = [0; 3];
    for a in 0..3 {
        let f = ((p[a] - grid.origin()[a]) / grid.voxel_size()).floor();
        if f < -1.0 || f > dims[a] as f64 {
            return None;
        }
        out[a] = (f.max(0.0) as usize).min(dims[a] - 1);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance() {
        let (a, b) = (Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0));
        assert_eq!(point_segment_distance(&Point::new(0.5, 2.0, 0.0), &a, &b), 2.0);
        assert_eq!(point_segment_distance(&Point::new(-3.0, 0.0, 4.0), &a, &b), 5.0);
        assert_eq!(point_segment_distance(&Point::new(2.0, 0.0, 0.0), &a, &a), 2.0);
    }

    #[test]
    fn no_bones_is_error() {
        let m = Mesh::new(
            vec![Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let grid = VolumetricGrid::from_raw([1, 1, 1], vec![true], Point::origin(), 1.0);
        assert!(matches!(volumetric_geodesic(&grid, &m, &[]), Err(MeshError::NoBones)));
    }
}
