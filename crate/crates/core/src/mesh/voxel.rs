use std::collections::VecDeque;
use std::io::{self, Write};

use super::{Mesh, MeshError, Point, Vec3};

const DUMP_MAGIC: &[u8; 6] = b"RFVOX1";

/// Binary occupancy grid with cubic voxels. Occupied means surface or interior.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumetricGrid {
    dims: [usize; 3],
    occupancy: Vec<bool>,
    origin: Point,
    voxel_size: f64,
    leak_fallback: bool,
}

impl VolumetricGrid {
    /// Grid from raw row-major (`x` slowest, `z` fastest) occupancy.
    pub fn from_raw(dims: [usize; 3], occupancy: Vec<bool>, origin: Point, voxel_size: f64) -> Self {
        assert_eq!(occupancy.len(), dims[0] * dims[1] * dims[2]);
        Self { dims, occupancy, origin, voxel_size, leak_fallback: false }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn voxel_diagonal(&self) -> f64 {
        self.voxel_size * 3f64.sqrt()
    }

    /// Whether the open-mesh fallback (dilated surface) was used.
    pub fn leak_fallback(&self) -> bool {
        self.leak_fallback
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    #[inline]
    pub fn index(&self, v: [usize; 3]) -> usize {
        (v[0] * self.dims[1] + v[1]) * self.dims[2] + v[2]
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let k = index % self.dims[2];
        let j = (index / self.dims[2]) % self.dims[1];
        let i = index / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    #[inline]
    pub fn occupied(&self, v: [usize; 3]) -> bool {
        self.occupancy[self.index(v)]
    }

    #[inline]
    pub fn occupied_index(&self, index: usize) -> bool {
        self.occupancy[index]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn occupied_volume(&self) -> f64 {
        self.occupied_count() as f64 * self.voxel_size.powi(3)
    }

    pub fn center(&self, v: [usize; 3]) -> Point {
        let h = self.voxel_size;
        Point::new(
            self.origin.x + (v[0] as f64 + 0.5) * h,
            self.origin.y + (v[1] as f64 + 0.5) * h,
            self.origin.z + (v[2] as f64 + 0.5) * h,
        )
    }

    /// Voxel containing `p`, or `None` outside the grid. Points on the grid
    /// boundary (up to rounding) map to the outermost voxel.
    pub fn voxel_of(&self, p: &Point) -> Option<[usize; 3]> {
        self.voxel_of_grid_coords([0, 1, 2].map(|a| (p[a] - self.origin[a]) / self.voxel_size))
    }

    /// Like [`Self::voxel_of`], for a point already in voxel units from the origin.
    #[inline]
    fn voxel_of_grid_coords(&self, t: [f64; 3]) -> Option<[usize; 3]> {
        const SLACK: f64 = 1e-9;
        let mut out = [0; 3];
        for a in 0..3 {
            let n = self.dims[a] as f64;
            if !(t[a] >= -SLACK && t[a] <= n + SLACK) {
                return None;
            }
            // Truncation equals floor here since t > -1; negatives saturate to 0.
            out[a] = (t[a] as usize).min(self.dims[a] - 1);
        }
        Some(out)
    }

    pub fn is_inside(&self, p: &Point) -> bool {
        self.voxel_of(p).is_some_and(|v| self.occupied(v))
    }

    /// Voxels within one step (26-neighborhood, plus `v` itself), clipped to the grid.
    pub fn neighborhood(&self, v: [usize; 3]) -> impl Iterator<Item = [usize; 3]> + '_ {
        let dims = self.dims;
        (-1i64..=1).flat_map(move |di| {
            (-1i64..=1).flat_map(move |dj| {
                (-1i64..=1).filter_map(move |dk| {
                    let n = [v[0] as i64 + di, v[1] as i64 + dj, v[2] as i64 + dk];
                    (0..3).all(|a| n[a] >= 0 && (n[a] as usize) < dims[a]).then(|| [n[0] as usize, n[1] as usize, n[2] as usize])
                })
            })
        })
    }

    /// Debug dump: `RFVOX1`, three little-endian `u32` dims, then one byte per voxel.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let bytes: Vec<u8> = self.occupancy.iter().map(|&o| o as u8).collect();
        w.write_all(&bytes)
    }
}

/// Surface voxels (center within half a voxel of a triangle), then the
/// complement of a 6-connected exterior flood fill from the grid boundary.
///
/// Open meshes whose fill leaks fall back to the surface dilated by one voxel.
pub fn voxelize(mesh: &Mesh, resolution: usize) -> Result<VolumetricGrid, MeshError> {
    if resolution < 8 {
        return Err(MeshError::Resolution(resolution));
    }
    let (lo, hi) = mesh.bounding_box();
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(MeshError::EmptyBoundingBox);
    }
    let h = extent / resolution as f64;
    let mut dims = [0usize; 3];
    let mut origin = Point::origin();
    for a in 0..3 {
        dims[a] = (((hi[a] - lo[a]) / h) - 1e-9).ceil().max(1.0) as usize;
        origin[a] = 0.5 * (lo[a] + hi[a]) - 0.5 * dims[a] as f64 * h;
    }
    let mut grid = VolumetricGrid::from_raw(dims, vec![false; dims[0] * dims[1] * dims[2]], origin, h);

    let surface = rasterize_surface(mesh, &grid);
    let exterior = flood_exterior(&grid, &surface);
    let interior_count = (0..surface.len()).filter(|&i| !surface[i] && !exterior[i]).count();

    let leaked = mesh.has_boundary() && (interior_count as f64) * h.powi(3) < 0.5 * mesh.signed_volume().abs();
    if leaked {
        log::warn!("open mesh leaked during flood fill; using dilated surface occupancy");
        let mut occ = surface.clone();
        for (i, &s) in surface.iter().enumerate() {
            if s {
                let v = grid.coords(i);
                let nbrs: Vec<usize> = grid.neighborhood(v).map(|n| grid.index(n)).collect();
                for n in nbrs {
                    occ[n] = true;
                }
            }
        }
        grid.occupancy = occ;
        grid.leak_fallback = true;
    } else {
        grid.occupancy = (0..surface.len()).map(|i| surface[i] || !exterior[i]).collect();
    }
    Ok(grid)
}

fn rasterize_surface(mesh: &Mesh, grid: &VolumetricGrid) -> Vec<bool> {
    let h = grid.voxel_size;
    let reach = 0.5 * h;
    let reach_sq = reach * reach * (1.0 + 1e-9);
    let mut surface = vec![false; grid.len()];
    let verts = mesh.vertices();
    for &[a, b, c] in mesh.triangles() {
        let (pa, pb, pc) = (verts[a], verts[b], verts[c]);
        let mut range = [(0usize, 0usize); 3];
        for ax in 0..3 {
            let lo = pa[ax].min(pb[ax]).min(pc[ax]) - reach;
            let hi = pa[ax].max(pb[ax]).max(pc[ax]) + reach;
            let first = ((lo - grid.origin[ax]) / h - 0.5).ceil().max(0.0) as usize;
            let last = ((hi - grid.origin[ax]) / h - 0.5).floor();
            if last < 0.0 {
                range[ax] = (1, 0);
                continue;
            }
            range[ax] = (first, (last as usize).min(grid.dims[ax] - 1));
        }
        for i in range[0].0..=range[0].1 {
            for j in range[1].0..=range[1].1 {
                for k in range[2].0..=range[2].1 {
                    let idx = grid.index([i, j, k]);
                    if surface[idx] {
                        continue;
                    }
                    let c = grid.center([i, j, k]);
                    let q = closest_point_on_triangle(&c, &pa, &pb, &pc);
                    if (c - q).norm_squared() <= reach_sq {
                        surface[idx] = true;
                    }
                }
            }
        }
    }
    surface
}

fn flood_exterior(grid: &VolumetricGrid, surface: &[bool]) -> Vec<bool> {
    let dims = grid.dims;
    let mut exterior = vec![false; surface.len()];
    let mut queue = VecDeque::new();
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let on_boundary = i == 0 || j == 0 || k == 0 || i + 1 == dims[0] || j + 1 == dims[1] || k + 1 == dims[2];
                let idx = grid.index([i, j, k]);
                if on_boundary && !surface[idx] {
                    exterior[idx] = true;
                    queue.push_back([i, j, k]);
                }
            }
        }
    }
    while let Some(v) = queue.pop_front() {
        for (a, d) in [(0, -1i64), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
            let n = v[a] as i64 + d;
            if n < 0 || n as usize >= dims[a] {
                continue;
            }
            let mut w = v;
            w[a] = n as usize;
            let idx = grid.index(w);
            if !surface[idx] && !exterior[idx] {
                exterior[idx] = true;
                queue.push_back(w);
            }
        }
    }
    exterior
}

/// Closest point to `p` on triangle `abc`.
pub(crate) fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Fraction of 64 uniform samples on segment `a`–`b` that fall in unoccupied voxels.
pub fn bone_exterior_ratio(grid: &VolumetricGrid, a: &Point, b: &Point) -> f64 {
    const SAMPLES: usize = 64;
    let start: Vec3 = (a - grid.origin) / grid.voxel_size;
    let step: Vec3 = (b - a) / (grid.voxel_size * (SAMPLES - 1) as f64);
    let outside = (0..SAMPLES)
        .filter(|&i| {
            let t = start + step * i as f64;
            !grid.voxel_of_grid_coords([t.x, t.y, t.z]).is_some_and(|v| grid.occupied(v))
        })
        .count();
    outside as f64 / SAMPLES as f64
}
