use std::collections::VecDeque;

use proptest::prelude::*;
use rigforge_core::mesh::{
    self, bone_exterior_ratio, build_vertex_graph, point_segment_distance, reflect, volumetric_geodesic, voxelize,
    Mesh, Point, SymmetryPlane, Vec3, VolumetricGrid,
};
use rigforge_core::synth::shapes::{cylinder, icosphere, u_tube};

const PENTAGON_OBJ: &str = "v 0 0 0\nv 1 0 0\nv 1.3 0.9 0\nv 0.5 1.5 0\nv -0.3 0.9 0\nv 0.5 0.5 1\nf 1 2 3 4 5\nf 1 2 6\n";

#[test]
fn polygon_fan_matches_reference_triangulator() {
    let ours = Mesh::from_obj(PENTAGON_OBJ.as_bytes()).unwrap();
    let opts = tobj::LoadOptions { triangulate: true, ..Default::default() };
    let (models, _) = tobj::load_obj_buf(&mut PENTAGON_OBJ.as_bytes(), &opts, |_| Ok(Default::default())).unwrap();
    let idx = &models[0].mesh.indices;
    let theirs: Vec<[usize; 3]> = idx.chunks(3).map(|c| [c[0] as usize, c[1] as usize, c[2] as usize]).collect();
    assert_eq!(ours.triangles().len(), 4);
    assert_eq!(ours.triangles(), &theirs[..]);
}

/// Dense O(V^2) Dijkstra without a heap.
fn all_pairs_ball(mesh: &Mesh, radius: f64) -> Vec<Vec<usize>> {
    let n = mesh.vertex_count();
    let v = mesh.vertices();
    let mut w = vec![f64::INFINITY; n * n];
    for &(a, b) in mesh.edges() {
        let d = (v[a] - v[b]).norm();
        w[a * n + b] = d;
        w[b * n + a] = d;
    }
    (0..n)
        .map(|src| {
            let mut dist = vec![f64::INFINITY; n];
            let mut done = vec![false; n];
            dist[src] = 0.0;
            for _ in 0..n {
                let mut u = usize::MAX;
                for i in 0..n {
                    if !done[i] && dist[i].is_finite() && (u == usize::MAX || dist[i] < dist[u]) {
                        u = i;
                    }
                }
                if u == usize::MAX {
                    break;
                }
                done[u] = true;
                for t in 0..n {
                    let nd = dist[u] + w[u * n + t];
                    if nd < dist[t] {
                        dist[t] = nd;
                    }
                }
            }
            (0..n).filter(|&t| t != src && dist[t] <= radius).collect()
        })
        .collect()
}

#[test]
fn icosphere_geodesic_ball_matches_dense_dijkstra() {
    let m = icosphere(1.0, 3).normalized().unwrap();
    assert_eq!(m.vertex_count(), 642);
    let (g, report) = build_vertex_graph(&m, 0.06);
    assert!(report.isolated.is_empty());
    let oracle = all_pairs_ball(&m, 0.06);
    assert_eq!(g.geodesic_neighbors, oracle);
    // The wider ball exercises multi-hop paths.
    let (wide, _) = build_vertex_graph(&m, 0.2);
    assert!(wide.geodesic_neighbors.iter().all(|l| l.len() > 6));
    assert_eq!(wide.geodesic_neighbors, all_pairs_ball(&m, 0.2));
    // Ball membership is symmetric.
    for (v, list) in g.geodesic_neighbors.iter().enumerate() {
        for &u in list {
            assert!(g.geodesic_neighbors[u].binary_search(&v).is_ok());
        }
    }
}

#[test]
fn sphere_volume_at_resolution_32() {
    let m = icosphere(1.0, 4).normalized().unwrap();
    let grid = voxelize(&m, 32).unwrap();
    let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.5f64.powi(3);
    let rel = (grid.occupied_volume() - exact).abs() / exact;
    assert!(rel < 0.1, "relative volume error {rel}");
    // Every vertex lies in an occupied voxel or next to one.
    for p in m.vertices() {
        let v = grid.voxel_of(p).unwrap();
        assert!(grid.neighborhood(v).any(|n| grid.occupied(n)));
    }
}

#[test]
fn cylinder_geodesic_tracks_axis_distance() {
    let m = cylinder(0.2, 0.5, 48, 24);
    let grid = voxelize(&m, 64).unwrap();
    let (a, b) = (Point::new(0.0, -0.4, 0.0), Point::new(0.0, 0.4, 0.0));
    let field = volumetric_geodesic(&grid, &m, &[(a, b)]).unwrap();
    assert!(field.fallback.is_empty());
    let tol = 2.0 * grid.voxel_diagonal();
    for (v, p) in m.vertices().iter().enumerate() {
        let exact = point_segment_distance(p, &a, &b);
        assert!((field.get(v, 0) - exact).abs() <= tol, "vertex {v}: {} vs {exact}", field.get(v, 0));
    }
}

/// Breadth-first hop counts over the 26-connected occupied voxels.
fn bfs_hops(grid: &VolumetricGrid, seeds: &[[usize; 3]]) -> Vec<usize> {
    let mut hops = vec![usize::MAX; grid.len()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        hops[grid.index(s)] = 0;
        queue.push_back(s);
    }
    while let Some(v) = queue.pop_front() {
        let h = hops[grid.index(v)];
        for n in grid.neighborhood(v) {
            let i = grid.index(n);
            if grid.occupied(n) && hops[i] == usize::MAX {
                hops[i] = h + 1;
                queue.push_back(n);
            }
        }
    }
    hops
}

#[test]
fn u_tube_geodesic_goes_around_the_bend() {
    let raw = u_tube(0.08, 0.8, 0.5, 64).unwrap();
    let m = raw.normalized().unwrap();
    let norm = m.normalization();
    let a = norm.apply(&Point::new(-0.25, 0.75, 0.0));
    let b = norm.apply(&Point::new(-0.25, 0.35, 0.0));
    let grid = voxelize(&m, 64).unwrap();
    let field = volumetric_geodesic(&grid, &m, &[(a, b)]).unwrap();
    let target = norm.apply(&Point::new(0.25, 0.75, 0.0));
    let v = mesh::raycast::nearest_vertex(&m, &target);
    let p = m.vertices()[v];
    let euclid = point_segment_distance(&p, &a, &b);
    let geo = field.get(v, 0);
    assert!(geo > 1.5 * euclid, "geodesic {geo} vs euclidean {euclid}");

    // Independent lower bound: every step is at least one voxel long.
    let seeds: Vec<[usize; 3]> = (0..=64)
        .filter_map(|s| grid.voxel_of(&(a + (b - a) * (s as f64 / 64.0))))
        .filter(|&c| grid.occupied(c))
        .collect();
    let hops = bfs_hops(&grid, &seeds);
    let cell = grid.voxel_of(&p).unwrap();
    let min_hops = grid
        .neighborhood(cell)
        .filter(|&n| grid.occupied(n))
        .map(|n| hops[grid.index(n)])
        .min()
        .unwrap();
    let lower = min_hops as f64 * grid.voxel_size() - 2.0 * grid.voxel_diagonal();
    assert!(lower > 1.5 * euclid, "bfs bound {lower} vs euclidean {euclid}");
    assert!(geo >= lower);
}

#[test]
fn vertex_on_bone_is_within_a_voxel_diagonal() {
    let m = cylinder(0.2, 0.5, 32, 16);
    let grid = voxelize(&m, 48).unwrap();
    // A bone running along the surface through vertex 0.
    let p = m.vertices()[0];
    let field = volumetric_geodesic(&grid, &m, &[(p, p + Vec3::new(0.0, 0.3, 0.0))]).unwrap();
    assert!(field.get(0, 0) <= grid.voxel_diagonal());
}

fn solid_box(n: usize) -> VolumetricGrid {
    VolumetricGrid::from_raw([n, n, n], vec![true; n * n * n], Point::origin(), 1.0 / n as f64)
}

#[test]
fn exterior_ratio_half_in_box() {
    let grid = solid_box(16);
    let r = bone_exterior_ratio(&grid, &Point::new(0.5, 0.5, 0.5), &Point::new(1.5, 0.5, 0.5));
    assert!((r - 0.5).abs() <= 1.0 / 64.0, "{r}");
}

fn star_mesh(bumps: &[f64]) -> Mesh {
    let base = icosphere(1.0, 2);
    let verts: Vec<Point> = base
        .vertices()
        .iter()
        .map(|p| {
            let d = p.coords.normalize();
            let r = 1.0 + bumps[0] * d.x * d.y + bumps[1] * d.z * d.z + bumps[2] * d.x;
            Point::from(d * r)
        })
        .collect();
    Mesh::new(verts, base.triangles().to_vec()).unwrap().normalized().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_is_an_isometric_involution(
        pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..12),
        n in prop::array::uniform3(-1.0f64..1.0),
        offset in -0.5f64..0.5,
    ) {
        prop_assume!(Vec3::new(n[0], n[1], n[2]).norm() > 1e-3);
        let plane = SymmetryPlane::new(Vec3::new(n[0], n[1], n[2]), offset).unwrap();
        let p: Vec<Point> = pts.iter().map(|a| Point::new(a[0], a[1], a[2])).collect();
        let r = reflect(&p, &plane);
        let rr = reflect(&r, &plane);
        for i in 0..p.len() {
            prop_assert!((rr[i] - p[i]).norm() < 1e-12);
            for j in 0..p.len() {
                let before = (p[i] - p[j]).norm();
                let after = (r[i] - r[j]).norm();
                prop_assert!((before - after).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn volumetric_geodesic_bounds_euclidean(
        bumps in prop::array::uniform3(-0.3f64..0.3),
        ends in prop::array::uniform6(-0.15f64..0.15),
    ) {
        let m = star_mesh(&bumps);
        let grid = voxelize(&m, 32).unwrap();
        let a = Point::new(ends[0], ends[1], ends[2]);
        let b = Point::new(ends[3], ends[4], ends[5]);
        let field = volumetric_geodesic(&grid, &m, &[(a, b)]).unwrap();
        for (v, p) in m.vertices().iter().enumerate() {
            let e = point_segment_distance(p, &a, &b);
            prop_assert!(field.get(v, 0) >= e - grid.voxel_diagonal());
            prop_assert!(field.get(v, 0).is_finite());
        }
    }
}
