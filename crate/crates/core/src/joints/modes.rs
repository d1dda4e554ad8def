//! Greedy density-ordered mode extraction.

use super::mean_shift::epanechnikov;
use crate::mesh::Point;

#[derive(Clone, Debug, PartialEq)]
pub struct JointSet {
    pub joints: Vec<Point>,
    /// Kernel density of the surviving point of each mode.
    pub densities: Vec<f64>,
    /// Set when all attention was zero and uniform weights were used.
    pub uniform_fallback: bool,
}

/// Extracts modes from collapsed points. Points are visited by decreasing
/// density (lower index wins ties); each unassigned point starts a mode that
/// absorbs every unassigned point within `h`. A mode sits at the
/// attention-weighted mean of its points. Modes that end up closer than `h`
/// are merged into the denser one, so joints stay at least `h` apart.
pub fn extract_modes(points: &[Point], attention: &[f64], h: f64) -> JointSet {
    extract_modes_filtered(points, attention, h, 0.0)
}

/// [`extract_modes`] after discarding points whose share of the total
/// density is below `density_threshold` (isolated low-attention stragglers).
pub fn extract_modes_filtered(points: &[Point], attention: &[f64], h: f64, density_threshold: f64) -> JointSet {
    assert_eq!(points.len(), attention.len());
    let n = points.len();
    let uniform_fallback = n > 0 && attention.iter().all(|&a| a <= 0.0);
    if uniform_fallback {
        log::warn!("all attention values are zero; using uniform attention for mode extraction");
    }
    let att: Vec<f64> = if uniform_fallback { vec![1.0; n] } else { attention.to_vec() };

    let density: Vec<f64> = (0..n)
        .map(|v| (0..n).map(|u| att[u] * epanechnikov((points[u] - points[v]).norm_squared(), h)).sum())
        .collect();
    let total: f64 = density.iter().sum();
    let mut assigned: Vec<bool> = density.iter().map(|&d| total > 0.0 && d / total < density_threshold).collect();
    let dropped = assigned.iter().filter(|&&a| a).count();
    if dropped > 0 {
        log::debug!("dropped {dropped} low-density points before mode extraction");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| density[b].total_cmp(&density[a]).then(a.cmp(&b)));

    // (seed point, members)
    let mut modes: Vec<(usize, Vec<usize>)> = Vec::new();
    for &v in &order {
        if assigned[v] {
            continue;
        }
        let members: Vec<usize> =
            (0..n).filter(|&u| !assigned[u] && (points[u] - points[v]).norm_squared() <= h * h).collect();
        for &u in &members {
            assigned[u] = true;
        }
        modes.push((v, members));
    }

    // Weighted mean taken as an offset from the seed point.
    let position = |seed: usize, members: &[usize]| {
        let wsum: f64 = members.iter().map(|&u| att[u]).sum();
        let offset: nalgebra::Vector3<f64> = if wsum > 0.0 {
            members.iter().map(|&u| (points[u] - points[seed]) * att[u]).sum::<nalgebra::Vector3<f64>>() / wsum
        } else {
            members.iter().map(|&u| points[u] - points[seed]).sum::<nalgebra::Vector3<f64>>() / members.len() as f64
        };
        points[seed] + offset
    };
    let mut centers: Vec<Point> = modes.iter().map(|(s, m)| position(*s, m)).collect();
    // Merge modes whose weighted means drifted within h; modes are already
    // in decreasing density order, so the later one folds into the earlier.
    loop {
        let mut pair = None;
        'search: for i in 0..modes.len() {
            for j in i + 1..modes.len() {
                if (centers[i] - centers[j]).norm() < h {
                    pair = Some((i, j));
                    break 'search;
                }
            }
        }
        let Some((i, j)) = pair else { break };
        let (_, absorbed) = modes.remove(j);
        centers.remove(j);
        modes[i].1.extend(absorbed);
        centers[i] = position(modes[i].0, &modes[i].1);
    }
    JointSet { joints: centers, densities: modes.iter().map(|(s, _)| density[*s]).collect(), uniform_fallback }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_give_one_joint() {
        let p = vec![Point::new(0.2, 0.1, 0.0); 7];
        let s = extract_modes(&p, &[0.5; 7], 0.05);
        assert_eq!(s.joints, vec![Point::new(0.2, 0.1, 0.0)]);
    }

    #[test]
    fn density_tie_prefers_lower_index() {
        let p = vec![Point::new(0.0, 0.0, 0.0), Point::new(0.03, 0.0, 0.0)];
        let s = extract_modes(&p, &[1.0, 1.0], 0.05);
        assert_eq!(s.joints.len(), 1);
        // Both points join the mode seeded by point 0.
        assert!((s.joints[0].x - 0.015).abs() < 1e-15);
        let s = extract_modes(&p, &[1.0, 1.0], 0.02);
        assert_eq!(s.joints, p);
    }

    #[test]
    fn zero_attention_falls_back_to_uniform() {
        let p = vec![Point::new(0.0, 0.0, 0.0), Point::new(0.5, 0.0, 0.0)];
        let s = extract_modes(&p, &[0.0, 0.0], 0.05);
        assert!(s.uniform_fallback);
        assert_eq!(s.joints.len(), 2);
    }
}
