//! Bone probability matrices and maximum-probability spanning trees.

use std::io::{self, Write};

use super::Skeleton;
use crate::mesh::Point;

pub const PROB_CLAMP: f64 = 1e-6;

/// Symmetric matrix of bone probabilities; the diagonal is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneProbMatrix {
    n: usize,
    p: Vec<f64>,
}

impl BoneProbMatrix {
    /// All off-diagonal entries set to `value`.
    pub fn filled(n: usize, value: f64) -> Self {
        Self { n, p: vec![value; n * n] }
    }

    /// From upper-triangle pairs `(i, j)` with `i < j` and their probabilities.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)], probs: &[f64]) -> Self {
        let mut m = Self::filled(n, 0.0);
        for (&(i, j), &p) in pairs.iter().zip(probs) {
            m.set(i, j, p);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: f64) {
        self.p[i * self.n + j] = p;
        self.p[j * self.n + i] = p;
    }

    /// Edge cost `-ln(clamp(p))`.
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        -self.get(i, j).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
    }

    /// CSV with header `i,j,p`, one row per pair `i < j`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "i,j,p")?;
        for i in 0..self.n {
            for j in i + 1..self.n {
                writeln!(w, "{i},{j},{}", self.get(i, j))?;
            }
        }
        Ok(())
    }
}

/// Unordered pairs `(i, j)`, `i < j`, in row-major order.
pub fn joint_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Prim's algorithm on `-ln p` costs grown from the most probable root.
/// The next joint added is the one with the smallest attachment cost, then
/// the smallest index; an attachment is only replaced by a strictly
/// cheaper one, so earlier tree joints win cost ties.
pub fn extract_skeleton(probs: &BoneProbMatrix, root_probs: &[f64], joints: &[Point]) -> Skeleton {
    let n = probs.len();
    assert!(n > 0 && root_probs.len() == n && joints.len() == n, "size mismatch");
    let root = argmax(root_probs);
    let mut parent = vec![None; n];
    let mut in_tree = vec![false; n];
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, root); n];
    in_tree[root] = true;
    for v in 0..n {
        if v != root {
            best[v] = (probs.cost(root, v), root);
        }
    }
    for _ in 1..n {
        let mut pick: Option<usize> = None;
        for v in 0..n {
            if !in_tree[v] && pick.is_none_or(|p| best[v].0 < best[p].0) {
                pick = Some(v);
            }
        }
        let v = pick.expect("a joint remains");
        in_tree[v] = true;
        parent[v] = Some(best[v].1);
        for u in 0..n {
            if !in_tree[u] {
                let c = probs.cost(v, u);
                if c < best[u].0 {
                    best[u] = (c, v);
                }
            }
        }
    }
    Skeleton::new(joints.to_vec(), parent, root).expect("Prim output is a tree")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(n: usize) -> Vec<Point> {
        (0..n).map(|i| Point::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn three_joint_chain() {
        let mut p = BoneProbMatrix::filled(3, 0.0);
        p.set(0, 1, 0.9);
        p.set(1, 2, 0.8);
        p.set(0, 2, 0.1);
        let s = extract_skeleton(&p, &[0.8, 0.1, 0.1], &pts(3));
        assert_eq!(s.parents(), &[None, Some(0), Some(1)]);
    }

    #[test]
    fn equal_probabilities_give_a_star_at_the_root() {
        let p = BoneProbMatrix::filled(4, 0.5);
        let s = extract_skeleton(&p, &[0.1, 0.1, 0.7, 0.1], &pts(4));
        assert_eq!(s.root(), 2);
        assert_eq!(s.parents(), &[Some(2), Some(2), None, Some(2)]);
    }

    #[test]
    fn single_joint() {
        let s = extract_skeleton(&BoneProbMatrix::filled(1, 0.0), &[1.0], &pts(1));
        assert_eq!(s.bone_count(), 0);
    }

    #[test]
    fn csv_dump() {
        let mut p = BoneProbMatrix::filled(3, 0.0);
        p.set(0, 2, 0.25);
        let mut out = Vec::new();
        p.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "i,j,p\n0,1,0\n0,2,0.25\n1,2,0\n");
    }
}
