use std::cmp::Ordering;

use crate::connectivity::Skeleton;

/// A rooted tree in postorder with leftmost-leaf descendants, ready for the
/// Zhang–Shasha recurrence. `node[k]` is the original index of the k-th node.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderedTree {
    node: Vec<usize>,
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl OrderedTree {
    /// Builds from ordered child lists.
    pub fn from_children(root: usize, children: &[Vec<usize>]) -> Self {
        let mut node = Vec::with_capacity(children.len());
        let mut leftmost = Vec::with_capacity(children.len());
        fn visit(v: usize, children: &[Vec<usize>], node: &mut Vec<usize>, leftmost: &mut Vec<usize>) -> usize {
            let mut first = None;
            for &c in &children[v] {
                let pos = visit(c, children, node, leftmost);
                first.get_or_insert(leftmost[pos]);
            }
            node.push(v);
            let pos = node.len() - 1;
            leftmost.push(first.unwrap_or(pos));
            pos
        }
        visit(root, children, &mut node, &mut leftmost);
        let n = node.len();
        let keyroots = (0..n).filter(|&k| (k + 1..n).all(|l| leftmost[l] != leftmost[k])).collect();
        Self { node, leftmost, keyroots }
    }

    /// Children ordered by subtree size, then subtree height, then joint
    /// position compared lexicographically.
    pub fn canonical(skeleton: &Skeleton) -> Self {
        let mut children = skeleton.children();
        let n = skeleton.joint_count();
        let mut size = vec![1usize; n];
        let mut height = vec![0usize; n];
        for &j in skeleton.preorder().iter().rev() {
            for &c in &children[j] {
                size[j] += size[c];
                height[j] = height[j].max(height[c] + 1);
            }
        }
        let pos = skeleton.joints();
        for list in &mut children {
            list.sort_by(|&a, &b| {
                size[a]
                    .cmp(&size[b])
                    .then(height[a].cmp(&height[b]))
                    .then_with(|| {
                        let (p, q) = (pos[a], pos[b]);
                        (0..3).map(|k| p[k].total_cmp(&q[k])).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
                    })
                    .then(a.cmp(&b))
            });
        }
        Self::from_children(skeleton.root(), &children)
    }

    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }

    /// Original indices in postorder.
    pub fn postorder(&self) -> &[usize] {
        &self.node
    }
}

/// Ordered tree edit distance with unit insert/delete cost and
/// `relabel(a_node, b_node)` for substitutions (original indices).
pub fn ordered_tree_edit_distance(a: &OrderedTree, b: &OrderedTree, relabel: impl Fn(usize, usize) -> usize) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.leftmost[i], b.leftmost[j]);
            // fd[x][y]: forest a[li..li+x) vs b[lj..lj+y).
            fd[0][0] = 0;
            for x in 1..=i - li + 1 {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..=j - lj + 1 {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..=i - li + 1 {
                let ai = li + x - 1;
                for y in 1..=j - lj + 1 {
                    let bj = lj + y - 1;
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if a.leftmost[ai] == li && b.leftmost[bj] == lj {
                        let sub = fd[x - 1][y - 1] + relabel(a.node[ai], b.node[bj]);
                        fd[x][y] = del.min(ins).min(sub);
                        td[ai][bj] = fd[x][y];
                    } else {
                        let px = a.leftmost[ai] - li;
                        let py = b.leftmost[bj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ai][bj]);
                    }
                }
            }
        }
    }
    if n == 0 || m == 0 {
        return n + m;
    }
    td[n - 1][m - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_insertion_costs_one() {
        let a = OrderedTree::from_children(0, &[vec![1], vec![]]);
        let b = OrderedTree::from_children(0, &[vec![1, 2], vec![], vec![]]);
        let same = |i: usize, j: usize| usize::from(i != j);
        assert_eq!(ordered_tree_edit_distance(&a, &a, same), 0);
        assert_eq!(ordered_tree_edit_distance(&a, &b, same), 1);
        assert_eq!(ordered_tree_edit_distance(&b, &a, same), 1);
    }

    #[test]
    fn keyroots_of_a_chain_is_the_root() {
        let t = OrderedTree::from_children(0, &[vec![1], vec![2], vec![]]);
        assert_eq!(t.keyroots, vec![2]);
        assert_eq!(t.postorder(), &[2, 1, 0]);
    }
}
