use crate::mesh::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkeletonError {
    #[error("skeleton has no joints")]
    Empty,
    #[error("root index {0} out of range")]
    RootOutOfRange(usize),
    #[error("root joint {0} must not have a parent")]
    RootHasParent(usize),
    #[error("joint {0} has no parent but is not the root")]
    ExtraRoot(usize),
    #[error("joint {joint} has parent {parent} out of range")]
    ParentOutOfRange { joint: usize, parent: usize },
    #[error("joint {0} is not reachable from the root")]
    Unreachable(usize),
    #[error("parent and joint lists differ in length")]
    LengthMismatch,
}

/// A rooted tree of joints. Bone `b` connects `parent[c]` to child `c`,
/// with bones ordered by ascending child index.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Point>,
    parent: Vec<Option<usize>>,
    root: usize,
}

impl Skeleton {
    pub fn new(joints: Vec<Point>, parent: Vec<Option<usize>>, root: usize) -> Result<Self, SkeletonError> {
        let s = Self { joints, parent, root };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        let n = self.joints.len();
        if n == 0 {
            return Err(SkeletonError::Empty);
        }
        if self.parent.len() != n {
            return Err(SkeletonError::LengthMismatch);
        }
        if self.root >= n {
            return Err(SkeletonError::RootOutOfRange(self.root));
        }
        if self.parent[self.root].is_some() {
            return Err(SkeletonError::RootHasParent(self.root));
        }
        for (j, p) in self.parent.iter().enumerate() {
            match p {
                None if j != self.root => return Err(SkeletonError::ExtraRoot(j)),
                Some(p) if *p >= n => return Err(SkeletonError::ParentOutOfRange { joint: j, parent: *p }),
                _ => {}
            }
        }
        let order = self.preorder();
        if order.len() != n {
            let mut seen = vec![false; n];
            for j in order {
                seen[j] = true;
            }
            let missing = seen.iter().position(|s| !s).unwrap_or(0);
            return Err(SkeletonError::Unreachable(missing));
        }
        Ok(())
    }

    pub fn joints(&self) -> &[Point] {
        &self.joints
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn bone_count(&self) -> usize {
        self.joints.len() - 1
    }

    /// `(parent, child)` pairs ordered by child index.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.parent.iter().enumerate().filter_map(|(c, p)| p.map(|p| (p, c))).collect()
    }

    pub fn bone_segments(&self) -> Vec<(Point, Point)> {
        self.bones().into_iter().map(|(p, c)| (self.joints[p], self.joints[c])).collect()
    }

    /// Bone index whose child joint is `joint`.
    pub fn bone_of_child(&self, joint: usize) -> Option<usize> {
        self.parent[joint]?;
        Some(self.parent[..joint].iter().filter(|p| p.is_some()).count())
    }

    /// Children of each joint in ascending index order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.joints.len()];
        for (c, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                if *p < out.len() {
                    out[*p].push(c);
                }
            }
        }
        out
    }

    /// Joints reachable from the root, parents before children.
    pub fn preorder(&self) -> Vec<usize> {
        let children = self.children();
        let mut order = Vec::with_capacity(self.joints.len());
        let mut stack = vec![self.root];
        let mut seen = vec![false; self.joints.len()];
        while let Some(j) = stack.pop() {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            order.push(j);
            for &c in children[j].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    /// Joints adjacent to `joint` through a bone.
    pub fn incident_bone_directions(&self, joint: usize) -> Vec<crate::mesh::Vec3> {
        let mut dirs = Vec::new();
        if let Some(p) = self.parent[joint] {
            dirs.push(self.joints[joint] - self.joints[p]);
        }
        for (c, p) in self.parent.iter().enumerate() {
            if *p == Some(joint) {
                dirs.push(self.joints[c] - self.joints[joint]);
            }
        }
        dirs
    }

    /// Same tree with every joint moved by `f`.
    pub fn map_joints(&self, f: impl Fn(&Point) -> Point) -> Skeleton {
        Skeleton { joints: self.joints.iter().map(f).collect(), parent: self.parent.clone(), root: self.root }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Skeleton {
        Skeleton::new(
            vec![Point::new(0.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0), Point::new(0.0, 2.0, 0.0)],
            vec![None, Some(0), Some(1)],
            0,
        )
        .unwrap()
    }

    #[test]
    fn bones_follow_child_order() {
        let s = chain();
        assert_eq!(s.bones(), vec![(0, 1), (1, 2)]);
        assert_eq!(s.bone_of_child(2), Some(1));
        assert_eq!(s.bone_of_child(0), None);
        assert_eq!(s.preorder(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_invalid_trees() {
        let j = vec![Point::origin(); 3];
        assert_eq!(Skeleton::new(j.clone(), vec![None, None, Some(0)], 0), Err(SkeletonError::ExtraRoot(1)));
        assert_eq!(Skeleton::new(j.clone(), vec![None, Some(2), Some(1)], 0), Err(SkeletonError::Unreachable(1)));
        assert_eq!(Skeleton::new(j.clone(), vec![Some(1), None, Some(0)], 0), Err(SkeletonError::RootHasParent(0)));
        assert_eq!(Skeleton::new(vec![], vec![], 0), Err(SkeletonError::Empty));
    }
}
