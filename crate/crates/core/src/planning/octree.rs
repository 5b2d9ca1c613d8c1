//! Per-link reachable-volume octree.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{point_segment_distance, segment_segment_distance, Capsule, Point3, Segment};

pub const MAX_DEPTH: u8 = 6;
const NONE: u32 = u32::MAX;
const SQRT3: f64 = 1.732_050_807_568_877_2;

/// One link capsule of one roadmap node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub from: Point3,
    pub to: Point3,
    pub radius: f64,
    pub q_ref: u32,
}

impl LinkRecord {
    pub fn segment(&self) -> Segment {
        Segment::new(self.from, self.to)
    }

    pub fn from_capsule(c: &Capsule, q_ref: u32) -> Self {
        Self {
            from: c.seg.a,
            to: c.seg.b,
            radius: c.radius,
            q_ref,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OctreeConfig {
    pub center: Point3,
    pub half_width: f64,
    pub max_depth: u8,
}

impl Default for OctreeConfig {
    fn default() -> Self {
        Self {
            center: Point3::new(0.0, 0.0, 0.9),
            half_width: 1.0,
            max_depth: MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeNode {
    pub center: Point3,
    pub half_width: f64,
    pub depth: u8,
    pub children: [u32; 8],
    /// Record indices; only populated at leaves.
    pub links: Vec<u32>,
}

impl OctreeNode {
    pub(crate) fn new(center: Point3, half_width: f64, depth: u8) -> Self {
        Self {
            center,
            half_width,
            depth,
            children: [NONE; 8],
            links: Vec::new(),
        }
    }

    pub fn half_diagonal(&self) -> f64 {
        SQRT3 * self.half_width
    }

    pub fn child(&self, k: usize) -> Option<u32> {
        (self.children[k] != NONE).then_some(self.children[k])
    }
}

fn child_center(center: &Point3, half_width: f64, k: usize) -> Point3 {
    let q = half_width / 2.0;
    let s = |bit: usize| if k & bit != 0 { q } else { -q };
    center + Point3::new(s(1), s(2), s(4))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Octree {
    pub config: OctreeConfig,
    pub nodes: Vec<OctreeNode>,
    pub records: Vec<LinkRecord>,
    r_max: f64,
}

impl Octree {
    pub fn new(config: OctreeConfig) -> Self {
        Self {
            nodes: vec![OctreeNode::new(config.center, config.half_width, 0)],
            records: Vec::new(),
            config,
            r_max: 0.0,
        }
    }

    pub fn root(&self) -> &OctreeNode {
        &self.nodes[0]
    }

    pub fn max_radius(&self) -> f64 {
        self.r_max
    }

    fn touches(center: &Point3, half_width: f64, seg: &Segment, r: f64) -> bool {
        point_segment_distance(center, seg) <= SQRT3 * half_width + r
    }

    fn leaf_paths(&self, seg: &Segment, r: f64, center: Point3, hw: f64, depth: u8, path: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if depth == self.config.max_depth {
            out.push(path.clone());
            return;
        }
        for k in 0..8 {
            let c = child_center(&center, hw, k);
            if Self::touches(&c, hw / 2.0, seg, r) {
                path.push(k as u8);
                self.leaf_paths(seg, r, c, hw / 2.0, depth + 1, path, out);
                path.pop();
            }
        }
    }

    /// Registers the record in every leaf cell whose circumscribed sphere,
    /// grown by the link radius, meets the segment. Returns false when the
    /// capsule misses the root region.
    pub fn insert(&mut self, rec: LinkRecord) -> bool {
        let seg = rec.segment();
        if !Self::touches(&self.config.center, self.config.half_width, &seg, rec.radius) {
            return false;
        }
        let mut paths = Vec::new();
        self.leaf_paths(&seg, rec.radius, self.config.center, self.config.half_width, 0, &mut Vec::new(), &mut paths);
        if paths.is_empty() {
            return false;
        }
        let id = self.records.len() as u32;
        self.records.push(rec);
        self.r_max = self.r_max.max(rec.radius);
        for path in paths {
            let mut node = 0usize;
            for &k in &path {
                node = match self.nodes[node].child(k as usize) {
                    Some(c) => c as usize,
                    None => {
                        let parent = &self.nodes[node];
                        let child = OctreeNode::new(
                            child_center(&parent.center, parent.half_width, k as usize),
                            parent.half_width / 2.0,
                            parent.depth + 1,
                        );
                        self.nodes.push(child);
                        let idx = self.nodes.len() - 1;
                        self.nodes[node].children[k as usize] = idx as u32;
                        idx
                    }
                };
            }
            self.nodes[node].links.push(id);
        }
        true
    }

    pub fn leaves(&self) -> impl Iterator<Item = &OctreeNode> {
        let d = self.config.max_depth;
        self.nodes.iter().filter(move |n| n.depth == d)
    }

    pub fn occupied_leaf_count(&self) -> usize {
        self.leaves().count()
    }

    /// Integer grid coordinates of every occupied leaf.
    pub fn occupied_leaf_keys(&self) -> BTreeSet<(i64, i64, i64)> {
        let cell = 2.0 * self.config.half_width / f64::from(1u32 << self.config.max_depth);
        let min = self.config.center - Point3::repeat(self.config.half_width);
        self.leaves()
            .map(|n| {
                let k = (n.center - min) / cell;
                (k.x.floor() as i64, k.y.floor() as i64, k.z.floor() as i64)
            })
            .collect()
    }

    /// Node ids of every record whose capsule comes within `r_o` of `seg`.
    pub fn intercepting(&self, seg: &Segment, r_o: f64) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        if self.records.is_empty() {
            return out;
        }
        let grow = r_o + self.r_max;
        let mut checked = vec![false; self.records.len()];
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i as usize];
            if point_segment_distance(&n.center, seg) > n.half_diagonal() + grow {
                continue;
            }
            for &rid in &n.links {
                if std::mem::replace(&mut checked[rid as usize], true) {
                    continue;
                }
                let r = &self.records[rid as usize];
                if segment_segment_distance(&r.segment(), seg) <= r_o + r.radius {
                    out.insert(r.q_ref);
                }
            }
            stack.extend(n.children.iter().copied().filter(|&c| c != NONE));
        }
        out
    }

    /// Linear scan over all records; same contract as [`Octree::intercepting`].
    pub fn intercepting_linear(&self, seg: &Segment, r_o: f64) -> BTreeSet<u32> {
        self.records
            .iter()
            .filter(|r| segment_segment_distance(&r.segment(), seg) <= r_o + r.radius)
            .map(|r| r.q_ref)
            .collect()
    }

    /// Renumbers nodes in preorder with children visited by octant index.
    pub fn canonicalize(&mut self) {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            order.push(i);
            for k in (0..8).rev() {
                if let Some(c) = self.nodes[i as usize].child(k) {
                    stack.push(c);
                }
            }
        }
        let mut new_id = vec![NONE; self.nodes.len()];
        for (n, &old) in order.iter().enumerate() {
            new_id[old as usize] = n as u32;
        }
        let mut nodes: Vec<OctreeNode> = order.iter().map(|&i| self.nodes[i as usize].clone()).collect();
        for n in &mut nodes {
            for c in &mut n.children {
                if *c != NONE {
                    *c = new_id[*c as usize];
                }
            }
        }
        self.nodes = nodes;
    }

    pub(crate) fn from_parts(config: OctreeConfig, nodes: Vec<OctreeNode>, records: Vec<LinkRecord>) -> Self {
        let r_max = records.iter().map(|r| r.radius).fold(0.0, f64::max);
        Self {
            config,
            nodes,
            records,
            r_max,
        }
    }
}

/// Octree query for one link volume.
pub fn intercepting_configs(vol: &Octree, p_o: &Point3, v_o: &Point3, r_o: f64, t_d: f64) -> BTreeSet<u32> {
    vol.intercepting(&Segment::new(*p_o, p_o + v_o * t_d), r_o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> OctreeConfig {
        OctreeConfig {
            center: Point3::zeros(),
            half_width: 1.0,
            max_depth: 4,
        }
    }

    #[test]
    fn far_segment_is_ignored() {
        let mut t = Octree::new(small());
        let rec = LinkRecord {
            from: Point3::new(5.0, 5.0, 5.0),
            to: Point3::new(6.0, 5.0, 5.0),
            radius: 0.1,
            q_ref: 0,
        };
        assert!(!t.insert(rec));
        assert_eq!(t.nodes.len(), 1);
        assert!(t.records.is_empty());
    }

    #[test]
    fn point_at_leaf_center_lands_in_one_leaf() {
        let cfg = small();
        let mut t = Octree::new(cfg);
        // Center of leaf cell (0,0,0) grid-wise, away from every other leaf's sphere.
        let cell = 2.0 / 16.0;
        let p = Point3::repeat(-1.0 + cell / 2.0);
        let rec = LinkRecord {
            from: p,
            to: p,
            radius: 0.0,
            q_ref: 3,
        };
        assert!(t.insert(rec));
        assert_eq!(t.occupied_leaf_count(), 1);
        assert!(t.occupied_leaf_keys().contains(&(0, 0, 0)));
    }

    #[test]
    fn every_stored_record_is_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Octree::new(small());
        for i in 0..200 {
            let a = Point3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let b = a + Point3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            t.insert(LinkRecord {
                from: a,
                to: b,
                radius: rng.random_range(0.0..0.1),
                q_ref: i,
            });
        }
        for leaf in t.leaves() {
            assert!(!leaf.links.is_empty());
            for &rid in &leaf.links {
                let r = &t.records[rid as usize];
                assert!(point_segment_distance(&leaf.center, &r.segment()) <= leaf.half_diagonal() + r.radius + 1e-12);
            }
        }
    }

    #[test]
    fn no_false_negatives_against_dense_sampling() {
        let cfg = small();
        let cell = 2.0 * cfg.half_width / 16.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..200 {
            let mut t = Octree::new(cfg);
            let a = Point3::from_fn(|_, _| rng.random_range(-0.9..0.9));
            let b = a + Point3::from_fn(|_, _| rng.random_range(-0.4..0.4));
            let r = rng.random_range(0.0..0.08);
            t.insert(LinkRecord { from: a, to: b, radius: r, q_ref: i });
            let keys = t.occupied_leaf_keys();
            let seg = Segment::new(a, b);
            // Points densely filling the capsule.
            for _ in 0..400 {
                let s: f64 = rng.random();
                let off = Point3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let off = if off.norm() > 1.0 { off / off.norm() } else { off };
                let p = seg.at(s) + off * r;
                let k = (p - Point3::repeat(-1.0)) / cell;
                let key = (k.x.floor() as i64, k.y.floor() as i64, k.z.floor() as i64);
                if (0..16).contains(&key.0) && (0..16).contains(&key.1) && (0..16).contains(&key.2) {
                    assert!(keys.contains(&key), "missed cell {key:?}");
                }
            }
        }
    }

    #[test]
    fn pruned_query_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = Octree::new(small());
        for i in 0..500 {
            let a = Point3::from_fn(|_, _| rng.random_range(-0.8..0.8));
            let b = a + Point3::from_fn(|_, _| rng.random_range(-0.2..0.2));
            t.insert(LinkRecord { from: a, to: b, radius: 0.05, q_ref: i / 3 });
        }
        for _ in 0..50 {
            let p = Point3::from_fn(|_, _| rng.random_range(-1.5..1.5));
            let v = Point3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let seg = Segment::new(p, p + v);
            let r_o = rng.random_range(0.0..0.2);
            assert_eq!(t.intercepting(&seg, r_o), t.intercepting_linear(&seg, r_o));
        }
        let far = intercepting_configs(&t, &Point3::new(4.0, 0.0, 0.0), &Point3::new(0.0, 1.0, 0.0), 0.1, 1.0);
        assert!(far.is_empty());
    }

    #[test]
    fn touching_record_is_found() {
        let mut t = Octree::new(small());
        t.insert(LinkRecord {
            from: Point3::new(0.1, 0.0, 0.0),
            to: Point3::new(0.1, 0.3, 0.0),
            radius: 0.05,
            q_ref: 42,
        });
        let hits = intercepting_configs(&t, &Point3::new(-0.5, 0.1, 0.0), &Point3::new(1.0, 0.0, 0.0), 0.02, 1.0);
        assert_eq!(hits.into_iter().collect::<Vec<_>>(), vec![42]);
    }
}
