//! `.rvprm` container: one roadmap plus its per-link octrees.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        6 bytes  "RVPRM1"
//! version      u32      1
//! model_hash   u64      FNV-1a of the model description
//! mode         u8       0 unconstrained, 1 constrained
//! budget       u64
//! seed         u64
//! step         f64
//! goal         3 x f64
//! epsilon      f64
//! octree       center 3 x f64, half_width f64, max_depth u8
//! dof          u32
//! node_count   u32, then node_count x dof x f64
//! edge_count   u32, then edge_count x (u32, u32)
//! link_count   u32, then per link:
//!   record_count u32, then record_count x (from 3 x f64, to 3 x f64, radius f64, q_ref u32)
//!   node_count   u32, then nodes in preorder:
//!     child_mask u8 (bit k set when child k exists)
//!     leaves only: id_count u32, then id_count x u32 record indices
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use super::octree::{LinkRecord, Octree, OctreeConfig, OctreeNode};
use super::roadmap::{LearnConfig, ReachableVolumes, Roadmap};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::kinematics::TaskSpec;

pub const MAGIC: &[u8; 6] = b"RVPRM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadmapFile {
    pub model_hash: u64,
    pub learn: LearnConfig,
    pub task: TaskSpec,
    pub roadmap: Roadmap,
    pub volumes: ReachableVolumes,
}

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn p3(&mut self, p: &Point3) {
        for k in 0..3 {
            self.f64(p[k]);
        }
    }
    fn len(&mut self, n: usize) -> Result<()> {
        self.u32(u32::try_from(n).map_err(|_| Error::RoadmapFormat("table too large".into()))?);
        Ok(())
    }
}

struct R<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> R<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::RoadmapFormat("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn p3(&mut self) -> Result<Point3> {
        Ok(Point3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    /// Table length, bounded by the bytes left so corrupt counts fail fast.
    fn count(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_bytes) > self.buf.len() - self.pos {
            return Err(Error::RoadmapFormat("table length exceeds file size".into()));
        }
        Ok(n)
    }
}

fn write_octree(w: &mut W, t: &Octree) -> Result<()> {
    w.len(t.records.len())?;
    for r in &t.records {
        w.p3(&r.from);
        w.p3(&r.to);
        w.f64(r.radius);
        w.u32(r.q_ref);
    }
    w.len(t.nodes.len())?;
    let mut stack = vec![0u32];
    while let Some(i) = stack.pop() {
        let n = &t.nodes[i as usize];
        let mut mask = 0u8;
        for k in 0..8 {
            if n.child(k).is_some() {
                mask |= 1 << k;
            }
        }
        w.u8(mask);
        if n.depth == t.config.max_depth {
            w.len(n.links.len())?;
            for &l in &n.links {
                w.u32(l);
            }
        }
        for k in (0..8).rev() {
            if let Some(c) = n.child(k) {
                stack.push(c);
            }
        }
    }
    Ok(())
}

fn read_octree(r: &mut R, config: OctreeConfig) -> Result<Octree> {
    let n_rec = r.count(60)?;
    let mut records = Vec::with_capacity(n_rec);
    for _ in 0..n_rec {
        records.push(LinkRecord {
            from: r.p3()?,
            to: r.p3()?,
            radius: r.f64()?,
            q_ref: r.u32()?,
        });
    }
    let n_nodes = r.count(1)?;
    if n_nodes == 0 {
        return Err(Error::RoadmapFormat("octree without root".into()));
    }
    let mut nodes: Vec<OctreeNode> = Vec::with_capacity(n_nodes);
    let root = OctreeNode::new(config.center, config.half_width, 0);
    // (node index, remaining child slots to fill in order)
    let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
    for _ in 0..n_nodes {
        let mut node = match stack.last_mut() {
            None if nodes.is_empty() => root.clone(),
            None => return Err(Error::RoadmapFormat("octree node outside the tree".into())),
            Some((parent, slots)) => {
                let k = slots.remove(0);
                let p = &nodes[*parent];
                let hw = p.half_width / 2.0;
                let s = |bit: usize| if k & bit != 0 { hw } else { -hw };
                let idx = nodes.len() as u32;
                let node = OctreeNode {
                    center: p.center + Point3::new(s(1), s(2), s(4)),
                    half_width: hw,
                    depth: p.depth + 1,
                    children: [u32::MAX; 8],
                    links: Vec::new(),
                };
                nodes[*parent].children[k] = idx;
                node
            }
        };
        while stack.last().is_some_and(|(_, s)| s.is_empty()) {
            stack.pop();
        }
        let mask = r.u8()?;
        if node.depth == config.max_depth {
            if mask != 0 {
                return Err(Error::RoadmapFormat("leaf with children".into()));
            }
            let n = r.count(4)?;
            for _ in 0..n {
                let id = r.u32()?;
                if id as usize >= records.len() {
                    return Err(Error::RoadmapFormat("leaf references a missing record".into()));
                }
                node.links.push(id);
            }
        }
        let slots: Vec<usize> = (0..8).filter(|k| mask & (1 << k) != 0).collect();
        nodes.push(node);
        if !slots.is_empty() {
            if nodes.last().unwrap().depth >= config.max_depth {
                return Err(Error::RoadmapFormat("octree deeper than max depth".into()));
            }
            stack.push((nodes.len() - 1, slots));
        }
    }
    if !stack.is_empty() {
        return Err(Error::RoadmapFormat("truncated octree".into()));
    }
    Ok(Octree::from_parts(config, nodes, records))
}

impl RoadmapFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = W(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u64(self.model_hash);
        w.u8(self.roadmap.constrained as u8);
        w.u64(self.learn.budget as u64);
        w.u64(self.learn.seed);
        w.f64(self.learn.step);
        w.p3(&self.task.ee_goal);
        w.f64(self.task.epsilon);
        let oc = self.learn.octree;
        w.p3(&oc.center);
        w.f64(oc.half_width);
        w.u8(oc.max_depth);
        let dof = self.roadmap.nodes.first().map_or(0, |q| q.len());
        w.len(dof)?;
        w.len(self.roadmap.len())?;
        for q in &self.roadmap.nodes {
            for &x in q.iter() {
                w.f64(x);
            }
        }
        w.len(self.roadmap.edges.len())?;
        for &(a, b) in &self.roadmap.edges {
            w.u32(a);
            w.u32(b);
        }
        w.len(self.volumes.octrees.len())?;
        for t in &self.volumes.octrees {
            write_octree(&mut w, t)?;
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = R { buf, pos: 0 };
        if r.take(6)? != MAGIC {
            return Err(Error::RoadmapFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::RoadmapFormat(format!("unsupported version {version}")));
        }
        let model_hash = r.u64()?;
        let constrained = match r.u8()? {
            0 => false,
            1 => true,
            m => return Err(Error::RoadmapFormat(format!("bad mode flag {m}"))),
        };
        let budget = r.u64()? as usize;
        let seed = r.u64()?;
        let step = r.f64()?;
        let goal = r.p3()?;
        let epsilon = r.f64()?;
        let octree = OctreeConfig {
            center: r.p3()?,
            half_width: r.f64()?,
            max_depth: r.u8()?,
        };
        let dof = r.u32()? as usize;
        let n_nodes = r.count(dof * 8)?;
        let mut roadmap = Roadmap::new(constrained);
        for _ in 0..n_nodes {
            let mut q = DVector::zeros(dof);
            for k in 0..dof {
                q[k] = r.f64()?;
            }
            roadmap.add_node(q);
        }
        let n_edges = r.count(8)?;
        for _ in 0..n_edges {
            let (a, b) = (r.u32()?, r.u32()?);
            if a as usize >= n_nodes || b as usize >= n_nodes {
                return Err(Error::RoadmapFormat("edge references a missing node".into()));
            }
            roadmap.add_edge(a, b);
        }
        let n_links = r.count(8)?;
        let mut octrees = Vec::with_capacity(n_links);
        for _ in 0..n_links {
            octrees.push(read_octree(&mut r, octree)?);
        }
        if r.pos != buf.len() {
            return Err(Error::RoadmapFormat("trailing bytes".into()));
        }
        let task = TaskSpec::new(goal, epsilon).map_err(|e| Error::RoadmapFormat(e.to_string()))?;
        Ok(Self {
            model_hash,
            learn: LearnConfig {
                budget,
                seed,
                step,
                octree,
                ..LearnConfig::new(budget, seed)
            },
            task,
            roadmap,
            volumes: ReachableVolumes { octrees },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
