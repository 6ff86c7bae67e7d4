//! Skeleton topology and the symmetric-normalized graph filter shared by
//! every spatial layer.

use crate::error::{Error, Result};

/// A skeleton as a rooted tree of joints.
///
/// The parent list is canonical; edges and the root-outward chain order are
/// derived from it on construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTopology {
    parents: Vec<Option<usize>>,
    edges: Vec<(usize, usize)>,
    chain_order: Vec<usize>,
}

impl SkeletonTopology {
    /// Builds a topology from a per-joint parent list. Exactly one joint must
    /// have no parent and every joint must be reachable from it.
    pub fn from_parents(parents: Vec<Option<usize>>) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::Topology("skeleton has no joints".into()));
        }
        let mut root = None;
        let mut children = vec![Vec::new(); n];
        for (joint, parent) in parents.iter().enumerate() {
            match *parent {
                None => {
                    if let Some(r) = root {
                        return Err(Error::Topology(format!(
                            "multiple roots: joints {r} and {joint} have no parent"
                        )));
                    }
                    root = Some(joint);
                }
                Some(p) if p >= n => {
                    return Err(Error::Topology(format!(
                        "joint {joint} has parent {p}, but there are only {n} joints"
                    )));
                }
                Some(p) if p == joint => {
                    return Err(Error::Topology(format!("joint {joint} is its own parent")));
                }
                Some(p) => children[p].push(joint),
            }
        }
        let root = root.ok_or_else(|| Error::Topology("no root joint (cycle)".into()))?;

        let mut chain_order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(j) = queue.pop_front() {
            chain_order.push(j);
            for &c in &children[j] {
                if !seen[c] {
                    seen[c] = true;
                    queue.push_back(c);
                }
            }
        }
        if chain_order.len() != n {
            let stray = seen.iter().position(|s| !s).unwrap_or(0);
            return Err(Error::Topology(format!(
                "joint {stray} is not reachable from root {root} (cycle in parent links)"
            )));
        }

        let edges = parents
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (p, j)))
            .collect();
        Ok(Self {
            parents,
            edges,
            chain_order,
        })
    }

    /// A simple chain `0 - 1 - ... - (n-1)` rooted at joint 0.
    pub fn chain(num_joints: usize) -> Result<Self> {
        Self::from_parents((0..num_joints).map(|j| j.checked_sub(1)).collect())
    }

    /// The 25-joint Kinect v2 layout used by NTU RGB+D, rooted at the base of
    /// the spine.
    pub fn ntu25() -> Self {
        // 1-based (child, parent) pairs of the Kinect v2 skeleton.
        const BONES: [(usize, usize); 24] = [
            (2, 1),
            (21, 2),
            (3, 21),
            (4, 3),
            (5, 21),
            (6, 5),
            (7, 6),
            (8, 7),
            (9, 21),
            (10, 9),
            (11, 10),
            (12, 11),
            (13, 1),
            (14, 13),
            (15, 14),
            (16, 15),
            (17, 1),
            (18, 17),
            (19, 18),
            (20, 19),
            (22, 23),
            (23, 8),
            (24, 25),
            (25, 12),
        ];
        let mut parents = vec![None; 25];
        for (child, parent) in BONES {
            parents[child - 1] = Some(parent - 1);
        }
        Self::from_parents(parents).expect("built-in NTU topology is a tree")
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    /// Bones as `(parent, child)` pairs, ordered by child index.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Breadth-first order from the root; parents precede their children.
    pub fn chain_order(&self) -> &[usize] {
        &self.chain_order
    }

    pub fn root(&self) -> usize {
        self.chain_order[0]
    }

    /// Relabels joints so that old joint `i` becomes joint `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_joints();
        check_permutation(perm, n)?;
        let mut parents = vec![None; n];
        for (old, parent) in self.parents.iter().enumerate() {
            parents[perm[old]] = parent.map(|p| perm[p]);
        }
        Self::from_parents(parents)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::invalid(format!(
            "permutation has {} entries, expected {n}",
            perm.len()
        )));
    }
    let mut hit = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut hit[p], true) {
            return Err(Error::invalid("not a permutation"));
        }
    }
    Ok(())
}

/// Binary symmetric adjacency `A` with zero diagonal, stored dense row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    n: usize,
    a: Vec<f64>,
}

impl Adjacency {
    pub fn num_joints(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }
}

/// `A_ij = 1` iff a bone connects joints `i` and `j`.
pub fn build_adjacency(topology: &SkeletonTopology) -> Adjacency {
    let n = topology.num_joints();
    let mut a = vec![0.0; n * n];
    for &(p, c) in topology.edges() {
        a[p * n + c] = 1.0;
        a[c * n + p] = 1.0;
    }
    Adjacency { n, a }
}

/// The normalized filter `D̃^{-1/2} (A + I) D̃^{-1/2}` together with the
/// intermediate matrices it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFilter {
    n: usize,
    adjacency: Vec<f64>,
    self_looped: Vec<f64>,
    degree: Vec<f64>,
    filter: Vec<f64>,
}

pub fn normalize_adjacency(adjacency: &Adjacency) -> Result<GraphFilter> {
    let n = adjacency.n;
    let mut self_looped = adjacency.a.clone();
    for i in 0..n {
        self_looped[i * n + i] += 1.0;
    }
    let degree: Vec<f64> = (0..n)
        .map(|i| self_looped[i * n..(i + 1) * n].iter().sum())
        .collect();
    if let Some(i) = degree.iter().position(|&d| d <= 0.0) {
        return Err(Error::Internal(format!(
            "joint {i} has zero degree after self-loops"
        )));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut filter = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            filter[i * n + j] = self_looped[i * n + j] * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(GraphFilter {
        n,
        adjacency: adjacency.a.clone(),
        self_looped,
        degree,
        filter,
    })
}

impl GraphFilter {
    pub fn from_topology(topology: &SkeletonTopology) -> Result<Self> {
        normalize_adjacency(&build_adjacency(topology))
    }

    pub fn num_joints(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &[f64] {
        &self.adjacency
    }

    pub fn self_looped(&self) -> &[f64] {
        &self.self_looped
    }

    /// Diagonal of `D̃`.
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// `Â`, dense row-major `n × n`.
    pub fn filter(&self) -> &[f64] {
        &self.filter
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.filter[i * self.n + j]
    }
}
