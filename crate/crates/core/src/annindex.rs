//! Approximate nearest-neighbour search over unit embeddings with a forest
//! of random bisector trees, plus the exhaustive scan it approximates.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::io::{Read, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Allowed deviation of a stored or query vector's norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Inner product used for every score, so forest and brute force agree
/// bit for bit.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn check_unit(v: &[f32]) -> bool {
    (dot(v, v).sqrt() - 1.0).abs() <= UNIT_TOLERANCE
}

/// Id-keyed unit vectors of one dimension, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return param("embedding dimension must be positive");
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
        })
    }

    /// Appends a vector. Rejects wrong dimension, non-unit norm and
    /// repeated ids.
    pub fn push(&mut self, id: u64, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return param(format!(
                "vector {id} has dimension {}, expected {}",
                v.len(),
                self.dim
            ));
        }
        if !check_unit(v) {
            return Err(Error::Integrity(format!("vector {id} is not unit-norm")));
        }
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn from_pairs<'a>(
        dim: usize,
        pairs: impl IntoIterator<Item = (u64, &'a [f32])>,
    ) -> Result<Self> {
        let mut t = Self::new(dim)?;
        for (id, v) in pairs {
            t.push(id, v)?;
        }
        t.check_unique()?;
        Ok(t)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.ids.len());
        for &id in &self.ids {
            if !seen.insert(id) {
                return Err(Error::Integrity(format!("duplicate id {id}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }
}

/// One search hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: u64,
    pub score: f64,
}

fn by_rank(a: &Scored, b: &Scored) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

fn top_k(mut hits: Vec<Scored>, k: usize) -> Vec<Scored> {
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, by_rank);
        hits.truncate(k);
    }
    hits.sort_by(by_rank);
    hits
}

fn check_query(q: &[f32], dim: usize) -> Result<()> {
    if q.len() != dim {
        return Err(Error::Integrity(format!(
            "query has dimension {}, index has {dim}",
            q.len()
        )));
    }
    if !check_unit(q) {
        return param("query vector is not unit-norm");
    }
    Ok(())
}

/// Exact top-`k` by inner product, ties by ascending id.
pub fn brute_force_knn(table: &EmbeddingTable, q: &[f32], k: usize) -> Result<Vec<Scored>> {
    check_query(q, table.dim)?;
    if k == 0 {
        return param("k must be at least 1");
    }
    let hits = (0..table.len())
        .map(|i| Scored {
            id: table.ids[i],
            score: dot(q, table.vector(i)),
        })
        .collect();
    Ok(top_k(hits, k))
}

/// Query effort: `search_nodes` bounds the tree nodes (internal and leaf)
/// expanded across the whole forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnQueryBudget {
    pub k: usize,
    pub search_nodes: usize,
}

impl AnnQueryBudget {
    pub fn validate(&self, n_trees: usize) -> Result<()> {
        if self.k == 0 {
            return param("k must be at least 1");
        }
        if self.search_nodes < n_trees {
            return param(format!(
                "search_nodes ({}) must be at least the number of trees ({n_trees})",
                self.search_nodes
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    /// Points with `normal · x − offset > 0` go left.
    Split {
        normal: u32,
        offset: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        len: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
    /// Unit normals, `dim` floats each.
    normals: Vec<f32>,
    /// Row indices into the table, grouped by leaf.
    items: Vec<u32>,
}

impl Tree {
    fn margin(&self, node: &Node, q: &[f32]) -> f64 {
        match *node {
            Node::Split { normal, offset, .. } => {
                let d = q.len();
                dot(&self.normals[normal as usize * d..][..d], q) - offset as f64
            }
            Node::Leaf { .. } => unreachable!("leaves have no hyperplane"),
        }
    }
}

/// Build statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestStats {
    pub leaves: usize,
    pub mean_leaf_depth: f64,
    pub max_leaf_depth: usize,
}

/// Build settings for [`AnnForest::build`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub leaf_cap: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 16,
            leaf_cap: 32,
            seed: 5,
        }
    }
}

/// Forest of random bisector trees over an [`EmbeddingTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnnForest {
    table: EmbeddingTable,
    trees: Vec<Tree>,
    leaf_cap: usize,
    seed: u64,
}

struct Builder<'a> {
    table: &'a EmbeddingTable,
    leaf_cap: usize,
    rng: ChaCha8Rng,
    tree: Tree,
}

impl Builder<'_> {
    /// Pair of rows with distinct vectors, if the set has one.
    fn pick_pair(&mut self, rows: &[u32]) -> Option<(u32, u32)> {
        for _ in 0..8 {
            let a = rows[self.rng.gen_range(0..rows.len())];
            let b = rows[self.rng.gen_range(0..rows.len())];
            if self.table.vector(a as usize) != self.table.vector(b as usize) {
                return Some((a, b));
            }
        }
        // mostly duplicates: fall back to the first vector that differs
        let a = rows[0];
        rows.iter()
            .copied()
            .find(|&b| self.table.vector(b as usize) != self.table.vector(a as usize))
            .map(|b| (a, b))
    }

    fn leaf(&mut self, rows: &[u32]) -> u32 {
        let start = self.tree.items.len() as u32;
        self.tree.items.extend_from_slice(rows);
        self.tree.nodes.push(Node::Leaf {
            start,
            len: rows.len() as u32,
        });
        (self.tree.nodes.len() - 1) as u32
    }

    fn build(&mut self, rows: Vec<u32>) -> u32 {
        if rows.len() <= self.leaf_cap {
            return self.leaf(&rows);
        }
        // identical vectors cannot be separated; they share one leaf
        let Some((a, b)) = self.pick_pair(&rows) else {
            return self.leaf(&rows);
        };
        let dim = self.table.dim;
        let (va, vb) = (self.table.vector(a as usize), self.table.vector(b as usize));
        let diff: Vec<f64> = va
            .iter()
            .zip(vb)
            .map(|(&x, &y)| x as f64 - y as f64)
            .collect();
        let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        let normal: Vec<f32> = diff.iter().map(|x| (x / norm) as f32).collect();
        let mid: Vec<f32> = va
            .iter()
            .zip(vb)
            .map(|(&x, &y)| ((x as f64 + y as f64) / 2.0) as f32)
            .collect();
        let offset = dot(&normal, &mid) as f32;

        let normal_idx = (self.tree.normals.len() / dim) as u32;
        self.tree.normals.extend_from_slice(&normal);
        let node_idx = self.tree.nodes.len();
        self.tree.nodes.push(Node::Split {
            normal: normal_idx,
            offset,
            left: 0,
            right: 0,
        });
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for r in rows {
            if dot(&normal, self.table.vector(r as usize)) - offset as f64 > 0.0 {
                left.push(r);
            } else {
                right.push(r);
            }
        }
        if left.is_empty() || right.is_empty() {
            // rounding put both anchors on one side; split the rows evenly
            let mut all = if left.is_empty() { right } else { left };
            all.shuffle(&mut self.rng);
            right = all.split_off(all.len() / 2);
            left = all;
        }
        let l = self.build(left);
        let r = self.build(right);
        if let Node::Split { left, right, .. } = &mut self.tree.nodes[node_idx] {
            *left = l;
            *right = r;
        }
        node_idx as u32
    }
}

#[derive(PartialEq)]
struct Frontier {
    priority: f64,
    tree: u32,
    node: u32,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub const FOREST_MAGIC: &[u8; 8] = b"POIVANN\0";
pub const FOREST_VERSION: u32 = 1;

impl AnnForest {
    /// Builds `n_trees` trees. Tree `t` draws from its own generator seeded
    /// with `seed + t`, so the forest does not depend on build parallelism.
    pub fn build(
        table: EmbeddingTable,
        n_trees: usize,
        leaf_cap: usize,
        seed: u64,
    ) -> Result<Self> {
        if table.is_empty() {
            return param("cannot build a forest over zero vectors");
        }
        if n_trees == 0 || leaf_cap == 0 {
            return param("n_trees and leaf_cap must be positive");
        }
        table.check_unique()?;
        if let Some(i) = (0..table.len()).find(|&i| !check_unit(table.vector(i))) {
            return Err(Error::Integrity(format!(
                "vector {} is not unit-norm",
                table.ids[i]
            )));
        }
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut b = Builder {
                    table: &table,
                    leaf_cap,
                    rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64)),
                    tree: Tree {
                        nodes: Vec::new(),
                        normals: Vec::new(),
                        items: Vec::new(),
                    },
                };
                let root = b.build((0..table.len() as u32).collect());
                debug_assert_eq!(root, 0);
                b.tree
            })
            .collect();
        Ok(Self {
            table,
            trees,
            leaf_cap,
            seed,
        })
    }

    pub fn build_with(table: EmbeddingTable, p: ForestParams) -> Result<Self> {
        Self::build(table, p.n_trees, p.leaf_cap, p.seed)
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn leaf_cap(&self) -> usize {
        self.leaf_cap
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    /// Ids of each leaf of tree `t`, in node order.
    pub fn leaves(&self, t: usize) -> Vec<Vec<u64>> {
        let tree = &self.trees[t];
        tree.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { start, len } => Some(
                    tree.items[start as usize..(start + len) as usize]
                        .iter()
                        .map(|&r| self.table.ids[r as usize])
                        .collect(),
                ),
                Node::Split { .. } => None,
            })
            .collect()
    }

    pub fn stats(&self) -> ForestStats {
        let (mut leaves, mut depth_sum, mut max_depth) = (0usize, 0usize, 0usize);
        for tree in &self.trees {
            let mut stack = vec![(0u32, 0usize)];
            while let Some((n, depth)) = stack.pop() {
                match tree.nodes[n as usize] {
                    Node::Split { left, right, .. } => {
                        stack.push((left, depth + 1));
                        stack.push((right, depth + 1));
                    }
                    Node::Leaf { .. } => {
                        leaves += 1;
                        depth_sum += depth;
                        max_depth = max_depth.max(depth);
                    }
                }
            }
        }
        ForestStats {
            leaves,
            mean_leaf_depth: depth_sum as f64 / leaves as f64,
            max_leaf_depth: max_depth,
        }
    }

    /// Best-first search over all trees with one shared queue. A child's
    /// priority is the smallest signed margin met on its path, so the query
    /// side of every hyperplane is explored first. Visited leaf members are
    /// deduplicated and scored exactly. Once the node budget is spent the
    /// search still descends until it has reached at least one leaf.
    pub fn query(&self, q: &[f32], budget: AnnQueryBudget) -> Result<Vec<Scored>> {
        if self.trees.is_empty() {
            return Err(Error::State("forest has no trees".into()));
        }
        check_query(q, self.table.dim)?;
        budget.validate(self.trees.len())?;
        let mut heap: BinaryHeap<Frontier> = (0..self.trees.len() as u32)
            .map(|tree| Frontier {
                priority: f64::INFINITY,
                tree,
                node: 0,
            })
            .collect();
        let mut rows: Vec<u32> = Vec::new();
        let mut expanded = 0;
        while expanded < budget.search_nodes || rows.is_empty() {
            let Some(Frontier {
                priority,
                tree,
                node,
            }) = heap.pop()
            else {
                break;
            };
            expanded += 1;
            let t = &self.trees[tree as usize];
            let n = &t.nodes[node as usize];
            match *n {
                Node::Split { left, right, .. } => {
                    let m = t.margin(n, q);
                    heap.push(Frontier {
                        priority: priority.min(m),
                        tree,
                        node: left,
                    });
                    heap.push(Frontier {
                        priority: priority.min(-m),
                        tree,
                        node: right,
                    });
                }
                Node::Leaf { start, len } => {
                    rows.extend_from_slice(&t.items[start as usize..(start + len) as usize])
                }
            }
        }
        rows.sort_unstable();
        rows.dedup();
        let hits = rows
            .into_iter()
            .map(|r| Scored {
                id: self.table.ids[r as usize],
                score: dot(q, self.table.vector(r as usize)),
            })
            .collect();
        Ok(top_k(hits, budget.k))
    }

    /// Little-endian binary: header (magic, version, dim, n_trees, leaf_cap,
    /// n_vectors, seed), then per tree its node count and node records
    /// (tag 0: normal, offset, left, right; tag 1: leaf row indices), then
    /// the vector table as (id, components) rows.
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(w);
        let dim = self.table.dim;
        w.write_all(FOREST_MAGIC)?;
        for v in [
            FOREST_VERSION,
            dim as u32,
            self.trees.len() as u32,
            self.leaf_cap as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.table.len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for tree in &self.trees {
            w.write_all(&(tree.nodes.len() as u32).to_le_bytes())?;
            for node in &tree.nodes {
                match *node {
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        w.write_all(&[0])?;
                        for &x in &tree.normals[normal as usize * dim..][..dim] {
                            w.write_all(&x.to_le_bytes())?;
                        }
                        w.write_all(&offset.to_le_bytes())?;
                        w.write_all(&left.to_le_bytes())?;
                        w.write_all(&right.to_le_bytes())?;
                    }
                    Node::Leaf { start, len } => {
                        w.write_all(&[1])?;
                        w.write_all(&len.to_le_bytes())?;
                        for &r in &tree.items[start as usize..(start + len) as usize] {
                            w.write_all(&r.to_le_bytes())?;
                        }
                    }
                }
            }
        }
        for i in 0..self.table.len() {
            w.write_all(&self.table.ids[i].to_le_bytes())?;
            for &x in self.table.vector(i) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader(std::io::BufReader::new(r));
        let mut magic = [0u8; 8];
        r.exact(&mut magic)?;
        if &magic != FOREST_MAGIC {
            return Err(Error::Format("not an ANN forest file".into()));
        }
        let version = r.u32()?;
        if version != FOREST_VERSION {
            return Err(Error::Version {
                what: "ANN forest",
                found: version,
                expected: FOREST_VERSION,
            });
        }
        let dim = r.u32()? as usize;
        let n_trees = r.u32()? as usize;
        let leaf_cap = r.u32()? as usize;
        let n = r.u64()? as usize;
        let seed = r.u64()?;
        if dim == 0 || n_trees == 0 || leaf_cap == 0 || n == 0 || n > u32::MAX as usize {
            return Err(Error::Format("invalid forest header".into()));
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let count = r.u32()? as usize;
            let mut tree = Tree {
                nodes: Vec::with_capacity(count),
                normals: Vec::new(),
                items: Vec::new(),
            };
            for _ in 0..count {
                let mut tag = [0u8];
                r.exact(&mut tag)?;
                match tag[0] {
                    0 => {
                        let normal = (tree.normals.len() / dim) as u32;
                        for _ in 0..dim {
                            tree.normals.push(r.f32()?);
                        }
                        let offset = r.f32()?;
                        let (left, right) = (r.u32()?, r.u32()?);
                        if left as usize >= count || right as usize >= count {
                            return Err(Error::Format("child index out of range".into()));
                        }
                        tree.nodes.push(Node::Split {
                            normal,
                            offset,
                            left,
                            right,
                        });
                    }
                    1 => {
                        let len = r.u32()?;
                        let start = tree.items.len() as u32;
                        for _ in 0..len {
                            let row = r.u32()?;
                            if row as usize >= n {
                                return Err(Error::Format("leaf row out of range".into()));
                            }
                            tree.items.push(row);
                        }
                        tree.nodes.push(Node::Leaf { start, len });
                    }
                    t => return Err(Error::Format(format!("unknown node tag {t}"))),
                }
            }
            if tree.nodes.is_empty() {
                return Err(Error::Format("empty tree".into()));
            }
            let mut seen = tree.items.clone();
            seen.sort_unstable();
            seen.dedup();
            if tree.items.len() != n || seen.len() != n {
                return Err(Error::Integrity(
                    "tree leaves do not partition the vectors".into(),
                ));
            }
            trees.push(tree);
        }
        let mut table = EmbeddingTable::new(dim)?;
        let mut v = vec![0f32; dim];
        for _ in 0..n {
            let id = r.u64()?;
            for x in v.iter_mut() {
                *x = r.f32()?;
            }
            table.push(id, &v)?;
        }
        table.check_unique()?;
        let mut rest = [0u8; 1];
        if r.0.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after forest".into()));
        }
        Ok(Self {
            table,
            trees,
            leaf_cap,
            seed,
        })
    }
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.0
            .read_exact(buf)
            .map_err(|_| Error::Format("truncated forest file".into()))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

/// Random unit vectors, for tests and benchmarks.
pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let mut t = EmbeddingTable::new(dim).expect("positive dimension");
    let mut v = vec![0f32; dim];
    for id in 0..n as u64 {
        loop {
            let raw: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(normal)).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            raw.iter()
                .zip(v.iter_mut())
                .for_each(|(x, o)| *o = (x / norm) as f32);
            if check_unit(&v) {
                break;
            }
        }
        t.push(id, &v).expect("unit vector");
    }
    t
}

/// Unit `f32` copy of `v`: normalized in double precision, then rounded.
pub fn normalized_f32(v: &[f64]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| (x / norm) as f32).collect())
}
