//! Probability forest for a binary person-period response, grown with the
//! Hellinger-distance split criterion.
//!
//! Leaves store the in-bag event proportion, so a tree (and the forest mean
//! over trees) is a hazard estimate. Candidate thresholds are midpoints
//! between consecutive distinct values present in the node, which makes the
//! greedy search an exact argmax. Ties go to the lowest feature index, then
//! the smallest threshold.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::sqrt;
use crate::person_period::TrainingTable;
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;

/// Hellinger distance between the class-conditional child allocations of a
/// binary split. `l1, l0` are the class-1 and class-0 counts sent left and
/// `r1, r0` those sent right.
///
/// Returns `None` when a class is absent from the parent, where the
/// criterion is undefined.
pub fn hellinger_distance(l1: f64, l0: f64, r1: f64, r0: f64) -> Option<f64> {
    let n1 = l1 + r1;
    let n0 = l0 + r0;
    if !(n1 > 0.0 && n0 > 0.0) {
        return None;
    }
    Some(hellinger_from_totals(l1, l0, r1, r0, n1, n0))
}

#[inline]
fn hellinger_from_totals(l1: f64, l0: f64, r1: f64, r0: f64, n1: f64, n0: f64) -> f64 {
    let a = sqrt(l1 / n1) - sqrt(l0 / n0);
    let b = sqrt(r1 / n1) - sqrt(r0 / n0);
    sqrt(a * a + b * b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub num_trees: usize,
    /// Candidate features per split; `None` means `max(1, floor(sqrt(p)))`.
    pub mtry: Option<usize>,
    /// Nodes with at most this many (in-bag) rows are not split.
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { num_trees: 500, mtry: None, min_node_size: 10, max_depth: None, seed: 0, bootstrap: true }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, num_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| default_mtry(num_features))
    }
}

fn default_mtry(p: usize) -> usize {
    let mut m = crate::math::floor(sqrt(p as f64)) as usize;
    // guard against sqrt rounding just below an exact square
    while (m + 1) * (m + 1) <= p {
        m += 1;
    }
    m.max(1).min(p)
}

/// Node of a [`Tree`]; children are indices into the same tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { event_proportion: f64, count: u32 },
}

/// Binary tree stored as a node arena with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_only(event_proportion: f64, count: u32) -> Self {
        Self { nodes: alloc::vec![TreeNode::Leaf { event_proportion, count }] }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Event proportion and in-bag count of the leaf reached by `x`.
    #[inline]
    pub fn leaf(&self, x: &[f64]) -> (f64, u32) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature as usize] <= threshold { left } else { right } as usize;
                }
                TreeNode::Leaf { event_proportion, count } => return (event_proportion, count),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    fn is_well_formed(&self) -> bool {
        let n = self.nodes.len();
        !self.nodes.is_empty()
            && self.nodes.iter().enumerate().all(|(i, node)| match *node {
                // children always follow their parent, which rules out cycles
                TreeNode::Split { left, right, threshold, .. } => {
                    (left as usize) > i
                        && (right as usize) > i
                        && (left as usize) < n
                        && (right as usize) < n
                        && !threshold.is_nan()
                }
                TreeNode::Leaf { event_proportion, .. } => (0.0..=1.0).contains(&event_proportion),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardForest {
    pub format_version: u32,
    /// Feature names in model order.
    pub schema: Vec<String>,
    /// Configuration used, with `mtry` resolved.
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForestError {
    #[error("training table is empty")]
    EmptyTable,
    #[error("invalid forest configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("feature {feature} of row {row} is not finite")]
    NonFiniteFeature { row: usize, feature: usize },
    #[error("feature vector has length {found}, model expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("query feature {0} is not finite")]
    NonFiniteQuery(usize),
    #[error("malformed forest: {0}")]
    Malformed(&'static str),
}

impl HazardForest {
    /// Grows a forest on a person-period table with `y` as the response.
    pub fn fit(table: &TrainingTable, config: &ForestConfig) -> Result<Self, ForestError> {
        Self::fit_columns(table.schema.feature_names(), &table.feature_columns(), &table.responses(), config)
    }

    /// Grows a forest on column-major features.
    pub fn fit_columns(
        schema: Vec<String>,
        columns: &[Vec<f64>],
        y: &[bool],
        config: &ForestConfig,
    ) -> Result<Self, ForestError> {
        let n = y.len();
        if n == 0 {
            return Err(ForestError::EmptyTable);
        }
        let p = columns.len();
        if schema.len() != p {
            return Err(ForestError::SchemaMismatch { expected: schema.len(), found: p });
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(ForestError::InvalidConfig("feature columns differ in length from the response"));
        }
        if config.num_trees == 0 {
            return Err(ForestError::InvalidConfig("num_trees must be >= 1"));
        }
        if config.min_node_size == 0 {
            return Err(ForestError::InvalidConfig("min_node_size must be >= 1"));
        }
        let mtry = config.resolved_mtry(p);
        if p > 0 && !(1..=p).contains(&mtry) {
            return Err(ForestError::InvalidConfig("mtry must be in 1..=p"));
        }
        let prep = Prepared::new(columns, y)?;
        let mut config = config.clone();
        config.mtry = Some(mtry);

        let grow = |b: usize| Grower::new(&prep, &config, mtry, b as u64).grow_tree();
        #[cfg(feature = "parallel")]
        let trees = {
            use rayon::prelude::*;
            (0..config.num_trees).into_par_iter().map(grow).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let trees = (0..config.num_trees).map(grow).collect();

        Ok(Self { format_version: FORMAT_VERSION, schema, config, trees })
    }

    pub fn num_features(&self) -> usize {
        self.schema.len()
    }

    /// Structural checks for a deserialized forest.
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ForestError::Malformed("unsupported format version"));
        }
        if self.trees.is_empty() {
            return Err(ForestError::Malformed("no trees"));
        }
        for tree in &self.trees {
            if !tree.is_well_formed() {
                return Err(ForestError::Malformed("bad node links or leaf values"));
            }
            let p = self.schema.len();
            if tree.nodes.iter().any(|n| matches!(n, TreeNode::Split { feature, .. } if *feature as usize >= p)) {
                return Err(ForestError::Malformed("split on a feature outside the schema"));
            }
        }
        Ok(())
    }

    /// Mean over trees of the event proportion in the leaf reached by `x`.
    pub fn predict_hazard(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.schema.len() {
            return Err(ForestError::SchemaMismatch { expected: self.schema.len(), found: x.len() });
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFiniteQuery(j));
        }
        let sum: f64 = self.trees.iter().map(|tree| tree.leaf(x).0).sum();
        Ok((sum / self.trees.len() as f64).clamp(0.0, 1.0))
    }
}

/// Features recoded as dense ranks of their distinct values.
struct Prepared<'a> {
    ranks: Vec<Vec<u32>>,
    levels: Vec<Vec<f64>>,
    y: &'a [bool],
}

impl<'a> Prepared<'a> {
    fn new(columns: &[Vec<f64>], y: &'a [bool]) -> Result<Self, ForestError> {
        let n = y.len();
        let mut ranks = Vec::with_capacity(columns.len());
        let mut levels = Vec::with_capacity(columns.len());
        let mut order: Vec<u32> = Vec::with_capacity(n);
        for (j, col) in columns.iter().enumerate() {
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(ForestError::NonFiniteFeature { row, feature: j });
            }
            order.clear();
            order.extend(0..n as u32);
            order.sort_unstable_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let mut rank = alloc::vec![0u32; n];
            let mut lv: Vec<f64> = Vec::new();
            for &i in &order {
                let v = col[i as usize];
                if lv.last() != Some(&v) {
                    lv.push(v);
                }
                rank[i as usize] = (lv.len() - 1) as u32;
            }
            ranks.push(rank);
            levels.push(lv);
        }
        Ok(Self { ranks, levels, y })
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    /// Largest rank sent left.
    lo: u32,
    /// Smallest rank sent right.
    hi: u32,
    gain: f64,
}

struct Grower<'p, 'a> {
    prep: &'p Prepared<'a>,
    min_node_size: usize,
    max_depth: Option<usize>,
    bootstrap: bool,
    mtry: usize,
    rng: ChaCha8Rng,
    pool: Vec<usize>,
    candidates: Vec<usize>,
    keys: Vec<u64>,
    count1: Vec<u32>,
    count0: Vec<u32>,
}

impl<'p, 'a> Grower<'p, 'a> {
    fn new(prep: &'p Prepared<'a>, config: &ForestConfig, mtry: usize, tree: u64) -> Self {
        let p = prep.ranks.len();
        let max_levels = prep.levels.iter().map(Vec::len).max().unwrap_or(0);
        Self {
            prep,
            min_node_size: config.min_node_size,
            max_depth: config.max_depth,
            bootstrap: config.bootstrap,
            mtry,
            rng: seed::stream_rng(config.seed, tree),
            pool: (0..p).collect(),
            candidates: Vec::with_capacity(mtry),
            keys: Vec::new(),
            count1: alloc::vec![0; max_levels],
            count0: alloc::vec![0; max_levels],
        }
    }

    fn grow_tree(mut self) -> Tree {
        let n = self.prep.y.len();
        let mut samples: Vec<u32> = if self.bootstrap {
            (0..n).map(|_| self.rng.random_range(0..n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        let mut nodes = Vec::new();
        self.grow(&mut samples, 0, &mut nodes);
        Tree { nodes }
    }

    /// Appends the subtree for `samples` to `nodes` and returns its index.
    fn grow(&mut self, samples: &mut [u32], depth: usize, nodes: &mut Vec<TreeNode>) -> u32 {
        let index = nodes.len() as u32;
        let n = samples.len();
        let n1 = samples.iter().filter(|&&s| self.prep.y[s as usize]).count();
        nodes.push(TreeNode::Leaf { event_proportion: n1 as f64 / n as f64, count: n as u32 });
        if n <= self.min_node_size || n1 == 0 || n1 == n || self.max_depth.is_some_and(|d| depth >= d) {
            return index;
        }
        let Some(split) = self.best_split(samples, n1) else {
            return index;
        };
        let ranks = &self.prep.ranks[split.feature];
        let mut left_len = 0;
        for i in 0..n {
            if ranks[samples[i] as usize] <= split.lo {
                samples.swap(i, left_len);
                left_len += 1;
            }
        }
        let levels = &self.prep.levels[split.feature];
        let threshold = midpoint(levels[split.lo as usize], levels[split.hi as usize]);
        let (left_samples, right_samples) = samples.split_at_mut(left_len);
        let left = self.grow(left_samples, depth + 1, nodes);
        let right = self.grow(right_samples, depth + 1, nodes);
        nodes[index as usize] = TreeNode::Split { feature: split.feature as u32, threshold, left, right };
        index
    }

    fn draw_candidates(&mut self) {
        let p = self.pool.len();
        for i in 0..self.mtry {
            let j = self.rng.random_range(i..p);
            self.pool.swap(i, j);
        }
        self.candidates.clear();
        self.candidates.extend_from_slice(&self.pool[..self.mtry]);
        self.candidates.sort_unstable();
    }

    fn best_split(&mut self, samples: &[u32], n1: usize) -> Option<SplitChoice> {
        self.draw_candidates();
        let n = samples.len();
        let totals = (n1 as f64, (n - n1) as f64);
        let mut best: Option<SplitChoice> = None;
        for ci in 0..self.candidates.len() {
            let feature = self.candidates[ci];
            let num_levels = self.prep.levels[feature].len();
            if num_levels < 2 {
                continue;
            }
            let found = if num_levels <= n {
                self.scan_counts(feature, samples, num_levels, totals)
            } else {
                self.scan_sorted(feature, samples, totals)
            };
            // candidates are visited in increasing feature order, so a strict
            // improvement is needed to displace an earlier feature
            if let Some(c) = found {
                if best.is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        best.filter(|b| b.gain > 0.0)
    }

    fn scan_counts(
        &mut self,
        feature: usize,
        samples: &[u32],
        num_levels: usize,
        totals: (f64, f64),
    ) -> Option<SplitChoice> {
        let ranks = &self.prep.ranks[feature];
        let y = self.prep.y;
        let c1 = &mut self.count1[..num_levels];
        let c0 = &mut self.count0[..num_levels];
        c1.fill(0);
        c0.fill(0);
        for &s in samples {
            let r = ranks[s as usize] as usize;
            if y[s as usize] {
                c1[r] += 1;
            } else {
                c0[r] += 1;
            }
        }
        let mut sweep = Sweep::new(feature, totals);
        for r in 0..num_levels {
            if c1[r] + c0[r] > 0 {
                sweep.visit(r as u32, c1[r], c0[r]);
            }
        }
        sweep.best
    }

    fn scan_sorted(&mut self, feature: usize, samples: &[u32], totals: (f64, f64)) -> Option<SplitChoice> {
        let ranks = &self.prep.ranks[feature];
        let y = self.prep.y;
        self.keys.clear();
        self.keys.extend(samples.iter().map(|&s| (u64::from(ranks[s as usize]) << 1) | u64::from(y[s as usize])));
        self.keys.sort_unstable();
        let mut sweep = Sweep::new(feature, totals);
        let mut i = 0;
        while i < self.keys.len() {
            let rank = (self.keys[i] >> 1) as u32;
            let (mut k1, mut k0) = (0u32, 0u32);
            while i < self.keys.len() && (self.keys[i] >> 1) as u32 == rank {
                if self.keys[i] & 1 == 1 {
                    k1 += 1;
                } else {
                    k0 += 1;
                }
                i += 1;
            }
            sweep.visit(rank, k1, k0);
        }
        sweep.best
    }
}

/// Left-to-right sweep over the distinct ranks present in a node.
struct Sweep {
    feature: usize,
    n1: f64,
    n0: f64,
    left1: u32,
    left0: u32,
    prev: Option<u32>,
    best: Option<SplitChoice>,
}

impl Sweep {
    fn new(feature: usize, (n1, n0): (f64, f64)) -> Self {
        Self { feature, n1, n0, left1: 0, left0: 0, prev: None, best: None }
    }

    #[inline]
    fn visit(&mut self, rank: u32, k1: u32, k0: u32) {
        if let Some(lo) = self.prev {
            let l1 = f64::from(self.left1);
            let l0 = f64::from(self.left0);
            let gain = hellinger_from_totals(l1, l0, self.n1 - l1, self.n0 - l0, self.n1, self.n0);
            if self.best.is_none_or(|b| gain > b.gain) {
                self.best = Some(SplitChoice { feature: self.feature, lo, hi: rank, gain });
            }
        }
        self.left1 += k1;
        self.left0 += k0;
        self.prev = Some(rank);
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}
