//! Cross-sectional, temporal and cross-temporal aggregation structures.
//!
//! Node order is level-major: the root first, then each level left to
//! right in the order nodes were listed, with the bottom level last. The
//! summing matrix therefore always ends with an identity block.
//!
//! Temporal levels are ordered coarsest first. Cross-temporal vectors are
//! stacked node-major, slot-minor, which makes the cross-temporal summing
//! matrix the Kronecker product `S_cs ⊗ S_te`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk form of a hierarchy: node list plus `[parent, child]` edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyFile {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

/// A validated tree of series identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HierarchyFile", into = "HierarchyFile")]
pub struct HierarchySpec {
    nodes: Vec<String>,
    parent: Vec<Option<usize>>,
    level: Vec<usize>,
    children: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl HierarchySpec {
    /// Validates a node list and parent→child edges and orders the nodes
    /// level-major.
    pub fn new(nodes: Vec<String>, edges: Vec<(String, String)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::validation("hierarchy has no nodes"));
        }
        let mut position = HashMap::with_capacity(nodes.len());
        for (i, id) in nodes.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::validation("empty node identifier"));
            }
            if position.insert(id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate node id `{id}`")));
            }
        }

        let mut parent_of: Vec<Option<usize>> = vec![None; nodes.len()];
        for (p, c) in &edges {
            let pi = *position
                .get(p)
                .ok_or_else(|| Error::validation(format!("edge references unknown node `{p}`")))?;
            let ci = *position
                .get(c)
                .ok_or_else(|| Error::validation(format!("edge references unknown node `{c}`")))?;
            if pi == ci {
                return Err(Error::structural(format!("node `{p}` is its own parent")));
            }
            if let Some(existing) = parent_of[ci] {
                if existing == pi {
                    return Err(Error::validation(format!("duplicate edge `{p}` -> `{c}`")));
                }
                return Err(Error::structural(format!(
                    "node `{c}` has two parents (`{}` and `{p}`)",
                    nodes[existing]
                )));
            }
            parent_of[ci] = Some(pi);
        }

        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| parent_of[i].is_none()).collect();
        if roots.len() != 1 {
            let names: Vec<&str> = roots.iter().map(|&i| nodes[i].as_str()).collect();
            return Err(Error::structural(format!(
                "expected exactly one root, found {}: {:?}",
                roots.len(),
                names
            )));
        }

        // Depth by walking to the root; a walk longer than the node count is a cycle.
        let mut depth = vec![0usize; nodes.len()];
        for (i, d) in depth.iter_mut().enumerate() {
            let mut steps = 0;
            let mut cur = i;
            while let Some(p) = parent_of[cur] {
                steps += 1;
                if steps > nodes.len() {
                    return Err(Error::structural(format!(
                        "cycle in parent map through `{}`",
                        nodes[i]
                    )));
                }
                cur = p;
            }
            *d = steps;
        }

        let mut has_child = vec![false; nodes.len()];
        for p in parent_of.iter().flatten() {
            has_child[*p] = true;
        }
        let leaf_depths: HashSet<usize> = (0..nodes.len())
            .filter(|&i| !has_child[i])
            .map(|i| depth[i])
            .collect();
        if leaf_depths.len() > 1 {
            let mut d: Vec<usize> = leaf_depths.into_iter().collect();
            d.sort_unstable();
            return Err(Error::structural(format!(
                "leaves sit at different levels {d:?}; every root-to-leaf path must have the same length"
            )));
        }

        // Level-major order, stable with respect to the given node order.
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by_key(|&i| (depth[i], i));
        let mut new_pos = vec![0usize; nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_pos[old] = new;
        }
        let ordered: Vec<String> = order.iter().map(|&i| nodes[i].clone()).collect();
        let parent: Vec<Option<usize>> = order
            .iter()
            .map(|&i| parent_of[i].map(|p| new_pos[p]))
            .collect();
        let level: Vec<usize> = order.iter().map(|&i| depth[i]).collect();
        let mut children = vec![Vec::new(); nodes.len()];
        for (c, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(c);
            }
        }
        let index = ordered
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();

        Ok(Self {
            nodes: ordered,
            parent,
            level,
            children,
            index,
        })
    }

    /// A single root over the given leaves.
    pub fn star(root: &str, leaves: &[&str]) -> Result<Self> {
        let mut nodes = vec![root.to_string()];
        nodes.extend(leaves.iter().map(|s| s.to_string()));
        let edges = leaves
            .iter()
            .map(|l| (root.to_string(), l.to_string()))
            .collect();
        Self::new(nodes, edges)
    }

    /// Root → groups → leaves, the shape of both wind-farm data sets.
    pub fn three_level(root: &str, groups: &[(&str, &[&str])]) -> Result<Self> {
        let mut nodes = vec![root.to_string()];
        let mut edges = Vec::new();
        for (g, _) in groups {
            nodes.push(g.to_string());
            edges.push((root.to_string(), g.to_string()));
        }
        for (g, leaves) in groups {
            for l in *leaves {
                nodes.push(l.to_string());
                edges.push((g.to_string(), l.to_string()));
            }
        }
        Self::new(nodes, edges)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: HierarchyFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&HierarchyFile::from(self.clone()))
            .expect("hierarchy serializes")
    }

    /// Total number of series, `m`.
    pub fn m(&self) -> usize {
        self.nodes.len()
    }

    /// Number of bottom-level series, `m_k`.
    pub fn bottom_count(&self) -> usize {
        self.nodes_at_level(self.depth()).count()
    }

    /// Index of the bottom level, `k`.
    pub fn depth(&self) -> usize {
        *self.level.iter().max().expect("non-empty")
    }

    /// Node counts per level, root first.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.depth() + 1];
        for &l in &self.level {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn level_of(&self, node: usize) -> usize {
        self.level[node]
    }

    pub fn parent_of(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children_of(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn nodes_at_level(&self, level: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m()).filter(move |&i| self.level[i] == level)
    }

    /// Node index of the first bottom node; bottom nodes are contiguous to the end.
    pub fn bottom_offset(&self) -> usize {
        self.m() - self.bottom_count()
    }

    pub fn bottom_ids(&self) -> &[String] {
        &self.nodes[self.bottom_offset()..]
    }

    /// Bottom positions (0-based within the bottom level) under `node`.
    pub fn bottom_descendants(&self, node: usize) -> Vec<usize> {
        let offset = self.bottom_offset();
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if self.children[n].is_empty() {
                out.push(n - offset);
            } else {
                stack.extend(self.children[n].iter().rev());
            }
        }
        out.sort_unstable();
        out
    }

    /// Ancestor of bottom position `bottom` at `level` (the node itself at level `k`).
    pub fn ancestor_at_level(&self, bottom: usize, level: usize) -> usize {
        let mut cur = bottom + self.bottom_offset();
        while self.level[cur] > level {
            cur = self.parent[cur].expect("non-root has parent");
        }
        cur
    }

    pub fn edges(&self) -> Vec<(String, String)> {
        (0..self.m())
            .filter_map(|c| self.parent[c].map(|p| (self.nodes[p].clone(), self.nodes[c].clone())))
            .collect()
    }
}

impl TryFrom<HierarchyFile> for HierarchySpec {
    type Error = Error;

    fn try_from(file: HierarchyFile) -> Result<Self> {
        HierarchySpec::new(file.nodes, file.edges)
    }
}

impl From<HierarchySpec> for HierarchyFile {
    fn from(spec: HierarchySpec) -> Self {
        let edges = spec.edges();
        HierarchyFile {
            nodes: spec.nodes,
            edges,
        }
    }
}

impl fmt::Display for HierarchySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "m = {}", self.m())?;
        for (i, size) in self.level_sizes().iter().enumerate() {
            writeln!(f, "m_{i} = {size}")?;
        }
        Ok(())
    }
}

/// Aggregation matrix mapping bottom series (or slots) to every series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummingMatrix {
    entries: DMatrix<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    /// Row index holding each bottom column's own value.
    bottom_rows: Vec<usize>,
}

impl SummingMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn bottom_rows(&self) -> &[usize] {
        &self.bottom_rows
    }

    /// Extracts the bottom-level entries of a full vector.
    pub fn bottom_of(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.cols(), self.bottom_rows.iter().map(|&r| y[r]))
    }

    /// Largest absolute gap between `y` and the coherent vector built from
    /// its own bottom entries.
    pub fn incoherence(&self, y: &DVector<f64>) -> f64 {
        let rebuilt = &self.entries * self.bottom_of(y);
        (y - rebuilt).amax()
    }

    /// The identity matrix viewed as a hierarchy with no aggregation.
    pub fn identity(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            entries: DMatrix::identity(n, n),
            row_labels: labels.clone(),
            col_labels: labels,
            bottom_rows: (0..n).collect(),
        }
    }
}

/// Build the cross-sectional summing matrix of a hierarchy.
pub fn build_summing_matrix(spec: &HierarchySpec) -> SummingMatrix {
    let m = spec.m();
    let mk = spec.bottom_count();
    let mut entries = DMatrix::zeros(m, mk);
    for node in 0..m {
        for b in spec.bottom_descendants(node) {
            entries[(node, b)] = 1.0;
        }
    }
    let offset = spec.bottom_offset();
    SummingMatrix {
        entries,
        row_labels: spec.nodes().to_vec(),
        col_labels: spec.bottom_ids().to_vec(),
        bottom_rows: (offset..m).collect(),
    }
}

/// Multiple temporal aggregation layout for one top-level window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalScheme {
    base_step_minutes: u32,
    /// Descending, so the coarsest level comes first.
    factors: Vec<u32>,
}

/// Position of one temporal level inside a stacked window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalLevel {
    pub factor: u32,
    pub offset: usize,
    pub slots: usize,
}

impl TemporalScheme {
    pub fn new(base_step_minutes: u32, factors: &[u32]) -> Result<Self> {
        if base_step_minutes == 0 {
            return Err(Error::validation("base step must be positive"));
        }
        if factors.is_empty() {
            return Err(Error::validation("temporal scheme needs at least one factor"));
        }
        let mut f: Vec<u32> = factors.to_vec();
        f.sort_unstable_by(|a, b| b.cmp(a));
        if f.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation(format!("duplicate aggregation factor in {factors:?}")));
        }
        if f.contains(&0) {
            return Err(Error::validation("aggregation factor must be >= 1"));
        }
        if !f.contains(&1) {
            return Err(Error::validation("aggregation factor 1 must be present"));
        }
        let max = f[0];
        if let Some(bad) = f.iter().find(|&&x| !max.is_multiple_of(x)) {
            return Err(Error::validation(format!(
                "factor {bad} does not divide the largest factor {max}"
            )));
        }
        Ok(Self {
            base_step_minutes,
            factors: f,
        })
    }

    /// 10-minute data aggregated to 20, 30 and 60 minutes.
    pub fn wind_default() -> Self {
        Self::new(10, &[1, 2, 3, 6]).expect("valid default scheme")
    }

    pub fn base_step_minutes(&self) -> u32 {
        self.base_step_minutes
    }

    /// Factors, coarsest first.
    pub fn factors(&self) -> &[u32] {
        &self.factors
    }

    pub fn max_factor(&self) -> u32 {
        self.factors[0]
    }

    /// Number of steps at `factor` inside one top-level window.
    pub fn steps(&self, factor: u32) -> usize {
        (self.max_factor() / factor) as usize
    }

    pub fn slots_per_window(&self) -> usize {
        self.factors.iter().map(|&f| self.steps(f)).sum()
    }

    pub fn levels(&self) -> Vec<TemporalLevel> {
        let mut offset = 0;
        self.factors
            .iter()
            .map(|&factor| {
                let slots = self.steps(factor);
                let level = TemporalLevel {
                    factor,
                    offset,
                    slots,
                };
                offset += slots;
                level
            })
            .collect()
    }

    pub fn level_for(&self, factor: u32) -> Option<TemporalLevel> {
        self.levels().into_iter().find(|l| l.factor == factor)
    }

    /// Level and position within the level of a stacked slot index.
    pub fn locate_slot(&self, slot: usize) -> (TemporalLevel, usize) {
        for level in self.levels() {
            if slot < level.offset + level.slots {
                return (level, slot - level.offset);
            }
        }
        panic!("slot {slot} outside window of {}", self.slots_per_window());
    }

    pub fn slot_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.slots_per_window());
        for level in self.levels() {
            for j in 0..level.slots {
                labels.push(format!(
                    "{}min#{}",
                    level.factor * self.base_step_minutes,
                    j + 1
                ));
            }
        }
        labels
    }
}

/// Build the temporal summing matrix, coarsest rows first.
pub fn build_temporal_summing_matrix(scheme: &TemporalScheme) -> SummingMatrix {
    let rows = scheme.slots_per_window();
    let cols = scheme.max_factor() as usize;
    let mut entries = DMatrix::zeros(rows, cols);
    for level in scheme.levels() {
        let width = level.factor as usize;
        for j in 0..level.slots {
            for c in (j * width)..((j + 1) * width) {
                entries[(level.offset + j, c)] = 1.0;
            }
        }
    }
    let labels = scheme.slot_labels();
    let col_labels = labels[rows - cols..].to_vec();
    SummingMatrix {
        entries,
        row_labels: labels,
        col_labels,
        bottom_rows: (rows - cols..rows).collect(),
    }
}

/// Kronecker product `s_cs ⊗ s_te` with `(node, slot)` labels.
pub fn build_cross_temporal_summing_matrix(
    s_cs: &SummingMatrix,
    s_te: &SummingMatrix,
) -> SummingMatrix {
    let entries = s_cs.entries.kronecker(&s_te.entries);
    let pair = |a: &[String], b: &[String]| -> Vec<String> {
        a.iter()
            .flat_map(|x| b.iter().map(move |y| format!("{x}|{y}")))
            .collect()
    };
    let te_rows = s_te.rows();
    let bottom_rows = s_cs
        .bottom_rows
        .iter()
        .flat_map(|&i| s_te.bottom_rows.iter().map(move |&r| i * te_rows + r))
        .collect();
    SummingMatrix {
        entries,
        row_labels: pair(&s_cs.row_labels, &s_te.row_labels),
        col_labels: pair(&s_cs.col_labels, &s_te.col_labels),
        bottom_rows,
    }
}
