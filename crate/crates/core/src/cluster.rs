//! Agglomerative hierarchical clustering of label-matrix rows.
//!
//! The implementation keeps a dense dissimilarity matrix and applies the
//! Lance-Williams update after every merge. Clusters are numbered like the
//! usual stepwise dendrogram: leaves are `0..n`, the cluster created by step
//! `k` is `n + k`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotate::LabelMatrix;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("linkage {method:?} cannot be combined with metric {metric:?}")]
    InvalidCombination { method: LinkageMethod, metric: Metric },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkageMethod {
    #[default]
    Ward,
    Single,
    Complete,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Jaccard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageStep {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub distance: f64,
    pub merged_size: usize,
}

/// A leaf of a (possibly truncated) dendrogram and the rows it stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafGroup {
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    steps: Vec<LinkageStep>,
    leaves: Vec<LeafGroup>,
}

impl Dendrogram {
    pub fn steps(&self) -> &[LinkageStep] {
        &self.steps
    }

    pub fn leaves(&self) -> &[LeafGroup] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Row indices in leaf order.
    pub fn leaf_ids(&self) -> Vec<usize> {
        self.leaves.iter().flat_map(|l| l.members.iter().copied()).collect()
    }

    pub fn merge_distances(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.distance).collect()
    }

    fn node_size(&self, node: usize) -> usize {
        let n = self.leaves.len();
        if node < n {
            self.leaves[node].members.len()
        } else {
            self.steps[node - n].merged_size
        }
    }
}

fn euclidean(a: &[u8], b: &[u8]) -> f64 {
    let sq: u32 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| u32::from(x != y))
        .sum();
    libm::sqrt(f64::from(sq))
}

fn jaccard(a: &[u8], b: &[u8]) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (&x, &y) in a.iter().zip(b) {
        inter += u32::from(x == 1 && y == 1);
        union += u32::from(x == 1 || y == 1);
    }
    if union == 0 {
        0.0
    } else {
        1.0 - f64::from(inter) / f64::from(union)
    }
}

pub fn pairwise_distance(a: &[u8], b: &[u8], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => euclidean(a, b),
        Metric::Jaccard => jaccard(a, b),
    }
}

/// Relative slack under which two candidate merge distances count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub fn linkage(matrix: &LabelMatrix, method: LinkageMethod, metric: Metric) -> Result<Dendrogram, ClusterError> {
    linkage_dense(&matrix.to_dense(), method, metric)
}

pub fn linkage_dense(rows: &[Vec<u8>], method: LinkageMethod, metric: Metric) -> Result<Dendrogram, ClusterError> {
    let n = rows.len();
    if n < 2 {
        return Err(ClusterError::InvalidInput(format!("need at least 2 rows, got {n}")));
    }
    if method == LinkageMethod::Ward && metric != Metric::Euclidean {
        return Err(ClusterError::InvalidCombination { method, metric });
    }
    if let Some(r) = rows.iter().position(|r| r.len() != rows[0].len()) {
        return Err(ClusterError::InvalidInput(format!("row {r} has a different width")));
    }

    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pairwise_distance(&rows[i], &rows[j], metric);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    // Slot i holds the cluster currently identified by ids[i].
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut active = vec![true; n];
    let mut steps = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut dmin = f64::INFINITY;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && dist[i * n + j] < dmin {
                    dmin = dist[i * n + j];
                }
            }
        }
        let slack = TIE_TOLERANCE * dmin.max(1.0);
        let mut best: Option<(usize, usize, (usize, usize))> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] || dist[i * n + j] > dmin + slack {
                    continue;
                }
                let key = (ids[i].min(ids[j]), ids[i].max(ids[j]));
                if best.is_none_or(|(_, _, k)| key < k) {
                    best = Some((i, j, key));
                }
            }
        }
        let (si, sj, (a, b)) = best.expect("at least two active clusters");
        let d_ij = dist[si * n + sj];
        let (ni, nj) = (sizes[si] as f64, sizes[sj] as f64);

        for k in 0..n {
            if !active[k] || k == si || k == sj {
                continue;
            }
            let d_ik = dist[si * n + k];
            let d_jk = dist[sj * n + k];
            let nk = sizes[k] as f64;
            let updated = match method {
                LinkageMethod::Single => d_ik.min(d_jk),
                LinkageMethod::Complete => d_ik.max(d_jk),
                LinkageMethod::Average => (ni * d_ik + nj * d_jk) / (ni + nj),
                LinkageMethod::Ward => {
                    let t = ni + nj + nk;
                    let sq = ((ni + nk) * d_ik * d_ik + (nj + nk) * d_jk * d_jk - nk * d_ij * d_ij) / t;
                    libm::sqrt(sq.max(0.0))
                }
            };
            dist[si * n + k] = updated;
            dist[k * n + si] = updated;
        }

        active[sj] = false;
        sizes[si] += sizes[sj];
        ids[si] = n + step;
        steps.push(LinkageStep {
            cluster_a: a,
            cluster_b: b,
            distance: d_ij,
            merged_size: sizes[si],
        });
    }

    Ok(Dendrogram {
        steps,
        leaves: (0..n).map(|i| LeafGroup { members: vec![i] }).collect(),
    })
}

/// Collapses the tree so that only the last `max_leaves - 1` merges remain;
/// every subtree below them becomes one leaf group.
pub fn truncate(d: &Dendrogram, max_leaves: usize) -> Result<Dendrogram, ClusterError> {
    if max_leaves < 2 {
        return Err(ClusterError::InvalidInput(format!("max_leaves must be >= 2, got {max_leaves}")));
    }
    let n = d.n_leaves();
    if max_leaves >= n {
        return Ok(d.clone());
    }
    let first_kept = d.steps.len() - (max_leaves - 1);
    let kept = &d.steps[first_kept..];

    // Children of kept merges that were not created by a kept merge.
    let mut groups: Vec<usize> = kept
        .iter()
        .flat_map(|s| [s.cluster_a, s.cluster_b])
        .filter(|&c| c < n + first_kept)
        .collect();
    groups.sort_unstable();

    let members_of = |node: usize| -> Vec<usize> {
        let mut stack = vec![node];
        let mut out = Vec::new();
        while let Some(x) = stack.pop() {
            if x < n {
                out.extend(&d.leaves[x].members);
            } else {
                let s = &d.steps[x - n];
                stack.push(s.cluster_a);
                stack.push(s.cluster_b);
            }
        }
        out.sort_unstable();
        out
    };
    let leaves: Vec<LeafGroup> = groups.iter().map(|&g| LeafGroup { members: members_of(g) }).collect();

    let p = groups.len();
    let remap = |c: usize| -> usize {
        if c >= n + first_kept {
            p + (c - n - first_kept)
        } else {
            groups.binary_search(&c).expect("group node")
        }
    };
    let steps = kept
        .iter()
        .map(|s| {
            let (a, b) = (remap(s.cluster_a), remap(s.cluster_b));
            LinkageStep {
                cluster_a: a.min(b),
                cluster_b: a.max(b),
                distance: s.distance,
                merged_size: s.merged_size,
            }
        })
        .collect();
    Ok(Dendrogram { steps, leaves })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExportFormat {
    LinkageCsv,
    Newick,
}

pub fn export_dendrogram(d: &Dendrogram, format: ExportFormat) -> String {
    match format {
        ExportFormat::LinkageCsv => {
            let mut out = String::new();
            for s in &d.steps {
                let _ = writeln!(out, "{},{},{:?},{}", s.cluster_a, s.cluster_b, s.distance, s.merged_size);
            }
            out
        }
        ExportFormat::Newick => {
            let mut out = String::new();
            let root = d.n_leaves() + d.steps.len() - 1;
            if d.steps.is_empty() {
                write_leaf(d, 0, &mut out);
            } else {
                write_newick(d, root, &mut out);
            }
            out.push(';');
            out
        }
    }
}

fn node_height(d: &Dendrogram, node: usize) -> f64 {
    let n = d.n_leaves();
    if node < n {
        0.0
    } else {
        d.steps[node - n].distance
    }
}

fn write_leaf(d: &Dendrogram, leaf: usize, out: &mut String) {
    let group = &d.leaves[leaf];
    if group.members.len() == 1 {
        let _ = write!(out, "{}", group.members[0]);
    } else {
        let _ = write!(out, "{}[n={}]", group.members[0], group.members.len());
    }
}

fn write_newick(d: &Dendrogram, node: usize, out: &mut String) {
    let n = d.n_leaves();
    if node < n {
        write_leaf(d, node, out);
        return;
    }
    let step = &d.steps[node - n];
    out.push('(');
    for (i, child) in [step.cluster_a, step.cluster_b].into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write_newick(d, child, out);
        let _ = write!(out, ":{:?}", step.distance - node_height(d, child));
    }
    out.push(')');
    debug_assert_eq!(d.node_size(node), step.merged_size);
}
