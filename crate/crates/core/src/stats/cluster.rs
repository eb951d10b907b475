use serde::{Deserialize, Serialize};

use super::{check_columns, spearman, Columns};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

/// One agglomeration step. Node ids below `leaves.len()` are leaves; merge
/// `k` creates node `leaves.len() + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

/// Nested form of the merge tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub name: Option<String>,
    pub height: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub linkage: Linkage,
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
    pub root: TreeNode,
}

impl Dendrogram {
    /// Leaf names in left-to-right order of the nested tree.
    pub fn leaf_order(&self) -> Vec<String> {
        fn walk(node: &TreeNode, out: &mut Vec<String>) {
            match &node.name {
                Some(name) => out.push(name.clone()),
                None => node.children.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }
}

/// `1 − |ρ|` between every pair of columns.
pub fn spearman_distances(features: &Columns) -> Result<Vec<Vec<f64>>> {
    let m = features.len();
    let mut dist = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let d = (1.0 - spearman(&features[i].1, &features[j].1)?.abs()).max(0.0);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok(dist)
}

fn cluster_distance(a: &[usize], b: &[usize], dist: &[Vec<f64>], linkage: Linkage) -> f64 {
    let pairs = a.iter().flat_map(|&i| b.iter().map(move |&j| dist[i][j]));
    match linkage {
        Linkage::Average => pairs.sum::<f64>() / (a.len() * b.len()) as f64,
        Linkage::Single => pairs.fold(f64::INFINITY, f64::min),
        Linkage::Complete => pairs.fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Agglomerative clustering over a precomputed distance matrix. Each cluster
/// is labelled by its lexicographically smallest leaf name; equal distances
/// are broken by the ordered pair of labels.
pub fn agglomerate(names: &[String], dist: &[Vec<f64>], linkage: Linkage) -> Result<Dendrogram> {
    let m = names.len();
    if m < 2 {
        return Err(Error::domain("agglomeration needs at least two features"));
    }
    if dist.len() != m || dist.iter().any(|row| row.len() != m) {
        return Err(Error::domain("distance matrix does not match feature count"));
    }
    // active clusters: (node id, members, label)
    let mut active: Vec<(usize, Vec<usize>, String)> =
        (0..m).map(|i| (i, vec![i], names[i].clone())).collect();
    let mut nodes: Vec<TreeNode> = names
        .iter()
        .map(|n| TreeNode {
            name: Some(n.clone()),
            height: 0.0,
            children: Vec::new(),
        })
        .collect();
    let mut merges = Vec::with_capacity(m - 1);

    while active.len() > 1 {
        let mut best: Option<(f64, (String, String), usize, usize)> = None;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let d = cluster_distance(&active[a].1, &active[b].1, dist, linkage);
                let (la, lb) = (&active[a].2, &active[b].2);
                let key = if la <= lb {
                    (la.clone(), lb.clone())
                } else {
                    (lb.clone(), la.clone())
                };
                let better = match &best {
                    None => true,
                    Some((bd, bkey, _, _)) => d < *bd || (d == *bd && key < *bkey),
                };
                if better {
                    best = Some((d, key, a, b));
                }
            }
        }
        let (height, _, a, b) = best.expect("two active clusters");
        let (ia, ib) = if active[a].2 <= active[b].2 { (a, b) } else { (b, a) };
        let (left, right) = (active[ia].0, active[ib].0);
        let mut members = active[ia].1.clone();
        members.extend_from_slice(&active[ib].1);
        let label = active[ia].2.clone().min(active[ib].2.clone());
        let id = m + merges.len();
        merges.push(Merge {
            left,
            right,
            height,
            size: members.len(),
        });
        nodes.push(TreeNode {
            name: None,
            height,
            children: vec![nodes[left].clone(), nodes[right].clone()],
        });
        let (hi, lo) = (a.max(b), a.min(b));
        active.remove(hi);
        active.remove(lo);
        active.push((id, members, label));
    }
    let root = nodes.pop().expect("root node");
    Ok(Dendrogram {
        linkage,
        leaves: names.to_vec(),
        merges,
        root,
    })
}

/// Feature agglomeration with distance `1 − |Spearman ρ|`.
pub fn feature_agglomeration(features: &Columns, linkage: Linkage) -> Result<Dendrogram> {
    check_columns(features)?;
    let dist = spearman_distances(features)?;
    let names: Vec<String> = features.iter().map(|(n, _)| n.clone()).collect();
    agglomerate(&names, &dist, linkage)
}
