//! Dimensionality reduction and density-based hierarchical clustering.
//!
//! HDBSCAN here works over any symmetric distance function, so the same code
//! clusters micro-concept embeddings (Euclidean, after PCA) and concept
//! presence columns (Jaccard). Selection is excess-of-mass with the
//! `min_samples = min_cluster_size` convention of the reference library.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label assigned to points that belong to no cluster.
pub const NOISE: i64 = -1;

/// Lambda for zero-distance merges. Keeps stabilities finite.
const MAX_LAMBDA: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: Option<usize>,
    pub allow_single_cluster: bool,
}

impl HdbscanParams {
    pub fn new(min_cluster_size: usize) -> Self {
        Self {
            min_cluster_size,
            min_samples: None,
            allow_single_cluster: false,
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Jaccard distance between binary vectors; two empty supports are identical.
pub fn jaccard(a: &[u8], b: &[u8]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// Project rows onto their top principal components.
///
/// Components are ordered by decreasing variance and sign-fixed so their
/// largest-magnitude coordinate is positive. When `dims` is at least the
/// input width the centered data is returned as is.
pub fn pca(rows: &[Vec<f64>], dims: usize) -> Result<Vec<Vec<f64>>> {
    let n = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if n == 0 || width == 0 {
        return Err(Error::TooFew {
            what: "points for PCA",
            needed: 1,
            got: n,
        });
    }
    let mut mean = vec![0.0; width];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let total_var: f64 = centered.iter().flatten().map(|x| x * x).sum();
    if total_var <= f64::EPSILON * n as f64 {
        return Err(Error::ZeroVariance);
    }
    if dims >= width {
        return Ok(centered);
    }
    let mut cov = DMatrix::<f64>::zeros(width, width);
    for r in &centered {
        for i in 0..width {
            for j in i..width {
                cov[(i, j)] += r[i] * r[j];
            }
        }
    }
    for i in 0..width {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let components: Vec<Vec<f64>> = order[..dims]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let pivot = v
                .iter()
                .cloned()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(centered
        .iter()
        .map(|r| components.iter().map(|c| crate::linalg::dot(r, c)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Per-point cluster label, `NOISE` for unclustered points. Labels are
    /// numbered by the first point index they contain.
    pub labels: Vec<i64>,
    pub num_clusters: usize,
}

impl Clustering {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                out[l as usize].push(i);
            }
        }
        out
    }

    pub fn noise(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == NOISE)
            .map(|(i, _)| i)
            .collect()
    }
}

struct CondensedEdge {
    parent: usize,
    /// Point index when `size == 1` and `is_point`, else cluster id.
    child: usize,
    is_point: bool,
    lambda: f64,
    size: usize,
}

/// HDBSCAN over `n` points with distances given by `dist(i, j)`.
pub fn hdbscan<F>(n: usize, dist: F, params: &HdbscanParams) -> Result<Clustering>
where
    F: Fn(usize, usize) -> f64,
{
    let mcs = params.min_cluster_size;
    if mcs < 2 {
        return Err(Error::Config("min_cluster_size must be at least 2".into()));
    }
    if n < mcs {
        return Err(Error::TooFew {
            what: "points for clustering",
            needed: mcs,
            got: n,
        });
    }
    let min_samples = params.min_samples.unwrap_or(mcs).clamp(1, n);

    let core = core_distances(n, &dist, min_samples);
    let mst = prim_mst(n, &dist, &core);
    let (merges, sizes) = single_linkage(n, mst);
    let edges = condense(n, &merges, &sizes, mcs);
    let selected = select_eom(&edges, params.allow_single_cluster);
    Ok(label_points(n, &edges, &selected))
}

fn core_distances<F: Fn(usize, usize) -> f64>(n: usize, dist: &F, k: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    (0..n)
        .map(|i| {
            for (j, r) in row.iter_mut().enumerate() {
                *r = if i == j { 0.0 } else { dist(i, j) };
            }
            // k-th smallest counting the point itself
            let mut sorted = row.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            sorted[k - 1]
        })
        .collect()
}

/// Prim's algorithm on the dense mutual-reachability graph.
fn prim_mst<F: Fn(usize, usize) -> f64>(n: usize, dist: &F, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let mr = dist(current, j).max(core[current]).max(core[j]);
            if mr < best[j] {
                best[j] = mr;
                from[j] = current;
            }
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        current = next;
    }
    edges
}

/// Dendrogram as `(left, right, distance)` with node ids `n..2n-1` for merges.
fn single_linkage(n: usize, mut mst: Vec<(usize, usize, f64)>) -> (Vec<(usize, usize, f64)>, Vec<usize>) {
    mst.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap_or(std::cmp::Ordering::Equal));
    let total = 2 * n - 1;
    let mut parent: Vec<usize> = (0..total).collect();
    let mut sizes = vec![1usize; total];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (k, (a, b, d)) in mst.into_iter().enumerate() {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        let node = n + k;
        parent[ra] = node;
        parent[rb] = node;
        sizes[node] = sizes[ra] + sizes[rb];
        merges.push((ra, rb, d));
    }
    (merges, sizes)
}

fn lambda_of(d: f64) -> f64 {
    if d > 1.0 / MAX_LAMBDA {
        1.0 / d
    } else {
        MAX_LAMBDA
    }
}

fn condense(n: usize, merges: &[(usize, usize, f64)], sizes: &[usize], mcs: usize) -> Vec<CondensedEdge> {
    let root = 2 * n - 2;
    let mut edges = Vec::new();
    let mut next_cluster = 1usize;
    // (dendrogram node, cluster id)
    let mut queue = std::collections::VecDeque::from([(root, 0usize)]);

    let leaves = |node: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let (l, r, _) = merges[x - n];
                stack.push(r);
                stack.push(l);
            }
        }
        out.sort_unstable();
        out
    };

    while let Some((node, cluster)) = queue.pop_front() {
        if node < n {
            // a single point reached by continuation; only when mcs == 1
            continue;
        }
        let (left, right, d) = merges[node - n];
        let lambda = lambda_of(d);
        let (ls, rs) = (sizes[left], sizes[right]);
        match (ls >= mcs, rs >= mcs) {
            (true, true) => {
                for (child, size) in [(left, ls), (right, rs)] {
                    let id = next_cluster;
                    next_cluster += 1;
                    edges.push(CondensedEdge {
                        parent: cluster,
                        child: id,
                        is_point: false,
                        lambda,
                        size,
                    });
                    queue.push_back((child, id));
                }
            }
            (false, false) => {
                for p in leaves(left).into_iter().chain(leaves(right)) {
                    edges.push(CondensedEdge {
                        parent: cluster,
                        child: p,
                        is_point: true,
                        lambda,
                        size: 1,
                    });
                }
            }
            (true, false) | (false, true) => {
                let (big, small) = if ls >= mcs { (left, right) } else { (right, left) };
                for p in leaves(small) {
                    edges.push(CondensedEdge {
                        parent: cluster,
                        child: p,
                        is_point: true,
                        lambda,
                        size: 1,
                    });
                }
                queue.push_back((big, cluster));
            }
        }
    }
    edges
}

/// Excess-of-mass selection. Returns a flag per condensed cluster id.
fn select_eom(edges: &[CondensedEdge], allow_single_cluster: bool) -> Vec<bool> {
    let num_clusters = edges
        .iter()
        .filter(|e| !e.is_point)
        .map(|e| e.child + 1)
        .max()
        .unwrap_or(1);
    let mut birth = vec![0.0; num_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); num_clusters];
    for e in edges.iter().filter(|e| !e.is_point) {
        birth[e.child] = e.lambda;
        children[e.parent].push(e.child);
    }
    let mut stability = vec![0.0; num_clusters];
    for e in edges {
        stability[e.parent] += (e.lambda - birth[e.parent]) * e.size as f64;
    }

    let mut selected = vec![false; num_clusters];
    // children always carry larger ids than their parent
    let first = if allow_single_cluster { 0 } else { 1 };
    for c in (first..num_clusters).rev() {
        if children[c].is_empty() {
            selected[c] = true;
            continue;
        }
        let subtree: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if subtree > stability[c] {
            stability[c] = subtree;
        } else {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(children[k].iter().copied());
            }
        }
    }
    selected
}

fn label_points(n: usize, edges: &[CondensedEdge], selected: &[bool]) -> Clustering {
    let num_clusters = selected.len();
    let mut parent_of = vec![usize::MAX; num_clusters];
    for e in edges.iter().filter(|e| !e.is_point) {
        parent_of[e.child] = e.parent;
    }
    let root_max_lambda = edges
        .iter()
        .filter(|e| e.parent == 0)
        .map(|e| e.lambda)
        .fold(0.0f64, f64::max);

    let mut raw = vec![usize::MAX; n];
    for e in edges.iter().filter(|e| e.is_point) {
        let mut c = e.parent;
        let mut found = None;
        loop {
            if selected[c] {
                found = Some(c);
                break;
            }
            if parent_of[c] == usize::MAX {
                break;
            }
            c = parent_of[c];
        }
        if let Some(c) = found {
            if c == 0 && e.lambda < root_max_lambda {
                // single root cluster keeps only its densest core
                continue;
            }
            raw[e.child] = c;
        }
    }
    // renumber by first point index
    let mut remap = std::collections::BTreeMap::new();
    let mut labels = vec![NOISE; n];
    for (i, &c) in raw.iter().enumerate() {
        if c == usize::MAX {
            continue;
        }
        let next = remap.len() as i64;
        labels[i] = *remap.entry(c).or_insert(next);
    }
    Clustering {
        labels,
        num_clusters: remap.len(),
    }
}
