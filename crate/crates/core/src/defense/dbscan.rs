//! Density-based clustering over planar points, with a uniform-grid neighbor index.

use std::collections::HashMap;

/// Cluster label per point plus per-cluster membership.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// `Some(cluster)` or `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Point indices in ascending order.
    pub members: Vec<usize>,
    pub centroid: [f64; 2],
}

impl ClusterAssignment {
    pub fn noise(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.is_none().then_some(i))
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
}

pub fn centroid(points: &[[f64; 2]], idx: impl IntoIterator<Item = usize>) -> [f64; 2] {
    let mut s = [0.0, 0.0];
    let mut n = 0usize;
    for i in idx {
        s[0] += points[i][0];
        s[1] += points[i][1];
        n += 1;
    }
    if n == 0 {
        return [f64::NAN, f64::NAN];
    }
    [s[0] / n as f64, s[1] / n as f64]
}

pub(crate) fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

struct Grid<'a> {
    points: &'a [[f64; 2]],
    eps: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 2]], eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn key(p: &[f64; 2], eps: f64) -> (i64, i64) {
        ((p[0] / eps).floor() as i64, (p[1] / eps).floor() as i64)
    }

    /// Indices within `eps` of point `i`, itself included, ascending.
    fn neighbors(&self, i: usize) -> Vec<usize> {
        let p = self.points[i];
        let (cx, cy) = Self::key(&p, self.eps);
        let eps2 = self.eps * self.eps;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(cell) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(cell.iter().copied().filter(|&j| dist2(p, self.points[j]) <= eps2));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Clusters `points` (meters). A point is core when at least `min_pts` points,
/// itself included, lie within `eps`. Clusters are numbered in order of their
/// lowest-index core point; a border point joins the first cluster that reaches it.
pub fn dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> ClusterAssignment {
    assert!(eps > 0.0 && eps.is_finite(), "eps must be positive");
    let min_pts = min_pts.max(1);
    let grid = Grid::new(points, eps);
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut visited = vec![false; points.len()];
    let mut queued = vec![false; points.len()];
    let mut n_clusters = 0;

    for i in 0..points.len() {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = grid.neighbors(i);
        if nb.len() < min_pts {
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        let mut queue = Vec::new();
        let mut absorb = |nb: Vec<usize>, visited: &[bool], queue: &mut Vec<usize>| {
            for k in nb {
                if labels[k].is_none() {
                    labels[k] = Some(c);
                }
                if !visited[k] && !queued[k] {
                    queued[k] = true;
                    queue.push(k);
                }
            }
        };
        absorb(nb, &visited, &mut queue);
        while let Some(j) = queue.pop() {
            visited[j] = true;
            let nj = grid.neighbors(j);
            if nj.len() >= min_pts {
                absorb(nj, &visited, &mut queue);
            }
        }
    }

    let mut members = vec![Vec::new(); n_clusters];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            members[*c].push(i);
        }
    }
    let clusters = members
        .into_iter()
        .map(|m| Cluster {
            centroid: centroid(points, m.iter().copied()),
            members: m,
        })
        .collect();
    ClusterAssignment { labels, clusters }
}
