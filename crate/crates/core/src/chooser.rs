//! Seed-batch selection: uniform sampling or cluster-then-sample.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FuzzError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_CLUSTERS: usize = 10;
pub const LLOYD_MAX_ITERATIONS: usize = 100;
pub const LLOYD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChooserKind {
    #[default]
    Random,
    Clustered,
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_clusters() -> usize {
    DEFAULT_CLUSTERS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChooserConfig {
    #[serde(default)]
    pub kind: ChooserKind,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_clusters")]
    pub k: usize,
}

impl Default for ChooserConfig {
    fn default() -> Self {
        ChooserConfig {
            kind: ChooserKind::Random,
            batch_size: DEFAULT_BATCH_SIZE,
            k: DEFAULT_CLUSTERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSelection {
    pub indices: Vec<usize>,
    pub kind: ChooserKind,
    pub cluster: Option<usize>,
}

/// Uniform sample of `min(batch_size, n)` distinct indices out of `0..n`.
pub fn choose_random<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<BatchSelection> {
    if batch_size == 0 {
        return Err(FuzzError::InvalidArgument("batch size must be positive".into()));
    }
    if n == 0 {
        return Err(FuzzError::EmptyDataset);
    }
    Ok(BatchSelection {
        indices: index::sample(rng, n, batch_size.min(n)).into_vec(),
        kind: ChooserKind::Random,
        cluster: None,
    })
}

/// Cluster id per test input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Objective after each Lloyd iteration.
    pub objective_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    /// Extends the assignment to an input derived from `parent`.
    pub fn inherit(&mut self, parent: usize) {
        let c = self.labels[parent];
        self.labels.push(c);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Lloyd's k-means on flattened pixels with farthest-point seeding.
pub fn kmeans_fit<R: Rng + ?Sized>(inputs: &[Tensor], k: usize, rng: &mut R) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(FuzzError::InvalidArgument("k must be at least 1".into()));
    }
    if k > inputs.len() {
        return Err(FuzzError::InvalidArgument(format!("k = {k} exceeds {} inputs", inputs.len())));
    }
    let points: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect();

    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let far = (0..points.len())
            .map(|i| (i, nearest(&points[i], &centroids).1))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        centroids.push(points[far].clone());
    }

    let dim = points[0].len();
    let mut labels = vec![0; points.len()];
    let mut history = Vec::new();
    for _ in 0..LLOYD_MAX_ITERATIONS {
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            *l = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .map(|i| (i, sq_dist(&points[i], &centroids[labels[i]])))
                .fold((usize::MAX, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                .0;
            if far == usize::MAX {
                continue;
            }
            let old = labels[far];
            counts[old] -= 1;
            for (s, v) in sums[old].iter_mut().zip(&points[far]) {
                *s -= v;
            }
            labels[far] = c;
            counts[c] = 1;
            sums[c] = points[far].clone();
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        history.push(
            points
                .iter()
                .zip(&labels)
                .map(|(p, &l)| sq_dist(p, &centroids[l]))
                .sum(),
        );
        if shift < LLOYD_TOLERANCE {
            break;
        }
    }
    Ok(ClusterAssignment {
        k,
        labels,
        centroids,
        objective_history: history,
    })
}

/// Uniform cluster, then a without-replacement sample inside it. Clusters
/// smaller than `batch_size` are returned whole.
pub fn choose_clustered<R: Rng + ?Sized>(
    assignment: &ClusterAssignment,
    batch_size: usize,
    rng: &mut R,
) -> Result<BatchSelection> {
    let nonempty: Vec<usize> = (0..assignment.k)
        .filter(|&c| assignment.labels.contains(&c))
        .collect();
    if nonempty.is_empty() {
        return Err(FuzzError::EmptyDataset);
    }
    let cluster = nonempty[rng.gen_range(0..nonempty.len())];
    let members = assignment.members(cluster);
    let inner = choose_random(members.len(), batch_size, rng)?;
    Ok(BatchSelection {
        indices: inner.indices.into_iter().map(|i| members[i]).collect(),
        kind: ChooserKind::Clustered,
        cluster: Some(cluster),
    })
}
