//! PCA projection followed by seeded k-means; one representative frame per
//! cluster.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Stream};

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-9;

/// Relative slack under which two squared distances count as tied, so that
/// rounding in the projection cannot break a tie toward a later frame.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyframeError {
    #[error("trajectory has no frames")]
    EmptyTrajectory,
    #[error("frame {index} has dimension {got}, expected {expected}")]
    RaggedFrames { index: usize, expected: usize, got: usize },
    #[error("frame {0} has a non-finite feature")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeParams {
    pub k: usize,
    pub p: usize,
    pub seed: u64,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        Self { k: 6, p: 8, seed: 0 }
    }
}

/// `indices` are strictly ascending, in range, and `min(k, T)` long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub indices: Vec<usize>,
    pub k: usize,
    pub p: usize,
    pub seed: u64,
}

fn check(frames: &[Vec<f64>]) -> Result<usize, KeyframeError> {
    let d = frames.first().ok_or(KeyframeError::EmptyTrajectory)?.len();
    for (index, f) in frames.iter().enumerate() {
        if f.len() != d {
            return Err(KeyframeError::RaggedFrames { index, expected: d, got: f.len() });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(KeyframeError::NonFinite(index));
        }
    }
    Ok(d)
}

/// Centers the frames and projects them on the top `min(p, d, T)`
/// principal axes (eigenvalue descending, lower axis index first on ties).
pub fn pca_project(frames: &[Vec<f64>], p: usize) -> Result<Vec<Vec<f64>>, KeyframeError> {
    let d = check(frames)?;
    let t = frames.len();
    let mut x = DMatrix::from_fn(t, d, |i, j| frames[i][j]);
    for j in 0..d {
        let mean = x.column(j).sum() / t as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let q = p.min(d).min(t);
    if q == 0 {
        return Ok(alloc::vec![Vec::new(); t]);
    }
    let cov = x.transpose() * &x / ((t.max(2) - 1) as f64);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let basis = DMatrix::from_fn(d, q, |i, j| eig.eigenvectors[(i, order[j])]);
    let y = x * basis;
    Ok((0..t).map(|i| y.row(i).iter().copied().collect()).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center, lowest index on ties.
fn nearest(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// k-means++ seeding: the first center uniformly, then each next one with
/// probability proportional to squared distance to the chosen set. When
/// every remaining weight is zero the earliest unchosen point is taken.
fn seed_centers(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut chosen = alloc::vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if *w > 0.0 && acc > u {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).unwrap_or(0))
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        for (i, x) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &points[pick]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Lloyd iterations from k-means++ seeds. Returns the assignment and the
/// final centroids. An emptied cluster keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut rng = rng::stream(seed, Stream::KMeans);
    let mut centers = seed_centers(points, k, &mut rng);
    let dim = points.first().map_or(0, Vec::len);
    let mut assign: Vec<usize> = points.iter().map(|x| nearest(x, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = alloc::vec![alloc::vec![0.0; dim]; k];
        let mut counts = alloc::vec![0usize; k];
        for (x, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(libm::sqrt(sq_dist(&next, &centers[c])));
            centers[c] = next;
        }
        let next_assign: Vec<usize> = points.iter().map(|x| nearest(x, &centers)).collect();
        let stable = next_assign == assign;
        assign = next_assign;
        if stable || shift <= KMEANS_TOL {
            break;
        }
    }
    (assign, centers)
}

/// Representative frames of a trajectory. Each cluster contributes its
/// member nearest the centroid (earliest on ties, up to `TIE_EPS`); if a cluster ends up
/// empty the earliest unused frames fill the gap.
pub fn extract_keyframes(frames: &[Vec<f64>], params: KeyframeParams) -> Result<KeyframeSet, KeyframeError> {
    let projected = pca_project(frames, params.p)?;
    let t = frames.len();
    let k = params.k.min(t);
    if k == 0 {
        return Ok(KeyframeSet { indices: Vec::new(), k: params.k, p: params.p, seed: params.seed });
    }
    let (assign, centers) = kmeans(&projected, k, params.seed);

    let mut picked = Vec::with_capacity(k);
    for (c, center) in centers.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, x) in projected.iter().enumerate() {
            if assign[i] != c {
                continue;
            }
            let d = sq_dist(x, center);
            if best.is_none_or(|(_, bd)| d < bd - TIE_EPS * (1.0 + bd)) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            picked.push(i);
        }
    }
    let mut next_free = 0;
    while picked.len() < k {
        while picked.contains(&next_free) {
            next_free += 1;
        }
        picked.push(next_free);
    }
    picked.sort_unstable();
    Ok(KeyframeSet { indices: picked, k: params.k, p: params.p, seed: params.seed })
}
