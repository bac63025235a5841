use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClusterLabeling;
use crate::error::{invalid, Error, Result};
use crate::similarity::SimilarityGraph;

pub const DEFAULT_K_MAX: usize = 50;
const KMEANS_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterCount {
    /// Largest gap in the Laplacian spectrum.
    #[default]
    Auto,
    Fixed(usize),
}

/// Dense `I - D^{-1/2} W D^{-1/2}`; rows of isolated vertices are zero.
pub fn normalized_laplacian(graph: &SimilarityGraph) -> DMatrix<f64> {
    let n = graph.len();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d = graph.degree(i);
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        if inv_sqrt[i] > 0.0 {
            l[(i, i)] = 1.0;
        }
        for &(j, w) in graph.neighbors(i) {
            l[(i, j)] = -w * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    l
}

/// Number of clusters suggested by the largest gap among the first `k_max`
/// ascending eigenvalues; ties go to the smaller count.
pub fn eigengap_k(eigenvalues: &[f64], k_max: usize) -> usize {
    let m = eigenvalues.len().min(k_max);
    if m < 2 {
        return m;
    }
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..m {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        if gap > best.1 {
            best = (k, gap);
        }
    }
    best.0
}

fn components(graph: &SimilarityGraph) -> Vec<Vec<usize>> {
    let n = graph.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] || graph.neighbors(start).is_empty() {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let v = comp[head];
            head += 1;
            for &(u, _) in graph.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    comp.push(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Spectral clustering of `graph`.
///
/// Each connected component is decomposed on its own and the spectra are
/// merged, which equals decomposing the block-diagonal Laplacian. The
/// bottom `k` merged eigenvalues decide how many clusters each component
/// contributes (at least one). Within a component the row-normalized
/// eigenvector embedding is split by k-means. Vertices without edges are
/// outliers.
pub fn spectral_cluster(
    graph: &SimilarityGraph,
    k: ClusterCount,
    k_max: usize,
    seed: u64,
) -> Result<ClusterLabeling> {
    let n = graph.len();
    if n == 0 {
        return Err(Error::Empty("similarity graph"));
    }
    if k_max < 2 {
        return Err(invalid("k_max must be at least 2"));
    }
    if let ClusterCount::Fixed(k) = k {
        if k > n {
            return Err(Error::TooManyClusters { k, n });
        }
        if k == 0 {
            return Err(invalid("k must be positive"));
        }
    }
    let comps = components(graph);
    let spectra: Vec<SymmetricEigen<f64, nalgebra::Dyn>> = comps
        .iter()
        .map(|c| SymmetricEigen::new(normalized_laplacian(&graph.subgraph(c))))
        .collect();
    let sorted: Vec<Vec<usize>> = spectra
        .iter()
        .map(|e| {
            let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
            idx.sort_by(|&a, &b| {
                e.eigenvalues[a]
                    .total_cmp(&e.eigenvalues[b])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    let mut merged: Vec<(f64, usize)> = spectra
        .iter()
        .enumerate()
        .flat_map(|(c, e)| sorted[c].iter().map(move |&i| (e.eigenvalues[i], c)))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let k = match k {
        ClusterCount::Fixed(k) => k,
        ClusterCount::Auto => {
            let values: Vec<f64> = merged.iter().map(|e| e.0).collect();
            eigengap_k(&values, k_max)
        }
    };
    let mut per_comp = vec![0usize; comps.len()];
    for &(_, c) in merged.iter().take(k) {
        per_comp[c] += 1;
    }

    let mut raw = vec![None; n];
    let mut next = 0;
    for (c, members) in comps.iter().enumerate() {
        let kc = per_comp[c].max(1);
        let assign = if kc == 1 {
            vec![0; members.len()]
        } else {
            let vecs = &spectra[c].eigenvectors;
            let points: Vec<Vec<f64>> = (0..members.len())
                .map(|r| {
                    let mut row: Vec<f64> =
                        sorted[c][..kc].iter().map(|&col| vecs[(r, col)]).collect();
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        row.iter_mut().for_each(|x| *x /= norm);
                    }
                    row
                })
                .collect();
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            kmeans(&points, kc, &mut rng)
        };
        for (r, &v) in members.iter().enumerate() {
            raw[v] = Some(next + assign[r]);
        }
        next += kc;
    }
    Ok(ClusterLabeling::from_raw(&raw))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from farthest-first seeds; the first seed is drawn from `rng`.
fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let far = argmax(&nearest);
        centers.push(points[far].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(dist2(p, centers.last().unwrap()));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (c, ctr) in centers.iter().enumerate() {
                let d = dist2(p, ctr);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // re-seed an empty cluster at the worst-served point
                let d: Vec<f64> = points
                    .iter()
                    .zip(&assign)
                    .map(|(p, &a)| dist2(p, &centers[a]))
                    .collect();
                centers[c] = points[argmax(&d)].clone();
            }
        }
    }
    assign
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}
