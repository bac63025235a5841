use super::ClusterLabeling;
use crate::error::{invalid, Result};
use crate::trace::Seconds;

/// DBSCAN over scalar timestamps.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Cores closer than `eps` share a cluster; a non-core point
/// within `eps` of some core joins the cluster of its nearest core, the
/// earlier one on a tie; everything else is an outlier. Clusters are numbered
/// by their earliest timestamp.
pub fn dbscan_1d(timestamps: &[Seconds], eps: Seconds, min_pts: usize) -> Result<ClusterLabeling> {
    if eps <= 0 {
        return Err(invalid("eps must be positive"));
    }
    if min_pts == 0 {
        return Err(invalid("min_pts must be at least 1"));
    }
    let n = timestamps.len();
    if n == 0 {
        return Ok(ClusterLabeling::default());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (timestamps[i], i));
    let xs: Vec<Seconds> = order.iter().map(|&i| timestamps[i]).collect();

    // neighbourhood sizes by two pointers over the sorted values
    let mut core = vec![false; n];
    let (mut lo, mut hi) = (0usize, 0usize);
    for p in 0..n {
        while xs[p] - xs[lo] > eps {
            lo += 1;
        }
        while hi + 1 < n && xs[hi + 1] - xs[p] <= eps {
            hi += 1;
        }
        core[p] = hi + 1 - lo >= min_pts;
    }

    let cores: Vec<usize> = (0..n).filter(|&p| core[p]).collect();
    let mut core_cluster = vec![0usize; cores.len()];
    for c in 1..cores.len() {
        let gap = xs[cores[c]] - xs[cores[c - 1]];
        core_cluster[c] = core_cluster[c - 1] + usize::from(gap > eps);
    }

    let mut raw = vec![None; n];
    for p in 0..n {
        // index of the first core at or after p
        let r = cores.partition_point(|&c| xs[c] < xs[p]);
        let right = cores.get(r).map(|&c| (xs[c] - xs[p], r));
        let left = r.checked_sub(1).map(|l| (xs[p] - xs[cores[l]], l));
        let best = match (left, right) {
            (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
            (a, b) => a.or(b),
        };
        if let Some((d, c)) = best {
            if d <= eps {
                raw[order[p]] = Some(core_cluster[c]);
            }
        }
    }
    let k = core_cluster.last().map_or(0, |c| c + 1);
    Ok(ClusterLabeling { labels: raw, k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_groups() {
        let l = dbscan_1d(&[0, 1, 2, 100, 101], 5, 2).unwrap();
        assert_eq!(l.k(), 2);
        assert_eq!(l.clusters(), vec![vec![0, 1, 2], vec![3, 4]]);
    }

    #[test]
    fn single_point_is_noise() {
        let l = dbscan_1d(&[42], 5, 2).unwrap();
        assert_eq!(l.labels(), &[None]);
        assert_eq!(l.k(), 0);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let l = dbscan_1d(&[7; 6], 1, 3).unwrap();
        assert_eq!(l.k(), 1);
        assert_eq!(l.outlier_count(), 0);
    }

    #[test]
    fn empty_and_invalid() {
        assert!(dbscan_1d(&[], 5, 2).unwrap().is_empty());
        assert!(dbscan_1d(&[1], 0, 2).is_err());
        assert!(dbscan_1d(&[1], 3, 0).is_err());
    }

    #[test]
    fn border_point_goes_to_nearer_core() {
        let l = dbscan_1d(&[0, 1, 2, 3, 8, 11, 12, 13, 14], 4, 4).unwrap();
        assert_eq!(l.k(), 2);
        assert_eq!(l.label(4), Some(1));
        let tie = dbscan_1d(&[0, 1, 2, 3, 7, 11, 12, 13, 14], 4, 4).unwrap();
        assert_eq!(tie.label(4), Some(0));
    }
}
