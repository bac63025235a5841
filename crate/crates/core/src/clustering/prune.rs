use super::ClusterLabeling;
use crate::error::{invalid, Result};
use crate::similarity::SimilarityGraph;

/// Marks as outliers the journeys whose `k_nn` strongest neighbours mostly
/// carry other labels. Every decision reads the input labeling, so removals
/// do not cascade.
pub fn prune_knn_outliers(
    graph: &SimilarityGraph,
    labeling: &ClusterLabeling,
    k_nn: usize,
    agreement: f64,
) -> Result<ClusterLabeling> {
    if !(agreement > 0.0 && agreement <= 1.0) {
        return Err(invalid("agreement must lie in (0, 1]"));
    }
    if k_nn == 0 {
        return Err(invalid("k_nn must be positive"));
    }
    check_len(graph, labeling)?;
    let drop: Vec<bool> = (0..graph.len())
        .map(|i| {
            let Some(own) = labeling.label(i) else {
                return false;
            };
            let mut nbrs = graph.neighbors(i).to_vec();
            if nbrs.is_empty() {
                return true;
            }
            nbrs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            nbrs.truncate(k_nn);
            let same = nbrs
                .iter()
                .filter(|(j, _)| labeling.label(*j) == Some(own))
                .count();
            (same as f64) < agreement * nbrs.len() as f64
        })
        .collect();
    Ok(labeling.without(&drop))
}

/// Marks as outliers the members whose mean similarity to the rest of their
/// cluster is below `quantile_floor` times the cluster's median member mean.
pub fn prune_similarity_outliers(
    graph: &SimilarityGraph,
    labeling: &ClusterLabeling,
    quantile_floor: f64,
) -> Result<ClusterLabeling> {
    if !(quantile_floor > 0.0 && quantile_floor < 1.0) {
        return Err(invalid("quantile_floor must lie in (0, 1)"));
    }
    check_len(graph, labeling)?;
    let mut drop = vec![false; graph.len()];
    for members in labeling.clusters() {
        if members.len() < 2 {
            continue;
        }
        let label = labeling.label(members[0]);
        let means: Vec<f64> = members
            .iter()
            .map(|&i| {
                let total: f64 = graph
                    .neighbors(i)
                    .iter()
                    .filter(|(j, _)| labeling.label(*j) == label)
                    .map(|e| e.1)
                    .sum();
                total / (members.len() - 1) as f64
            })
            .collect();
        let mut sorted = means.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let floor = quantile_floor * median;
        for (&i, &m) in members.iter().zip(&means) {
            drop[i] = m < floor;
        }
    }
    Ok(labeling.without(&drop))
}

fn check_len(graph: &SimilarityGraph, labeling: &ClusterLabeling) -> Result<()> {
    if graph.len() != labeling.len() {
        return Err(invalid("graph and labeling differ in size"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques() -> SimilarityGraph {
        let mut e = Vec::new();
        for base in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    e.push((base + i, base + j, 1.0));
                }
            }
        }
        SimilarityGraph::from_edges(8, e)
    }

    #[test]
    fn separated_clusters_unchanged() {
        let g = two_cliques();
        let l = ClusterLabeling::from_raw(&[
            Some(0),
            Some(0),
            Some(0),
            Some(0),
            Some(1),
            Some(1),
            Some(1),
            Some(1),
        ]);
        assert_eq!(prune_knn_outliers(&g, &l, 3, 0.5).unwrap(), l);
        assert_eq!(prune_similarity_outliers(&g, &l, 0.1).unwrap(), l);
    }

    #[test]
    fn mislabelled_journey_is_dropped() {
        let g = two_cliques();
        // vertex 3 sits in the first clique but carries the second label
        let l = ClusterLabeling::from_raw(&[
            Some(0),
            Some(0),
            Some(0),
            Some(1),
            Some(1),
            Some(1),
            Some(1),
            Some(1),
        ]);
        let p = prune_knn_outliers(&g, &l, 3, 0.5).unwrap();
        assert_eq!(p.label(3), None);
        assert_eq!(p.outlier_count(), 1);
    }

    #[test]
    fn weakly_attached_member_is_dropped() {
        let mut e: Vec<(usize, usize, f64)> = two_cliques().edges().filter(|e| e.0 < 4).collect();
        e.push((3, 4, 0.05));
        let g = SimilarityGraph::from_edges(5, e);
        let l = ClusterLabeling::from_raw(&[Some(0); 5]);
        let p = prune_similarity_outliers(&g, &l, 0.2).unwrap();
        assert_eq!(p.labels(), &[Some(0), Some(0), Some(0), Some(0), None]);
    }

    #[test]
    fn invalid_parameters() {
        let g = two_cliques();
        let l = ClusterLabeling::all_outliers(8);
        assert!(prune_knn_outliers(&g, &l, 3, 0.0).is_err());
        assert!(prune_similarity_outliers(&g, &l, 1.0).is_err());
    }
}
