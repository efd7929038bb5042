//! Random forest treatment learner and its neighbor-weight hat matrix.
//!
//! Trees are grown on bootstrap samples of A2 only. Each A1 row then receives
//! weight `1 / |leaf ∩ A1|` for every A1 row sharing its leaf, averaged over
//! trees, so `Ω D_{A1}` is the forest prediction with leaf values re-estimated
//! on A1.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use super::tree::{leaf_groups, RegressionTree, TreeParams};
use super::{HatMatrix, LearnerTag};
use crate::data::{Dataset, FoldSplit};
use crate::error::{Result, TsciError};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestSpec {
    pub num_trees: usize,
    pub min_node_size: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestSpec {
    fn default() -> Self {
        ForestSpec {
            num_trees: 200,
            min_node_size: 5,
            mtry: None,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestSpec {
    pub fn resolved_mtry(&self, num_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (num_features as f64).sqrt().ceil() as usize)
    }

    pub fn validate(&self, num_features: usize) -> Result<()> {
        if self.num_trees == 0 {
            return Err(TsciError::InvalidParameter("num_trees must be positive".into()));
        }
        if self.min_node_size == 0 {
            return Err(TsciError::InvalidParameter(
                "min_node_size must be positive".into(),
            ));
        }
        if self.max_depth == Some(0) {
            return Err(TsciError::InvalidParameter("max_depth must be positive".into()));
        }
        let mtry = self.resolved_mtry(num_features);
        if mtry == 0 || mtry > num_features {
            return Err(TsciError::InvalidParameter(format!(
                "mtry must lie in 1..={num_features}, got {mtry}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<RegressionTree>,
}

impl Forest {
    /// Grow `spec.num_trees` trees regressing `target` on the rows `rows` of
    /// `features`. Tree `s` draws from its own seed stream.
    pub fn fit(
        features: &DMatrix<f64>,
        target: &[f64],
        rows: &[usize],
        spec: &ForestSpec,
    ) -> Result<Self> {
        spec.validate(features.ncols())?;
        let params = TreeParams {
            min_node_size: spec.min_node_size,
            mtry: spec.resolved_mtry(features.ncols()),
            max_depth: spec.max_depth,
        };
        let trees = (0..spec.num_trees)
            .into_par_iter()
            .map(|s| {
                let mut r = rng::rng_from(spec.seed, &[rng::STREAM_LEARNER, s as u64]);
                let sample: Vec<usize> = (0..rows.len())
                    .map(|_| rows[r.gen_range(0..rows.len())])
                    .collect();
                RegressionTree::fit(features, target, sample, &params, &mut r)
            })
            .collect();
        Ok(Forest { trees })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// Leaf ids of `rows`, one vector per tree.
    pub fn leaves(&self, features: &DMatrix<f64>, rows: &[usize]) -> Vec<Vec<usize>> {
        self.trees
            .par_iter()
            .map(|t| t.leaves_of(features, rows))
            .collect()
    }
}

/// Neighbor weights of query points against reference points.
///
/// `query_leaves[s][i]` and `reference_leaves[s][j]` are leaf ids in tree `s`
/// (`num_nodes[s]` nodes). A tree whose query leaf holds no reference point is
/// skipped for that query and the average renormalised over the remaining
/// trees; a query with no usable tree is an error.
pub fn leaf_weight_matrix(
    num_nodes: &[usize],
    query_leaves: &[Vec<usize>],
    reference_leaves: &[Vec<usize>],
) -> Result<DMatrix<f64>> {
    let nq = query_leaves.first().map_or(0, |l| l.len());
    let nr = reference_leaves.first().map_or(0, |l| l.len());
    // Column i of `out_t` is row i of the result.
    let mut out_t = DMatrix::<f64>::zeros(nr, nq);
    let mut used = vec![0usize; nq];
    for ((&nodes, q_leaves), r_leaves) in num_nodes.iter().zip(query_leaves).zip(reference_leaves)
    {
        let groups = leaf_groups(nodes, r_leaves);
        for (i, &leaf) in q_leaves.iter().enumerate() {
            let group = &groups[leaf];
            if group.is_empty() {
                continue;
            }
            used[i] += 1;
            let w = 1.0 / group.len() as f64;
            let mut col = out_t.column_mut(i);
            for &j in group {
                col[j] += w;
            }
        }
    }
    for (i, &u) in used.iter().enumerate() {
        if u == 0 {
            return Err(TsciError::EmptyNeighborhood { row: i });
        }
        out_t.column_mut(i).scale_mut(1.0 / u as f64);
    }
    Ok(out_t.transpose())
}

pub fn forest_hat_matrix(
    dataset: &Dataset,
    split: &FoldSplit,
    spec: &ForestSpec,
) -> Result<HatMatrix> {
    let features = dataset.features();
    let d = dataset.d.as_slice();
    let forest = Forest::fit(&features, d, &split.a2, spec)?;
    let leaves = forest.leaves(&features, &split.a1);
    let nodes: Vec<usize> = forest.trees().iter().map(|t| t.nodes().len()).collect();
    let omega = leaf_weight_matrix(&nodes, &leaves, &leaves)?;

    let mut hyperparams = BTreeMap::new();
    hyperparams.insert("num_trees".into(), spec.num_trees.to_string());
    hyperparams.insert("min_node_size".into(), spec.min_node_size.to_string());
    hyperparams.insert(
        "mtry".into(),
        spec.resolved_mtry(features.ncols()).to_string(),
    );
    if let Some(depth) = spec.max_depth {
        hyperparams.insert("max_depth".into(), depth.to_string());
    }
    Ok(HatMatrix {
        omega,
        rows: split.a1.clone(),
        learner: LearnerTag::Forest,
        hyperparams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_leaf() {
        // One tree, leaves: rows 0 and 1 share node 1, row 2 alone in node 2.
        let leaves = vec![vec![1, 1, 2]];
        let omega = leaf_weight_matrix(&[3], &leaves, &leaves).unwrap();
        assert_eq!(omega[(0, 0)], 0.5);
        assert_eq!(omega[(0, 1)], 0.5);
        assert_eq!(omega[(0, 2)], 0.0);
        assert_eq!(omega[(2, 2)], 1.0);
    }

    #[test]
    fn empty_leaf_skips_tree_then_errors() {
        let query = vec![vec![1, 2], vec![1, 1]];
        let reference = vec![vec![1, 1], vec![2, 2]];
        // Tree 0 serves query 0; query 1 hits empty leaves in both trees.
        let err = leaf_weight_matrix(&[3, 3], &query, &reference).unwrap_err();
        assert_eq!(err, TsciError::EmptyNeighborhood { row: 1 });

        let query = vec![vec![1], vec![1]];
        let omega = leaf_weight_matrix(&[3, 3], &query, &reference).unwrap();
        // Only tree 0 contributes, weights renormalised to sum to one.
        assert_eq!(omega[(0, 0)], 0.5);
        assert_eq!(omega[(0, 1)], 0.5);
    }

    #[test]
    fn spec_validation() {
        let spec = ForestSpec {
            mtry: Some(4),
            ..ForestSpec::default()
        };
        assert!(spec.validate(3).is_err());
        assert!(ForestSpec::default().validate(3).is_ok());
        assert_eq!(ForestSpec::default().resolved_mtry(3), 2);
        let zero = ForestSpec {
            num_trees: 0,
            ..ForestSpec::default()
        };
        assert!(zero.validate(3).is_err());
    }
}
