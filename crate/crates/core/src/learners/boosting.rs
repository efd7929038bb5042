//! L2 boosting with regression trees.
//!
//! The sequence of tree structures is fit on A2. On A1 every tree acts as the
//! leaf-averaging smoother `B_m`, and the boosted fit after `M` rounds is the
//! smoother `Ω = I - (I - νB_M)···(I - νB_1)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::tree::{leaf_groups, RegressionTree, TreeParams};
use super::{HatMatrix, LearnerTag};
use crate::data::{Dataset, FoldSplit};
use crate::error::{Result, TsciError};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BoostingSpec {
    pub rounds: usize,
    pub shrinkage: f64,
    pub max_depth: usize,
    pub min_node_size: usize,
    pub seed: u64,
}

impl Default for BoostingSpec {
    fn default() -> Self {
        BoostingSpec {
            rounds: 100,
            shrinkage: 0.1,
            max_depth: 3,
            min_node_size: 5,
            seed: 0,
        }
    }
}

impl BoostingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(TsciError::InvalidParameter(format!(
                "shrinkage must lie in (0, 1], got {}",
                self.shrinkage
            )));
        }
        if self.rounds == 0 || self.max_depth == 0 || self.min_node_size == 0 {
            return Err(TsciError::InvalidParameter(
                "rounds, max_depth and min_node_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    trees: Vec<RegressionTree>,
}

impl BoostedTrees {
    pub fn fit(
        features: &DMatrix<f64>,
        target: &[f64],
        rows: &[usize],
        spec: &BoostingSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let params = TreeParams {
            min_node_size: spec.min_node_size,
            mtry: features.ncols(),
            max_depth: Some(spec.max_depth),
        };
        let mut fitted = vec![0.0; features.nrows()];
        let mut residual = vec![0.0; features.nrows()];
        let mut trees = Vec::with_capacity(spec.rounds);
        for m in 0..spec.rounds {
            for &i in rows {
                residual[i] = target[i] - fitted[i];
            }
            let mut r = rng::rng_from(spec.seed, &[rng::STREAM_LEARNER, m as u64]);
            let tree = RegressionTree::fit(features, &residual, rows.to_vec(), &params, &mut r);
            for &i in rows {
                fitted[i] += spec.shrinkage * tree.predict_row(features, i);
            }
            trees.push(tree);
        }
        Ok(BoostedTrees { trees })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    /// Leaf-averaging smoother of tree `m` on `rows`.
    pub fn tree_smoother(&self, m: usize, features: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
        let tree = &self.trees[m];
        let leaves = tree.leaves_of(features, rows);
        let groups = leaf_groups(tree.nodes().len(), &leaves);
        let mut b = DMatrix::zeros(rows.len(), rows.len());
        for g in groups.iter().filter(|g| !g.is_empty()) {
            let w = 1.0 / g.len() as f64;
            for &i in g {
                for &j in g {
                    b[(i, j)] = w;
                }
            }
        }
        b
    }

    /// Hat matrix of the first `rounds` trees on `rows` with shrinkage `nu`.
    pub fn hat_matrix(
        &self,
        features: &DMatrix<f64>,
        rows: &[usize],
        rounds: usize,
        nu: f64,
    ) -> DMatrix<f64> {
        let n = rows.len();
        // residual operator R = Π (I - ν B_m), applied from the left
        let mut r = DMatrix::<f64>::identity(n, n);
        let mut sums = Vec::new();
        for tree in self.trees.iter().take(rounds) {
            let leaves = tree.leaves_of(features, rows);
            let groups: Vec<Vec<usize>> = leaf_groups(tree.nodes().len(), &leaves)
                .into_iter()
                .filter(|g| !g.is_empty())
                .collect();
            for j in 0..n {
                let mut col = r.column_mut(j);
                sums.clear();
                sums.extend(
                    groups
                        .iter()
                        .map(|g| nu * g.iter().map(|&i| col[i]).sum::<f64>() / g.len() as f64),
                );
                for (g, &s) in groups.iter().zip(&sums) {
                    for &i in g {
                        col[i] -= s;
                    }
                }
            }
        }
        DMatrix::identity(n, n) - r
    }
}

pub fn boosting_hat_matrix(
    dataset: &Dataset,
    split: &FoldSplit,
    spec: &BoostingSpec,
) -> Result<HatMatrix> {
    let features = dataset.features();
    let boosted = BoostedTrees::fit(&features, dataset.d.as_slice(), &split.a2, spec)?;
    let omega = boosted.hat_matrix(&features, &split.a1, spec.rounds, spec.shrinkage);
    let mut hyperparams = BTreeMap::new();
    hyperparams.insert("rounds".into(), spec.rounds.to_string());
    hyperparams.insert("shrinkage".into(), spec.shrinkage.to_string());
    hyperparams.insert("max_depth".into(), spec.max_depth.to_string());
    hyperparams.insert("min_node_size".into(), spec.min_node_size.to_string());
    Ok(HatMatrix {
        omega,
        rows: split.a1.clone(),
        learner: LearnerTag::Boosting,
        hyperparams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, Vec<f64>) {
        let n = 120;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * 7 + j * 13) % 29) as f64 / 29.0 + j as f64);
        let y: Vec<f64> = (0..n)
            .map(|i| (3.0 * x[(i, 0)]).sin() + x[(i, 1)] * x[(i, 0)])
            .collect();
        (x, y)
    }

    #[test]
    fn one_round_full_shrinkage_is_the_tree_smoother() {
        let (x, y) = toy();
        let a2: Vec<usize> = (0..60).collect();
        let a1: Vec<usize> = (60..120).collect();
        let spec = BoostingSpec {
            rounds: 1,
            shrinkage: 1.0,
            ..BoostingSpec::default()
        };
        let bt = BoostedTrees::fit(&x, &y, &a2, &spec).unwrap();
        let omega = bt.hat_matrix(&x, &a1, 1, 1.0);
        let b = bt.tree_smoother(0, &x, &a1);
        assert!((omega - b).amax() < 1e-14);
    }

    #[test]
    fn small_shrinkage_is_first_order() {
        let (x, y) = toy();
        let a2: Vec<usize> = (0..60).collect();
        let a1: Vec<usize> = (60..120).collect();
        let spec = BoostingSpec {
            rounds: 5,
            ..BoostingSpec::default()
        };
        let bt = BoostedTrees::fit(&x, &y, &a2, &spec).unwrap();
        let nu = 1e-4;
        let omega = bt.hat_matrix(&x, &a1, 5, nu);
        let mut first_order = DMatrix::zeros(60, 60);
        for m in 0..5 {
            first_order += bt.tree_smoother(m, &x, &a1) * nu;
        }
        assert!((omega - first_order).amax() < 1e-6);
    }

    #[test]
    fn rejects_bad_shrinkage() {
        for nu in [0.0, 1.5, -0.1] {
            let spec = BoostingSpec {
                shrinkage: nu,
                ..BoostingSpec::default()
            };
            assert!(spec.validate().is_err());
        }
    }
}
