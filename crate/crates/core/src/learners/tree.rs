//! CART regression trees with variance-reduction splits.
//!
//! Thresholds sit at mid-points between adjacent distinct feature values and
//! each split considers a fresh random subset of `mtry` features.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// Minimum number of training samples in a leaf.
    pub min_node_size: usize,
    pub mtry: usize,
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Grower<'a, R> {
    features: &'a DMatrix<f64>,
    target: &'a [f64],
    params: &'a TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    order: Vec<(f64, f64)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, sample: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = sample.len();
        let sum: f64 = sample.iter().map(|&i| self.target[i]).sum();
        let value = sum / n as f64;
        self.nodes.push(Node::Leaf { value });

        let depth_ok = self.params.max_depth.map_or(true, |m| depth < m);
        if n < 2 * self.params.min_node_size || !depth_ok {
            return id;
        }
        let first = self.target[sample[0]];
        if sample.iter().all(|&i| self.target[i] == first) {
            return id;
        }
        let Some(best) = self.best_split(&sample, sum * sum / n as f64) else {
            return id;
        };

        let (left, right): (Vec<usize>, Vec<usize>) = sample
            .into_iter()
            .partition(|&i| self.features[(i, best.feature)] <= best.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&mut self, sample: &[usize], parent_score: f64) -> Option<BestSplit> {
        let p = self.features.ncols();
        let mtry = self.params.mtry.clamp(1, p);
        let candidates = index::sample(self.rng, p, mtry).into_vec();
        let min_leaf = self.params.min_node_size.max(1);
        let n = sample.len();
        let total: f64 = sample.iter().map(|&i| self.target[i]).sum();
        let mut best: Option<BestSplit> = None;

        for feature in candidates {
            self.order.clear();
            self.order
                .extend(sample.iter().map(|&i| (self.features[(i, feature)], self.target[i])));
            self.order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.order[k - 1].1;
                if k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.order[k - 1].0, self.order[k].0);
                if lo >= hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
                if best.as_ref().map_or(true, |b| score > b.score) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
        }
        best.filter(|b| b.score > parent_score * (1.0 + 1e-12) + 1e-300)
    }
}

impl RegressionTree {
    /// Grow a tree on the rows listed in `sample` (repeats allowed, as in a
    /// bootstrap sample). Rows outside `sample` are never read.
    pub fn fit<R: Rng>(
        features: &DMatrix<f64>,
        target: &[f64],
        sample: Vec<usize>,
        params: &TreeParams,
        rng: &mut R,
    ) -> Self {
        assert!(!sample.is_empty(), "cannot grow a tree on an empty sample");
        let mut grower = Grower {
            features,
            target,
            params,
            rng,
            nodes: Vec::new(),
            order: Vec::with_capacity(sample.len()),
        };
        grower.grow(sample, 0);
        RegressionTree {
            nodes: grower.nodes,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Node id of the leaf that row `row` of `features` falls into.
    pub fn leaf_of(&self, features: &DMatrix<f64>, row: usize) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[(row, feature)] <= threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn leaves_of(&self, features: &DMatrix<f64>, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.leaf_of(features, r)).collect()
    }

    pub fn predict_row(&self, features: &DMatrix<f64>, row: usize) -> f64 {
        match self.nodes[self.leaf_of(features, row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_of returns leaves"),
        }
    }
}

/// Groups reference rows by the leaf they fall into; indexed by node id.
pub(crate) fn leaf_groups(num_nodes: usize, reference_leaves: &[usize]) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); num_nodes];
    for (j, &leaf) in reference_leaves.iter().enumerate() {
        groups[leaf].push(j);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_function_is_recovered() {
        let n = 60;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..n).map(|i| if i < 30 { 1.0 } else { 5.0 }).collect();
        let params = TreeParams {
            min_node_size: 5,
            mtry: 1,
            max_depth: Some(1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = RegressionTree::fit(&x, &y, (0..n).collect(), &params, &mut rng);
        assert_eq!(tree.num_leaves(), 2);
        match tree.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 29.5),
            _ => panic!("root should split"),
        }
        assert_eq!(tree.predict_row(&x, 3), 1.0);
        assert_eq!(tree.predict_row(&x, 45), 5.0);
    }

    #[test]
    fn leaves_respect_min_node_size() {
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |i, j| ((i * (j + 3)) % 17) as f64 + i as f64 * 0.01);
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let params = TreeParams {
            min_node_size: 7,
            mtry: 2,
            max_depth: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = RegressionTree::fit(&x, &y, (0..n).collect(), &params, &mut rng);
        let leaves = tree.leaves_of(&x, &(0..n).collect::<Vec<_>>());
        let groups = leaf_groups(tree.nodes().len(), &leaves);
        assert!(groups.iter().filter(|g| !g.is_empty()).all(|g| g.len() >= 7));
        assert!(tree.num_leaves() > 5);
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let x = DMatrix::from_fn(30, 1, |i, _| i as f64);
        let y = vec![2.0; 30];
        let params = TreeParams {
            min_node_size: 1,
            mtry: 1,
            max_depth: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = RegressionTree::fit(&x, &y, (0..30).collect(), &params, &mut rng);
        assert_eq!(tree.nodes().len(), 1);
    }
}
