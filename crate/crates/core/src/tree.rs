//! CART decision trees on dense rows.
//!
//! Regression trees split on Friedman's improvement score
//! `w_l * w_r / (w_l + w_r) * (mean_l - mean_r)^2`; classification trees split
//! on weighted Gini impurity decrease. Thresholds are midpoints between
//! adjacent distinct feature values and rows with `x <= threshold` go left.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
    ClassLeaf {
        proba: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

enum Target<'a> {
    Regression(&'a [f64]),
    Classes(&'a [usize], usize),
}

struct Builder<'a, R> {
    x: &'a [R],
    target: Target<'a>,
    weights: &'a [f64],
    params: &'a TreeParams,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
    n_features: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

impl<'a, R: AsRef<[f64]>> Builder<'a, R> {
    fn leaf(&self, idx: &[usize]) -> Node {
        match self.target {
            Target::Regression(y) => {
                let (mut sw, mut s) = (0.0, 0.0);
                for &i in idx {
                    sw += self.weights[i];
                    s += self.weights[i] * y[i];
                }
                Node::Leaf {
                    value: if sw > 0.0 { s / sw } else { 0.0 },
                }
            }
            Target::Classes(y, k) => {
                let mut proba = vec![0.0; k];
                for &i in idx {
                    proba[y[i]] += self.weights[i];
                }
                let total: f64 = proba.iter().sum();
                if total > 0.0 {
                    proba.iter_mut().for_each(|p| *p /= total);
                }
                Node::ClassLeaf { proba }
            }
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        match self.target {
            Target::Regression(y) => idx.iter().all(|&i| y[i] == y[idx[0]]),
            Target::Classes(y, _) => idx.iter().all(|&i| y[i] == y[idx[0]]),
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.n_features).collect();
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < self.n_features => {
                for i in 0..m {
                    let j = rng.random_range(i..all.len());
                    all.swap(i, j);
                }
                all.truncate(m);
                all.sort_unstable();
                all
            }
            _ => all,
        }
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<BestSplit> {
        let features = self.candidate_features();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[a].as_ref()[f].total_cmp(&self.x[b].as_ref()[f]).then(a.cmp(&b)));
            let n = order.len();
            match self.target {
                Target::Regression(y) => {
                    let (mut wt, mut st) = (0.0, 0.0);
                    for &i in &order {
                        wt += self.weights[i];
                        st += self.weights[i] * y[i];
                    }
                    let (mut wl, mut sl) = (0.0, 0.0);
                    for pos in 0..n - 1 {
                        let i = order[pos];
                        wl += self.weights[i];
                        sl += self.weights[i] * y[i];
                        let v = self.x[i].as_ref()[f];
                        let next = self.x[order[pos + 1]].as_ref()[f];
                        if v == next || pos + 1 < min_leaf || n - pos - 1 < min_leaf {
                            continue;
                        }
                        let wr = wt - wl;
                        if wl <= 0.0 || wr <= 0.0 {
                            continue;
                        }
                        let diff = sl / wl - (st - sl) / wr;
                        let gain = wl * wr / (wl + wr) * diff * diff;
                        if gain > best.as_ref().map_or(1e-15, |b| b.gain) {
                            best = Some(BestSplit {
                                feature: f,
                                threshold: v + (next - v) / 2.0,
                                gain,
                            });
                        }
                    }
                }
                Target::Classes(y, k) => {
                    let mut total = vec![0.0; k];
                    for &i in &order {
                        total[y[i]] += self.weights[i];
                    }
                    let wt: f64 = total.iter().sum();
                    let parent = wt * gini(&total, wt);
                    let mut left = vec![0.0; k];
                    let mut wl = 0.0;
                    for pos in 0..n - 1 {
                        let i = order[pos];
                        left[y[i]] += self.weights[i];
                        wl += self.weights[i];
                        let v = self.x[i].as_ref()[f];
                        let next = self.x[order[pos + 1]].as_ref()[f];
                        if v == next || pos + 1 < min_leaf || n - pos - 1 < min_leaf {
                            continue;
                        }
                        let wr = wt - wl;
                        if wl <= 0.0 || wr <= 0.0 {
                            continue;
                        }
                        let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                        let gain = parent - wl * gini(&left, wl) - wr * gini(&right, wr);
                        if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                            best = Some(BestSplit {
                                feature: f,
                                threshold: v + (next - v) / 2.0,
                                gain,
                            });
                        }
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let stop = idx.len() < self.params.min_samples_split.max(2)
            || self.params.max_depth.is_some_and(|d| depth >= d)
            || self.is_pure(&idx);
        let split = if stop { None } else { self.best_split(&idx) };
        match split {
            None => {
                self.nodes[id] = self.leaf(&idx);
            }
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| self.x[i].as_ref()[s.feature] <= s.threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

impl DecisionTree {
    /// Regression tree over the rows in `idx`; leaves hold weighted means.
    pub fn fit_regression<R: AsRef<[f64]>>(
        x: &[R],
        y: &[f64],
        weights: &[f64],
        idx: Vec<usize>,
        params: &TreeParams,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Self {
        Self::fit(x, Target::Regression(y), weights, idx, params, rng)
    }

    /// Classification tree over the rows in `idx`; leaves hold class proportions.
    pub fn fit_classifier<R: AsRef<[f64]>>(
        x: &[R],
        y: &[usize],
        n_classes: usize,
        weights: &[f64],
        idx: Vec<usize>,
        params: &TreeParams,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Self {
        Self::fit(x, Target::Classes(y, n_classes), weights, idx, params, rng)
    }

    fn fit<R: AsRef<[f64]>>(
        x: &[R],
        target: Target<'_>,
        weights: &[f64],
        idx: Vec<usize>,
        params: &TreeParams,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Self {
        let n_features = x.first().map_or(0, |r| r.as_ref().len());
        let mut b = Builder {
            x,
            target,
            weights,
            params,
            rng,
            nodes: Vec::new(),
            n_features,
        };
        if idx.is_empty() {
            b.nodes.push(b.leaf(&idx));
        } else {
            b.grow(idx, 0);
        }
        Self {
            nodes: b.nodes,
            n_features,
        }
    }

    /// Node id of the leaf a row falls into.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
                _ => return id,
            }
        }
    }

    pub fn predict_value(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_of(row)] {
            Node::Leaf { value } => *value,
            _ => 0.0,
        }
    }

    pub fn predict_proba(&self, row: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_of(row)] {
            Node::ClassLeaf { proba } => proba,
            _ => &[],
        }
    }

    pub fn set_leaf_value(&mut self, id: usize, v: f64) {
        if let Node::Leaf { value } = &mut self.nodes[id] {
            *value = v;
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                _ => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| !matches!(n, Node::Split { .. })).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_is_a_midpoint() {
        let x = vec![vec![1.0], vec![2.0], vec![4.0], vec![8.0]];
        let y = vec![0.0, 0.0, 10.0, 10.0];
        let t = DecisionTree::fit_regression(&x, &y, &[1.0; 4], (0..4).collect(), &TreeParams::default(), None);
        match &t.nodes[0] {
            Node::Split { threshold, feature, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 3.0);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(t.predict_value(&[2.5]), 0.0);
        assert_eq!(t.predict_value(&[3.5]), 10.0);
    }

    #[test]
    fn depth_limit_is_respected() {
        let x: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..64).map(|i| (i * i % 17) as f64).collect();
        let p = TreeParams {
            max_depth: Some(3),
            ..TreeParams::default()
        };
        let t = DecisionTree::fit_regression(&x, &y, &[1.0; 64], (0..64).collect(), &p, None);
        assert!(t.depth() <= 3);
        assert!(t.leaf_count() <= 8);
    }

    #[test]
    fn full_depth_classifier_memorizes() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 7 % 30) as f64, (i % 4) as f64]).collect();
        let y: Vec<usize> = (0..30).map(|i| (i * 13 % 3) as usize).collect();
        let t = DecisionTree::fit_classifier(&x, &y, 3, &[1.0; 30], (0..30).collect(), &TreeParams::default(), None);
        for (r, label) in x.iter().zip(&y) {
            let p = t.predict_proba(r);
            assert_eq!(p[*label], 1.0);
        }
    }

    #[test]
    fn every_row_reaches_one_leaf() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 5) as f64, (i / 5) as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let t = DecisionTree::fit_classifier(&x, &y, 2, &[1.0; 20], (0..20).collect(), &TreeParams::default(), None);
        for r in &x {
            assert!(!matches!(t.nodes[t.leaf_of(r)], Node::Split { .. }));
        }
    }

    #[test]
    fn zero_weight_rows_do_not_influence_leaves() {
        let x = vec![vec![0.0], vec![0.0], vec![0.0]];
        let y = vec![1, 1, 0];
        let t = DecisionTree::fit_classifier(&x, &y, 2, &[1.0, 1.0, 0.0], vec![0, 1, 2], &TreeParams::default(), None);
        assert_eq!(t.predict_proba(&[0.0]), &[0.0, 1.0]);
    }
}
