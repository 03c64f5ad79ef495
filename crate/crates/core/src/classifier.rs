//! Flow-type classifiers: gradient-boosted trees plus four baselines
//! (L1 logistic regression, random forest, SAMME AdaBoost, and an MLP).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::STAT_DIM;
use crate::nn::{Mlp, OutputKind, TrainConfig};
use crate::tree::{DecisionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    Gbt,
    Lr,
    Rf,
    Adaboost,
    Nn,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 5] = [
        ClassifierKind::Gbt,
        ClassifierKind::Lr,
        ClassifierKind::Rf,
        ClassifierKind::Adaboost,
        ClassifierKind::Nn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Gbt => "gbt",
            ClassifierKind::Lr => "lr",
            ClassifierKind::Rf => "rf",
            ClassifierKind::Adaboost => "adaboost",
            ClassifierKind::Nn => "nn",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtConfig {
    pub stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            stages: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_samples_leaf: 1,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    /// Weight of the L1 penalty on the mean cross-entropy.
    pub l1: f64,
    pub step: f64,
    pub iterations: usize,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            l1: 1e-3,
            step: 0.5,
            iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub trees: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            trees: 10,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            max_depth: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaBoostConfig {
    pub estimators: usize,
    pub learning_rate: f64,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        Self {
            estimators: 100,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 16],
            train: TrainConfig {
                epochs: 200,
                batch_size: 32,
                learning_rate: 0.05,
                seed: 7,
                early_stop_patience: 20,
                tolerance: 1e-5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub gbt: GbtConfig,
    pub lr: LrConfig,
    pub rf: RfConfig,
    pub adaboost: AdaBoostConfig,
    pub nn: NnConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub n_classes: usize,
    #[serde(with = "crate::persist::block")]
    pub init_scores: Vec<f64>,
    pub learning_rate: f64,
    /// One tree per class per stage.
    pub stages: Vec<Vec<DecisionTree>>,
    /// Mean training deviance before boosting and after every stage.
    #[serde(with = "crate::persist::block")]
    pub train_deviance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Row-major `classes × features`.
    #[serde(with = "crate::persist::matrix")]
    pub weights: Vec<Vec<f64>>,
    #[serde(with = "crate::persist::block")]
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_classes: usize,
    pub trees: Vec<DecisionTree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub n_classes: usize,
    pub stumps: Vec<DecisionTree>,
    #[serde(with = "crate::persist::block")]
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Gbt(GbtModel),
    Lr(LogisticModel),
    Rf(ForestModel),
    Adaboost(AdaBoostModel),
    Nn { net: Mlp },
}

/// Classifier input: the presence vector followed by the standardized flow
/// statistics.
pub fn build_input(x_se: &[f64], x_ff: &[f64], k: usize) -> Result<Vec<f64>> {
    if x_se.len() != k + 1 {
        return Err(Error::DimensionMismatch {
            expected: k + 1,
            got: x_se.len(),
        });
    }
    if x_ff.len() != STAT_DIM {
        return Err(Error::DimensionMismatch {
            expected: STAT_DIM,
            got: x_ff.len(),
        });
    }
    Ok(x_se.iter().chain(x_ff).copied().collect())
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_training<R: AsRef<[f64]>>(x: &[R], y: &[usize], n_classes: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::EmptyInput("no training rows"));
    }
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let dim = x[0].as_ref().len();
    for r in x {
        if r.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.as_ref().len(),
            });
        }
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            bound: n_classes,
        });
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(Error::SingleClass);
    }
    Ok(dim)
}

fn mean_deviance(scores: &[Vec<f64>], y: &[usize]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(s, &c)| -softmax(s)[c].max(1e-300).ln())
        .sum::<f64>()
        / y.len() as f64
}

/// Stage-wise multinomial-deviance boosting with Newton leaf values.
pub fn train_gbt<R: AsRef<[f64]>>(x: &[R], y: &[usize], n_classes: usize, cfg: &GbtConfig) -> Result<GbtModel> {
    check_training(x, y, n_classes)?;
    if cfg.stages == 0 || !(cfg.learning_rate > 0.0) || cfg.max_depth == 0 {
        return Err(Error::InvalidParams(format!("boosting config {cfg:?}")));
    }
    let n = x.len();
    let k = n_classes;
    let mut prior = vec![0.0f64; k];
    for &c in y {
        prior[c] += 1.0;
    }
    // classes absent from training get a tiny prior instead of -inf
    let init_scores: Vec<f64> = prior.iter().map(|c| (f64::max(*c, 1e-3) / n as f64).ln()).collect();
    let mut scores = vec![init_scores.clone(); n];
    let mut deviance = vec![mean_deviance(&scores, y)];
    let params = TreeParams {
        max_depth: Some(cfg.max_depth),
        min_samples_leaf: cfg.min_samples_leaf,
        ..TreeParams::default()
    };
    let weights = vec![1.0; n];
    let mut stages = Vec::with_capacity(cfg.stages);
    let newton_scale = (k as f64 - 1.0) / k as f64;
    for _ in 0..cfg.stages {
        let proba: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let mut stage = Vec::with_capacity(k);
        let mut updates = vec![vec![0.0; k]; n];
        for class in 0..k {
            let residual: Vec<f64> = (0..n)
                .map(|i| f64::from(u8::from(y[i] == class)) - proba[i][class])
                .collect();
            let mut tree = DecisionTree::fit_regression(x, &residual, &weights, (0..n).collect(), &params, None);
            let leaves: Vec<usize> = x.iter().map(|r| tree.leaf_of(r.as_ref())).collect();
            let mut num = vec![0.0; tree.nodes.len()];
            let mut den = vec![0.0; tree.nodes.len()];
            for (i, &leaf) in leaves.iter().enumerate() {
                let r = residual[i];
                num[leaf] += r;
                den[leaf] += r.abs() * (1.0 - r.abs());
            }
            for leaf in 0..tree.nodes.len() {
                let v = if den[leaf] < 1e-150 { 0.0 } else { newton_scale * num[leaf] / den[leaf] };
                tree.set_leaf_value(leaf, v);
            }
            for (i, &leaf) in leaves.iter().enumerate() {
                updates[i][class] = cfg.learning_rate * tree.predict_value(x[i].as_ref());
                debug_assert_eq!(tree.leaf_of(x[i].as_ref()), leaf);
            }
            stage.push(tree);
        }
        for (s, u) in scores.iter_mut().zip(&updates) {
            for (a, b) in s.iter_mut().zip(u) {
                *a += b;
            }
        }
        deviance.push(mean_deviance(&scores, y));
        stages.push(stage);
    }
    Ok(GbtModel {
        n_classes: k,
        init_scores,
        learning_rate: cfg.learning_rate,
        stages,
        train_deviance: deviance,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Multinomial logistic regression, L1 penalty, proximal gradient descent.
pub fn train_logistic<R: AsRef<[f64]>>(x: &[R], y: &[usize], n_classes: usize, cfg: &LrConfig) -> Result<LogisticModel> {
    let d = check_training(x, y, n_classes)?;
    if !(cfg.step > 0.0) || cfg.l1 < 0.0 {
        return Err(Error::InvalidParams(format!("logistic config {cfg:?}")));
    }
    let n = x.len() as f64;
    let mut w = vec![vec![0.0; d]; n_classes];
    let mut b = vec![0.0; n_classes];
    for _ in 0..cfg.iterations {
        let mut gw = vec![vec![0.0; d]; n_classes];
        let mut gb = vec![0.0; n_classes];
        for (row, &c) in x.iter().zip(y) {
            let row = row.as_ref();
            let scores: Vec<f64> = w
                .iter()
                .zip(&b)
                .map(|(wk, bk)| wk.iter().zip(row).map(|(a, v)| a * v).sum::<f64>() + bk)
                .collect();
            let p = softmax(&scores);
            for k in 0..n_classes {
                let g = (p[k] - f64::from(u8::from(k == c))) / n;
                gb[k] += g;
                for (gwk, v) in gw[k].iter_mut().zip(row) {
                    *gwk += g * v;
                }
            }
        }
        for k in 0..n_classes {
            b[k] -= cfg.step * gb[k];
            for (wv, g) in w[k].iter_mut().zip(&gw[k]) {
                *wv = soft_threshold(*wv - cfg.step * g, cfg.step * cfg.l1);
            }
        }
    }
    if w.iter().flatten().chain(&b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic regression weights diverged".into()));
    }
    Ok(LogisticModel { weights: w, bias: b })
}

/// Bagged Gini trees with per-split feature subsampling.
pub fn train_forest<R: AsRef<[f64]>>(x: &[R], y: &[usize], n_classes: usize, cfg: &RfConfig) -> Result<ForestModel> {
    let d = check_training(x, y, n_classes)?;
    if cfg.trees == 0 {
        return Err(Error::InvalidParams("forest needs at least one tree".into()));
    }
    let n = x.len();
    let params = TreeParams {
        max_depth: cfg.max_depth,
        max_features: match cfg.max_features {
            MaxFeatures::Sqrt => Some(((d as f64).sqrt().floor() as usize).max(1)),
            MaxFeatures::All => None,
        },
        ..TreeParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trees = Vec::with_capacity(cfg.trees);
    for _ in 0..cfg.trees {
        let mut weights = vec![0.0; n];
        if cfg.bootstrap {
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1.0;
            }
        } else {
            weights.fill(1.0);
        }
        let idx: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
        trees.push(DecisionTree::fit_classifier(x, y, n_classes, &weights, idx, &params, Some(&mut rng)));
    }
    Ok(ForestModel { n_classes, trees })
}

/// SAMME boosting of depth-1 Gini trees.
pub fn train_adaboost<R: AsRef<[f64]>>(
    x: &[R],
    y: &[usize],
    n_classes: usize,
    cfg: &AdaBoostConfig,
) -> Result<AdaBoostModel> {
    check_training(x, y, n_classes)?;
    if cfg.estimators == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidParams(format!("adaboost config {cfg:?}")));
    }
    let n = x.len();
    let k = n_classes as f64;
    let params = TreeParams {
        max_depth: Some(1),
        ..TreeParams::default()
    };
    let mut w = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();
    let mut alphas = Vec::new();
    for _ in 0..cfg.estimators {
        let stump = DecisionTree::fit_classifier(x, y, n_classes, &w, (0..n).collect(), &params, None);
        let miss: Vec<bool> = x
            .iter()
            .zip(y)
            .map(|(r, &c)| argmax(stump.predict_proba(r.as_ref())) != c)
            .collect();
        let total: f64 = w.iter().sum();
        let err = miss.iter().zip(&w).filter(|(m, _)| **m).map(|(_, wi)| wi).sum::<f64>() / total;
        if err <= 0.0 {
            // a perfect learner ends boosting
            stumps.push(stump);
            alphas.push(1.0);
            break;
        }
        if err >= 1.0 - 1.0 / k {
            if stumps.is_empty() {
                stumps.push(stump);
                alphas.push(1.0);
            }
            break;
        }
        let alpha = cfg.learning_rate * (((1.0 - err) / err).ln() + (k - 1.0).ln());
        for (wi, m) in w.iter_mut().zip(&miss) {
            if *m {
                *wi *= alpha.exp();
            }
        }
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|wi| *wi /= z);
        stumps.push(stump);
        alphas.push(alpha);
    }
    Ok(AdaBoostModel {
        n_classes,
        stumps,
        alphas,
    })
}

pub fn train_mlp<R: AsRef<[f64]>>(x: &[R], y: &[usize], n_classes: usize, cfg: &NnConfig) -> Result<Mlp> {
    let d = check_training(x, y, n_classes)?;
    let mut sizes = vec![d];
    sizes.extend(&cfg.hidden);
    sizes.push(n_classes);
    let mut net = Mlp::new(&sizes, OutputKind::Softmax, cfg.train.seed)?;
    let targets: Vec<Vec<f64>> = y
        .iter()
        .map(|&c| (0..n_classes).map(|k| f64::from(u8::from(k == c))).collect())
        .collect();
    let mut train_cfg = cfg.train.clone();
    train_cfg.batch_size = train_cfg.batch_size.min(x.len());
    net.train(x, &targets, &train_cfg)?;
    Ok(net)
}

/// Trains the chosen model family.
pub fn train<R: AsRef<[f64]>>(
    kind: ClassifierKind,
    x: &[R],
    y: &[usize],
    n_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<Classifier> {
    Ok(match kind {
        ClassifierKind::Gbt => Classifier::Gbt(train_gbt(x, y, n_classes, &cfg.gbt)?),
        ClassifierKind::Lr => Classifier::Lr(train_logistic(x, y, n_classes, &cfg.lr)?),
        ClassifierKind::Rf => Classifier::Rf(train_forest(x, y, n_classes, &cfg.rf)?),
        ClassifierKind::Adaboost => Classifier::Adaboost(train_adaboost(x, y, n_classes, &cfg.adaboost)?),
        ClassifierKind::Nn => Classifier::Nn {
            net: train_mlp(x, y, n_classes, &cfg.nn)?,
        },
    })
}

impl GbtModel {
    pub fn decision(&self, row: &[f64]) -> Vec<f64> {
        let mut s = self.init_scores.clone();
        for stage in &self.stages {
            for (c, tree) in stage.iter().enumerate() {
                s[c] += self.learning_rate * tree.predict_value(row);
            }
        }
        s
    }
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Gbt(_) => ClassifierKind::Gbt,
            Classifier::Lr(_) => ClassifierKind::Lr,
            Classifier::Rf(_) => ClassifierKind::Rf,
            Classifier::Adaboost(_) => ClassifierKind::Adaboost,
            Classifier::Nn { .. } => ClassifierKind::Nn,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Classifier::Gbt(m) => m.stages.first().map_or(0, |s| s[0].n_features),
            Classifier::Lr(m) => m.weights.first().map_or(0, Vec::len),
            Classifier::Rf(m) => m.trees[0].n_features,
            Classifier::Adaboost(m) => m.stumps[0].n_features,
            Classifier::Nn { net } => net.input_dim(),
        }
    }

    /// Class probabilities for one row.
    pub fn predict_proba(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: row.len(),
            });
        }
        Ok(match self {
            Classifier::Gbt(m) => softmax(&m.decision(row)),
            Classifier::Lr(m) => softmax(
                &m.weights
                    .iter()
                    .zip(&m.bias)
                    .map(|(w, b)| w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>() + b)
                    .collect::<Vec<_>>(),
            ),
            Classifier::Rf(m) => {
                let mut p = vec![0.0; m.n_classes];
                for t in &m.trees {
                    for (a, b) in p.iter_mut().zip(t.predict_proba(row)) {
                        *a += b;
                    }
                }
                p.iter_mut().for_each(|v| *v /= m.trees.len() as f64);
                p
            }
            Classifier::Adaboost(m) => {
                let mut votes = vec![0.0; m.n_classes];
                for (s, a) in m.stumps.iter().zip(&m.alphas) {
                    votes[argmax(s.predict_proba(row))] += a;
                }
                let total: f64 = votes.iter().sum();
                votes.iter_mut().for_each(|v| *v /= total);
                votes
            }
            Classifier::Nn { net } => net.predict(row)?,
        })
    }

    /// Predicted class indices and probability rows.
    pub fn predict<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let probas: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|r| self.predict_proba(r.as_ref()))
            .collect::<Result<_>>()?;
        Ok((probas.iter().map(|p| argmax(p)).collect(), probas))
    }
}
