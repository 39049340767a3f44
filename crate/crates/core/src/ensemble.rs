//! Post-onset RUL regression: segment labels, a CART random forest, a
//! least-squares gradient-boosted tree machine, and their convex blend.
//!
//! Trees use exact greedy variance-reduction splits. Candidate thresholds are
//! midpoints between consecutive distinct sorted values; ties go to the lowest
//! feature index, then the lowest threshold. Rows with `x[f] <= threshold`
//! go left.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::derive_seed;
use crate::error::{Error, Result};

pub const BUNDLE_FORMAT: &str = "spikerul-ensemble";
pub const BUNDLE_VERSION: u32 = 1;

/// `RUL_seg(t) = (T_f - t) / (T_f - t_s)` for `t in t_s..=T_f`.
pub fn segment_labels(onset: u64, failure: u64) -> Result<Vec<f64>> {
    if onset >= failure {
        return Err(Error::EmptySegment { onset, failure });
    }
    let span = (failure - onset) as f64;
    Ok((onset..=failure)
        .map(|t| (failure - t) as f64 / span)
        .collect())
}

/// Row-major feature matrix with a named schema.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub schema: Vec<String>,
    data: Vec<f64>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn new(schema: Vec<String>) -> Self {
        Self {
            schema,
            data: Vec::new(),
            n_rows: 0,
        }
    }

    pub fn from_rows(schema: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = Self::new(schema);
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.schema.len() {
            return Err(Error::LengthMismatch(self.schema.len(), row.len()));
        }
        self.data.extend_from_slice(row);
        self.n_rows += 1;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.schema.len();
        &self.data[i * m..(i + 1) * m]
    }

    #[inline]
    fn get(&self, i: usize, f: usize) -> f64 {
        self.data[i * self.schema.len() + f]
    }

    pub fn column(&self, f: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, f)).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut m = Self::new(self.schema.clone());
        for &i in idx {
            m.data.extend_from_slice(self.row(i));
            m.n_rows += 1;
        }
        m
    }

    pub fn append(&mut self, other: &FeatureMatrix) -> Result<()> {
        if other.schema != self.schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema.clone(),
                found: other.schema.clone(),
            });
        }
        self.data.extend_from_slice(&other.data);
        self.n_rows += other.n_rows;
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteInput)
        }
    }
}

fn check_training(x: &FeatureMatrix, y: &[f64], min_leaf: usize) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::LengthMismatch(x.n_rows(), y.len()));
    }
    let needed = 2 * min_leaf.max(1);
    if y.len() < needed {
        return Err(Error::TooFewRows {
            needed,
            got: y.len(),
        });
    }
    x.check_finite()?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
        n_samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary regression tree stored as a flat node array (root at 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct TreeParams {
    max_depth: Option<usize>,
    min_leaf: usize,
    features_per_split: usize,
}

/// Order-independent mean: sums the values in sorted order.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    params: TreeParams,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl TreeBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let first = self.y[idx[0]];
        let value = if idx.iter().all(|&i| self.y[i] == first) {
            first
        } else {
            let mut v: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
            stable_mean(&mut v)
        };
        Node::Leaf {
            value,
            n_samples: idx.len(),
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let m = self.x.n_features();
        let k = self.params.features_per_split.clamp(1, m);
        if k == m {
            return (0..m).collect();
        }
        let mut f = sample(&mut self.rng, m, k).into_vec();
        f.sort_unstable();
        f
    }

    /// Best split of `idx` as (feature, threshold, gain); gain is the SSE
    /// reduction.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let min_leaf = self.params.min_leaf.max(1);
        let n = idx.len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in self.candidate_features() {
            order.sort_by(|&a, &b| {
                self.x
                    .get(a, f)
                    .total_cmp(&self.x.get(b, f))
                    .then_with(|| self.y[a].total_cmp(&self.y[b]))
            });
            let total: f64 = order.iter().map(|&i| self.y[i]).sum();
            let parent = total * total / n as f64;
            let mut left = 0.0;
            for pos in 0..n - 1 {
                left += self.y[order[pos]];
                let n_left = pos + 1;
                let (xa, xb) = (self.x.get(order[pos], f), self.x.get(order[pos + 1], f));
                if xa == xb || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let right = total - left;
                let gain = left * left / n_left as f64 + right * right / (n - n_left) as f64 - parent;
                let better = match best {
                    None => gain > 0.0,
                    Some((_, _, g)) => gain > g,
                };
                if better {
                    let mut thr = xa + (xb - xa) / 2.0;
                    if thr >= xb {
                        thr = xa;
                    }
                    best = Some((f, thr, gain));
                }
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let node_id = self.nodes.len();
        self.nodes.push(self.leaf(&idx));
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || idx.len() < 2 * self.params.min_leaf.max(1) {
            return node_id;
        }
        let Some((feature, threshold, _)) = self.best_split(&idx) else {
            return node_id;
        };
        let (li, ri): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.x.get(i, feature) <= threshold);
        let left = self.build(li, depth + 1);
        let right = self.build(ri, depth + 1);
        self.nodes[node_id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        node_id
    }
}

impl RegressionTree {
    fn fit(
        x: &FeatureMatrix,
        y: &[f64],
        rows: Vec<usize>,
        params: TreeParams,
        seed: u64,
    ) -> Self {
        let mut b = TreeBuilder {
            x,
            y,
            params,
            nodes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        b.build(rows, 0);
        Self { nodes: b.nodes }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { value, n_samples } => Some((value, n_samples)),
            _ => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means `ceil(m / 3)`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: Some(12),
            min_leaf: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub n_features: usize,
}

pub fn fit_forest(x: &FeatureMatrix, y: &[f64], cfg: &ForestConfig) -> Result<ForestModel> {
    check_training(x, y, cfg.min_leaf)?;
    if cfg.n_trees == 0 {
        return Err(Error::InvalidConfig("forest needs at least one tree".into()));
    }
    let m = x.n_features();
    let params = TreeParams {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf.max(1),
        features_per_split: cfg.features_per_split.unwrap_or(m.div_ceil(3)),
    };
    let n = y.len();
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let seed = derive_seed(cfg.seed, t as u64);
            let rows = if cfg.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xB007));
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            RegressionTree::fit(x, y, rows, params, seed)
        })
        .collect();
    Ok(ForestModel { trees, n_features: m })
}

impl ForestModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        s / self.trees.len() as f64
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// `None` considers every feature at every split.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            learning_rate: 0.05,
            max_depth: 3,
            min_leaf: 5,
            features_per_split: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub n_features: usize,
    /// Training MSE after each stage, starting with the constant model.
    pub train_loss: Vec<f64>,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64
}

pub fn fit_gbm(x: &FeatureMatrix, y: &[f64], cfg: &GbmConfig) -> Result<GbmModel> {
    check_training(x, y, cfg.min_leaf)?;
    if !(cfg.learning_rate > 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::InvalidConfig("GBM learning rate must be positive".into()));
    }
    let m = x.n_features();
    let params = TreeParams {
        max_depth: Some(cfg.max_depth),
        min_leaf: cfg.min_leaf.max(1),
        features_per_split: cfg.features_per_split.unwrap_or(m),
    };
    let base = stable_mean(&mut y.to_vec());
    let mut f = vec![base; y.len()];
    let mut train_loss = vec![mse(&f, y)];
    let mut trees = Vec::with_capacity(cfg.n_rounds);
    let rows: Vec<usize> = (0..y.len()).collect();
    for k in 0..cfg.n_rounds {
        let residual: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a - b).collect();
        let tree = RegressionTree::fit(x, &residual, rows.clone(), params, derive_seed(cfg.seed, k as u64));
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += cfg.learning_rate * tree.predict_row(x.row(i));
        }
        train_loss.push(mse(&f, y));
        trees.push(tree);
    }
    Ok(GbmModel {
        base,
        learning_rate: cfg.learning_rate,
        trees,
        n_features: m,
        train_loss,
    })
}

impl GbmModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base, |acc, t| acc + self.learning_rate * t.predict_row(row))
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    /// Predictions of `F_0, F_1, ..., F_K` for one row.
    pub fn staged_predict_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trees.len() + 1);
        let mut acc = self.base;
        out.push(acc);
        for t in &self.trees {
            acc += self.learning_rate * t.predict_row(row);
            out.push(acc);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendMethod {
    Grid,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendModel {
    pub method: BlendMethod,
    /// Forest weight; the boosted model gets `1 - alpha` (grid method).
    pub alpha: f64,
    /// Raw (forest, boosted) coefficients of the ridge method, unconstrained.
    pub ridge_coefficients: Option<[f64; 2]>,
    pub validation_mse: f64,
}

impl BlendModel {
    pub fn fixed(alpha: f64) -> Self {
        Self {
            method: BlendMethod::Grid,
            alpha,
            ridge_coefficients: None,
            validation_mse: f64::NAN,
        }
    }

    pub fn combine(&self, rf: f64, gbm: f64) -> f64 {
        match self.ridge_coefficients {
            Some([a, b]) if self.method == BlendMethod::Ridge => a * rf + b * gbm,
            _ => self.alpha * rf + (1.0 - self.alpha) * gbm,
        }
    }
}

pub const RIDGE_LAMBDA: f64 = 1e-3;

/// Fits the blend on validation predictions. `Grid` searches
/// `alpha in {0, 0.01, ..., 1}` (first minimum wins); `Ridge` solves a
/// two-coefficient ridge regression without intercept.
pub fn fit_blend(
    pred_rf: &[f64],
    pred_gbm: &[f64],
    y_val: &[f64],
    method: BlendMethod,
) -> Result<BlendModel> {
    if pred_rf.len() != y_val.len() {
        return Err(Error::LengthMismatch(pred_rf.len(), y_val.len()));
    }
    if pred_gbm.len() != y_val.len() {
        return Err(Error::LengthMismatch(pred_gbm.len(), y_val.len()));
    }
    if y_val.len() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: y_val.len(),
        });
    }
    let loss = |blend: &BlendModel| {
        pred_rf
            .iter()
            .zip(pred_gbm)
            .zip(y_val)
            .map(|((&r, &g), &y)| {
                let e = blend.combine(r, g) - y;
                e * e
            })
            .sum::<f64>()
            / y_val.len() as f64
    };
    match method {
        BlendMethod::Grid => {
            let mut best = BlendModel::fixed(0.0);
            best.validation_mse = loss(&best);
            for i in 1..=100 {
                let mut cand = BlendModel::fixed(i as f64 / 100.0);
                cand.validation_mse = loss(&cand);
                if cand.validation_mse < best.validation_mse {
                    best = cand;
                }
            }
            Ok(best)
        }
        BlendMethod::Ridge => {
            let (mut srr, mut sgg, mut srg, mut sry, mut sgy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ((&r, &g), &y) in pred_rf.iter().zip(pred_gbm).zip(y_val) {
                srr += r * r;
                sgg += g * g;
                srg += r * g;
                sry += r * y;
                sgy += g * y;
            }
            let (a11, a22) = (srr + RIDGE_LAMBDA, sgg + RIDGE_LAMBDA);
            let det = a11 * a22 - srg * srg;
            let a = (sry * a22 - srg * sgy) / det;
            let b = (a11 * sgy - srg * sry) / det;
            let mut blend = BlendModel {
                method: BlendMethod::Ridge,
                alpha: a / (a + b),
                ridge_coefficients: Some([a, b]),
                validation_mse: 0.0,
            };
            blend.validation_mse = loss(&blend);
            Ok(blend)
        }
    }
}

/// Ordinary least squares on a single feature (the linear ablation head).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub feature: usize,
    pub slope: f64,
    pub intercept: f64,
}

impl LinearHead {
    pub fn fit(x: &FeatureMatrix, y: &[f64], feature: usize) -> Result<Self> {
        if x.n_rows() != y.len() {
            return Err(Error::LengthMismatch(x.n_rows(), y.len()));
        }
        if y.len() < 2 {
            return Err(Error::TooFewRows { needed: 2, got: y.len() });
        }
        let xs = x.column(feature);
        let n = y.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (a, b) in xs.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Ok(Self {
            feature,
            slope,
            intercept: my - slope * mx,
        })
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .map(|i| self.intercept + self.slope * x.row(i)[self.feature])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub forest: ForestConfig,
    pub gbm: GbmConfig,
    pub blend: BlendMethod,
    /// Trailing fraction of each run's rows used to fit the blend.
    pub validation_fraction: f64,
    pub clip: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            forest: ForestConfig::default(),
            gbm: GbmConfig::default(),
            blend: BlendMethod::Grid,
            validation_fraction: 0.2,
            clip: true,
        }
    }
}

/// Forest, boosted trees and blend, plus the feature schema they expect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format: String,
    pub version: u32,
    pub schema: Vec<String>,
    pub forest: ForestModel,
    pub gbm: GbmModel,
    pub blend: BlendModel,
    pub clip: bool,
    /// Validation MSE of forest and boosted model alone, when fitted with a
    /// held-out tail.
    pub validation_mse_forest: f64,
    pub validation_mse_gbm: f64,
}

/// Per-run training block: features and labels in time order.
#[derive(Debug, Clone)]
pub struct RunRows {
    pub x: FeatureMatrix,
    pub y: Vec<f64>,
}

/// Fits the stacked model. The last `validation_fraction` of each run's rows
/// is held out to fit the blend; forest and boosted model are then refitted
/// on all rows.
pub fn fit_ensemble(runs: &[RunRows], cfg: &EnsembleConfig) -> Result<EnsembleModel> {
    let schema = runs
        .first()
        .map(|r| r.x.schema.clone())
        .ok_or(Error::TooFewRows { needed: 1, got: 0 })?;
    let mut fit_x = FeatureMatrix::new(schema.clone());
    let mut fit_y = Vec::new();
    let mut val_x = FeatureMatrix::new(schema.clone());
    let mut val_y = Vec::new();
    let mut all_x = FeatureMatrix::new(schema.clone());
    let mut all_y = Vec::new();
    for r in runs {
        let n = r.y.len();
        let n_val = (n as f64 * cfg.validation_fraction).round() as usize;
        let cut = n - n_val.min(n);
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..n).collect();
        fit_x.append(&r.x.select(&head))?;
        fit_y.extend_from_slice(&r.y[..cut]);
        val_x.append(&r.x.select(&tail))?;
        val_y.extend_from_slice(&r.y[cut..]);
        all_x.append(&r.x)?;
        all_y.extend_from_slice(&r.y);
    }
    let (blend, mse_rf, mse_gbm) = if val_y.len() >= 2 && fit_y.len() >= 2 * cfg.forest.min_leaf.max(cfg.gbm.min_leaf) {
        let rf = fit_forest(&fit_x, &fit_y, &cfg.forest)?;
        let gbm = fit_gbm(&fit_x, &fit_y, &cfg.gbm)?;
        let p_rf = rf.predict(&val_x);
        let p_gbm = gbm.predict(&val_x);
        let blend = fit_blend(&p_rf, &p_gbm, &val_y, cfg.blend)?;
        (blend, mse(&p_rf, &val_y), mse(&p_gbm, &val_y))
    } else {
        (BlendModel::fixed(0.5), f64::NAN, f64::NAN)
    };
    let forest = fit_forest(&all_x, &all_y, &cfg.forest)?;
    let gbm = fit_gbm(&all_x, &all_y, &cfg.gbm)?;
    Ok(EnsembleModel {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        schema,
        forest,
        gbm,
        blend,
        clip: cfg.clip,
        validation_mse_forest: mse_rf,
        validation_mse_gbm: mse_gbm,
    })
}

/// Which member of the stack produces a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Ensemble,
    Forest,
    Gbm,
}

impl EnsembleModel {
    fn check_schema(&self, x: &FeatureMatrix) -> Result<()> {
        if x.schema != self.schema {
            return Err(Error::SchemaMismatch {
                expected: self.schema.clone(),
                found: x.schema.clone(),
            });
        }
        Ok(())
    }

    fn finish(&self, v: f64) -> f64 {
        if self.clip {
            v.clamp(0.0, 1.0)
        } else {
            v
        }
    }

    /// `alpha * RF(x) + (1 - alpha) * GBM(x)`, clipped to [0, 1] when enabled.
    pub fn predict_rul(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.predict_head(x, Head::Ensemble)
    }

    pub fn predict_head(&self, x: &FeatureMatrix, head: Head) -> Result<Vec<f64>> {
        self.check_schema(x)?;
        Ok((0..x.n_rows())
            .map(|i| {
                let row = x.row(i);
                let v = match head {
                    Head::Ensemble => self
                        .blend
                        .combine(self.forest.predict_row(row), self.gbm.predict_row(row)),
                    Head::Forest => self.forest.predict_row(row),
                    Head::Gbm => self.gbm.predict_row(row),
                };
                self.finish(v)
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        if m.format != BUNDLE_FORMAT || m.version != BUNDLE_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model bundle {} v{}",
                m.format, m.version
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        let m = rows[0].len();
        FeatureMatrix::from_rows((0..m).map(|i| format!("f{i}")).collect(), rows).unwrap()
    }

    #[test]
    fn segment_label_endpoints() {
        let l = segment_labels(10, 20).unwrap();
        assert_eq!(l.len(), 11);
        assert_eq!(l[0], 1.0);
        assert_eq!(l[5], 0.5);
        assert_eq!(l[10], 0.0);
        assert!(l.windows(2).all(|w| w[1] < w[0]));
        assert!(matches!(segment_labels(5, 5), Err(Error::EmptySegment { .. })));
    }

    #[test]
    fn single_tree_memorizes() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 7 % 50) as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = (0..50).map(|i| ((i * 13) % 17) as f64 * 0.1).collect();
        let x = matrix(&rows);
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            max_depth: None,
            min_leaf: 1,
            features_per_split: Some(2),
            seed: 1,
        };
        let f = fit_forest(&x, &y, &cfg).unwrap();
        assert_eq!(f.predict(&x), y);
    }

    #[test]
    fn constant_target() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let x = matrix(&rows);
        let y = vec![0.3; 20];
        let f = fit_forest(&x, &y, &ForestConfig { n_trees: 5, ..ForestConfig::default() }).unwrap();
        assert!(f.predict(&x).iter().all(|&p| p == 0.3));
        let g = fit_gbm(&x, &y, &GbmConfig { n_rounds: 5, ..GbmConfig::default() }).unwrap();
        assert!(g.predict(&x).iter().all(|&p| (p - 0.3).abs() < 1e-15));
    }

    #[test]
    fn too_few_rows() {
        let x = matrix(&[vec![1.0], vec![2.0], vec![3.0]]);
        assert!(matches!(
            fit_forest(&x, &[1.0, 2.0, 3.0], &ForestConfig::default()),
            Err(Error::TooFewRows { .. })
        ));
        assert!(matches!(
            fit_gbm(&x, &[1.0, 2.0, 3.0], &GbmConfig::default()),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn leaves_respect_min_leaf() {
        let rows: Vec<Vec<f64>> = (0..80).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 + r[1]).collect();
        let cfg = ForestConfig { n_trees: 10, min_leaf: 4, ..ForestConfig::default() };
        let f = fit_forest(&matrix(&rows), &y, &cfg).unwrap();
        assert_eq!(f.trees.len(), 10);
        for t in &f.trees {
            assert!(t.leaves().all(|(_, n)| n >= 4));
            assert!(t.depth() <= 12);
        }
    }

    #[test]
    fn forest_is_mean_of_trees() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64, ((i * 31) % 7) as f64]).collect();
        let y: Vec<f64> = (0..60).map(|i| (i as f64 / 10.0).sin()).collect();
        let x = matrix(&rows);
        let f = fit_forest(&x, &y, &ForestConfig { n_trees: 7, ..ForestConfig::default() }).unwrap();
        for i in 0..x.n_rows() {
            let s: f64 = f.trees.iter().map(|t| t.predict_row(x.row(i))).sum();
            assert_eq!(f.predict_row(x.row(i)), s / 7.0);
        }
    }

    #[test]
    fn gbm_zero_rounds_is_mean() {
        let x = matrix(&(0..10).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let g = fit_gbm(&x, &y, &GbmConfig { n_rounds: 0, min_leaf: 1, ..GbmConfig::default() }).unwrap();
        assert!(g.predict(&x).iter().all(|&p| p == 4.5));
    }

    #[test]
    fn gbm_stumps_fit_step() {
        let x = matrix(&(0..40).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let y: Vec<f64> = (0..40).map(|i| if i < 17 { 0.0 } else { 1.0 }).collect();
        let cfg = GbmConfig { n_rounds: 200, max_depth: 1, min_leaf: 1, ..GbmConfig::default() };
        let g = fit_gbm(&x, &y, &cfg).unwrap();
        assert!(*g.train_loss.last().unwrap() < 1e-6);
        let staged = g.staged_predict_row(x.row(0));
        assert_eq!(staged.len(), 201);
        assert_eq!(*staged.last().unwrap(), g.predict_row(x.row(0)));
    }

    #[test]
    fn blend_corner_cases() {
        let y = [0.1, 0.5, 0.9, 0.3];
        let noisy = [0.3, 0.2, 0.6, 0.7];
        let b = fit_blend(&y, &noisy, &y, BlendMethod::Grid).unwrap();
        assert_eq!(b.alpha, 1.0);
        let b = fit_blend(&noisy, &y, &y, BlendMethod::Grid).unwrap();
        assert_eq!(b.alpha, 0.0);
        assert!(matches!(fit_blend(&y, &y[..3], &y, BlendMethod::Grid), Err(Error::LengthMismatch(..))));
        let r = fit_blend(&y, &noisy, &y, BlendMethod::Ridge).unwrap();
        let [a, c] = r.ridge_coefficients.unwrap();
        assert!((a - 1.0).abs() < 0.01 && c.abs() < 0.01);
    }

    #[test]
    fn predict_blend_and_clip() {
        let x = matrix(&(0..20).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let y: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let runs = [RunRows { x: x.clone(), y: y.clone() }];
        let cfg = EnsembleConfig {
            forest: ForestConfig { n_trees: 3, ..ForestConfig::default() },
            gbm: GbmConfig { n_rounds: 10, min_leaf: 2, ..GbmConfig::default() },
            ..EnsembleConfig::default()
        };
        let mut m = fit_ensemble(&runs, &cfg).unwrap();
        m.blend = BlendModel::fixed(1.0);
        assert_eq!(m.predict_rul(&x).unwrap(), m.predict_head(&x, Head::Forest).unwrap());
        assert_eq!(m.blend.combine(0.4, 0.6), 0.4);
        m.blend = BlendModel::fixed(0.5);
        assert!((m.blend.combine(0.4, 0.6) - 0.5).abs() < 1e-15);
        m.gbm.base = -0.02;
        m.gbm.trees.clear();
        m.blend = BlendModel::fixed(0.0);
        assert!(m.predict_rul(&x).unwrap().iter().all(|&p| p == 0.0));
        let bad = FeatureMatrix::from_rows(vec!["other".into()], &[vec![1.0]]).unwrap();
        assert!(matches!(m.predict_rul(&bad), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn bundle_round_trip_preserves_predictions() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 / 60.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (r[1] + 0.1 * r[0]).clamp(0.0, 1.0)).collect();
        let x = matrix(&rows);
        let cfg = EnsembleConfig {
            forest: ForestConfig { n_trees: 10, ..ForestConfig::default() },
            gbm: GbmConfig { n_rounds: 20, ..GbmConfig::default() },
            ..EnsembleConfig::default()
        };
        let m = fit_ensemble(&[RunRows { x: x.clone(), y }], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ens.json");
        m.save(&p).unwrap();
        let back = EnsembleModel::load(&p).unwrap();
        assert_eq!(back, m);
        let a = m.predict_rul(&x).unwrap();
        let b = back.predict_rul(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn linear_head_recovers_line() {
        let x = matrix(&(0..10).map(|i| vec![0.0, i as f64]).collect::<Vec<_>>());
        let y: Vec<f64> = (0..10).map(|i| 2.0 - 0.5 * i as f64).collect();
        let h = LinearHead::fit(&x, &y, 1).unwrap();
        assert!((h.slope + 0.5).abs() < 1e-12 && (h.intercept - 2.0).abs() < 1e-12);
    }
}
