//! Covariate equivalence check: cross-validated classifier AUC between the trial arm and a
//! (synthetic) control population.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Cell, ColumnKind, CovariateSchema, MixedDataset};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquivalenceError {
    #[error("AUC needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("scores and labels differ in length")]
    LengthMismatch,
    #[error("could not build folds with both classes in every training set after {0} attempts")]
    DegenerateFolds(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Mann–Whitney AUC with midranks for ties: P(s⁺ > s⁻) + ½ P(s⁺ = s⁻).
pub fn auc_mann_whitney<F: Real>(scores: &[F], labels: &[bool]) -> Result<F, EquivalenceError> {
    if scores.len() != labels.len() {
        return Err(EquivalenceError::LengthMismatch);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EquivalenceError::SingleClass { positives: pos, negatives: neg });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut rank_sum_pos = F::zero();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based midrank of the tie block i..=j
        let mid = F::from_usize_lossy(i + j + 2) / F::lit(2.0);
        for &r in &idx[i..=j] {
            if labels[r] {
                rank_sum_pos = rank_sum_pos + mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (F::from_usize_lossy(pos), F::from_usize_lossy(neg));
    Ok((rank_sum_pos - p * (p + F::one()) / F::lit(2.0)) / (p * n))
}

/// Classifier-only encoding: categoricals one-hot with an extra missing level, continuous
/// columns standardized with mean imputation and a missingness flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    columns: Vec<EncodedColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum EncodedColumn {
    Categorical { levels: u32 },
    Continuous { mean: f64, sd: f64 },
}

impl Encoder {
    pub fn fit(schema: &CovariateSchema, rows: &[&[Cell]]) -> Self {
        let columns = schema
            .columns()
            .iter()
            .enumerate()
            .map(|(j, c)| match c.kind {
                ColumnKind::Categorical { num_levels } => EncodedColumn::Categorical { levels: num_levels },
                ColumnKind::Continuous => {
                    let v: Vec<f64> = rows.iter().filter_map(|r| if let Cell::Value(x) = r[j] { Some(x) } else { None }).collect();
                    let mean = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
                    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt() } else { 1.0 };
                    EncodedColumn::Continuous { mean, sd: if sd > 0.0 { sd } else { 1.0 } }
                }
            })
            .collect();
        Self { columns }
    }

    pub fn dim(&self) -> usize {
        self.columns.iter().map(|c| match c {
            EncodedColumn::Categorical { levels } => *levels as usize + 1,
            EncodedColumn::Continuous { .. } => 2,
        }).sum()
    }

    pub fn encode(&self, row: &[Cell]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (c, cell) in self.columns.iter().zip(row) {
            match c {
                EncodedColumn::Categorical { levels } => {
                    let hot = match cell {
                        Cell::Level(l) => *l as usize,
                        _ => *levels as usize,
                    };
                    out.extend((0..=*levels as usize).map(|l| (l == hot) as u32 as f64));
                }
                EncodedColumn::Continuous { mean, sd } => match cell {
                    Cell::Value(v) => out.extend([(v - mean) / sd, 0.0]),
                    _ => out.extend([0.0, 1.0]),
                },
            }
        }
        out
    }
}

fn with_interactions(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            out.push(x[i] * x[j]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Logistic { lambda: f64, interactions: bool },
    ExtraTrees { n_trees: usize, min_leaf: usize, max_features: Option<usize> },
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Logistic { lambda: 1.0, interactions: false }
    }
}

impl ClassifierConfig {
    pub fn id(&self) -> String {
        match self {
            ClassifierConfig::Logistic { lambda, interactions } => format!("logistic(lambda={lambda}, interactions={interactions})"),
            ClassifierConfig::ExtraTrees { n_trees, min_leaf, .. } => format!("extra_trees(n_trees={n_trees}, min_leaf={min_leaf})"),
        }
    }
}

/// L2-penalized logistic regression (intercept unpenalized) fitted by damped Newton steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log1pexp(z: f64) -> f64 {
    if z > 35.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Solves the symmetric positive-definite system `a x = b` in place by Cholesky.
fn cholesky_solve(a: &mut [Vec<f64>], b: &mut [f64]) -> bool {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i][k] * b[k];
        }
        b[i] = s / a[i][i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k][i] * b[k];
        }
        b[i] = s / a[i][i];
    }
    true
}

impl Logistic {
    pub fn fit(x: &[Vec<f64>], y: &[bool], lambda: f64) -> Self {
        let p = x.first().map_or(0, Vec::len);
        let dim = p + 1;
        let mut beta = vec![0.0; dim];
        let objective = |b: &[f64]| -> f64 {
            let nll: f64 = x
                .iter()
                .zip(y)
                .map(|(r, &t)| {
                    let z = b[0] + r.iter().zip(&b[1..]).map(|(a, c)| a * c).sum::<f64>();
                    log1pexp(z) - if t { z } else { 0.0 }
                })
                .sum();
            nll + 0.5 * lambda * b[1..].iter().map(|v| v * v).sum::<f64>()
        };
        let mut obj = objective(&beta);
        for _ in 0..100 {
            let mut grad = vec![0.0; dim];
            let mut hess = vec![vec![0.0; dim]; dim];
            for (r, &t) in x.iter().zip(y) {
                let z = beta[0] + r.iter().zip(&beta[1..]).map(|(a, c)| a * c).sum::<f64>();
                let pr = sigmoid(z);
                let e = pr - if t { 1.0 } else { 0.0 };
                let w = (pr * (1.0 - pr)).max(1e-12);
                let xi = |i: usize| if i == 0 { 1.0 } else { r[i - 1] };
                for i in 0..dim {
                    let xv = xi(i);
                    grad[i] += e * xv;
                    if xv == 0.0 {
                        continue;
                    }
                    for j in 0..=i {
                        hess[i][j] += w * xv * xi(j);
                    }
                }
            }
            for i in 1..dim {
                grad[i] += lambda * beta[i];
                hess[i][i] += lambda;
            }
            hess[0][0] += 1e-10;
            for i in 0..dim {
                for j in i + 1..dim {
                    hess[i][j] = hess[j][i];
                }
            }
            let mut step = grad.clone();
            if !cholesky_solve(&mut hess, &mut step) {
                break;
            }
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
                let o = objective(&cand);
                if o <= obj {
                    let done = obj - o < 1e-10 * (1.0 + obj.abs());
                    beta = cand;
                    obj = o;
                    improved = !done;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Self { intercept: beta[0], coef: beta[1..].to_vec() }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + x.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Node::Leaf(p) => *p,
            Node::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Extremely randomized trees: random thresholds, best of `max_features` candidates by Gini.
#[derive(Debug, Clone)]
pub struct ExtraTrees {
    trees: Vec<Node>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p) * n as f64
}

fn grow<R: Rng + ?Sized>(x: &[Vec<f64>], y: &[bool], idx: &mut [usize], min_leaf: usize, max_features: usize, depth: usize, rng: &mut R) -> Node {
    let n = idx.len();
    let pos = idx.iter().filter(|&&i| y[i]).count();
    let leaf = Node::Leaf(pos as f64 / n as f64);
    if pos == 0 || pos == n || n < 2 * min_leaf || depth > 40 {
        return leaf;
    }
    let p = x[0].len();
    let mut features: Vec<usize> = (0..p).collect();
    features.shuffle(rng);
    let mut best: Option<(f64, usize, f64)> = None;
    for &f in features.iter().take(max_features) {
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(x[i][f]), b.max(x[i][f])));
        if !(hi > lo) {
            continue;
        }
        let thr = rng.random_range(lo..hi);
        let (mut nl, mut pl) = (0, 0);
        for &i in idx.iter() {
            if x[i][f] <= thr {
                nl += 1;
                pl += y[i] as usize;
            }
        }
        if nl < min_leaf || n - nl < min_leaf {
            continue;
        }
        let score = gini(pl, nl) + gini(pos - pl, n - nl);
        if best.is_none_or(|(s, _, _)| score < s) {
            best = Some((score, f, thr));
        }
    }
    let Some((_, feature, threshold)) = best else { return leaf };
    let mut split = 0;
    for k in 0..n {
        if x[idx[k]][feature] <= threshold {
            idx.swap(k, split);
            split += 1;
        }
    }
    let (l, r) = idx.split_at_mut(split);
    let left = Box::new(grow(x, y, l, min_leaf, max_features, depth + 1, rng));
    let right = Box::new(grow(x, y, r, min_leaf, max_features, depth + 1, rng));
    Node::Split { feature, threshold, left, right }
}

impl ExtraTrees {
    pub fn fit<R: Rng + ?Sized>(x: &[Vec<f64>], y: &[bool], n_trees: usize, min_leaf: usize, max_features: Option<usize>, rng: &mut R) -> Self {
        let p = x.first().map_or(1, Vec::len).max(1);
        let mf = max_features.unwrap_or(((p as f64).sqrt().round() as usize).max(1)).min(p);
        let trees = (0..n_trees)
            .map(|_| {
                let mut idx: Vec<usize> = (0..x.len()).collect();
                grow(x, y, &mut idx, min_leaf.max(1), mf, 0, rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EquivalenceConfig {
    pub classifier: ClassifierConfig,
    pub folds: usize,
    pub threshold: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self { classifier: ClassifierConfig::default(), folds: 5, threshold: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDetail {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub auc: f64,
    pub folds: Vec<FoldDetail>,
    pub threshold: f64,
    pub pass: bool,
    pub classifier: String,
    pub attempts: usize,
    /// Out-of-fold score per record, trial arm first.
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

fn stratified_folds<R: Rng + ?Sized>(labels: &[bool], k: usize, rng: &mut R) -> Vec<usize> {
    let mut fold = vec![0; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    fold
}

fn train_and_score(cfg: &ClassifierConfig, xtr: &[Vec<f64>], ytr: &[bool], xte: &[Vec<f64>], seed: u64) -> Vec<f64> {
    match cfg {
        ClassifierConfig::Logistic { lambda, interactions } => {
            let tf = |x: &[Vec<f64>]| -> Vec<Vec<f64>> { if *interactions { x.iter().map(|r| with_interactions(r)).collect() } else { x.to_vec() } };
            let m = Logistic::fit(&tf(xtr), ytr, *lambda);
            tf(xte).iter().map(|r| m.predict(r)).collect()
        }
        ClassifierConfig::ExtraTrees { n_trees, min_leaf, max_features } => {
            let mut rng = rng_from_seed(seed);
            let m = ExtraTrees::fit(xtr, ytr, *n_trees, *min_leaf, *max_features, &mut rng);
            xte.iter().map(|r| m.predict(r)).collect()
        }
    }
}

/// Stratified k-fold out-of-fold AUC of a classifier separating `treatment` (positive) from `control`.
pub fn cv_classifier_auc(treatment: &MixedDataset, control: &MixedDataset, cfg: &EquivalenceConfig, seed: u64) -> Result<EquivalenceReport, EquivalenceError> {
    if cfg.folds < 2 {
        return Err(EquivalenceError::Config(format!("need at least 2 folds, got {}", cfg.folds)));
    }
    if let Some(c) = treatment.schema.first_difference(&control.schema) {
        return Err(EquivalenceError::Config(format!("schemas differ at column {c}")));
    }
    let rows: Vec<&[Cell]> = treatment.rows.iter().chain(&control.rows).map(|r| r.as_slice()).collect();
    let labels: Vec<bool> = (0..rows.len()).map(|i| i < treatment.len()).collect();
    let (pos, neg) = (treatment.len(), control.len());
    if pos == 0 || neg == 0 {
        return Err(EquivalenceError::SingleClass { positives: pos, negatives: neg });
    }
    let enc = Encoder::fit(&treatment.schema, &rows);
    let x: Vec<Vec<f64>> = rows.iter().map(|r| enc.encode(r)).collect();
    const MAX_ATTEMPTS: usize = 5;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_from_seed(derive_seed(seed, "folds", attempt as u64));
        let fold = stratified_folds(&labels, cfg.folds, &mut rng);
        let degenerate = (0..cfg.folds).any(|f| {
            let tr: Vec<bool> = (0..labels.len()).filter(|&i| fold[i] != f).map(|i| labels[i]).collect();
            !(tr.contains(&true) && tr.contains(&false))
        });
        if degenerate {
            continue;
        }
        let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..cfg.folds)
            .into_par_iter()
            .map(|f| {
                let (tr, te): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| fold[i] != f);
                let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
                let ytr: Vec<bool> = tr.iter().map(|&i| labels[i]).collect();
                let xte: Vec<Vec<f64>> = te.iter().map(|&i| x[i].clone()).collect();
                let s = train_and_score(&cfg.classifier, &xtr, &ytr, &xte, derive_seed(seed, "fold", f as u64));
                (te, s)
            })
            .collect();
        let mut scores = vec![0.0; labels.len()];
        let mut folds = Vec::with_capacity(cfg.folds);
        for (f, (te, s)) in per_fold.iter().enumerate() {
            for (&i, &v) in te.iter().zip(s) {
                scores[i] = v;
            }
            let tl: Vec<bool> = te.iter().map(|&i| labels[i]).collect();
            folds.push(FoldDetail { fold: f, n_train: labels.len() - te.len(), n_test: te.len(), auc: auc_mann_whitney(s, &tl).ok() });
        }
        let auc = auc_mann_whitney(&scores, &labels)?;
        return Ok(EquivalenceReport {
            auc,
            folds,
            threshold: cfg.threshold,
            pass: auc < cfg.threshold,
            classifier: cfg.classifier.id(),
            attempts: attempt + 1,
            scores,
            labels,
        });
    }
    Err(EquivalenceError::DegenerateFolds(MAX_ATTEMPTS))
}
