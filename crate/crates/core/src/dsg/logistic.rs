use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn score(w: &[f64], x: &[f64]) -> f64 {
    w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

/// Mean negative log-likelihood of a logistic model with an L2 penalty
/// pulling the non-intercept weights towards `center` (zero when unset).
pub struct LogisticProblem<'a> {
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [bool],
    pub l2: f64,
    pub center: Option<&'a [f64]>,
}

impl LogisticProblem<'_> {
    fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len()) + 1
    }

    fn anchor(&self, j: usize) -> f64 {
        self.center.map_or(0.0, |c| c[j])
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        let n = self.rows.len() as f64;
        let nll: f64 = self
            .rows
            .iter()
            .zip(self.labels)
            .map(|(x, &y)| {
                let z = score(w, x);
                softplus(z) - if y { z } else { 0.0 }
            })
            .sum();
        let pen: f64 = (1..w.len()).map(|j| (w[j] - self.anchor(j)).powi(2)).sum();
        nll / n + 0.5 * self.l2 * pen
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n = self.rows.len() as f64;
        let mut g = vec![0.0; w.len()];
        for (x, &y) in self.rows.iter().zip(self.labels) {
            let r = sigmoid(score(w, x)) - y as u8 as f64;
            g[0] += r;
            for (gj, xj) in g[1..].iter_mut().zip(x) {
                *gj += r * xj;
            }
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj /= n;
            if j > 0 {
                *gj += self.l2 * (w[j] - self.anchor(j));
            }
        }
        g
    }

    pub fn hessian(&self, w: &[f64]) -> DMatrix<f64> {
        let d = w.len();
        let n = self.rows.len() as f64;
        let mut h = DMatrix::zeros(d, d);
        let mut xi = vec![1.0; d];
        for x in self.rows {
            xi[1..].copy_from_slice(x);
            let p = sigmoid(score(w, x));
            let s = p * (1.0 - p) / n;
            for a in 0..d {
                for b in a..d {
                    h[(a, b)] += s * xi[a] * xi[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
            if a > 0 {
                h[(a, a)] += self.l2;
            }
        }
        h
    }

    /// Damped Newton iterations from `init` until the gradient's max norm
    /// is at most `tol`. Every accepted step lowers the loss.
    pub fn minimize(&self, init: &[f64], max_iter: usize, tol: f64) -> Vec<f64> {
        let mut w = init.to_vec();
        if w.len() != self.dim() {
            w = vec![0.0; self.dim()];
        }
        let mut f = self.loss(&w);
        for _ in 0..max_iter {
            let g = self.gradient(&w);
            if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= tol {
                break;
            }
            let mut h = self.hessian(&w);
            // a touch of ridge keeps the intercept solvable on one-class resamples
            for a in 0..h.nrows() {
                h[(a, a)] += 1e-10;
            }
            let gv = DVector::from_vec(g.clone());
            let step = match h.clone().cholesky() {
                Some(c) => c.solve(&gv),
                None => gv.clone(),
            };
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-12 {
                let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
                let fc = self.loss(&cand);
                if fc < f {
                    w = cand;
                    f = fc;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub bootstrap_rounds: usize,
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub folds: usize,
    /// Minimum gain in cross-validated F1 to keep adding features.
    pub epsilon: f64,
    pub cutoff_grid: Vec<f64>,
    pub winsor: f64,
    pub min_positive_samples: usize,
    /// Penalty pulling line and station weights towards their parent's.
    pub child_l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bootstrap_rounds: 25,
            l2: 1e-3,
            max_iter: 100,
            tol: 1e-8,
            seed: 0,
            folds: 10,
            epsilon: 1e-3,
            cutoff_grid: default_grid(),
            winsor: 0.99,
            min_positive_samples: 50,
            child_l2: 0.05,
        }
    }
}

/// 0.05, 0.10, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bootstrap_rounds == 0 || self.max_iter == 0 {
            return Err(invalid("bootstrap_rounds and max_iter must be positive"));
        }
        if !(self.l2 >= 0.0 && self.child_l2 >= 0.0 && self.tol > 0.0) {
            return Err(invalid("penalties must be non-negative and tol positive"));
        }
        if self.folds < 2 {
            return Err(invalid("folds must be at least 2"));
        }
        if self.cutoff_grid.is_empty() || self.cutoff_grid.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return Err(invalid("cutoff grid must be non-empty and inside (0, 1)"));
        }
        if !(self.winsor > 0.0 && self.winsor <= 1.0) {
            return Err(invalid("winsor percentile must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn split_classes(labels: &[bool]) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|&i| labels[i])
}

/// Bootstrapped logistic regression. Each round draws a class-balanced
/// resample (half positives, half negatives, with replacement) and fits by
/// Newton's method; the averaged weights get their intercept shifted by the
/// log prior odds so probabilities refer to the original class mix.
pub fn train_logistic(
    rows: &[Vec<f64>],
    labels: &[bool],
    cfg: &TrainConfig,
    center: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if rows.len() != labels.len() {
        return Err(invalid("rows and labels differ in length"));
    }
    let (pos, neg) = split_classes(labels);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    let dim = rows[0].len() + 1;
    let init: Vec<f64> = center.map_or(vec![0.0; dim], |c| c.to_vec());
    let half = rows.len().div_ceil(2);
    let fits: Vec<Vec<f64>> = (0..cfg.bootstrap_rounds)
        .into_par_iter()
        .map(|round| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let mut r = Vec::with_capacity(2 * half);
            let mut y = Vec::with_capacity(2 * half);
            for (class, idx) in [(true, &pos), (false, &neg)] {
                for _ in 0..half {
                    r.push(rows[idx[rng.random_range(0..idx.len())]].clone());
                    y.push(class);
                }
            }
            LogisticProblem {
                rows: &r,
                labels: &y,
                l2: cfg.l2,
                center,
            }
            .minimize(&init, cfg.max_iter, cfg.tol)
        })
        .collect();
    let mut w = vec![0.0; dim];
    for f in &fits {
        for (a, b) in w.iter_mut().zip(f) {
            *a += b / fits.len() as f64;
        }
    }
    w[0] += (pos.len() as f64 / neg.len() as f64).ln();
    Ok(w)
}

pub fn predict_proba(w: &[f64], x: &[f64]) -> f64 {
    sigmoid(score(w, x))
}

/// F1 of thresholding `probs` at `cutoff`; zero when nothing is predicted
/// positive or there are no positives.
pub fn f1_at(probs: &[f64], labels: &[bool], cutoff: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= cutoff, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// The grid cutoff with the best F1; ties go to the lowest cutoff.
pub fn grid_search_cutoff(probs: &[f64], labels: &[bool], grid: &[f64]) -> f64 {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, sorted.first().copied().unwrap_or(0.5));
    for c in sorted {
        let f = f1_at(probs, labels, c);
        if f > best.0 {
            best = (f, c);
        }
    }
    best.1
}

/// Stratified fold index per sample.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg) = split_classes(labels);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut out = vec![0; labels.len()];
    for (k, i) in pos.into_iter().chain(neg).enumerate() {
        out[i] = k % folds;
    }
    out
}

pub(crate) fn select_columns(rows: &[Vec<f64>], mask: &[bool]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(mask)
                .filter(|(_, m)| **m)
                .map(|(v, _)| *v)
                .collect()
        })
        .collect()
}

/// Out-of-fold probabilities. Folds whose training part lacks a class
/// predict that part's base rate.
pub fn cross_val_probs(
    rows: &[Vec<f64>],
    labels: &[bool],
    folds: usize,
    cfg: &TrainConfig,
    center: Option<&[f64]>,
) -> Vec<f64> {
    let assign = stratified_folds(labels, folds, cfg.seed);
    let mut out = vec![0.0; rows.len()];
    for f in 0..folds {
        let (train, test): (Vec<usize>, Vec<usize>) =
            (0..rows.len()).partition(|&i| assign[i] != f);
        if test.is_empty() {
            continue;
        }
        let tr: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let ty: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        match train_logistic(&tr, &ty, cfg, center) {
            Ok(w) => test
                .iter()
                .for_each(|&i| out[i] = predict_proba(&w, &rows[i])),
            Err(_) => {
                let rate = ty.iter().filter(|y| **y).count() as f64 / ty.len().max(1) as f64;
                test.iter().for_each(|&i| out[i] = rate);
            }
        }
    }
    out
}

/// Best grid F1 of out-of-fold probabilities for the features in `mask`.
pub fn cv_f1(rows: &[Vec<f64>], labels: &[bool], mask: &[bool], cfg: &TrainConfig) -> f64 {
    let probs = cross_val_probs(&select_columns(rows, mask), labels, cfg.folds, cfg, None);
    f1_at(
        &probs,
        labels,
        grid_search_cutoff(&probs, labels, &cfg.cutoff_grid),
    )
}

/// Greedy forward selection over `candidates` by cross-validated F1. A
/// feature is added only when it improves the best score by more than
/// `epsilon`.
pub fn forward_select(
    rows: &[Vec<f64>],
    labels: &[bool],
    candidates: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<bool>> {
    cfg.validate()?;
    let (pos, neg) = split_classes(labels);
    if pos.len() < cfg.folds || neg.len() < cfg.folds {
        return Err(invalid(
            "forward selection needs at least one sample of each class per fold",
        ));
    }
    let width = rows.first().map_or(0, |r| r.len());
    let mut mask = vec![false; width];
    let mut best = cv_f1(rows, labels, &mask, cfg);
    loop {
        let remaining: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&c| c < width && !mask[c])
            .collect();
        let scored: Vec<(usize, f64)> = remaining
            .par_iter()
            .map(|&c| {
                let mut m = mask.clone();
                m[c] = true;
                (c, cv_f1(rows, labels, &m, cfg))
            })
            .collect();
        let Some(&(c, f)) = scored
            .iter()
            .fold(None, |acc: Option<&(usize, f64)>, x| match acc {
                Some(a) if a.1 >= x.1 => Some(a),
                _ => Some(x),
            })
        else {
            break;
        };
        if f <= best + cfg.epsilon {
            break;
        }
        log::debug!("forward selection adds feature {c}: F1 {best:.4} -> {f:.4}");
        mask[c] = true;
        best = f;
    }
    Ok(mask)
}

fn quantile_f64(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// The `percentile` quantile of `values`, the cap used by [`winsorize`].
pub fn winsor_cap(values: &[f64], percentile: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(quantile_f64(&s, percentile))
}

/// Clips values above the `percentile` quantile to it.
pub fn winsorize(values: &[f64], percentile: f64) -> Result<Vec<f64>> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(invalid("percentile must lie in (0, 1)"));
    }
    let Some(cap) = winsor_cap(values, percentile) else {
        return Ok(Vec::new());
    };
    Ok(values.iter().map(|v| v.min(cap)).collect())
}

/// Per-feature upper caps followed by z-scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub cap: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Normalization {
    pub fn identity(width: usize) -> Self {
        Normalization {
            cap: vec![f64::MAX; width],
            mean: vec![0.0; width],
            sd: vec![1.0; width],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v.min(self.cap[j]) - self.mean[j]) / self.sd[j])
            .collect()
    }

    /// Inverse of the z-scoring (caps are not undone).
    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, v)| v * self.sd[j] + self.mean[j])
            .collect()
    }
}

/// Z-scores every column with its mean and population standard deviation.
/// Constant columns pass through unchanged (mean 0, sd 1 recorded).
pub fn normalize(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Normalization)> {
    if rows.len() < 2 {
        return Err(invalid("normalization needs at least two samples"));
    }
    let width = rows[0].len();
    let n = rows.len() as f64;
    let mut norm = Normalization::identity(width);
    for j in 0..width {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * mean.abs().max(1.0) {
            norm.mean[j] = mean;
            norm.sd[j] = sd;
        }
    }
    let out = rows.iter().map(|r| norm.apply(r)).collect();
    Ok((out, norm))
}

/// Winsorizes each column at `percentile` and then normalizes.
pub fn fit_preprocessing(
    rows: &[Vec<f64>],
    percentile: f64,
) -> Result<(Vec<Vec<f64>>, Normalization)> {
    let width = rows.first().map_or(0, |r| r.len());
    let caps: Vec<f64> = (0..width)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            if percentile >= 1.0 {
                f64::MAX
            } else {
                winsor_cap(&col, percentile).unwrap_or(f64::MAX)
            }
        })
        .collect();
    let clipped: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&caps).map(|(v, c)| v.min(*c)).collect())
        .collect();
    let (z, mut norm) = normalize(&clipped)?;
    norm.cap = caps;
    Ok((z, norm))
}
