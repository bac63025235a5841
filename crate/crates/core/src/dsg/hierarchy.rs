use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{DsgFeatures, FEATURE_COUNT, FEATURE_NAMES};
use super::logistic::{
    cross_val_probs, f1_at, fit_preprocessing, forward_select, grid_search_cutoff, predict_proba,
    select_columns, train_logistic, Normalization, TrainConfig,
};
use crate::error::{invalid, Error, Result};
use crate::trace::StationId;

/// A logistic DSG classifier over raw features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DsgModel {
    /// Intercept first, then one weight per active feature.
    pub weights: Vec<f64>,
    pub cutoff: f64,
    pub feature_mask: Vec<bool>,
    pub normalization: Normalization,
}

impl DsgModel {
    /// A model over all features with no preprocessing.
    pub fn from_weights(weights: Vec<f64>, cutoff: f64) -> Result<Self> {
        if weights.len() != FEATURE_COUNT + 1 {
            return Err(invalid(format!("expected {} weights", FEATURE_COUNT + 1)));
        }
        let m = DsgModel {
            weights,
            cutoff,
            feature_mask: vec![true; FEATURE_COUNT],
            normalization: Normalization::identity(FEATURE_COUNT),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let active = self.feature_mask.iter().filter(|m| **m).count();
        if self.weights.len() != active + 1 {
            return Err(invalid("weight count does not match the feature mask"));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(invalid("cutoff must lie in (0, 1)"));
        }
        if self.normalization.mean.len() != self.feature_mask.len() {
            return Err(invalid(
                "normalization width does not match the feature mask",
            ));
        }
        Ok(())
    }

    pub fn active_features(&self) -> Vec<&'static str> {
        FEATURE_NAMES
            .iter()
            .zip(&self.feature_mask)
            .filter(|(_, m)| **m)
            .map(|(n, _)| *n)
            .collect()
    }

    /// Normalized, masked input vector.
    pub fn inputs(&self, f: &DsgFeatures) -> Vec<f64> {
        let z = self.normalization.apply(&f.to_array());
        z.into_iter()
            .zip(&self.feature_mask)
            .filter(|(_, m)| **m)
            .map(|(v, _)| v)
            .collect()
    }

    pub fn probability(&self, f: &DsgFeatures) -> f64 {
        predict_proba(&self.weights, &self.inputs(f))
    }
}

/// Where a sample was taken.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub line: String,
    pub station: StationId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub key: SampleKey,
    pub features: DsgFeatures,
    pub dsg: bool,
    /// Impacted commuters missed two or more trains on average.
    pub severe: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationModel {
    pub line: String,
    pub station: StationId,
    pub model: DsgModel,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub samples: usize,
    pub positives: usize,
    pub seed: u64,
    pub bootstrap_rounds: usize,
    pub folds: usize,
    pub selected_features: Vec<String>,
}

/// Network, line and station models sharing one preprocessing and feature
/// mask. Each child is fitted with its weights shrunk towards its parent's
/// and kept only where it out-validates the parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHierarchy {
    pub network: DsgModel,
    pub lines: BTreeMap<String, DsgModel>,
    pub stations: Vec<StationModel>,
    /// Separates DSG-1 from DSG-2+ among flagged departures.
    pub severity: Option<DsgModel>,
    pub min_positive_samples: usize,
    pub metadata: TrainingMetadata,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    None,
    Dsg1,
    Dsg2Plus,
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Severity::None => "none",
            Severity::Dsg1 => "DSG-1",
            Severity::Dsg2Plus => "DSG-2+",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelLevel {
    Network,
    Line,
    Station,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub dsg: bool,
    pub severity: Severity,
    pub level: ModelLevel,
    /// The station has no model of its own.
    pub fallback: bool,
}

impl ModelHierarchy {
    pub fn network_only(network: DsgModel) -> Self {
        ModelHierarchy {
            network,
            lines: BTreeMap::new(),
            stations: Vec::new(),
            severity: None,
            min_positive_samples: usize::MAX,
            metadata: TrainingMetadata::default(),
        }
    }

    pub fn station_model(&self, key: &SampleKey) -> Option<&DsgModel> {
        self.stations
            .iter()
            .find(|s| s.line == key.line && s.station == key.station)
            .map(|s| &s.model)
    }

    /// The most specific model for `key` and its level.
    pub fn model_for(&self, key: &SampleKey) -> (&DsgModel, ModelLevel) {
        if let Some(m) = self.station_model(key) {
            (m, ModelLevel::Station)
        } else if let Some(m) = self.lines.get(&key.line) {
            (m, ModelLevel::Line)
        } else {
            (&self.network, ModelLevel::Network)
        }
    }

    pub fn predict(&self, features: &DsgFeatures, key: &SampleKey) -> Prediction {
        let (model, level) = self.model_for(key);
        score_with(model, self.severity.as_ref(), features, level)
    }

    /// Scores with one level of the hierarchy only, falling back upwards
    /// when that level has no model for `key`.
    pub fn predict_at(
        &self,
        features: &DsgFeatures,
        key: &SampleKey,
        level: ModelLevel,
    ) -> Prediction {
        let (model, used) = match level {
            ModelLevel::Network => (&self.network, ModelLevel::Network),
            ModelLevel::Line => self
                .lines
                .get(&key.line)
                .map_or((&self.network, ModelLevel::Network), |m| {
                    (m, ModelLevel::Line)
                }),
            ModelLevel::Station => self.model_for(key),
        };
        score_with(model, self.severity.as_ref(), features, used)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let h: ModelHierarchy = serde_json::from_str(s)?;
        h.network.validate()?;
        for m in h
            .lines
            .values()
            .chain(h.stations.iter().map(|s| &s.model))
            .chain(&h.severity)
        {
            m.validate()?;
        }
        Ok(h)
    }
}

fn score_with(
    model: &DsgModel,
    severity: Option<&DsgModel>,
    f: &DsgFeatures,
    level: ModelLevel,
) -> Prediction {
    let probability = model.probability(f);
    let dsg = probability >= model.cutoff;
    let severity = match (dsg, severity) {
        (false, _) => Severity::None,
        (true, Some(s)) if s.probability(f) >= s.cutoff => Severity::Dsg2Plus,
        (true, _) => Severity::Dsg1,
    };
    Prediction {
        probability,
        dsg,
        severity,
        level,
        fallback: level != ModelLevel::Station,
    }
}

struct NodeFit {
    weights: Vec<f64>,
    cutoff: f64,
    /// Out-of-fold probabilities per row; empty when the node is too small to split.
    oof: Vec<f64>,
}

/// Fits one node: cutoff from out-of-fold probabilities, weights on all rows.
fn fit_node(
    rows: &[Vec<f64>],
    labels: &[bool],
    center: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<NodeFit> {
    let child;
    let cfg = if center.is_some() {
        child = TrainConfig {
            l2: cfg.child_l2,
            ..cfg.clone()
        };
        &child
    } else {
        cfg
    };
    let pos = labels.iter().filter(|y| **y).count();
    let folds = cfg.folds.min(pos).min(labels.len() - pos);
    let (cutoff, oof) = if folds >= 2 {
        let probs = cross_val_probs(rows, labels, folds, cfg, center);
        (grid_search_cutoff(&probs, labels, &cfg.cutoff_grid), probs)
    } else {
        (0.5, Vec::new())
    };
    Ok(NodeFit {
        weights: train_logistic(rows, labels, cfg, center)?,
        cutoff,
        oof,
    })
}

/// A child replaces its parent on the child's samples only if it validates
/// better there.
fn beats_parent(child: &NodeFit, parent: &NodeFit, idx: &[usize], labels: &[bool]) -> bool {
    if child.oof.is_empty() || parent.oof.is_empty() {
        return false;
    }
    let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
    let inherited: Vec<f64> = idx.iter().map(|&i| parent.oof[i]).collect();
    f1_at(&child.oof, &y, child.cutoff) > f1_at(&inherited, &y, parent.cutoff)
}

fn model(weights: Vec<f64>, cutoff: f64, mask: &[bool], norm: &Normalization) -> DsgModel {
    DsgModel {
        weights,
        cutoff,
        feature_mask: mask.to_vec(),
        normalization: norm.clone(),
    }
}

/// Trains the network model, then line and station models wherever they
/// have at least `min_positive_samples` positives (and some negatives) and
/// their out-of-fold F1 beats the parent's on the same samples.
/// Features are winsorized and normalized over the whole set and selected
/// once, at network level.
pub fn train_hierarchy(samples: &[LabeledSample], cfg: &TrainConfig) -> Result<ModelHierarchy> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training samples"));
    }
    let raw: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.features.to_array().to_vec())
        .collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.dsg).collect();
    let positives = labels.iter().filter(|y| **y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    let (z, norm) = fit_preprocessing(&raw, cfg.winsor)?;
    let all: Vec<usize> = (0..FEATURE_COUNT).collect();
    let mut mask = forward_select(&z, &labels, &all, cfg)?;
    if !mask.iter().any(|m| *m) {
        // keep the most informative single feature rather than a constant model
        let best = all
            .iter()
            .map(|&c| {
                let mut m = vec![false; FEATURE_COUNT];
                m[c] = true;
                (c, super::logistic::cv_f1(&z, &labels, &m, cfg))
            })
            .fold((0, f64::NEG_INFINITY), |a, x| if x.1 > a.1 { x } else { a });
        mask[best.0] = true;
    }
    let x = select_columns(&z, &mask);
    let net_fit = fit_node(&x, &labels, None, cfg)?;
    let network = model(net_fit.weights.clone(), net_fit.cutoff, &mask, &norm);

    let subset = |pred: &dyn Fn(&SampleKey) -> bool| -> (Vec<usize>, Vec<Vec<f64>>, Vec<bool>) {
        let idx: Vec<usize> = (0..samples.len())
            .filter(|&i| pred(&samples[i].key))
            .collect();
        let rows = idx.iter().map(|&i| x[i].clone()).collect();
        let y = idx.iter().map(|&i| labels[i]).collect();
        (idx, rows, y)
    };
    let eligible = |y: &[bool]| {
        let p = y.iter().filter(|v| **v).count();
        p >= cfg.min_positive_samples && p < y.len()
    };
    // Parent out-of-fold probabilities re-indexed to the whole sample set.
    let spread = |fit: NodeFit, idx: &[usize]| -> NodeFit {
        let mut oof = net_fit.oof.clone();
        if fit.oof.len() == idx.len() {
            for (k, &i) in idx.iter().enumerate() {
                oof[i] = fit.oof[k];
            }
        }
        NodeFit { oof, ..fit }
    };

    let line_ids: Vec<String> = samples
        .iter()
        .map(|s| s.key.line.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let line_fits: BTreeMap<String, NodeFit> = line_ids
        .par_iter()
        .map(|line| -> Result<Option<(String, NodeFit)>> {
            let (idx, r, y) = subset(&|k| &k.line == line);
            if !eligible(&y) {
                return Ok(None);
            }
            let fit = fit_node(&r, &y, Some(&net_fit.weights), cfg)?;
            Ok(beats_parent(&fit, &net_fit, &idx, &labels)
                .then(|| (line.clone(), spread(fit, &idx))))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let lines: BTreeMap<String, DsgModel> = line_fits
        .iter()
        .map(|(l, f)| (l.clone(), model(f.weights.clone(), f.cutoff, &mask, &norm)))
        .collect();

    let keys: Vec<SampleKey> = samples
        .iter()
        .map(|s| s.key.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let stations: Vec<StationModel> = keys
        .par_iter()
        .map(|key| -> Result<Option<StationModel>> {
            let (idx, r, y) = subset(&|k| k == key);
            if !eligible(&y) {
                return Ok(None);
            }
            let parent = line_fits.get(&key.line).unwrap_or(&net_fit);
            let fit = fit_node(&r, &y, Some(&parent.weights), cfg)?;
            if !beats_parent(&fit, parent, &idx, &labels) {
                return Ok(None);
            }
            Ok(Some(StationModel {
                line: key.line.clone(),
                station: key.station,
                model: model(fit.weights, fit.cutoff, &mask, &norm),
            }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let severity = {
        let idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].dsg).collect();
        let y: Vec<bool> = idx.iter().map(|&i| samples[i].severe).collect();
        let sev = y.iter().filter(|v| **v).count();
        if sev >= 2 && sev + 2 <= y.len() {
            let r: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
            let fit = fit_node(&r, &y, None, cfg)?;
            Some(model(fit.weights, fit.cutoff, &mask, &norm))
        } else {
            None
        }
    };

    Ok(ModelHierarchy {
        network,
        lines,
        stations,
        severity,
        min_positive_samples: cfg.min_positive_samples,
        metadata: TrainingMetadata {
            samples: samples.len(),
            positives,
            seed: cfg.seed,
            bootstrap_rounds: cfg.bootstrap_rounds,
            folds: cfg.folds,
            selected_features: FEATURE_NAMES
                .iter()
                .zip(&mask)
                .filter(|(_, m)| **m)
                .map(|(n, _)| n.to_string())
                .collect(),
        },
    })
}
