//! Feature construction and similarity scoring.
//!
//! An observation is compared to a goal specification either on raw
//! embeddings or on delta features (current minus initial embedding, for
//! both the agent and the specification). Scores are always
//! higher-is-better: L2 distance is negated at the boundary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, contract, Error, Result};
use crate::store::{DatasetStore, Step, Trajectory};

/// Norms below this are treated as zero by cosine.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    SameSceneImgs,
    OnlineImgs,
    Drawings,
    Text,
    Synthetic,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::SameSceneImgs => "same_scene_imgs",
            Modality::OnlineImgs => "online_imgs",
            Modality::Drawings => "drawings",
            Modality::Text => "text",
            Modality::Synthetic => "synthetic",
        }
    }
}

/// A task specification: pools of initial and goal embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub modality: Modality,
    #[serde(default)]
    pub initial_pool: Vec<Vec<f64>>,
    pub goal_pool: Vec<Vec<f64>>,
    pub encoder: String,
}

impl GoalSpec {
    pub fn new(
        modality: Modality,
        initial_pool: Vec<Vec<f64>>,
        goal_pool: Vec<Vec<f64>>,
        encoder: impl Into<String>,
    ) -> Result<Self> {
        let spec = Self {
            modality,
            initial_pool,
            goal_pool,
            encoder: encoder.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self
            .goal_pool
            .first()
            .ok_or_else(|| contract("goal spec has an empty goal pool"))?
            .len();
        for v in self.goal_pool.iter().chain(&self.initial_pool) {
            check_dims(v.len(), dim)?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data("goal spec contains a non-finite value".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.goal_pool.first().map_or(0, Vec::len)
    }

    /// Keeps the listed goal and initial pool entries.
    pub fn subsample(&self, goals: &[usize], initials: &[usize]) -> Result<Self> {
        let pick = |pool: &[Vec<f64>], idx: &[usize]| -> Result<Vec<Vec<f64>>> {
            idx.iter()
                .map(|&i| {
                    pool.get(i)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("pool index {i} out of range")))
                })
                .collect()
        };
        GoalSpec::new(
            self.modality,
            pick(&self.initial_pool, initials)?,
            pick(&self.goal_pool, goals)?,
            self.encoder.clone(),
        )
    }
}

/// Per-task goal specifications, the on-disk goal-spec file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GoalSpecSet {
    pub schema: u32,
    pub specs: BTreeMap<String, GoalSpec>,
}

impl GoalSpecSet {
    pub const SCHEMA: u32 = 1;

    pub fn new(specs: BTreeMap<String, GoalSpec>) -> Self {
        Self {
            schema: Self::SCHEMA,
            specs,
        }
    }

    pub fn get(&self, task: &str) -> Option<&GoalSpec> {
        self.specs.get(task)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("goal specs serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: GoalSpecSet = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("goal spec file {}: {e}", path.display())))?;
        if set.schema != Self::SCHEMA {
            return Err(Error::Schema(format!("unsupported goal spec schema {}", set.schema)));
        }
        for spec in set.specs.values() {
            spec.validate()?;
        }
        Ok(set)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Raw,
    Delta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    NegL2,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewpointAgg {
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    #[default]
    ZeroScore,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub feature_mode: FeatureMode,
    pub metric: Metric,
    #[serde(default)]
    pub viewpoint_agg: ViewpointAgg,
    /// Average over the whole goal pool; when false only the first goal
    /// (and its paired initial) is used.
    #[serde(default = "default_true")]
    pub ensemble: bool,
    #[serde(default)]
    pub degenerate_policy: DegeneratePolicy,
}

impl SimilarityConfig {
    pub fn new(feature_mode: FeatureMode, metric: Metric) -> Self {
        Self {
            feature_mode,
            metric,
            viewpoint_agg: ViewpointAgg::Mean,
            ensemble: true,
            degenerate_policy: DegeneratePolicy::ZeroScore,
        }
    }

    pub fn delta_cosine() -> Self {
        Self::new(FeatureMode::Delta, Metric::Cosine)
    }

    /// Image modalities use delta+cosine, text uses delta+neg_l2. Falls back
    /// to raw features when the spec carries no initial pool.
    pub fn default_for(spec: &GoalSpec) -> Self {
        let mode = if spec.initial_pool.is_empty() {
            FeatureMode::Raw
        } else {
            FeatureMode::Delta
        };
        let metric = match spec.modality {
            Modality::Text => Metric::NegL2,
            _ => Metric::Cosine,
        };
        Self::new(mode, metric)
    }
}

impl fmt::Display for SimilarityConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.feature_mode {
            FeatureMode::Raw => "raw",
            FeatureMode::Delta => "delta",
        };
        let metric = match self.metric {
            Metric::Cosine => "cosine",
            Metric::NegL2 => "neg_l2",
        };
        write!(f, "{mode}+{metric}")
    }
}

impl FromStr for SimilarityConfig {
    type Err = Error;

    /// Parses `"{raw|delta}+{cosine|neg_l2}"`.
    fn from_str(s: &str) -> Result<Self> {
        let (mode, metric) = s
            .split_once('+')
            .ok_or_else(|| Error::Config(format!("metric {s:?} is not of the form mode+metric")))?;
        let mode = match mode {
            "raw" => FeatureMode::Raw,
            "delta" => FeatureMode::Delta,
            _ => return Err(Error::Config(format!("unknown feature mode {mode:?}"))),
        };
        let metric = match metric {
            "cosine" => Metric::Cosine,
            "neg_l2" | "l2" => Metric::NegL2,
            _ => return Err(Error::Config(format!("unknown metric {metric:?}"))),
        };
        Ok(Self::new(mode, metric))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    pub fn degenerate() -> Self {
        Self {
            value: 0.0,
            degenerate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalPair {
    pub goal: Vec<f64>,
    pub initial: Vec<f64>,
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity. Zero-norm inputs yield a degenerate 0.0.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<Score> {
    check_dims(u.len(), v.len())?;
    Ok(cosine_unchecked(u, v))
}

fn cosine_unchecked(u: &[f64], v: &[f64]) -> Score {
    let (nu, nv) = (norm(u), norm(v));
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Score::degenerate();
    }
    Score::new((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Negated Euclidean distance.
pub fn neg_l2(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u.len(), v.len())?;
    Ok(neg_l2_unchecked(u, v))
}

fn neg_l2_unchecked(u: &[f64], v: &[f64]) -> f64 {
    -u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn delta_feature(current: &[f64], anchor: &[f64]) -> Result<Vec<f64>> {
    check_dims(current.len(), anchor.len())?;
    Ok(current.iter().zip(anchor).map(|(c, a)| c - a).collect())
}

/// Pairs every goal with its most cosine-similar initial (lowest index wins
/// ties).
pub fn pair_ensemble(spec: &GoalSpec) -> Result<Vec<GoalPair>> {
    if spec.initial_pool.is_empty() {
        return Err(contract("delta features need a nonempty initial pool"));
    }
    spec.validate()?;
    Ok(spec
        .goal_pool
        .iter()
        .map(|g| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, x) in spec.initial_pool.iter().enumerate() {
                let s = cosine_unchecked(g, x).value;
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            GoalPair {
                goal: g.clone(),
                initial: spec.initial_pool[best].clone(),
            }
        })
        .collect())
}

/// A goal specification compiled against one similarity configuration:
/// the goal-side features are computed once and reused for every
/// observation.
#[derive(Clone, Debug)]
pub struct Scorer {
    config: SimilarityConfig,
    dim: usize,
    goal_features: Vec<Vec<f64>>,
}

impl Scorer {
    pub fn new(spec: &GoalSpec, config: SimilarityConfig) -> Result<Self> {
        spec.validate()?;
        let mut goal_features: Vec<Vec<f64>> = match config.feature_mode {
            FeatureMode::Raw => spec.goal_pool.clone(),
            FeatureMode::Delta => pair_ensemble(spec)?
                .into_iter()
                .map(|p| delta_feature(&p.goal, &p.initial).expect("validated dims"))
                .collect(),
        };
        if !config.ensemble {
            goal_features.truncate(1);
        }
        Ok(Self {
            config,
            dim: spec.dim(),
            goal_features,
        })
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.config
    }

    pub fn goal_features(&self) -> &[Vec<f64>] {
        &self.goal_features
    }

    /// Ensemble-averaged metric between one observation feature and every
    /// goal feature. Degenerate only when every component is.
    pub fn score_feature(&self, feature: &[f64]) -> Result<Score> {
        check_dims(feature.len(), self.dim)?;
        let mut sum = 0.0;
        let mut all_degenerate = true;
        for g in &self.goal_features {
            match self.config.metric {
                Metric::Cosine => {
                    let s = cosine_unchecked(feature, g);
                    // DegeneratePolicy::ZeroScore: degenerate scores are 0.0
                    sum += s.value;
                    all_degenerate &= s.degenerate;
                }
                Metric::NegL2 => {
                    sum += neg_l2_unchecked(feature, g);
                    all_degenerate = false;
                }
            }
        }
        Ok(Score {
            value: sum / self.goal_features.len() as f64,
            degenerate: all_degenerate,
        })
    }

    /// Scores one step of a trajectory, averaging over its viewpoints.
    pub fn score_step(&self, store: &DatasetStore, traj: &Trajectory, step: &Step) -> Result<Score> {
        let mut sum = 0.0;
        let mut all_degenerate = true;
        for &rec in &step.records {
            let obs = store.embedding(rec);
            let s = match self.config.feature_mode {
                FeatureMode::Raw => self.score_feature(obs)?,
                FeatureMode::Delta => {
                    let anchor = anchor_for(store, traj, store.observations()[rec].viewpoint_id)?;
                    self.score_feature(&delta_feature(obs, anchor)?)?
                }
            };
            sum += s.value;
            all_degenerate &= s.degenerate;
        }
        if step.records.is_empty() {
            return Err(contract(format!("trajectory {:?} has an empty step", traj.id)));
        }
        Ok(Score {
            value: sum / step.records.len() as f64,
            degenerate: all_degenerate,
        })
    }

    pub fn score_observation(&self, store: &DatasetStore, obs: usize) -> Result<Score> {
        self.score_step(store, store.trajectory_of(obs), store.step_of(obs))
    }

    pub fn score_trajectory(&self, store: &DatasetStore, traj: &Trajectory) -> Result<Vec<Score>> {
        if traj.is_empty() {
            return Err(contract(format!("trajectory {:?} is empty", traj.id)));
        }
        traj.steps.iter().map(|s| self.score_step(store, traj, s)).collect()
    }
}

fn anchor_for<'a>(store: &'a DatasetStore, traj: &Trajectory, viewpoint: u32) -> Result<&'a [f64]> {
    traj.initial_step()
        .and_then(|s| {
            s.records
                .iter()
                .find(|&&r| store.observations()[r].viewpoint_id == viewpoint)
        })
        .map(|&r| store.embedding(r))
        .ok_or_else(|| {
            contract(format!(
                "trajectory {:?} has no step-0 observation for viewpoint {viewpoint}",
                traj.id
            ))
        })
}

/// Scores the observation at index `obs` of `store`.
pub fn score_observation(store: &DatasetStore, obs: usize, spec: &GoalSpec, config: SimilarityConfig) -> Result<Score> {
    Scorer::new(spec, config)?.score_observation(store, obs)
}

pub fn score_trajectory(
    store: &DatasetStore,
    traj: &Trajectory,
    spec: &GoalSpec,
    config: SimilarityConfig,
) -> Result<Vec<Score>> {
    Scorer::new(spec, config)?.score_trajectory(store, traj)
}

/// Steps x subgoals score matrix. An empty spec list gives an empty matrix.
pub fn score_subgoals(
    store: &DatasetStore,
    traj: &Trajectory,
    specs: &[GoalSpec],
    config: SimilarityConfig,
) -> Result<Vec<Vec<Score>>> {
    if specs.is_empty() {
        return Ok(Vec::new());
    }
    let columns = specs
        .iter()
        .map(|s| score_trajectory(store, traj, s, config))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..traj.len())
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect())
}

/// Min-max normalization to [0, 1]; a flat list maps to 0.5.
pub fn normalize_values(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(contract("cannot normalize an empty score list"));
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    Ok(normalize_with_bounds(values, lo, hi))
}

pub(crate) fn normalize_with_bounds(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![0.5; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

pub fn normalize_scores(scores: &[Score]) -> Result<Vec<f64>> {
    normalize_values(&scores.iter().map(|s| s.value).collect::<Vec<_>>())
}
