//! Goal selection and action selection tasks and their metrics.
//!
//! Rankings are strictly non-increasing in score with ties broken by
//! ascending id, so every report is a pure function of its inputs.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::store::{DatasetStore, Selector};
use crate::zest::{normalize_values, FeatureMode, GoalSpec, GoalSpecSet, Scorer, SimilarityConfig};

pub const REPORT_SCHEMA: u32 = 1;
pub const DEFAULT_TOP_N: usize = 25;
pub const DEFAULT_ABLATION_REPEATS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedEntry {
    pub id: String,
    /// Step index for action-selection pairs; `None` for single observations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u32>,
    /// Position of the candidate in the list that was ranked.
    pub index: usize,
    pub score: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RankedResult {
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    /// Sorts scored candidates: score descending, then `(id, step)` ascending.
    pub fn from_entries(mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.id.cmp(&b.id))
                .then_with(|| a.step.cmp(&b.step))
        });
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<&RankedEntry> {
        self.entries.first()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    /// Scores in candidate order (by `index`).
    pub fn scores_by_index(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.entries.len()];
        for e in &self.entries {
            out[e.index] = e.score;
        }
        out
    }
}

/// Ground-truth labels for a ranked candidate list plus the effective N.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationContext {
    labels: Vec<bool>,
    mu: usize,
    n: usize,
    clamped: bool,
}

impl EvaluationContext {
    /// `requested_n = None` asks for N = μ.
    pub fn new(labels: Vec<bool>, requested_n: Option<usize>) -> Result<Self> {
        let mu = labels.iter().filter(|&&l| l).count();
        if mu == 0 {
            return Err(contract(
                "labeled evaluation needs at least one goal-satisfying candidate",
            ));
        }
        let mut n = requested_n.unwrap_or(mu);
        if n == 0 {
            return Err(contract("N must be positive"));
        }
        let clamped = n > mu;
        if clamped {
            log::warn!("requested N = {n} exceeds the goal count mu = {mu}; clamping N to {mu}");
            n = mu;
        }
        Ok(Self { labels, mu, n, clamped })
    }

    /// Labels every observation of `view` by its goal label, restricted to
    /// `target_task` when given.
    pub fn for_goal_selection(
        view: &DatasetStore,
        target_task: Option<&str>,
        requested_n: Option<usize>,
    ) -> Result<Self> {
        Self::new(goal_labels(view, target_task)?, requested_n)
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn was_clamped(&self) -> bool {
        self.clamped
    }
}

/// Goal indicator per observation. Fails if any record is unlabeled.
pub fn goal_labels(view: &DatasetStore, target_task: Option<&str>) -> Result<Vec<bool>> {
    view.observations()
        .iter()
        .map(|r| {
            let label = r
                .goal_label
                .ok_or_else(|| contract(format!("record {:?} has no goal label", r.id)))?;
            Ok(label && target_task.is_none_or(|t| r.task_tag.as_deref() == Some(t)))
        })
        .collect()
}

/// Scores every observation of the view and ranks them.
pub fn rank_dataset(view: &DatasetStore, spec: &GoalSpec, config: SimilarityConfig) -> Result<RankedResult> {
    if view.is_empty() {
        return Err(contract("cannot rank an empty dataset view"));
    }
    let scorer = Scorer::new(spec, config)?;
    let mut entries = Vec::with_capacity(view.len());
    for traj in view.trajectories() {
        for step in &traj.steps {
            let score = scorer.score_step(view, traj, step)?;
            for &rec in &step.records {
                entries.push(RankedEntry {
                    id: view.observations()[rec].id.clone(),
                    step: None,
                    index: rec,
                    score: score.value,
                    degenerate: score.degenerate,
                });
            }
        }
    }
    Ok(RankedResult::from_entries(entries))
}

pub fn goal_select(view: &DatasetStore, spec: &GoalSpec, config: SimilarityConfig) -> Result<String> {
    Ok(rank_dataset(view, spec, config)?
        .top()
        .expect("nonempty ranking")
        .id
        .clone())
}

/// Fraction of the first N ranked candidates that satisfy the goal.
pub fn top_n_success(ranking: &RankedResult, ctx: &EvaluationContext) -> Result<f64> {
    if ranking.len() != ctx.labels.len() {
        return Err(contract(format!(
            "ranking has {} entries but context labels {}",
            ranking.len(),
            ctx.labels.len()
        )));
    }
    let hits = ranking
        .entries
        .iter()
        .take(ctx.n)
        .filter(|e| ctx.labels[e.index])
        .count();
    Ok(hits as f64 / ctx.n as f64)
}

/// Total variation between the goal indicator distribution and the score
/// mass, for scores already normalized to be nonnegative. A zero score
/// mass falls back to the uniform distribution.
pub fn total_variation(normalized: &[f64], labels: &[bool], mu: usize) -> Result<f64> {
    if mu == 0 {
        return Err(contract("dataset total variation needs mu >= 1"));
    }
    if normalized.len() != labels.len() {
        return Err(contract("scores and labels differ in length"));
    }
    if normalized.is_empty() {
        return Err(contract("dataset total variation of an empty dataset"));
    }
    let d = normalized.len() as f64;
    let mass: f64 = normalized.iter().sum();
    let tv: f64 = normalized
        .iter()
        .zip(labels)
        .map(|(&phi, &label)| {
            let indicator = if label { 1.0 / mu as f64 } else { 0.0 };
            let share = if mass > 0.0 { phi / mass } else { 1.0 / d };
            (indicator - share).abs()
        })
        .sum();
    Ok(tv / d)
}

/// Min-max normalizes raw scores to [0, 1], then computes the dataset total
/// variation.
pub fn dataset_total_variation(scores: &[f64], labels: &[bool], mu: usize) -> Result<f64> {
    if mu == 0 {
        return Err(contract("dataset total variation needs mu >= 1"));
    }
    total_variation(&normalize_values(scores)?, labels, mu)
}

/// Expected top-N success of a uniformly random ranking: μ / |D|.
pub fn random_baseline_expectation(ctx: &EvaluationContext) -> f64 {
    ctx.mu as f64 / ctx.labels.len() as f64
}

// ---------------------------------------------------------------------------
// Action selection
// ---------------------------------------------------------------------------

/// Maps action tokens (and the tasks that emit them) onto semantic classes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionClasses {
    pub token_class: BTreeMap<String, String>,
    pub task_class: BTreeMap<String, String>,
}

impl ActionClasses {
    pub fn class_of_token(&self, token: &str) -> Option<&str> {
        self.token_class.get(token).map(String::as_str)
    }

    pub fn class_of_task(&self, task: &str) -> Option<&str> {
        self.task_class.get(task).map(String::as_str)
    }
}

/// One `(trajectory, step)` candidate for action selection.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionPair {
    pub trajectory_id: String,
    pub step_index: u32,
    pub action_token: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionRanking {
    pub pairs: Vec<ActionPair>,
    pub ranking: RankedResult,
}

impl ActionRanking {
    /// Labels each pair by whether its action token falls in `class`.
    pub fn labels(&self, classes: &ActionClasses, class: &str) -> Result<Vec<bool>> {
        self.pairs
            .iter()
            .map(|p| {
                let token = p.action_token.as_deref().ok_or_else(|| {
                    contract(format!(
                        "trajectory {:?} step {} has no action token",
                        p.trajectory_id, p.step_index
                    ))
                })?;
                Ok(classes.class_of_token(token) == Some(class))
            })
            .collect()
    }
}

/// Ranks every `(trajectory, step >= 1)` transformation by its similarity to
/// the specified change.
pub fn action_select(view: &DatasetStore, spec: &GoalSpec, config: SimilarityConfig) -> Result<ActionRanking> {
    if config.feature_mode != FeatureMode::Delta {
        return Err(contract("action selection is defined on delta features only"));
    }
    let scorer = Scorer::new(spec, config)?;
    let mut pairs = Vec::new();
    let mut entries = Vec::new();
    for traj in view.trajectories() {
        for step in traj.steps.iter().filter(|s| s.step_index >= 1) {
            let score = scorer.score_step(view, traj, step)?;
            let token = step
                .records
                .iter()
                .find_map(|&r| view.observations()[r].action_token.clone());
            entries.push(RankedEntry {
                id: traj.id.clone(),
                step: Some(step.step_index),
                index: pairs.len(),
                score: score.value,
                degenerate: score.degenerate,
            });
            pairs.push(ActionPair {
                trajectory_id: traj.id.clone(),
                step_index: step.step_index,
                action_token: token,
            });
        }
    }
    if pairs.is_empty() {
        return Err(contract("view has no (trajectory, step >= 1) pairs to rank"));
    }
    Ok(ActionRanking {
        pairs,
        ranking: RankedResult::from_entries(entries),
    })
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Mean and standard error (sample std / sqrt(n)). The mean is accumulated
/// relative to the first value, so identical inputs give exactly that value
/// and a standard error of exactly zero.
pub fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let x0 = values[0];
    let mean = x0 + values.iter().map(|v| v - x0).sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// Opaque scenario labels; only ASDD carries meaning (action selection).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioTag {
    SGSD,
    DGSD,
    SGDD,
    DGDD,
    ASDD,
}

impl std::str::FromStr for ScenarioTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SGSD" => Ok(ScenarioTag::SGSD),
            "DGSD" => Ok(ScenarioTag::DGSD),
            "SGDD" => Ok(ScenarioTag::SGDD),
            "DGDD" => Ok(ScenarioTag::DGDD),
            "ASDD" => Ok(ScenarioTag::ASDD),
            _ => Err(Error::Config(format!("unknown scenario tag {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    GoalSelection,
    ActionSelection,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSelector {
    /// The whole store.
    Diverse,
    /// Only trajectories of the task being evaluated.
    Narrow,
    Custom(Selector),
}

impl DatasetSelector {
    fn selector_for(&self, task: &str) -> Selector {
        match self {
            DatasetSelector::Diverse => Selector::all(),
            DatasetSelector::Narrow => Selector::task(task),
            DatasetSelector::Custom(s) => s.clone(),
        }
    }
}

fn default_store() -> String {
    "default".into()
}

fn default_n() -> Option<usize> {
    Some(DEFAULT_TOP_N)
}

fn default_repetitions() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_tag: ScenarioTag,
    /// Name of the store in `ScenarioInputs::stores`.
    #[serde(default = "default_store")]
    pub store: String,
    /// Name of the goal-spec source in `ScenarioInputs::goals`.
    pub goal_pool_selector: String,
    pub dataset_selector: DatasetSelector,
    pub mode: EvalMode,
    pub similarity: SimilarityConfig,
    /// Top-N cutoff; `null` means N = μ.
    #[serde(default = "default_n")]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Goal/initial samples drawn per repetition; `None` uses the full pool.
    #[serde(default)]
    pub goal_samples: Option<usize>,
    /// Restricts evaluation to these tasks; `None` evaluates every task of
    /// the goal source.
    #[serde(default)]
    pub tasks: Option<Vec<String>>,
}

impl ScenarioConfig {
    pub fn goal_selection(tag: ScenarioTag, goals: impl Into<String>, dataset: DatasetSelector) -> Self {
        Self {
            scenario_tag: tag,
            store: default_store(),
            goal_pool_selector: goals.into(),
            dataset_selector: dataset,
            mode: EvalMode::GoalSelection,
            similarity: SimilarityConfig::delta_cosine(),
            n: default_n(),
            seed: 0,
            repetitions: 1,
            goal_samples: None,
            tasks: None,
        }
    }

    pub fn action_selection(goals: impl Into<String>) -> Self {
        Self {
            mode: EvalMode::ActionSelection,
            ..Self::goal_selection(ScenarioTag::ASDD, goals, DatasetSelector::Diverse)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let is_asdd = self.scenario_tag == ScenarioTag::ASDD;
        let is_action = self.mode == EvalMode::ActionSelection;
        if is_asdd != is_action {
            return Err(Error::Config(
                "scenario ASDD and mode action_selection must go together".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.n == Some(0) {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.goal_samples == Some(0) {
            return Err(Error::Config("goal_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Named stores and goal sources a scenario can select from.
#[derive(Clone, Debug, Default)]
pub struct ScenarioInputs {
    pub stores: BTreeMap<String, DatasetStore>,
    pub goals: BTreeMap<String, GoalSpecSet>,
    pub action_classes: Option<ActionClasses>,
}

impl ScenarioInputs {
    pub fn single(store: DatasetStore, goal_name: impl Into<String>, goals: GoalSpecSet) -> Self {
        Self {
            stores: [(default_store(), store)].into_iter().collect(),
            goals: [(goal_name.into(), goals)].into_iter().collect(),
            action_classes: None,
        }
    }

    pub fn with_action_classes(mut self, classes: ActionClasses) -> Self {
        self.action_classes = Some(classes);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub top_n_success: f64,
    pub dtv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub top_n_success: f64,
    pub top_n_std_err: f64,
    pub dtv: f64,
    pub dtv_std_err: f64,
    pub mu: usize,
    pub n: usize,
    pub candidates: usize,
    pub random_baseline: f64,
    pub repetitions: Vec<RepetitionResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub top_n_success: f64,
    pub top_n_std_err: f64,
    pub dtv: f64,
    pub dtv_std_err: f64,
    pub random_baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: u32,
    pub engine_version: String,
    pub config: ScenarioConfig,
    pub model: String,
    pub modality: String,
    pub tasks: BTreeMap<String, TaskResult>,
    pub aggregate: AggregateResult,
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn sorted_sample(rng: &mut ChaCha8Rng, pool: usize, k: usize) -> Vec<usize> {
    let mut idx = sample(rng, pool, k).into_vec();
    idx.sort_unstable();
    idx
}

fn draw_spec(spec: &GoalSpec, k: Option<usize>, seed: u64) -> Result<GoalSpec> {
    let Some(k) = k else {
        return Ok(spec.clone());
    };
    if k > spec.goal_pool.len() || (!spec.initial_pool.is_empty() && k > spec.initial_pool.len()) {
        return Err(Error::Config(format!(
            "cannot draw {k} goal samples from pools of size {}/{}",
            spec.goal_pool.len(),
            spec.initial_pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let goals = sorted_sample(&mut rng, spec.goal_pool.len(), k);
    let initials = if spec.initial_pool.is_empty() {
        Vec::new()
    } else {
        sorted_sample(&mut rng, spec.initial_pool.len(), k)
    };
    spec.subsample(&goals, &initials)
}

/// One labeled evaluation: (top-N success, DTV, μ, N, candidates).
fn evaluate_once(
    cfg: &ScenarioConfig,
    view: &DatasetStore,
    task: &str,
    spec: &GoalSpec,
    classes: Option<&ActionClasses>,
) -> Result<(f64, f64, EvaluationContext)> {
    let (ranking, labels) = match cfg.mode {
        EvalMode::GoalSelection => {
            let ranking = rank_dataset(view, spec, cfg.similarity)?;
            (ranking, goal_labels(view, Some(task))?)
        }
        EvalMode::ActionSelection => {
            let classes = classes.ok_or_else(|| Error::Config("action selection needs action classes".into()))?;
            let class = classes
                .class_of_task(task)
                .ok_or_else(|| Error::Config(format!("task {task:?} has no action class")))?;
            let ar = action_select(view, spec, cfg.similarity)?;
            let labels = ar.labels(classes, class)?;
            (ar.ranking, labels)
        }
    };
    let ctx = EvaluationContext::new(labels, cfg.n)?;
    let success = top_n_success(&ranking, &ctx)?;
    let dtv = dataset_total_variation(&ranking.scores_by_index(), ctx.labels(), ctx.mu())?;
    Ok((success, dtv, ctx))
}

/// Runs a scenario over every selected task and repetition.
pub fn run_scenario(cfg: &ScenarioConfig, inputs: &ScenarioInputs) -> Result<EvaluationReport> {
    cfg.validate()?;
    let store = inputs
        .stores
        .get(&cfg.store)
        .ok_or_else(|| Error::Config(format!("no store named {:?}", cfg.store)))?;
    let goals = inputs
        .goals
        .get(&cfg.goal_pool_selector)
        .ok_or_else(|| Error::Config(format!("no goal source named {:?}", cfg.goal_pool_selector)))?;
    let task_names: Vec<String> = match &cfg.tasks {
        Some(t) => t.clone(),
        None => goals.specs.keys().cloned().collect(),
    };
    if task_names.is_empty() {
        return Err(Error::Config("scenario selects no tasks".into()));
    }

    let mut tasks = BTreeMap::new();
    let mut per_rep_success = vec![Vec::new(); cfg.repetitions];
    let mut per_rep_dtv = vec![Vec::new(); cfg.repetitions];
    let mut baselines = Vec::new();
    let mut modality = None;

    for (ti, task) in task_names.iter().enumerate() {
        let spec = goals
            .get(task)
            .ok_or_else(|| Error::Config(format!("goal source has no spec for task {task:?}")))?;
        modality.get_or_insert(spec.modality);
        let filtered = store.filter(&cfg.dataset_selector.selector_for(task));
        if filtered.empty {
            return Err(Error::Config(format!(
                "dataset selector matches no trajectories for task {task:?}"
            )));
        }
        let view = filtered.view;
        let mut reps = Vec::with_capacity(cfg.repetitions);
        let mut last_ctx = None;
        for r in 0..cfg.repetitions {
            let drawn = draw_spec(spec, cfg.goal_samples, derive_seed(cfg.seed, &[ti as u64, r as u64]))?;
            let (success, dtv, ctx) = evaluate_once(cfg, &view, task, &drawn, inputs.action_classes.as_ref())?;
            per_rep_success[r].push(success);
            per_rep_dtv[r].push(dtv);
            reps.push(RepetitionResult {
                top_n_success: success,
                dtv,
            });
            last_ctx = Some(ctx);
        }
        let ctx = last_ctx.expect("at least one repetition");
        let (s_mean, s_err) = mean_and_std_err(&reps.iter().map(|r| r.top_n_success).collect::<Vec<_>>());
        let (d_mean, d_err) = mean_and_std_err(&reps.iter().map(|r| r.dtv).collect::<Vec<_>>());
        let baseline = random_baseline_expectation(&ctx);
        baselines.push(baseline);
        tasks.insert(
            task.clone(),
            TaskResult {
                top_n_success: s_mean,
                top_n_std_err: s_err,
                dtv: d_mean,
                dtv_std_err: d_err,
                mu: ctx.mu(),
                n: ctx.n(),
                candidates: ctx.labels().len(),
                random_baseline: baseline,
                repetitions: reps,
            },
        );
    }

    let task_mean = |f: fn(&TaskResult) -> f64| {
        let v: Vec<f64> = tasks.values().map(f).collect();
        mean_and_std_err(&v).0
    };
    let rep_means = |v: &[Vec<f64>]| v.iter().map(|r| mean_and_std_err(r).0).collect::<Vec<_>>();
    let aggregate = AggregateResult {
        top_n_success: task_mean(|t| t.top_n_success),
        top_n_std_err: mean_and_std_err(&rep_means(&per_rep_success)).1,
        dtv: task_mean(|t| t.dtv),
        dtv_std_err: mean_and_std_err(&rep_means(&per_rep_dtv)).1,
        random_baseline: mean_and_std_err(&baselines).0,
    };

    Ok(EvaluationReport {
        schema: REPORT_SCHEMA,
        engine_version: crate::ENGINE_VERSION.to_string(),
        config: cfg.clone(),
        model: store.profile().name.clone(),
        modality: modality.map_or("unknown", |m| m.as_str()).to_string(),
        tasks,
        aggregate,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per task plus an `Avg.` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "task",
            "top_n_success",
            "top_n_std_err",
            "dtv",
            "dtv_std_err",
            "mu",
            "n",
            "random_baseline",
        ])
        .expect("csv write");
        for (task, r) in &self.tasks {
            w.write_record([
                task.clone(),
                r.top_n_success.to_string(),
                r.top_n_std_err.to_string(),
                r.dtv.to_string(),
                r.dtv_std_err.to_string(),
                r.mu.to_string(),
                r.n.to_string(),
                r.random_baseline.to_string(),
            ])
            .expect("csv write");
        }
        let a = &self.aggregate;
        w.write_record([
            "Avg.".to_string(),
            a.top_n_success.to_string(),
            a.top_n_std_err.to_string(),
            a.dtv.to_string(),
            a.dtv_std_err.to_string(),
            String::new(),
            String::new(),
            a.random_baseline.to_string(),
        ])
        .expect("csv write");
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }

    /// Modality x task table of top-N success with Avg./Std. Err columns.
    pub fn to_table_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["modality".to_string(), "model".to_string()];
        header.extend(self.tasks.keys().cloned());
        header.extend(["Avg.".to_string(), "Std. Err".to_string()]);
        w.write_record(&header).expect("csv write");
        let mut row = vec![self.modality.clone(), self.model.clone()];
        row.extend(self.tasks.values().map(|r| r.top_n_success.to_string()));
        row.push(self.aggregate.top_n_success.to_string());
        row.push(self.aggregate.top_n_std_err.to_string());
        w.write_record(&row).expect("csv write");
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }
}

// ---------------------------------------------------------------------------
// Goal-sample ablation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub k: usize,
    pub mean: f64,
    pub std_err: f64,
    /// Aggregate top-N success of each repeat.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema: u32,
    pub engine_version: String,
    pub config: ScenarioConfig,
    pub repeats: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["k", "mean", "std_err"]).expect("csv write");
        for r in &self.rows {
            w.write_record([r.k.to_string(), r.mean.to_string(), r.std_err.to_string()])
                .expect("csv write");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
    }
}

/// Evaluates the scenario with `k` seeded goal/initial samples per task,
/// `repeats` times for each `k`.
pub fn ablate_goal_samples(
    cfg: &ScenarioConfig,
    inputs: &ScenarioInputs,
    k_values: &[usize],
    repeats: usize,
) -> Result<AblationReport> {
    cfg.validate()?;
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let goals = inputs
        .goals
        .get(&cfg.goal_pool_selector)
        .ok_or_else(|| Error::Config(format!("no goal source named {:?}", cfg.goal_pool_selector)))?;
    let pool = goals
        .specs
        .values()
        .map(|s| {
            if s.initial_pool.is_empty() {
                s.goal_pool.len()
            } else {
                s.goal_pool.len().min(s.initial_pool.len())
            }
        })
        .min()
        .unwrap_or(0);
    if let Some(&k) = k_values.iter().find(|&&k| k == 0 || k > pool) {
        return Err(Error::Config(format!(
            "k = {k} is outside the goal pool size 1..={pool}"
        )));
    }

    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let mut values = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let run = ScenarioConfig {
                goal_samples: Some(k),
                repetitions: 1,
                seed: derive_seed(cfg.seed, &[k as u64, r as u64]),
                ..cfg.clone()
            };
            values.push(run_scenario(&run, inputs)?.aggregate.top_n_success);
        }
        let (mean, std_err) = mean_and_std_err(&values);
        rows.push(AblationRow {
            k,
            mean,
            std_err,
            values,
        });
    }
    Ok(AblationReport {
        schema: REPORT_SCHEMA,
        engine_version: crate::ENGINE_VERSION.to_string(),
        config: cfg.clone(),
        repeats,
        rows,
    })
}

/// Orders candidates like `RankedResult` (exposed for trajectory-level
/// rankings elsewhere).
pub(crate) fn desc_then_id(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{EncoderProfile, ObservationRecord, StoreBuilder};
    use crate::zest::Modality;

    fn entry(id: &str, index: usize, score: f64) -> RankedEntry {
        RankedEntry {
            id: id.into(),
            step: None,
            index,
            score,
            degenerate: false,
        }
    }

    #[test]
    fn ties_break_by_id() {
        let r = RankedResult::from_entries(vec![entry("b", 0, 0.5), entry("a", 1, 0.5), entry("c", 2, 0.9)]);
        assert_eq!(r.ids(), vec!["c", "a", "b"]);
    }

    #[test]
    fn top_n_counting() {
        // |D| = 10, mu = 4, top-4 holds three goals
        let labels = vec![true, true, true, false, true, false, false, false, false, false];
        let scores = [10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let ranking = RankedResult::from_entries(
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| entry(&format!("r{i}"), i, s))
                .collect(),
        );
        let ctx = EvaluationContext::new(labels, Some(4)).unwrap();
        assert_eq!(top_n_success(&ranking, &ctx).unwrap(), 0.75);
        assert_eq!(random_baseline_expectation(&ctx), 0.4);
    }

    #[test]
    fn n_is_clamped_to_mu() {
        let ctx = EvaluationContext::new(vec![true, false, true], Some(25)).unwrap();
        assert_eq!(ctx.n(), 2);
        assert!(ctx.was_clamped());
        assert!(EvaluationContext::new(vec![false, false], None).is_err());
    }

    #[test]
    fn reversed_ranking_scores_zero() {
        let labels = vec![false, false, false, true, true];
        let ranking = RankedResult::from_entries((0..5).map(|i| entry(&format!("r{i}"), i, -(i as f64))).collect());
        let ctx = EvaluationContext::new(labels, Some(2)).unwrap();
        assert_eq!(top_n_success(&ranking, &ctx).unwrap(), 0.0);
    }

    #[test]
    fn dtv_examples() {
        let labels = [true, true, false, false];
        assert_eq!(total_variation(&[1.0, 1.0, 0.0, 0.0], &labels, 2).unwrap(), 0.0);
        assert!((total_variation(&[1.0, 1.0, 1.0, 1.0], &labels, 2).unwrap() - 0.25).abs() < 1e-15);
        // flat raw scores normalize to 0.5 each: same distribution
        assert!((dataset_total_variation(&[0.3; 4], &labels, 2).unwrap() - 0.25).abs() < 1e-15);
        // zero mass falls back to uniform
        assert!((total_variation(&[0.0; 4], &labels, 2).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(total_variation(&[1.0], &[true], 0), Err(Error::Contract(_))));
    }

    #[test]
    fn std_err_of_identical_values_is_zero() {
        let (m, e) = mean_and_std_err(&[0.1, 0.1, 0.1, 0.1, 0.1]);
        assert_eq!(m, 0.1);
        assert_eq!(e, 0.0);
        let (m, e) = mean_and_std_err(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((e - 1.0).abs() < 1e-15);
    }

    fn one_step_store() -> DatasetStore {
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 2, false));
        b.push(
            ObservationRecord::new("t/0", "t", 0, 0)
                .with_goal_label(false)
                .with_action("open_x"),
            &[0.0, 0.0],
        )
        .unwrap();
        b.push(
            ObservationRecord::new("t/1", "t", 1, 0)
                .with_goal_label(true)
                .with_action("open_x"),
            &[1.0, 1.0],
        )
        .unwrap();
        b.build().unwrap()
    }

    #[test]
    fn single_pair_action_selection() {
        let store = one_step_store();
        let spec = GoalSpec::new(Modality::Synthetic, vec![vec![0.0, 0.0]], vec![vec![1.0, 0.0]], "t").unwrap();
        let ar = action_select(&store, &spec, SimilarityConfig::delta_cosine()).unwrap();
        assert_eq!(ar.pairs.len(), 1);
        assert_eq!(ar.ranking.top().unwrap().id, "t");
        assert_eq!(ar.ranking.top().unwrap().step, Some(1));

        let raw = SimilarityConfig::new(FeatureMode::Raw, crate::zest::Metric::Cosine);
        assert!(matches!(action_select(&store, &spec, raw), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_goal_delta_is_degenerate() {
        let store = one_step_store();
        let spec = GoalSpec::new(Modality::Synthetic, vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]], "t").unwrap();
        let ar = action_select(&store, &spec, SimilarityConfig::delta_cosine()).unwrap();
        assert!(ar.ranking.entries.iter().all(|e| e.degenerate && e.score == 0.0));
    }

    #[test]
    fn unlabeled_records_fail_fast() {
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 1, false));
        b.push(ObservationRecord::new("x", "t", 0, 0), &[1.0]).unwrap();
        let store = b.build().unwrap();
        assert!(matches!(
            EvaluationContext::for_goal_selection(&store, None, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn scenario_tag_must_match_mode() {
        let mut cfg = ScenarioConfig::goal_selection(ScenarioTag::ASDD, "g", DatasetSelector::Diverse);
        assert!(cfg.validate().is_err());
        cfg.scenario_tag = ScenarioTag::SGSD;
        assert!(cfg.validate().is_ok());
        assert!(ScenarioConfig::action_selection("g").validate().is_ok());
    }
}
