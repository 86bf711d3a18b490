use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use zest_core::eval::{
    ablate_goal_samples, run_scenario, ActionClasses, DatasetSelector, EvalMode, ScenarioConfig, ScenarioInputs,
    ScenarioTag,
};
use zest_core::reward::{
    demonstrations, evaluate_policy, export_labeled_jsonl, filtered_bc_train, gt_snippet_pairs, label_dataset,
    trex_pairwise_accuracy, trex_train, RewardModel, TrainConfig,
};
use zest_core::store::{load_store, save_store, DatasetStore};
use zest_core::synthgen::{
    control_env, gen_action_equivalence, gen_control_dataset, gen_dataset, gen_goalspecs, Domain, Ledger, SynthConfig,
};
use zest_core::zest::{GoalSpecSet, SimilarityConfig};
use zest_core::{Error, Result};

use crate::config::{self, named_path, RunReport};
use crate::Common;

/// `--n` value; `None` stands for N = μ.
#[derive(Clone, Copy, Debug)]
pub struct TopN(Option<usize>);

fn parse_n(raw: &str) -> std::result::Result<TopN, String> {
    if raw == "mu" {
        return Ok(TopN(None));
    }
    match raw.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("expected a positive integer or \"mu\", got {raw:?}")),
        Ok(n) => Ok(TopN(Some(n))),
    }
}

fn parse_metric(raw: &str) -> std::result::Result<SimilarityConfig, String> {
    raw.parse().map_err(|e: Error| e.to_string())
}

fn parse_scenario(raw: &str) -> std::result::Result<ScenarioTag, String> {
    raw.parse().map_err(|e: Error| e.to_string())
}

fn fmt_f(x: f64) -> String {
    format!("{x:.4}")
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    #[command(flatten)]
    common: Common,
    /// Observation noise sigma.
    #[arg(long)]
    sigma: Option<f64>,
    /// Domain-shift strength of the shifted goal pools.
    #[arg(long)]
    shift: Option<f64>,
    /// Trajectory split; nonzero values redraw trajectories in the same world.
    #[arg(long)]
    split: Option<u64>,
}

pub fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let mut map = config::load(a.common.config.as_deref())?;
    config::resolve_seed(&mut map, a.common.seed)?;
    config::set_opt(&mut map, "noise_sigma", a.sigma);
    config::set_opt(&mut map, "domain_shift", a.shift);
    config::set_opt(&mut map, "split", a.split);
    let cfg: SynthConfig = config::parse(map)?;
    cfg.validate()?;

    let (store, ledger) = gen_dataset(&cfg)?;
    let out = &a.common.out;
    let store_path = out_file(out, "store.embx")?;
    save_store(&store, &store_path)?;
    ledger.save(&out.join("ledger.jsonl"))?;
    gen_goalspecs(&cfg, Domain::Same)?.save(&out.join("goals_same.json"))?;
    gen_goalspecs(&cfg, Domain::Shifted)?.save(&out.join("goals_shifted.json"))?;
    let classes = gen_action_equivalence(&cfg)?;
    let mut classes_json = serde_json::to_string_pretty(&classes).expect("classes serialize");
    classes_json.push('\n');
    config::write(out, "action_classes.json", classes_json)?;
    let summary = json!({
        "records": store.len(),
        "trajectories": ledger.trajectory_count(),
        "tasks": store.task_tags(),
    });
    config::write(out, "run.json", RunReport::new("gen-synth", &cfg, &summary).to_json())?;

    for task in store.task_tags() {
        let trajs = store
            .trajectories()
            .iter()
            .filter(|t| t.task_tag.as_deref() == Some(&task));
        let (mut n, mut goals) = (0usize, 0usize);
        for t in trajs {
            n += 1;
            goals += t
                .steps
                .iter()
                .flat_map(|s| &s.records)
                .filter(|&&r| store.observations()[r].goal_label == Some(true))
                .count();
        }
        println!("task={task} trajectories={n} goal_frames={goals}");
    }
    println!(
        "wrote {} records ({} trajectories) to {}",
        store.len(),
        ledger.trajectory_count(),
        store_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Dataset store, as PATH or NAME=PATH (repeatable).
    #[arg(long = "store", required = true)]
    stores: Vec<String>,
    /// Goal-spec set, as PATH or NAME=PATH (repeatable).
    #[arg(long = "goals", required = true)]
    goals: Vec<String>,
    /// Action-equivalence classes (needed for ASDD).
    #[arg(long)]
    action_classes: Option<PathBuf>,
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ScenarioTag>,
    /// {raw,delta}+{cosine,neg_l2}
    #[arg(long, value_parser = parse_metric)]
    metric: Option<SimilarityConfig>,
    /// Top-N cutoff, or "mu" for N = μ.
    #[arg(long, value_parser = parse_n)]
    n: Option<TopN>,
    /// "diverse" (whole store) or "narrow" (the evaluated task only).
    #[arg(long)]
    dataset: Option<String>,
    /// Goal/initial samples drawn per repetition.
    #[arg(long)]
    goal_samples: Option<usize>,
    /// Comma-separated task subset.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
}

struct LoadedScenario {
    cfg: ScenarioConfig,
    inputs: ScenarioInputs,
}

fn load_scenario(common: &Common, s: &ScenarioArgs, repetitions: Option<usize>) -> Result<LoadedScenario> {
    let mut inputs = ScenarioInputs::default();
    let mut store_names = Vec::new();
    for raw in &s.stores {
        let (name, path) = named_path(raw, "default");
        inputs.stores.insert(name.clone(), load_store(&path)?);
        store_names.push(name);
    }
    let mut goal_names = Vec::new();
    for raw in &s.goals {
        let (name, path) = named_path(raw, "goals");
        inputs.goals.insert(name.clone(), GoalSpecSet::load(&path)?);
        goal_names.push(name);
    }
    if let Some(path) = &s.action_classes {
        inputs.action_classes = Some(config::read_json::<ActionClasses>(path)?);
    }

    let mut map = config::load(common.config.as_deref())?;
    config::resolve_seed(&mut map, common.seed)?;
    if !map.contains_key("scenario_tag") {
        config::set(&mut map, "scenario_tag", ScenarioTag::SGDD);
    }
    if let Some(tag) = s.scenario {
        config::set(&mut map, "scenario_tag", tag);
    }
    let tag: ScenarioTag =
        serde_json::from_value(map["scenario_tag"].clone()).map_err(|e| Error::Config(format!("scenario_tag: {e}")))?;
    if s.scenario.is_some() || !map.contains_key("mode") {
        let mode = if tag == ScenarioTag::ASDD {
            EvalMode::ActionSelection
        } else {
            EvalMode::GoalSelection
        };
        config::set(&mut map, "mode", mode);
    }
    if !map.contains_key("store") {
        config::set(&mut map, "store", &store_names[0]);
    }
    if !map.contains_key("goal_pool_selector") {
        config::set(&mut map, "goal_pool_selector", &goal_names[0]);
    }
    if !map.contains_key("dataset_selector") {
        config::set(&mut map, "dataset_selector", DatasetSelector::Diverse);
    }
    if let Some(d) = &s.dataset {
        let sel = match d.as_str() {
            "diverse" => DatasetSelector::Diverse,
            "narrow" => DatasetSelector::Narrow,
            _ => return Err(Error::Config(format!("--dataset must be diverse or narrow, got {d:?}"))),
        };
        config::set(&mut map, "dataset_selector", sel);
    }
    if !map.contains_key("similarity") {
        config::set(&mut map, "similarity", SimilarityConfig::delta_cosine());
    }
    config::set_opt(&mut map, "similarity", s.metric);
    if let Some(TopN(n)) = s.n {
        config::set(&mut map, "n", n);
    }
    config::set_opt(&mut map, "repetitions", repetitions);
    config::set_opt(&mut map, "goal_samples", s.goal_samples);
    config::set_opt(&mut map, "tasks", s.tasks.clone());
    let cfg: ScenarioConfig = config::parse(map)?;
    cfg.validate()?;
    Ok(LoadedScenario { cfg, inputs })
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Repetitions per task (goal samples are redrawn each time).
    #[arg(long)]
    repeats: Option<usize>,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let LoadedScenario { cfg, inputs } = load_scenario(&a.common, &a.scenario, a.repeats)?;
    let report = run_scenario(&cfg, &inputs)?;
    let out = &a.common.out;
    let mut json = report.to_json();
    json.push('\n');
    config::write(out, "report.json", json)?;
    config::write(out, "report.csv", report.to_csv())?;
    config::write(out, "table.csv", report.to_table_csv())?;
    for (task, r) in &report.tasks {
        println!(
            "task={task} top_n={} std_err={} dtv={:.6} mu={} n={} random={}",
            fmt_f(r.top_n_success),
            fmt_f(r.top_n_std_err),
            r.dtv,
            r.mu,
            r.n,
            fmt_f(r.random_baseline)
        );
    }
    let agg = &report.aggregate;
    println!(
        "modality={} model={} scenario={:?} metric={} avg={} std_err={} dtv={:.6} random={}",
        report.modality,
        report.model,
        cfg.scenario_tag,
        cfg.similarity,
        fmt_f(agg.top_n_success),
        fmt_f(agg.top_n_std_err),
        agg.dtv,
        fmt_f(agg.random_baseline)
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated goal-sample counts.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,
    /// Repeats per k.
    #[arg(long, default_value_t = zest_core::eval::DEFAULT_ABLATION_REPEATS)]
    repeats: usize,
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let LoadedScenario { cfg, inputs } = load_scenario(&a.common, &a.scenario, None)?;
    let report = ablate_goal_samples(&cfg, &inputs, &a.k, a.repeats)?;
    let out = &a.common.out;
    let mut json = report.to_json();
    json.push('\n');
    config::write(out, "ablation.json", json)?;
    config::write(out, "ablation.csv", report.to_csv())?;
    for r in &report.rows {
        println!(
            "k={} mean={} std_err={} repeats={}",
            r.k,
            fmt_f(r.mean),
            fmt_f(r.std_err),
            r.values.len()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone)]
pub struct RewardInputs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    goals: PathBuf,
    /// {raw,delta}+{cosine,neg_l2}
    #[arg(long, value_parser = parse_metric)]
    metric: Option<SimilarityConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelConfig {
    similarity: SimilarityConfig,
    #[serde(default)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct LabelArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: RewardInputs,
}

fn similarity_into(map: &mut serde_json::Map<String, serde_json::Value>, metric: Option<SimilarityConfig>) {
    if !map.contains_key("similarity") {
        config::set(map, "similarity", SimilarityConfig::delta_cosine());
    }
    config::set_opt(map, "similarity", metric);
}

pub fn label_rewards(a: &LabelArgs) -> Result<()> {
    let mut map = config::load(a.common.config.as_deref())?;
    config::resolve_seed(&mut map, a.common.seed)?;
    similarity_into(&mut map, a.inputs.metric);
    let cfg: LabelConfig = config::parse(map)?;
    let store = load_store(&a.inputs.store)?;
    let goals = GoalSpecSet::load(&a.inputs.goals)?;
    let labeled = label_dataset(&store, &goals, cfg.similarity)?;

    let out = &a.common.out;
    config::write(out, "labeled.jsonl", export_labeled_jsonl(&store, &labeled)?)?;
    let echo = json!({ "store": a.inputs.store, "goals": a.inputs.goals, "label": cfg });
    config::write(
        out,
        "rewards.json",
        RunReport::new("label-rewards", echo, &labeled).to_json(),
    )?;
    let mut csv = String::from("trajectory_id,return\n");
    for l in &labeled {
        writeln!(csv, "{},{}", l.trajectory_id, l.ret).expect("string write");
    }
    config::write(out, "returns.csv", csv)?;

    let mut by_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for l in &labeled {
        let task = store
            .trajectory(&l.trajectory_id)
            .and_then(|t| t.task_tag.clone())
            .unwrap_or_else(|| "-".into());
        by_task.entry(task).or_default().push(l.ret);
    }
    for (task, rets) in &by_task {
        let mean = rets.iter().sum::<f64>() / rets.len() as f64;
        println!("task={task} trajectories={} mean_return={}", rets.len(), fmt_f(mean));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TrainTrexArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    inputs: RewardInputs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pairs_per_epoch: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    snippet_len: Option<usize>,
    /// Task whose trajectories train the model (default: first task in the store).
    #[arg(long)]
    task: Option<String>,
}

fn pick_task(store: &DatasetStore, task: Option<&str>) -> Result<String> {
    let tags = store.task_tags();
    match task {
        Some(t) if tags.iter().any(|x| x == t) => Ok(t.to_string()),
        Some(t) => Err(Error::Config(format!("task {t:?} is not in the store (have {tags:?})"))),
        None => tags
            .into_iter()
            .next()
            .ok_or_else(|| Error::Data("store has no task-tagged trajectories".into())),
    }
}

fn task_of(store: &DatasetStore, trajectory_id: &str) -> Option<String> {
    store.trajectory(trajectory_id).and_then(|t| t.task_tag.clone())
}

pub fn train_trex(a: &TrainTrexArgs) -> Result<()> {
    let mut map = config::load(a.common.config.as_deref())?;
    config::resolve_seed(&mut map, a.common.seed)?;
    let metric = match map.remove("similarity") {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::Config(format!("similarity: {e}")))?,
        None => SimilarityConfig::delta_cosine(),
    };
    let metric = a.inputs.metric.unwrap_or(metric);
    let defaults = TrainConfig::default();
    for (key, default) in [
        ("epochs", defaults.epochs),
        ("pairs_per_epoch", defaults.pairs_per_epoch),
    ] {
        if !map.contains_key(key) {
            config::set(&mut map, key, default);
        }
    }
    config::set_opt(&mut map, "epochs", a.epochs);
    config::set_opt(&mut map, "pairs_per_epoch", a.pairs_per_epoch);
    config::set_opt(&mut map, "learning_rate", a.learning_rate);
    config::set_opt(&mut map, "snippet_len", a.snippet_len);
    let cfg: TrainConfig = config::parse(map)?;
    cfg.validate()?;

    let store = load_store(&a.inputs.store)?;
    let goals = GoalSpecSet::load(&a.inputs.goals)?;
    let task = pick_task(&store, a.task.as_deref())?;
    let labeled: Vec<_> = label_dataset(&store, &goals, metric)?
        .into_iter()
        .filter(|l| task_of(&store, &l.trajectory_id).as_deref() == Some(task.as_str()))
        .collect();
    let demos = demonstrations(&store, &labeled)?;
    let trained = trex_train(&demos, &cfg)?;

    let out = &a.common.out;
    trained.model.save(&out_file(out, "model.json")?, cfg.seed, &cfg)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in trained.loss_curve.iter().enumerate() {
        writeln!(csv, "{},{}", i + 1, l).expect("string write");
    }
    config::write(out, "loss.csv", csv)?;
    let echo = json!({
        "store": a.inputs.store,
        "goals": a.inputs.goals,
        "similarity": metric,
        "task": task,
        "train": cfg,
    });
    let result = json!({
        "trajectories": demos.len(),
        "final_loss": trained.loss_curve.last(),
        "loss_curve": trained.loss_curve,
    });
    config::write(out, "train.json", RunReport::new("train-trex", echo, result).to_json())?;
    println!(
        "trained task={task} epochs={} trajectories={} final_loss={}",
        cfg.epochs,
        demos.len(),
        trained.loss_curve.last().map_or("-".to_string(), |l| fmt_f(*l))
    );
    Ok(())
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(dir.join(name))
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EvalTrexArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Held-out store to draw snippets from.
    #[arg(long)]
    store: PathBuf,
    /// Ground-truth ledger of the held-out store.
    #[arg(long)]
    ledger: PathBuf,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    snippet_len: Option<usize>,
    /// Task whose held-out trajectories are scored (default: first task in the store).
    #[arg(long)]
    task: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalTrexConfig {
    pairs: usize,
    snippet_len: usize,
    seed: u64,
}

type DenseTrajectory = (Vec<Vec<f64>>, Vec<f64>);

fn ground_truth_snippets(store: &DatasetStore, ledger: &Ledger, task: &str) -> Result<Vec<DenseTrajectory>> {
    let progress = ledger.progress_of();
    store
        .trajectories()
        .iter()
        .filter(|t| t.task_tag.as_deref() == Some(task))
        .map(|t| {
            let mut obs = Vec::with_capacity(t.len());
            let mut rew = Vec::with_capacity(t.len());
            for s in &t.steps {
                let rec = s.records[0];
                let id = store.observations()[rec].id.as_str();
                let p = progress
                    .get(id)
                    .ok_or_else(|| Error::Data(format!("ledger has no entry for record {id:?}")))?;
                obs.push(store.embedding(rec).to_vec());
                rew.push(*p);
            }
            Ok((obs, rew))
        })
        .collect()
}

pub fn eval_trex(a: &EvalTrexArgs) -> Result<()> {
    let (model, _, train_cfg) = RewardModel::load(&a.model)?;
    let mut map = config::load(a.common.config.as_deref())?;
    config::resolve_seed(&mut map, a.common.seed)?;
    if !map.contains_key("pairs") {
        config::set(&mut map, "pairs", 500usize);
    }
    if !map.contains_key("snippet_len") {
        config::set(&mut map, "snippet_len", train_cfg.snippet_len);
    }
    if !map.contains_key("seed") {
        config::set(&mut map, "seed", 0u64);
    }
    config::set_opt(&mut map, "pairs", a.pairs);
    config::set_opt(&mut map, "snippet_len", a.snippet_len);
    let cfg: EvalTrexConfig = config::parse(map)?;

    let store = load_store(&a.store)?;
    let ledger = Ledger::load(&a.ledger)?;
    let task = pick_task(&store, a.task.as_deref())?;
    let trajectories = ground_truth_snippets(&store, &ledger, &task)?;
    let pairs = gt_snippet_pairs(&trajectories, cfg.pairs, cfg.snippet_len, cfg.seed)?;
    let accuracy = trex_pairwise_accuracy(&model, &pairs)?;
    let echo = json!({ "model": a.model, "store": a.store, "ledger": a.ledger, "task": task, "eval": cfg });
    let result = json!({ "pairwise_accuracy": accuracy, "pairs": pairs.len() });
    config::write(
        &a.common.out,
        "eval_trex.json",
        RunReport::new("eval-trex", echo, result).to_json(),
    )?;
    println!(
        "task={task} pairwise_accuracy={} pairs={}",
        fmt_f(accuracy),
        pairs.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct BcArgs {
    #[command(flatten)]
    common: Common,
    /// Fraction of top-ranked trajectories kept for cloning.
    #[arg(long)]
    keep_fraction: Option<f64>,
    /// Behavior trajectories in the offline dataset.
    #[arg(long)]
    trajectories: Option<usize>,
    /// Evaluation episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// {raw,delta}+{cosine,neg_l2}
    #[arg(long, value_parser = parse_metric)]
    metric: Option<SimilarityConfig>,
    /// Observation noise sigma of the control environment.
    #[arg(long)]
    sigma: Option<f64>,
}

fn default_keep() -> f64 {
    0.25
}
fn default_trajectories() -> usize {
    100
}
fn default_episodes() -> usize {
    20
}
fn default_env() -> SynthConfig {
    SynthConfig {
        noise_sigma: 0.1,
        ..SynthConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BcConfig {
    #[serde(default = "default_env")]
    env: SynthConfig,
    #[serde(default = "default_keep")]
    keep_fraction: f64,
    #[serde(default = "default_trajectories")]
    trajectories: usize,
    #[serde(default = "default_episodes")]
    episodes: usize,
    similarity: SimilarityConfig,
    #[serde(default)]
    seed: u64,
}

pub fn bc(a: &BcArgs) -> Result<()> {
    let mut map = config::load(a.common.config.as_deref())?;
    config::resolve_seed(&mut map, a.common.seed)?;
    similarity_into(&mut map, a.metric);
    config::set_opt(&mut map, "keep_fraction", a.keep_fraction);
    config::set_opt(&mut map, "trajectories", a.trajectories);
    config::set_opt(&mut map, "episodes", a.episodes);
    let mut cfg: BcConfig = config::parse(map)?;
    if let Some(s) = a.sigma {
        cfg.env.noise_sigma = s;
    }
    cfg.env.seed = cfg.seed;
    if !(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "keep_fraction must lie in (0, 1], got {}",
            cfg.keep_fraction
        )));
    }

    let env = control_env(&cfg.env)?;
    let (store, gt) = gen_control_dataset(&env, cfg.trajectories, cfg.seed)?;
    let goals = GoalSpecSet::new([(env.task_name().to_string(), env.goal_spec())].into_iter().collect());
    let labeled = label_dataset(&store, &goals, cfg.similarity)?;
    let mut filtered = filtered_bc_train(&store, &labeled, cfg.keep_fraction)?;
    let mut plain = filtered_bc_train(&store, &labeled, 1.0)?;
    let q = evaluate_policy(&mut filtered, &env, cfg.episodes, cfg.seed)?;
    let full = evaluate_policy(&mut plain, &env, cfg.episodes, cfg.seed)?;
    let dataset_return = gt.values().sum::<f64>() / gt.len() as f64;

    let out = &a.common.out;
    let result = json!({
        "filtered": q,
        "plain": full,
        "dataset_mean_return": dataset_return,
    });
    config::write(out, "bc.json", RunReport::new("bc", &cfg, result).to_json())?;
    let mut csv = String::from("keep_fraction,normalized_return,mean_return,expert_mean_return\n");
    for (k, s) in [(cfg.keep_fraction, &q), (1.0, &full)] {
        writeln!(csv, "{k},{},{},{}", s.normalized, s.mean_return, s.expert_mean_return).expect("string write");
    }
    config::write(out, "bc.csv", csv)?;
    println!(
        "q={} normalized_return={} | q=1 normalized_return={}",
        cfg.keep_fraction,
        fmt_f(q.normalized),
        fmt_f(full.normalized)
    );
    Ok(())
}
