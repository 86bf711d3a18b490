//! Seeded synthetic benchmark generator.
//!
//! Each task owns a curved progress path through a latent space plus a
//! signed action coordinate (positive for "open" tasks, negative for
//! "close" ones). A scene is that latent at progress `p` plus a per-scene
//! distractor latent. The domain map sends the path and the distractor to
//! disjoint embedding coordinates through `tanh(W x + b)` and the action
//! coordinate linearly onto a third block. The distractor is constant along
//! a trajectory, so it cancels in delta features while still polluting raw
//! ones. A shifted domain applies an extra affine transform.
//!
//! All randomness comes from ChaCha8 streams derived from `SynthConfig::seed`,
//! so identical configs yield byte-identical stores and ledgers.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ActionClasses;
use crate::store::{DatasetStore, EncoderProfile, ObservationRecord, StoreBuilder};
use crate::zest::{GoalSpec, GoalSpecSet, Modality};

pub const ENCODER_NAME: &str = "synthgen";
pub const LEDGER_SCHEMA: u32 = 1;

const TASK_NAMES: [&str; 6] = ["micro", "ldoor", "sdoor", "rdoor", "knob2", "knob3"];
const ACTION_WEIGHT: f64 = 1.0;
const ACTION_BLOCK_SCALE: f64 = 3.0;
const ARC_RADIUS: f64 = 0.75;
const BASE_SCALE: f64 = 0.5;
const BIAS_SCALE: f64 = 0.3;
const SHIFT_OFFSET_SCALE: f64 = 0.5;

const STREAM_WORLD: u64 = 1;
const STREAM_DATASET: u64 = 2;
const STREAM_GOALS: u64 = 3;
const STREAM_EPISODE: u64 = 16;
const STREAM_CONTROL_DATA: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub task_count: usize,
    pub trajectories_per_task: usize,
    pub steps_per_trajectory: usize,
    pub expert_fraction: f64,
    pub noise_sigma: f64,
    pub domain_shift: f64,
    pub goal_threshold: f64,
    /// Initial/goal embeddings generated per task by `gen_goalspecs`.
    pub goal_pool_size: usize,
    pub seed: u64,
    /// Redraws the trajectories of `gen_dataset` while keeping the world
    /// (tasks, encoder map, goal pools) fixed by `seed`.
    pub split: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            embed_dim: 32,
            task_count: 5,
            trajectories_per_task: 10,
            steps_per_trajectory: 20,
            expert_fraction: 0.5,
            noise_sigma: 0.0,
            domain_shift: 0.0,
            goal_threshold: 0.9,
            goal_pool_size: 50,
            seed: 0,
            split: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.latent_dim == 0 || self.embed_dim < 2 {
            return fail("latent_dim must be at least 1 and embed_dim at least 2");
        }
        if self.task_count == 0 || self.trajectories_per_task == 0 || self.goal_pool_size == 0 {
            return fail("task_count, trajectories_per_task and goal_pool_size must be at least 1");
        }
        if self.steps_per_trajectory < 2 {
            return fail("steps_per_trajectory must be at least 2 so experts can reach the goal");
        }
        if !(self.expert_fraction > 0.0 && self.expert_fraction <= 1.0) {
            return fail("expert_fraction must lie in (0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be finite and nonnegative");
        }
        if !(self.domain_shift >= 0.0 && self.domain_shift.is_finite()) {
            return fail("domain_shift must be finite and nonnegative");
        }
        if !(self.goal_threshold > 0.0 && self.goal_threshold < 1.0) {
            return fail("goal_threshold must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn task_name(index: usize) -> String {
        TASK_NAMES
            .get(index)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("task{index}"))
    }

    fn expert_count(&self) -> usize {
        ((self.expert_fraction * self.trajectories_per_task as f64).round() as usize)
            .clamp(1, self.trajectories_per_task)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn add_noise(rng: &mut impl Rng, v: &mut [f64], sigma: f64) {
    // always draw so the stream position is independent of sigma
    for x in v.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *x += sigma * n;
    }
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Random unit vector orthogonal to `basis` (an orthonormal set) when the
/// dimension allows, otherwise a plain random unit vector.
fn orthogonal_unit(rng: &mut impl Rng, dim: usize, basis: &[&[f64]]) -> Vec<f64> {
    let mut v = gaussian_vec(rng, dim, 1.0);
    let raw = v.clone();
    for b in basis {
        let proj: f64 = v.iter().zip(*b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(*b).for_each(|(x, y)| *x -= proj * y);
    }
    if v.iter().map(|x| x * x).sum::<f64>() < 1e-12 {
        return unit(raw);
    }
    unit(v)
}

/// Whether the goal-spec embeddings come from the dataset's own domain or a
/// shifted one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Same,
    Shifted,
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Domain::Same),
            "shifted" => Ok(Domain::Shifted),
            _ => Err(Error::Config(format!("unknown domain {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
struct TaskGeometry {
    name: String,
    opens: bool,
    base: Vec<f64>,
    arc_u: Vec<f64>,
    arc_v: Vec<f64>,
}

/// `tanh(W x + b)` on the progress and distractor blocks, plus the affine
/// transform applied in the shifted domain.
#[derive(Clone, Debug)]
pub struct DomainMap {
    latent_dim: usize,
    distractor_dim: usize,
    progress_out: usize,
    action_out: usize,
    distractor_out: usize,
    progress_weights: Vec<f64>,
    progress_bias: Vec<f64>,
    action_direction: Vec<f64>,
    distractor_weights: Vec<f64>,
    distractor_bias: Vec<f64>,
    shift_matrix: Vec<f64>,
    shift_offset: Vec<f64>,
    shift_strength: f64,
}

impl DomainMap {
    fn new(rng: &mut impl Rng, cfg: &SynthConfig) -> Self {
        let latent_dim = cfg.latent_dim;
        let distractor_dim = (latent_dim / 2).max(1);
        let distractor_out = cfg.embed_dim / 4;
        let action_out = (cfg.embed_dim / 8).max(1);
        let progress_out = cfg.embed_dim - distractor_out - action_out;
        let e = cfg.embed_dim;
        Self {
            latent_dim,
            distractor_dim,
            progress_out,
            action_out,
            distractor_out,
            progress_weights: gaussian_vec(rng, progress_out * latent_dim, 1.0 / (latent_dim as f64).sqrt()),
            progress_bias: gaussian_vec(rng, progress_out, BIAS_SCALE),
            action_direction: unit(gaussian_vec(rng, action_out, 1.0)),
            distractor_weights: gaussian_vec(
                rng,
                distractor_out * distractor_dim,
                1.0 / (distractor_dim as f64).sqrt(),
            ),
            distractor_bias: gaussian_vec(rng, distractor_out, BIAS_SCALE),
            shift_matrix: gaussian_vec(rng, e * e, 1.0 / (e as f64).sqrt()),
            shift_offset: gaussian_vec(rng, e, SHIFT_OFFSET_SCALE),
            shift_strength: cfg.domain_shift,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.progress_out + self.action_out + self.distractor_out
    }

    /// Noise-free embedding of a scene. The last latent coordinate is the
    /// signed action coordinate and maps linearly onto its own block.
    pub fn embed(&self, latent: &[f64], distractor: &[f64], domain: Domain) -> Vec<f64> {
        let (path, action) = latent.split_at(self.latent_dim);
        let mut out = Vec::with_capacity(self.embed_dim());
        for row in self.progress_weights.chunks(self.latent_dim).zip(&self.progress_bias) {
            let pre: f64 = row.0.iter().zip(path).map(|(w, x)| w * x).sum::<f64>() + row.1;
            out.push(pre.tanh());
        }
        out.extend(self.action_direction.iter().map(|d| ACTION_BLOCK_SCALE * action[0] * d));
        for row in self
            .distractor_weights
            .chunks(self.distractor_dim)
            .zip(&self.distractor_bias)
        {
            let pre: f64 = row.0.iter().zip(distractor).map(|(w, x)| w * x).sum::<f64>() + row.1;
            out.push(pre.tanh());
        }
        if domain == Domain::Shifted && self.shift_strength > 0.0 {
            let e = self.embed_dim();
            let shifted: Vec<f64> = (0..e)
                .map(|i| {
                    let row = &self.shift_matrix[i * e..(i + 1) * e];
                    let mx: f64 = row.iter().zip(&out).map(|(m, x)| m * x).sum();
                    out[i] + self.shift_strength * (mx + self.shift_offset[i])
                })
                .collect();
            return shifted;
        }
        out
    }
}

/// The fixed geometry shared by every generator call with the same config.
#[derive(Clone, Debug)]
pub struct SynthWorld {
    cfg: SynthConfig,
    tasks: Vec<TaskGeometry>,
    map: DomainMap,
}

impl SynthWorld {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(cfg.seed, STREAM_WORLD);
        let l = cfg.latent_dim;
        let tasks = (0..cfg.task_count)
            .map(|i| {
                let base = gaussian_vec(&mut rng, l, BASE_SCALE);
                let arc_u = unit(gaussian_vec(&mut rng, l, 1.0));
                let arc_v = orthogonal_unit(&mut rng, l, &[&arc_u]);
                TaskGeometry {
                    name: SynthConfig::task_name(i),
                    opens: i % 2 == 0,
                    base,
                    arc_u,
                    arc_v,
                }
            })
            .collect();
        let map = DomainMap::new(&mut rng, cfg);
        Ok(Self {
            cfg: cfg.clone(),
            tasks,
            map,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn map(&self) -> &DomainMap {
        &self.map
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_name(&self, task: usize) -> &str {
        &self.tasks[task].name
    }

    /// "open" for tasks whose progress runs along the shared action axis,
    /// "close" for the opposite direction.
    pub fn action_class(&self, task: usize) -> &'static str {
        if self.tasks[task].opens {
            "open"
        } else {
            "close"
        }
    }

    pub fn action_token(&self, task: usize) -> String {
        format!("{}_{}", self.action_class(task), self.tasks[task].name)
    }

    pub fn distractor_dim(&self) -> usize {
        self.map.distractor_dim
    }

    /// Latent position of `task` at progress `p`: the curved task path
    /// followed by the signed action coordinate.
    pub fn latent(&self, task: usize, p: f64) -> Vec<f64> {
        let t = &self.tasks[task];
        let sign = if t.opens { 1.0 } else { -1.0 };
        let (a, b) = (ARC_RADIUS * (1.0 - (PI * p).cos()), ARC_RADIUS * (PI * p).sin());
        let mut out: Vec<f64> = (0..self.cfg.latent_dim)
            .map(|i| t.base[i] + a * t.arc_u[i] + b * t.arc_v[i])
            .collect();
        out.push(sign * ACTION_WEIGHT * p);
        out
    }

    pub fn embed_scene(&self, task: usize, p: f64, distractor: &[f64], domain: Domain) -> Vec<f64> {
        self.map.embed(&self.latent(task, p), distractor, domain)
    }
}

/// Per-record ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub record_id: String,
    pub trajectory_id: String,
    pub task: String,
    pub step: u32,
    pub progress: f64,
    /// Whether the record's trajectory reaches the goal threshold.
    pub success: bool,
    pub action_class: String,
    pub goal_label: bool,
}

#[derive(Serialize, Deserialize)]
struct LedgerHeader {
    schema: u32,
    kind: String,
    goal_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ledger {
    pub goal_threshold: f64,
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn trajectory_count(&self) -> usize {
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.trajectory_id.as_str()).collect();
        ids.dedup();
        ids.len()
    }

    pub fn progress_of(&self) -> BTreeMap<&str, f64> {
        self.entries
            .iter()
            .map(|e| (e.record_id.as_str(), e.progress))
            .collect()
    }

    pub fn encode(&self) -> String {
        let header = LedgerHeader {
            schema: LEDGER_SCHEMA,
            kind: "synthgen_ledger".into(),
            goal_threshold: self.goal_threshold,
        };
        let mut out = serde_json::to_string(&header).expect("ledger header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("ledger entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.encode().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header: LedgerHeader = serde_json::from_str(lines.next().unwrap_or(""))
            .map_err(|e| Error::Schema(format!("ledger header: {e}")))?;
        if header.schema != LEDGER_SCHEMA {
            return Err(Error::Schema(format!("unsupported ledger schema {}", header.schema)));
        }
        let entries = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Schema(format!("ledger line {}: {e}", n + 2))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            goal_threshold: header.goal_threshold,
            entries,
        })
    }
}

fn progress_schedule(steps: usize, cap: f64, curve: f64) -> Vec<f64> {
    (0..steps)
        .map(|t| cap * (t as f64 / (steps - 1) as f64).powf(curve))
        .collect()
}

/// Generates the experience dataset and its ground-truth ledger.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<(DatasetStore, Ledger)> {
    let world = SynthWorld::new(cfg)?;
    let mut rng = rng_for(cfg.seed, STREAM_DATASET + (cfg.split << 8));
    let mut builder = StoreBuilder::new(EncoderProfile::new(ENCODER_NAME, cfg.embed_dim, false));
    builder
        .provenance("generator", "synthgen")
        .provenance("seed", cfg.seed.to_string())
        .provenance("config", serde_json::to_string(cfg).expect("config serializes"));
    let mut ledger = Ledger {
        goal_threshold: cfg.goal_threshold,
        entries: Vec::new(),
    };
    let dd = world.distractor_dim();

    for task in 0..world.task_count() {
        let mut order: Vec<usize> = (0..cfg.trajectories_per_task).collect();
        order.shuffle(&mut rng);
        let experts = cfg.expert_count();
        let mut is_expert = vec![false; cfg.trajectories_per_task];
        for &i in &order[..experts] {
            is_expert[i] = true;
        }
        let name = world.task_name(task).to_string();
        let token = world.action_token(task);
        let class = world.action_class(task);
        let mut task_latents: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();

        for (k, &expert) in is_expert.iter().enumerate() {
            let traj_id = format!("{name}-{k:04}");
            let curve = rng.random_range(0.8..1.25);
            let cap = if expert { 1.0 } else { rng.random_range(0.2..0.6) };
            let distractor = gaussian_vec(&mut rng, dd, 1.0);
            let schedule = progress_schedule(cfg.steps_per_trajectory, cap, curve);
            let success = schedule.iter().any(|&p| p >= cfg.goal_threshold);
            for (t, &p) in schedule.iter().enumerate() {
                let latent = world.latent(task, p);
                let clean = world.map.embed(&latent, &distractor, Domain::Same);
                let mut noisy = clean.clone();
                add_noise(&mut rng, &mut noisy, cfg.noise_sigma);
                let record_id = format!("{traj_id}/{t:04}/0");
                let goal_label = p >= cfg.goal_threshold;
                let mut rec = ObservationRecord::new(&record_id, &traj_id, t as u32, 0)
                    .with_goal_label(goal_label)
                    .with_task(&name)
                    .with_action(&token);
                rec.modality = Some(Modality::Synthetic.as_str().to_string());
                builder.push(rec, &noisy)?;
                ledger.entries.push(LedgerEntry {
                    record_id,
                    trajectory_id: traj_id.clone(),
                    task: name.clone(),
                    step: t as u32,
                    progress: p,
                    success,
                    action_class: class.to_string(),
                    goal_label,
                });
                task_latents.push((latent, distractor.clone(), clean));
            }
        }
        check_injective(&task_latents, &name)?;
    }
    Ok((builder.build()?, ledger))
}

// Distinct latents of one task must stay distinguishable after the map.
fn check_injective(scenes: &[(Vec<f64>, Vec<f64>, Vec<f64>)], task: &str) -> Result<()> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    for i in 0..scenes.len() {
        for j in i + 1..scenes.len() {
            let same_latent = scenes[i].0 == scenes[j].0 && scenes[i].1 == scenes[j].1;
            if !same_latent && dist(&scenes[i].2, &scenes[j].2) < 1e-6 {
                return Err(Error::Data(format!(
                    "domain map collapsed two distinct scenes of task {task:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Per-task pools of initial (p = 0) and goal (p = 1) embeddings. Pool entry
/// `i` shows one scene before and after the task.
pub fn gen_goalspecs(cfg: &SynthConfig, domain: Domain) -> Result<GoalSpecSet> {
    let world = SynthWorld::new(cfg)?;
    let mut rng = rng_for(cfg.seed, STREAM_GOALS);
    let mut specs = BTreeMap::new();
    for task in 0..world.task_count() {
        let mut initial = Vec::with_capacity(cfg.goal_pool_size);
        let mut goal = Vec::with_capacity(cfg.goal_pool_size);
        for _ in 0..cfg.goal_pool_size {
            let distractor = gaussian_vec(&mut rng, world.distractor_dim(), 1.0);
            let mut x0 = world.embed_scene(task, 0.0, &distractor, domain);
            let mut xf = world.embed_scene(task, 1.0, &distractor, domain);
            add_noise(&mut rng, &mut x0, cfg.noise_sigma);
            add_noise(&mut rng, &mut xf, cfg.noise_sigma);
            initial.push(x0);
            goal.push(xf);
        }
        specs.insert(
            world.task_name(task).to_string(),
            GoalSpec::new(Modality::Synthetic, initial, goal, ENCODER_NAME)?,
        );
    }
    Ok(GoalSpecSet::new(specs))
}

/// Action-token equivalence: every "open" task shares one class, every
/// "close" task the other.
pub fn gen_action_equivalence(cfg: &SynthConfig) -> Result<ActionClasses> {
    let world = SynthWorld::new(cfg)?;
    let mut classes = ActionClasses::default();
    for task in 0..world.task_count() {
        let class = world.action_class(task).to_string();
        classes.token_class.insert(world.action_token(task), class.clone());
        classes.task_class.insert(world.task_name(task).to_string(), class);
    }
    Ok(classes)
}

// ---------------------------------------------------------------------------
// Control environment
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Advance,
    Retreat,
    Stay,
}

impl ControlAction {
    pub const ALL: [ControlAction; 3] = [ControlAction::Advance, ControlAction::Retreat, ControlAction::Stay];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlAction::Advance => "advance",
            ControlAction::Retreat => "retreat",
            ControlAction::Stay => "stay",
        }
    }

    fn direction(self) -> f64 {
        match self {
            ControlAction::Advance => 1.0,
            ControlAction::Retreat => -1.0,
            ControlAction::Stay => 0.0,
        }
    }
}

impl FromStr for ControlAction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "advance" => Ok(ControlAction::Advance),
            "retreat" => Ok(ControlAction::Retreat),
            "stay" => Ok(ControlAction::Stay),
            _ => Err(Error::Contract(format!("unknown control action {s:?}"))),
        }
    }
}

/// One-dimensional progress task rendered through the first task's
/// geometry. Actions move progress by one step size (plus seeded noise);
/// the reward is the progress increase. The distractor is fixed at zero.
#[derive(Clone, Debug)]
pub struct ControlEnv {
    world: SynthWorld,
    steps: usize,
    step_size: f64,
    action_noise: f64,
    obs_sigma: f64,
}

pub fn control_env(cfg: &SynthConfig) -> Result<ControlEnv> {
    ControlEnv::new(cfg)
}

impl ControlEnv {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        let world = SynthWorld::new(cfg)?;
        let steps = cfg.steps_per_trajectory;
        let step_size = 1.0 / steps as f64;
        Ok(Self {
            world,
            steps,
            step_size,
            action_noise: cfg.noise_sigma * step_size,
            obs_sigma: cfg.noise_sigma,
        })
    }

    pub fn episode_len(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn task_name(&self) -> &str {
        self.world.task_name(0)
    }

    /// Return of the always-advance policy without noise.
    pub fn nominal_expert_return(&self) -> f64 {
        self.steps as f64 * self.step_size
    }

    fn zero_distractor(&self) -> Vec<f64> {
        vec![0.0; self.world.distractor_dim()]
    }

    pub fn clean_observation(&self, progress: f64) -> Vec<f64> {
        self.world
            .embed_scene(0, progress, &self.zero_distractor(), Domain::Same)
    }

    /// Single-pair goal specification: the task's start and goal scenes.
    pub fn goal_spec(&self) -> GoalSpec {
        GoalSpec::new(
            Modality::Synthetic,
            vec![self.clean_observation(0.0)],
            vec![self.clean_observation(1.0)],
            ENCODER_NAME,
        )
        .expect("clean observations are valid")
    }

    pub fn reset(&self, seed: u64) -> Episode<'_> {
        let mut rng = rng_for(seed, STREAM_EPISODE);
        let mut observation = self.clean_observation(0.0);
        add_noise(&mut rng, &mut observation, self.obs_sigma);
        Episode {
            env: self,
            rng,
            progress: 0.0,
            t: 0,
            observation,
        }
    }
}

pub struct Episode<'a> {
    env: &'a ControlEnv,
    rng: ChaCha8Rng,
    progress: f64,
    t: usize,
    observation: Vec<f64>,
}

impl Episode<'_> {
    pub fn observation(&self) -> &[f64] {
        &self.observation
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn done(&self) -> bool {
        self.t >= self.env.steps
    }

    /// Applies an action and returns the progress increase. The noise draws
    /// are identical whatever the action.
    pub fn step(&mut self, action: ControlAction) -> f64 {
        let jitter: f64 = StandardNormal.sample(&mut self.rng);
        let dir = action.direction();
        let moved = if dir == 0.0 {
            0.0
        } else {
            dir * self.env.step_size + self.env.action_noise * jitter
        };
        let before = self.progress;
        self.progress = (self.progress + moved).clamp(-1.0, 1.0);
        self.t += 1;
        let mut obs = self.env.clean_observation(self.progress);
        add_noise(&mut self.rng, &mut obs, self.env.obs_sigma);
        self.observation = obs;
        self.progress - before
    }
}

/// Rollouts of mixed-skill behavior policies in the control environment,
/// stored as a dataset with one action token per non-terminal step. Returns
/// the store and each trajectory's ground-truth return, keyed by id.
pub fn gen_control_dataset(
    env: &ControlEnv,
    trajectories: usize,
    seed: u64,
) -> Result<(DatasetStore, BTreeMap<String, f64>)> {
    let mut rng = rng_for(seed, STREAM_CONTROL_DATA);
    let dim = env.world.map.embed_dim();
    let mut builder = StoreBuilder::new(EncoderProfile::new(ENCODER_NAME, dim, false));
    builder
        .provenance("generator", "synthgen-control")
        .provenance("seed", seed.to_string());
    let task = env.task_name().to_string();
    let threshold = env.world.config().goal_threshold;
    let mut returns = BTreeMap::new();

    for k in 0..trajectories {
        let traj_id = format!("ctrl-{k:04}");
        let skill: f64 = rng.random_range(0.0..1.0);
        let episode_seed: u64 = rng.random();
        let mut ep = env.reset(episode_seed);
        let mut ret = 0.0;
        for t in 0..=env.steps {
            let rec_id = format!("{traj_id}/{t:04}/0");
            let mut rec = ObservationRecord::new(rec_id, &traj_id, t as u32, 0)
                .with_task(&task)
                .with_goal_label(ep.progress() >= threshold);
            rec.modality = Some(Modality::Synthetic.as_str().to_string());
            let obs = ep.observation().to_vec();
            if ep.done() {
                builder.push(rec, &obs)?;
                break;
            }
            let action = if rng.random_bool(skill) {
                ControlAction::Advance
            } else {
                ControlAction::ALL[rng.random_range(0..3)]
            };
            builder.push(rec.with_action(action.as_str()), &obs)?;
            ret += ep.step(action);
        }
        returns.insert(traj_id, ret);
    }
    Ok((builder.build()?, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zest::{cosine, delta_feature};

    fn small() -> SynthConfig {
        SynthConfig {
            task_count: 5,
            trajectories_per_task: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_match_ledger() {
        let (store, ledger) = gen_dataset(&small()).unwrap();
        assert_eq!(ledger.trajectory_count(), 50);
        assert_eq!(store.trajectories().len(), 50);
        assert_eq!(store.len(), ledger.entries.len());
    }

    #[test]
    fn split_keeps_world() {
        let (a, _) = gen_dataset(&small()).unwrap();
        let (b, _) = gen_dataset(&SynthConfig { split: 1, ..small() }).unwrap();
        assert_ne!(a.embedding(5), b.embedding(5));
        assert_eq!(
            gen_goalspecs(&small(), Domain::Same).unwrap(),
            gen_goalspecs(&SynthConfig { split: 1, ..small() }, Domain::Same).unwrap()
        );
    }

    #[test]
    fn labels_follow_progress() {
        let cfg = SynthConfig {
            noise_sigma: 0.3,
            ..small()
        };
        let (store, ledger) = gen_dataset(&cfg).unwrap();
        for (rec, e) in store.observations().iter().zip(&ledger.entries) {
            assert_eq!(rec.id, e.record_id);
            assert_eq!(rec.goal_label, Some(e.progress >= cfg.goal_threshold));
        }
    }

    #[test]
    fn all_experts_reach_goal() {
        let cfg = SynthConfig {
            expert_fraction: 1.0,
            ..small()
        };
        let (store, _) = gen_dataset(&cfg).unwrap();
        for t in store.trajectories() {
            let last = t.steps.last().unwrap().records[0];
            assert_eq!(store.observations()[last].goal_label, Some(true));
        }
    }

    #[test]
    fn failed_progress_is_capped() {
        let (_, ledger) = gen_dataset(&small()).unwrap();
        for e in &ledger.entries {
            if !e.success {
                assert!(e.progress < 0.6);
            }
        }
    }

    #[test]
    fn expert_delta_matches_goal_delta() {
        let cfg = small();
        let (store, ledger) = gen_dataset(&cfg).unwrap();
        let goals = gen_goalspecs(&cfg, Domain::Same).unwrap();
        for t in store.trajectories() {
            let first = t.steps[0].records[0];
            let last = t.steps.last().unwrap().records[0];
            if !ledger.entries[last].success {
                continue;
            }
            let spec = goals.get(t.task_tag.as_deref().unwrap()).unwrap();
            let obs = delta_feature(store.embedding(last), store.embedding(first)).unwrap();
            let goal = delta_feature(&spec.goal_pool[0], &spec.initial_pool[0]).unwrap();
            assert!(cosine(&obs, &goal).unwrap().value >= 0.9);
        }
    }

    #[test]
    fn zero_shift_pools_match_same_domain() {
        let cfg = small();
        assert_eq!(
            gen_goalspecs(&cfg, Domain::Same).unwrap(),
            gen_goalspecs(&cfg, Domain::Shifted).unwrap()
        );
        let spec = gen_goalspecs(
            &SynthConfig {
                goal_pool_size: 7,
                ..cfg
            },
            Domain::Same,
        )
        .unwrap();
        for s in spec.specs.values() {
            assert_eq!(s.goal_pool.len(), 7);
            assert_eq!(s.initial_pool.len(), 7);
        }
    }

    #[test]
    fn equivalence_classes_by_direction() {
        let classes = gen_action_equivalence(&small()).unwrap();
        assert_eq!(classes.task_class["micro"], classes.task_class["sdoor"]);
        assert_ne!(classes.task_class["micro"], classes.task_class["ldoor"]);
        assert_eq!(classes.token_class["open_micro"], "open");
        assert_eq!(classes.token_class["close_ldoor"], "close");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            noise_sigma: 0.2,
            seed: 9,
            ..small()
        };
        let (a, la) = gen_dataset(&cfg).unwrap();
        let (b, lb) = gen_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.encode(), lb.encode());
    }

    #[test]
    fn control_env_returns() {
        let env = control_env(&small()).unwrap();
        let mut ep = env.reset(3);
        let mut ret = 0.0;
        while !ep.done() {
            ret += ep.step(ControlAction::Advance);
        }
        assert!((ret - env.nominal_expert_return()).abs() < 1e-12);

        let mut ep = env.reset(3);
        let mut ret = 0.0;
        while !ep.done() {
            ret += ep.step(ControlAction::Stay);
        }
        assert_eq!(ret, 0.0);
    }

    #[test]
    fn random_policy_return_near_zero() {
        let env = control_env(&small()).unwrap();
        let mut rng = rng_for(77, 0);
        let episodes = 2000;
        let mut total = 0.0;
        for e in 0..episodes {
            let mut ep = env.reset(e);
            while !ep.done() {
                total += ep.step(ControlAction::ALL[rng.random_range(0..3)]);
            }
        }
        let mean = total / episodes as f64;
        assert!(mean.abs() < 0.05 * env.nominal_expert_return(), "mean {mean}");
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            SynthConfig {
                steps_per_trajectory: 1,
                ..small()
            },
            SynthConfig {
                expert_fraction: 0.0,
                ..small()
            },
            SynthConfig {
                goal_threshold: 1.0,
                ..small()
            },
            SynthConfig {
                embed_dim: 0,
                ..small()
            },
        ] {
            assert!(matches!(gen_dataset(&bad), Err(Error::Config(_))));
        }
    }
}
