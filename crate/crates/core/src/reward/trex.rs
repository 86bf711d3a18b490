//! Pairwise-ranking reward learning over trajectory snippets.
//!
//! The reward network is a tanh MLP `[dim, 64, 64, 1]`. A snippet's
//! predicted return is the sum of per-step rewards, and a preference pair
//! is scored with the Bradley-Terry cross-entropy
//! `softplus(R_lo - R_hi) = -log(exp(R_hi) / (exp(R_lo) + exp(R_hi)))`.
//! Gradients are computed by hand.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, contract, Error, Result};

pub const HIDDEN_LAYERS: [usize; 2] = [64, 64];
pub const MODEL_SCHEMA: u32 = 1;
const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    // row-major outputs x inputs
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Feed-forward reward network with tanh hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    layers: Vec<Dense>,
}

impl RewardModel {
    /// Parameters drawn uniformly from (-0.1, 0.1).
    pub fn init(input_dim: usize, seed: u64) -> Result<Self> {
        Self::init_with(input_dim, &HIDDEN_LAYERS, seed)
    }

    pub fn init_with(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(contract("reward model layer sizes must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let mut draw =
                    |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE)).collect() };
                let weights = draw(w[0] * w[1]);
                let bias = draw(w[1]);
                Dense {
                    inputs: w[0],
                    outputs: w[1],
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// All-zero parameters (every input maps to 0).
    pub fn zeros(input_dim: usize) -> Self {
        let mut m = Self::init(input_dim, 0).expect("positive sizes");
        let n = m.param_count();
        m.set_params(&vec![0.0; n]).expect("matching length");
        m
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Flattened parameters: per layer, weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dims(params.len(), self.param_count())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn reward(&self, x: &[f64]) -> Result<f64> {
        check_dims(x.len(), self.input_dim())?;
        Ok(self.forward_cached(x).0)
    }

    /// Sum of per-step rewards.
    pub fn snippet_return(&self, snippet: &[Vec<f64>]) -> Result<f64> {
        snippet.iter().map(|x| self.reward(x)).sum()
    }

    // Returns output and post-activation of every layer (input included).
    fn forward_cached(&self, x: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.forward(acts.last().expect("nonempty"));
            if i < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        let out = acts.last().expect("output layer")[0];
        (out, acts)
    }

    /// Adds `upstream * d r(x) / d params` into `grad`.
    fn accumulate_grad(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        let (_, acts) = self.forward_cached(x);
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |off, l| {
                let o = *off;
                *off += l.param_count();
                Some(o)
            })
            .collect();
        let last = self.layers.len() - 1;
        let mut delta = vec![upstream];
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let input = &acts[i];
            let off = offsets[i];
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut grad[off + o * l.inputs..off + (o + 1) * l.inputs];
                row.iter_mut().zip(input).for_each(|(g, &v)| *g += d * v);
                grad[off + l.weights.len() + o] += d;
            }
            if i == 0 {
                break;
            }
            // back through W, then through the tanh of layer i-1
            let mut prev = vec![0.0; l.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                prev.iter_mut().zip(row).for_each(|(p, &w)| *p += d * w);
            }
            debug_assert!(i - 1 < last);
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    pub fn to_json(&self, seed: u64, config: &TrainConfig) -> String {
        let mut bytes = Vec::with_capacity(self.param_count() * 4);
        for p in self.params() {
            bytes.extend_from_slice(&(p as f32).to_le_bytes());
        }
        let file = ModelFile {
            schema: MODEL_SCHEMA,
            layers: self.layer_sizes(),
            weights: BASE64.encode(bytes),
            seed,
            config: config.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    /// Parses a model document. Parameters come back at f32 precision.
    pub fn from_json(text: &str) -> Result<(Self, u64, TrainConfig)> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("reward model file: {e}")))?;
        if file.schema != MODEL_SCHEMA {
            return Err(Error::Schema(format!(
                "unsupported reward model schema {}",
                file.schema
            )));
        }
        if file.layers.len() < 2 || file.layers.last() != Some(&1) {
            return Err(Error::Schema("reward model must end in a single output".into()));
        }
        let hidden = &file.layers[1..file.layers.len() - 1];
        let mut model = Self::init_with(file.layers[0], hidden, 0)?;
        let bytes = BASE64
            .decode(file.weights.as_bytes())
            .map_err(|e| Error::Format(format!("reward model weights: {e}")))?;
        if bytes.len() != model.param_count() * 4 {
            return Err(Error::Format(format!(
                "reward model has {} weight bytes, expected {}",
                bytes.len(),
                model.param_count() * 4
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Data("reward model has non-finite parameters".into()));
        }
        model.set_params(&params)?;
        Ok((model, file.seed, file.config))
    }

    pub fn save(&self, path: &Path, seed: u64, config: &TrainConfig) -> Result<()> {
        fs::write(path, self.to_json(seed, config)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, u64, TrainConfig)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: u32,
    layers: Vec<usize>,
    weights: String,
    seed: u64,
    config: TrainConfig,
}

/// Two snippets where `high` is preferred over `low`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub low: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and gradient (in `RewardModel::params` order) for one pair.
pub fn trex_loss(model: &RewardModel, pair: &PreferencePair) -> Result<(f64, Vec<f64>)> {
    if pair.low.is_empty() || pair.high.is_empty() {
        return Err(contract("preference snippets must be nonempty"));
    }
    let r_lo = model.snippet_return(&pair.low)?;
    let r_hi = model.snippet_return(&pair.high)?;
    let gap = r_lo - r_hi;
    let loss = softplus(gap);
    // dL/dR_lo = sigma(gap), dL/dR_hi = -sigma(gap)
    let s = logistic(gap);
    let mut grad = vec![0.0; model.param_count()];
    for x in &pair.low {
        model.accumulate_grad(x, s, &mut grad);
    }
    for x in &pair.high {
        model.accumulate_grad(x, -s, &mut grad);
    }
    Ok((loss, grad))
}

/// Fraction of pairs whose predicted high return beats the low one; exact
/// ties count one half.
pub fn trex_pairwise_accuracy(model: &RewardModel, pairs: &[PreferencePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(contract("accuracy over an empty pair list"));
    }
    let mut correct = 0.0;
    for p in pairs {
        let (hi, lo) = (model.snippet_return(&p.high)?, model.snippet_return(&p.low)?);
        correct += match hi.partial_cmp(&lo) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    Ok(correct / pairs.len() as f64)
}

fn default_lr() -> f64 {
    1e-3
}

fn default_snippet() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    #[serde(default = "default_snippet")]
    pub snippet_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: 200,
            pairs_per_epoch: 64,
            snippet_len: default_snippet(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.pairs_per_epoch == 0 || self.snippet_len == 0 {
            return Err(Error::Config("pairs_per_epoch and snippet_len must be positive".into()));
        }
        Ok(())
    }
}

/// A trajectory's step embeddings with its (proxy) return.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub trajectory_id: String,
    pub ret: f64,
    pub observations: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: RewardModel,
    /// Mean pair loss per epoch.
    pub loss_curve: Vec<f64>,
}

fn snippet(rng: &mut impl Rng, obs: &[Vec<f64>], len: usize) -> Vec<Vec<f64>> {
    let len = len.min(obs.len());
    let start = rng.random_range(0..=obs.len() - len);
    obs[start..start + len].to_vec()
}

/// Trains the reward network with per-pair gradient steps. Pairs are only
/// drawn between trajectories of different return.
pub fn trex_train(demos: &[Demonstration], cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let first = demos
        .first()
        .ok_or_else(|| Error::Training("no demonstrations".into()))?;
    if demos.iter().any(|d| d.observations.is_empty()) {
        return Err(Error::Training("demonstrations must be nonempty".into()));
    }
    let dim = first.observations[0].len();
    let first_ret = first.ret;
    if demos.iter().all(|d| d.ret == first_ret) {
        return Err(Error::Training("need at least two distinct return strata".into()));
    }

    let mut model = RewardModel::init(dim, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut params = model.params();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..cfg.pairs_per_epoch {
            let (i, j) = loop {
                let i = rng.random_range(0..demos.len());
                let j = rng.random_range(0..demos.len());
                if demos[i].ret != demos[j].ret {
                    break (i, j);
                }
            };
            let (lo, hi) = if demos[i].ret < demos[j].ret { (i, j) } else { (j, i) };
            let pair = PreferencePair {
                low: snippet(&mut rng, &demos[lo].observations, cfg.snippet_len),
                high: snippet(&mut rng, &demos[hi].observations, cfg.snippet_len),
            };
            let (loss, grad) = trex_loss(&model, &pair)?;
            epoch_loss += loss;
            params
                .iter_mut()
                .zip(&grad)
                .for_each(|(p, g)| *p -= cfg.learning_rate * g);
            model.set_params(&params)?;
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Training("loss diverged".into()));
        }
        loss_curve.push(epoch_loss / cfg.pairs_per_epoch as f64);
    }
    Ok(TrainedModel { model, loss_curve })
}

/// Samples snippet pairs labeled by ground-truth dense rewards. Each item of
/// `trajectories` is `(step embeddings, per-step true rewards)`. Pairs whose
/// true snippet returns tie are skipped.
pub fn gt_snippet_pairs(
    trajectories: &[(Vec<Vec<f64>>, Vec<f64>)],
    count: usize,
    snippet_len: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if trajectories.len() < 2 || snippet_len == 0 {
        return Err(contract("need two trajectories and a positive snippet length"));
    }
    for (obs, rewards) in trajectories {
        if obs.is_empty() || obs.len() != rewards.len() {
            return Err(contract("trajectory embeddings and rewards must align and be nonempty"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pairs.len() < count {
        attempts += 1;
        if attempts > count.saturating_mul(100).max(1000) {
            return Err(contract("could not draw enough non-tied snippet pairs"));
        }
        let a = rng.random_range(0..trajectories.len());
        let b = rng.random_range(0..trajectories.len());
        if a == b {
            continue;
        }
        let mut draw = |t: usize| {
            let (obs, rew) = &trajectories[t];
            let len = snippet_len.min(obs.len());
            let start = rng.random_range(0..=obs.len() - len);
            (
                obs[start..start + len].to_vec(),
                rew[start..start + len].iter().sum::<f64>(),
            )
        };
        let (sa, ra) = draw(a);
        let (sb, rb) = draw(b);
        if ra == rb {
            continue;
        }
        pairs.push(if ra > rb {
            PreferencePair { low: sb, high: sa }
        } else {
            PreferencePair { low: sa, high: sb }
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(rows: &[&[f64]]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn tied_returns_give_ln2() {
        let m = RewardModel::init(3, 1).unwrap();
        let x = vecs(&[&[0.1, 0.2, 0.3]]);
        let (loss, _) = trex_loss(
            &m,
            &PreferencePair {
                low: x.clone(),
                high: x,
            },
        )
        .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_at_return_gap_two() {
        // zero network, then set the output bias so each step returns 1.0:
        // two high steps (R_hi = 2) vs. zero-length-equivalent low via bias 0
        let mut m = RewardModel::zeros(1);
        let n = m.param_count();
        let mut p = vec![0.0; n];
        // output weights act on tanh(0) = 0, so reward = output bias
        p[n - 1] = 1.0;
        m.set_params(&p).unwrap();
        let pair = PreferencePair {
            low: vecs(&[&[0.0]]),
            high: vecs(&[&[0.0], &[0.0], &[0.0]]),
        };
        // R_hi = 3, R_lo = 1
        let (loss, _) = trex_loss(&m, &pair).unwrap();
        assert!((loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((loss - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_model_ties_everything() {
        let m = RewardModel::zeros(2);
        let pairs = vec![
            PreferencePair {
                low: vecs(&[&[1.0, 0.0]]),
                high: vecs(&[&[0.0, 5.0]]),
            };
            4
        ];
        assert_eq!(trex_pairwise_accuracy(&m, &pairs).unwrap(), 0.5);
        assert!(trex_pairwise_accuracy(&m, &[]).is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let demos = vec![
            Demonstration {
                trajectory_id: "a".into(),
                ret: 1.0,
                observations: vecs(&[&[0.0, 1.0]]),
            },
            Demonstration {
                trajectory_id: "b".into(),
                ret: 2.0,
                observations: vecs(&[&[1.0, 0.0]]),
            },
        ];
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let trained = trex_train(&demos, &cfg).unwrap();
        assert_eq!(trained.model, RewardModel::init(2, 5).unwrap());
        assert!(trained.loss_curve.is_empty());
    }

    #[test]
    fn single_stratum_is_an_error() {
        let d = Demonstration {
            trajectory_id: "a".into(),
            ret: 1.0,
            observations: vecs(&[&[0.0]]),
        };
        let demos = vec![
            d.clone(),
            Demonstration {
                trajectory_id: "b".into(),
                ..d
            },
        ];
        assert!(matches!(
            trex_train(&demos, &TrainConfig::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn model_json_round_trip_at_f32() {
        let m = RewardModel::init(4, 3).unwrap();
        let cfg = TrainConfig::default();
        let (back, seed, c) = RewardModel::from_json(&m.to_json(3, &cfg)).unwrap();
        assert_eq!(seed, 3);
        assert_eq!(c, cfg);
        assert_eq!(back.layer_sizes(), vec![4, 64, 64, 1]);
        for (a, b) in m.params().iter().zip(back.params()) {
            assert_eq!(*a as f32, b as f32);
        }
    }
}
