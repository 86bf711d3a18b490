//! Return-filtered behavior cloning against the control environment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dims, contract, Error, Result};
use crate::reward::{rank_trajectories, RewardLabeledTrajectory};
use crate::store::DatasetStore;
use crate::synthgen::{ControlAction, ControlEnv};

pub trait Policy {
    fn act(&mut self, obs: &[f64]) -> Result<ControlAction>;
}

/// Always advances.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn act(&mut self, _obs: &[f64]) -> Result<ControlAction> {
        Ok(ControlAction::Advance)
    }
}

/// Uniform over the action set.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &[f64]) -> Result<ControlAction> {
        Ok(ControlAction::ALL[self.rng.random_range(0..ControlAction::ALL.len())])
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Exemplar {
    id: String,
    embedding: Vec<f64>,
    action: String,
}

/// 1-nearest-neighbor over stored (embedding, action) pairs by Euclidean
/// distance; equal distances go to the smallest record id.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestNeighborPolicy {
    dim: usize,
    exemplars: Vec<Exemplar>,
}

impl NearestNeighborPolicy {
    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn nearest(&self, obs: &[f64]) -> Result<&str> {
        check_dims(obs.len(), self.dim)?;
        let mut best: Option<(f64, &Exemplar)> = None;
        for e in &self.exemplars {
            let d: f64 = e.embedding.iter().zip(obs).map(|(a, b)| (a - b).powi(2)).sum();
            let better = match best {
                None => true,
                Some((bd, be)) => d < bd || (d == bd && e.id < be.id),
            };
            if better {
                best = Some((d, e));
            }
        }
        best.map(|(_, e)| e.action.as_str())
            .ok_or_else(|| contract("nearest-neighbor policy has no exemplars"))
    }
}

impl Policy for NearestNeighborPolicy {
    fn act(&mut self, obs: &[f64]) -> Result<ControlAction> {
        self.nearest(obs)?.parse()
    }
}

/// Keeps the top `ceil(q * count)` trajectories by return and memorizes
/// every record of theirs that carries an action token.
pub fn filtered_bc_train(
    store: &DatasetStore,
    labeled: &[RewardLabeledTrajectory],
    q: f64,
) -> Result<NearestNeighborPolicy> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Config(format!("keep fraction must be in (0, 1], got {q}")));
    }
    let ranked = rank_trajectories(labeled)?;
    let keep = ((q * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
    let mut exemplars = Vec::new();
    for l in &ranked[..keep] {
        let traj = store
            .trajectory(&l.trajectory_id)
            .ok_or_else(|| contract(format!("unknown trajectory {:?}", l.trajectory_id)))?;
        for step in &traj.steps {
            for &rec in &step.records {
                let obs = &store.observations()[rec];
                if let Some(action) = &obs.action_token {
                    exemplars.push(Exemplar {
                        id: obs.id.clone(),
                        embedding: store.embedding(rec).to_vec(),
                        action: action.clone(),
                    });
                }
            }
        }
    }
    if exemplars.is_empty() {
        return Err(contract("kept trajectories carry no action tokens"));
    }
    Ok(NearestNeighborPolicy {
        dim: store.dim(),
        exemplars,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyScore {
    pub episodes: usize,
    pub mean_return: f64,
    pub expert_mean_return: f64,
    /// `mean_return / expert_mean_return`.
    pub normalized: f64,
}

fn rollout(policy: &mut dyn Policy, env: &ControlEnv, seed: u64) -> Result<f64> {
    let mut ep = env.reset(seed);
    let mut ret = 0.0;
    while !ep.done() {
        let action = policy.act(ep.observation())?;
        ret += ep.step(action);
    }
    Ok(ret)
}

/// Rolls the policy out for `episodes` seeded episodes and normalizes by the
/// expert's return on the very same episode seeds.
pub fn evaluate_policy(policy: &mut dyn Policy, env: &ControlEnv, episodes: usize, seed: u64) -> Result<PolicyScore> {
    if episodes == 0 {
        return Err(contract("policy evaluation needs at least one episode"));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let (mut total, mut expert) = (0.0, 0.0);
    for _ in 0..episodes {
        let s: u64 = seeds.random();
        total += rollout(policy, env, s)?;
        expert += rollout(&mut ExpertPolicy, env, s)?;
    }
    if expert.abs() < 1e-12 {
        return Err(contract("expert return is zero; cannot normalize"));
    }
    let n = episodes as f64;
    Ok(PolicyScore {
        episodes,
        mean_return: total / n,
        expert_mean_return: expert / n,
        normalized: total / expert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{control_env, SynthConfig};

    #[test]
    fn expert_scores_one() {
        let env = control_env(&SynthConfig {
            noise_sigma: 0.1,
            ..SynthConfig::default()
        })
        .unwrap();
        let s = evaluate_policy(&mut ExpertPolicy, &env, 4, 1).unwrap();
        assert!((s.normalized - 1.0).abs() < 1e-12);
        assert!(evaluate_policy(&mut ExpertPolicy, &env, 0, 1).is_err());
    }

    #[test]
    fn nearest_neighbor_ties_by_id() {
        let p = NearestNeighborPolicy {
            dim: 1,
            exemplars: vec![
                Exemplar {
                    id: "b".into(),
                    embedding: vec![1.0],
                    action: "retreat".into(),
                },
                Exemplar {
                    id: "a".into(),
                    embedding: vec![-1.0],
                    action: "advance".into(),
                },
            ],
        };
        assert_eq!(p.nearest(&[0.0]).unwrap(), "advance");
        assert_eq!(p.nearest(&[0.9]).unwrap(), "retreat");
        assert!(p.nearest(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn keep_fraction_is_validated() {
        let env = control_env(&SynthConfig::default()).unwrap();
        let (store, _) = crate::synthgen::gen_control_dataset(&env, 4, 0).unwrap();
        let labeled: Vec<_> = store
            .trajectories()
            .iter()
            .map(|t| RewardLabeledTrajectory::new(&t.id, vec![0.0; t.len()]))
            .collect();
        assert!(matches!(
            filtered_bc_train(&store, &labeled, 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            filtered_bc_train(&store, &labeled, 1.5),
            Err(Error::Config(_))
        ));
        let p = filtered_bc_train(&store, &labeled, 0.25).unwrap();
        // one trajectory kept, one exemplar per non-terminal step
        assert_eq!(p.len(), env.episode_len());
    }
}
