//! Similarity scores as reward proxies.
//!
//! Per-step rewards are normalized similarity scores and a trajectory's
//! return is their undiscounted sum. The labeled trajectories feed a
//! pairwise-ranking reward network ([`trex`]) and a return-filtered
//! nearest-neighbor behavior cloner ([`bc`]).

pub mod bc;
pub mod trex;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::eval::desc_then_id;
use crate::store::{manifest_value, DatasetStore, Trajectory};
use crate::zest::{normalize_scores, normalize_with_bounds, GoalSpec, GoalSpecSet, Scorer, SimilarityConfig};

pub use bc::{
    evaluate_policy, filtered_bc_train, ExpertPolicy, NearestNeighborPolicy, Policy, PolicyScore, RandomPolicy,
};
pub use trex::{
    gt_snippet_pairs, trex_loss, trex_pairwise_accuracy, trex_train, Demonstration, PreferencePair, RewardModel,
    TrainConfig, TrainedModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardLabeledTrajectory {
    pub trajectory_id: String,
    pub rewards: Vec<f64>,
    #[serde(rename = "return")]
    pub ret: f64,
}

impl RewardLabeledTrajectory {
    pub fn new(trajectory_id: impl Into<String>, rewards: Vec<f64>) -> Self {
        let ret = rewards.iter().sum();
        Self {
            trajectory_id: trajectory_id.into(),
            rewards,
            ret,
        }
    }
}

/// Labels one trajectory, normalizing its scores over the trajectory itself.
pub fn label_rewards(
    store: &DatasetStore,
    traj: &Trajectory,
    spec: &GoalSpec,
    config: SimilarityConfig,
) -> Result<RewardLabeledTrajectory> {
    let scores = Scorer::new(spec, config)?.score_trajectory(store, traj)?;
    Ok(RewardLabeledTrajectory::new(&traj.id, normalize_scores(&scores)?))
}

fn spec_for<'a>(goals: &'a GoalSpecSet, traj: &Trajectory) -> Result<&'a GoalSpec> {
    match &traj.task_tag {
        Some(task) => goals
            .get(task)
            .ok_or_else(|| contract(format!("no goal spec for task {task:?} of trajectory {:?}", traj.id))),
        None if goals.specs.len() == 1 => Ok(goals.specs.values().next().expect("one spec")),
        None => Err(contract(format!(
            "trajectory {:?} has no task tag and the goal set is ambiguous",
            traj.id
        ))),
    }
}

/// Labels every trajectory of the store with its task's goal spec. Scores
/// are min-max normalized over the whole store so returns stay comparable
/// across trajectories.
pub fn label_dataset(
    store: &DatasetStore,
    goals: &GoalSpecSet,
    config: SimilarityConfig,
) -> Result<Vec<RewardLabeledTrajectory>> {
    let mut raw = Vec::with_capacity(store.trajectories().len());
    for traj in store.trajectories() {
        let scorer = Scorer::new(spec_for(goals, traj)?, config)?;
        let values: Vec<f64> = scorer.score_trajectory(store, traj)?.iter().map(|s| s.value).collect();
        raw.push((traj.id.clone(), values));
    }
    let (lo, hi) = raw
        .iter()
        .flat_map(|(_, v)| v.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if raw.is_empty() {
        return Err(contract("cannot label an empty store"));
    }
    Ok(raw
        .into_iter()
        .map(|(id, values)| RewardLabeledTrajectory::new(id, normalize_with_bounds(&values, lo, hi)))
        .collect())
}

/// Descending by return, ties by trajectory id.
pub fn rank_trajectories(labeled: &[RewardLabeledTrajectory]) -> Result<Vec<RewardLabeledTrajectory>> {
    if labeled.is_empty() {
        return Err(contract("cannot rank an empty trajectory list"));
    }
    let mut out = labeled.to_vec();
    out.sort_by(|a, b| desc_then_id((a.ret, &a.trajectory_id), (b.ret, &b.trajectory_id)));
    Ok(out)
}

/// Pairs labeled trajectories with their step embeddings (lowest viewpoint
/// per step).
pub fn demonstrations(store: &DatasetStore, labeled: &[RewardLabeledTrajectory]) -> Result<Vec<Demonstration>> {
    labeled
        .iter()
        .map(|l| {
            let traj = store
                .trajectory(&l.trajectory_id)
                .ok_or_else(|| contract(format!("unknown trajectory {:?}", l.trajectory_id)))?;
            Ok(Demonstration {
                trajectory_id: l.trajectory_id.clone(),
                ret: l.ret,
                observations: traj
                    .steps
                    .iter()
                    .map(|s| store.embedding(s.records[0]).to_vec())
                    .collect(),
            })
        })
        .collect()
}

/// Manifest-compatible JSONL where each record carries its step's reward.
pub fn export_labeled_jsonl(store: &DatasetStore, labeled: &[RewardLabeledTrajectory]) -> Result<String> {
    let manifest = crate::store::encode_manifest(store);
    let mut out = manifest.lines().next().unwrap_or("").to_string();
    out.push('\n');
    for l in labeled {
        let traj = store
            .trajectory(&l.trajectory_id)
            .ok_or_else(|| contract(format!("unknown trajectory {:?}", l.trajectory_id)))?;
        if traj.len() != l.rewards.len() {
            return Err(contract(format!(
                "trajectory {:?} has {} steps but {} rewards",
                l.trajectory_id,
                traj.len(),
                l.rewards.len()
            )));
        }
        for (step, &reward) in traj.steps.iter().zip(&l.rewards) {
            for &rec in &step.records {
                let mut v = manifest_value(&store.observations()[rec]);
                v.as_object_mut()
                    .expect("record is an object")
                    .insert("reward".into(), serde_json::Value::from(reward));
                out.push_str(&v.to_string());
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(a.len(), b.len(), "spearman inputs differ in length");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{EncoderProfile, ObservationRecord, StoreBuilder};
    use crate::zest::Modality;

    #[test]
    fn return_is_sum_of_rewards() {
        let l = RewardLabeledTrajectory::new("t", vec![0.1, 0.2, 0.3]);
        assert!((l.ret - 0.6).abs() < 1e-12);
    }

    #[test]
    fn flat_trajectory_gets_half_rewards() {
        // raw cosine of a constant observation is constant
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 2, false));
        for s in 0..4 {
            b.push(ObservationRecord::new(format!("t/{s}"), "t", s, 0), &[1.0, 0.5])
                .unwrap();
        }
        let store = b.build().unwrap();
        let spec = GoalSpec::new(Modality::Synthetic, vec![], vec![vec![0.0, 1.0]], "t").unwrap();
        let cfg = SimilarityConfig::new(crate::zest::FeatureMode::Raw, crate::zest::Metric::Cosine);
        let l = label_rewards(&store, &store.trajectories()[0], &spec, cfg).unwrap();
        assert_eq!(l.rewards, vec![0.5; 4]);
        assert_eq!(l.ret, 2.0);
    }

    #[test]
    fn ranking_orders_by_return_then_id() {
        let ranked = rank_trajectories(&[
            RewardLabeledTrajectory::new("b", vec![0.2]),
            RewardLabeledTrajectory::new("c", vec![0.6]),
            RewardLabeledTrajectory::new("a", vec![0.2]),
        ])
        .unwrap();
        let ids: Vec<&str> = ranked.iter().map(|l| l.trajectory_id.as_str()).collect();
        assert_eq!(ids, vec!["c", "a", "b"]);
        assert!(rank_trajectories(&[]).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
