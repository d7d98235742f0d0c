//! Desk-scale Q-learning: Bellman updates, depth rewards, a small trainable
//! network with layer freezing, a corridor world, and evaluation metrics.

mod env;
mod experiment;
mod net;

pub use env::{CorridorConfig, CorridorWorld, DepthMap, EnvPair};
pub use experiment::{
    fine_tune, meta_train, run_experiment, DqnConfig, EpisodeLog, ExperimentConfig, MetricRow, PolicyRun,
};
pub use net::{finite_diff_check, train_step, FdReport, Gradients, ToyNet, ToyNetConfig};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Heading change per action, degrees (positive turns left).
pub const ACTIONS: [f64; 5] = [0.0, 25.0, -25.0, 55.0, -55.0];
pub const NUM_ACTIONS: usize = ACTIONS.len();

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub crash: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        if self.action >= NUM_ACTIONS {
            return Err(Error::Domain(format!("action {} out of range", self.action)));
        }
        if !self.reward.is_finite() {
            return Err(Error::Domain("reward must be finite".into()));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

/// Bellman target `r + gamma * max_next_q`; terminal transitions bootstrap from 0.
pub fn q_update(reward: f64, gamma: f64, max_next_q: f64, terminal: bool) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(reward + if terminal { 0.0 } else { gamma * max_next_q })
}

/// Argmax with lowest-index tie-break.
pub fn select_action(q: &[f64]) -> Result<usize> {
    if q.is_empty() {
        return Err(Error::Domain("empty q-value vector".into()));
    }
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    let greedy = select_action(q)?;
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..q.len()));
    }
    Ok(greedy)
}

/// Mean depth over the centred window of side `round(window_fraction * n)`.
pub fn depth_reward(map: &DepthMap, window_fraction: f64) -> Result<f64> {
    let n = map.n;
    if n == 0 || map.data.is_empty() {
        return Err(Error::Domain("empty depth map".into()));
    }
    let side = ((window_fraction * n as f64).round() as usize).clamp(1, n);
    let off = (n - side) / 2;
    let mut sum = 0.0;
    for r in off..off + side {
        sum += map.data[r * n + off..r * n + off + side].iter().sum::<f64>();
    }
    Ok(sum / (side * side) as f64)
}

/// `sum_i gamma^i r_i` from the first reward on.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}

/// Trailing moving average over `window` rewards; empty if the sequence is shorter.
pub fn cumulative_reward_series(rewards: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Domain("smoothing window must be >= 1".into()));
    }
    if rewards.len() < window {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(rewards.len() - window + 1);
    let mut sum: f64 = rewards[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..rewards.len() {
        sum += rewards[i] - rewards[i - window];
        out.push(sum / window as f64);
    }
    Ok(out)
}

/// Mean reward per action of each completed episode.
pub fn episode_returns(episodes: &[Vec<f64>]) -> Vec<f64> {
    episodes
        .iter()
        .filter(|e| !e.is_empty())
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
        .collect()
}

pub fn episode_return_series(episodes: &[Vec<f64>], window: usize) -> Result<Vec<f64>> {
    cumulative_reward_series(&episode_returns(episodes), window)
}

/// Mean distance flown per episode.
pub fn safe_flight_distance(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::UndefinedMetric("safe flight distance needs at least one episode".into()));
    }
    Ok(distances.iter().sum::<f64>() / distances.len() as f64)
}

pub fn normalized_sfd(distances: &[f64], baseline: &[f64]) -> Result<f64> {
    Ok(safe_flight_distance(distances)? / safe_flight_distance(baseline)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bellman_examples() {
        assert!((q_update(1.0, 0.9, 2.0, false).unwrap() - 2.8).abs() < 1e-12);
        assert_eq!(q_update(3.0, 0.0, 7.0, false).unwrap(), 3.0);
        assert_eq!(q_update(-1.0, 0.9, 100.0, true).unwrap(), -1.0);
        assert!(q_update(1.0, 1.0, 0.0, false).is_err());
        assert!(q_update(1.0, -0.1, 0.0, false).is_err());
    }

    #[test]
    fn greedy_tie_breaks_low() {
        assert_eq!(select_action(&[0.1, 0.5, 0.2, 0.5, 0.0]).unwrap(), 1);
        assert!(select_action(&[]).is_err());
    }

    #[test]
    fn centre_window_hand_enumerated() {
        let map = DepthMap::new(4, (1..=16).map(|v| v as f64).collect()).unwrap();
        assert_eq!(depth_reward(&map, 0.5).unwrap(), 8.5);
    }

    #[test]
    fn returns_and_series() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 0.5).unwrap(), 1.75);
        assert_eq!(discounted_return(&[4.0], 0.9).unwrap(), 4.0);
        assert_eq!(discounted_return(&[2.0, 9.0], 0.0).unwrap(), 2.0);
        assert_eq!(cumulative_reward_series(&[1.0, 2.0, 3.0], 3).unwrap(), vec![2.0]);
        assert!(cumulative_reward_series(&[1.0], 2).unwrap().is_empty());
        assert_eq!(episode_return_series(&[vec![1.0, 1.0]], 1).unwrap(), vec![1.0]);
        assert_eq!(episode_return_series(&[vec![0.0, 0.0]], 1).unwrap(), vec![0.0]);
        assert_eq!(episode_return_series(&[vec![2.0], vec![4.0]], 1).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn sfd_examples() {
        assert_eq!(safe_flight_distance(&[10.0, 20.0]).unwrap(), 15.0);
        assert_eq!(safe_flight_distance(&[7.5]).unwrap(), 7.5);
        assert_eq!(normalized_sfd(&[3.0, 5.0], &[3.0, 5.0]).unwrap(), 1.0);
        assert!(matches!(safe_flight_distance(&[]), Err(Error::UndefinedMetric(_))));
    }
}
