use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{CorridorWorld, EnvPair};
use super::net::{train_step, ToyNet, ToyNetConfig};
use super::{cumulative_reward_series, epsilon_greedy, episode_return_series, safe_flight_distance, Transition};
use crate::error::{Error, Result};
use crate::netspec::TrainingPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Steps between target-network copies.
    pub target_sync: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the run over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Transitions collected before the first update.
    pub warmup: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            replay_capacity: 5000,
            batch_size: 16,
            target_sync: 200,
            gamma: 0.9,
            learning_rate: 0.01,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            warmup: 200,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dqn: {m}")));
        if self.replay_capacity == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return bad("replay_capacity, batch_size and target_sync must be >= 1");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_decay_fraction", self.epsilon_decay_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn epsilon(&self, step: usize, total: usize) -> f64 {
        let span = (self.epsilon_decay_fraction * total as f64).max(1.0);
        let t = (step as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub meta_steps: usize,
    pub fine_tune_steps: usize,
    pub policies: Vec<TrainingPolicy>,
    pub net: ToyNetConfig,
    pub env: EnvPair,
    pub meta: DqnConfig,
    pub fine_tune: DqnConfig,
    /// Smoothing window as a fraction of the run length.
    pub smoothing_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1, 2, 3, 4, 5],
            meta_steps: 6000,
            fine_tune_steps: 4000,
            policies: vec![
                TrainingPolicy::E2E,
                TrainingPolicy::LastK(2),
                TrainingPolicy::LastK(3),
                TrainingPolicy::LastK(4),
            ],
            net: ToyNetConfig::default(),
            env: EnvPair::default(),
            meta: DqnConfig::default(),
            fine_tune: DqnConfig {
                epsilon_start: 0.3,
                ..DqnConfig::default()
            },
            smoothing_fraction: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        if !(self.smoothing_fraction > 0.0 && self.smoothing_fraction <= 1.0) {
            return Err(Error::Config("smoothing_fraction must lie in (0, 1]".into()));
        }
        self.meta.validate()?;
        self.fine_tune.validate()?;
        self.env.meta.validate()?;
        self.env.test.validate()
    }

    pub fn window(&self, steps: usize) -> usize {
        ((self.smoothing_fraction * steps as f64).round() as usize).max(1)
    }
}

/// Everything observed during one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub rewards: Vec<f64>,
    pub actions: Vec<usize>,
    /// Rewards of each completed episode, the crash step included.
    pub episodes: Vec<Vec<f64>>,
    /// Metres flown per completed episode.
    pub distances: Vec<f64>,
    pub losses: Vec<f64>,
    pub window: usize,
    pub gamma: f64,
}

impl EpisodeLog {
    pub fn cumulative_reward(&self) -> Vec<f64> {
        cumulative_reward_series(&self.rewards, self.window).unwrap_or_default()
    }

    /// Episode returns smoothed over a window scaled to the episode count.
    pub fn returns(&self) -> Vec<f64> {
        let w = ((self.window as f64 / self.rewards.len().max(1) as f64) * self.episodes.len() as f64).round() as usize;
        episode_return_series(&self.episodes, w.max(1)).unwrap_or_default()
    }

    pub fn sfd(&self) -> Option<f64> {
        safe_flight_distance(&self.distances).ok()
    }

    /// Mean of the smoothed cumulative reward over the last third of the run.
    pub fn final_third_reward(&self) -> Option<f64> {
        let s = self.cumulative_reward();
        let tail = &s[s.len() * 2 / 3..];
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }

    /// Least-squares slope, per step, of the smoothed cumulative reward over
    /// the last third of the run.
    pub fn final_third_slope(&self) -> Option<f64> {
        let s = self.cumulative_reward();
        let tail = &s[s.len() * 2 / 3..];
        if tail.len() < 2 {
            return None;
        }
        let n = tail.len() as f64;
        let mx = (n - 1.0) / 2.0;
        let my = tail.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, y) in tail.iter().enumerate() {
            let dx = i as f64 - mx;
            sxy += dx * (y - my);
            sxx += dx * dx;
        }
        Some(sxy / sxx)
    }

    /// One row per step from the first full smoothing window on.
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let cum = self.cumulative_reward();
        let mut rows = Vec::with_capacity(cum.len());
        let mut ep = 0;
        let mut ep_sum = 0.0;
        let mut dist_sum = 0.0;
        let mut done = 0usize;
        let mut steps_in_ep = 0usize;
        let mut last_return = None;
        let offset = self.window.saturating_sub(1);
        for (i, r) in self.rewards.iter().enumerate() {
            ep_sum += r;
            steps_in_ep += 1;
            if ep < self.episodes.len() && steps_in_ep == self.episodes[ep].len() {
                last_return = Some(ep_sum / steps_in_ep as f64);
                dist_sum += self.distances[ep];
                done += 1;
                ep += 1;
                ep_sum = 0.0;
                steps_in_ep = 0;
            }
            if i >= offset {
                rows.push(MetricRow {
                    iteration: i + 1,
                    cumulative_reward: cum[i - offset],
                    episode_return: last_return,
                    sfd: (done > 0).then(|| dist_sum / done as f64),
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub cumulative_reward: f64,
    /// Return of the latest completed episode.
    pub episode_return: Option<f64>,
    /// Safe flight distance over episodes completed so far.
    pub sfd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRun {
    pub policy: TrainingPolicy,
    pub seed: u64,
    pub log: EpisodeLog,
    pub final_third_reward: Option<f64>,
    pub sfd: Option<f64>,
}

/// Plain DQN loop: epsilon-greedy acting, FIFO replay, periodic target copy.
fn train(
    net: &mut ToyNet,
    world: &mut CorridorWorld,
    steps: usize,
    dqn: &DqnConfig,
    policy: TrainingPolicy,
    window: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeLog> {
    dqn.validate()?;
    net.set_policy(policy)?;
    let mut target = net.clone();
    let mut replay: VecDeque<Transition> = VecDeque::with_capacity(dqn.replay_capacity.min(steps.max(1)));
    let mut log = EpisodeLog {
        window,
        gamma: dqn.gamma,
        ..Default::default()
    };
    let mut current = Vec::new();
    let mut batch = Vec::with_capacity(dqn.batch_size);
    for step in 0..steps {
        let q = net.forward(&world.observe().data);
        let eps = dqn.epsilon(step, steps);
        let action = epsilon_greedy(&q, eps, rng)?;
        let flown = world.distance();
        let t = world.step(action)?;
        log.rewards.push(t.reward);
        log.actions.push(action);
        current.push(t.reward);
        if t.crash {
            log.episodes.push(std::mem::take(&mut current));
            log.distances.push(flown);
        }
        if replay.len() == dqn.replay_capacity {
            replay.pop_front();
        }
        replay.push_back(t);

        if replay.len() >= dqn.warmup.max(dqn.batch_size) {
            batch.clear();
            for _ in 0..dqn.batch_size {
                batch.push(replay[rng.random_range(0..replay.len())].clone());
            }
            let loss = train_step(net, &target, &batch, dqn.gamma, dqn.learning_rate, policy).map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { step, detail },
                other => other,
            })?;
            log.losses.push(loss);
        }
        if (step + 1) % dqn.target_sync == 0 {
            target = net.clone();
        }
    }
    Ok(log)
}

/// End-to-end training from a fresh network on the meta environment.
pub fn meta_train(cfg: &ExperimentConfig, seed: u64) -> Result<(ToyNet, EpisodeLog)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = ToyNet::new(&cfg.net, &mut rng)?;
    let mut world = cfg.env.meta_world(seed)?;
    let log = train(
        &mut net,
        &mut world,
        cfg.meta_steps,
        &cfg.meta,
        TrainingPolicy::E2E,
        cfg.window(cfg.meta_steps),
        &mut rng,
    )?;
    Ok((net, log))
}

/// Continues training `net` on the test environment under `policy`.
pub fn fine_tune(net: &ToyNet, cfg: &ExperimentConfig, policy: TrainingPolicy, seed: u64) -> Result<PolicyRun> {
    cfg.validate()?;
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    let mut world = cfg.env.test_world(seed)?;
    let log = train(
        &mut net,
        &mut world,
        cfg.fine_tune_steps,
        &cfg.fine_tune,
        policy,
        cfg.window(cfg.fine_tune_steps),
        &mut rng,
    )?;
    Ok(PolicyRun {
        policy,
        seed,
        final_third_reward: log.final_third_reward(),
        sfd: log.sfd(),
        log,
    })
}

/// Meta-trains once per seed, then fine-tunes every policy from those
/// weights. Seeds and policies run in parallel; output is sorted by
/// (policy, seed).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PolicyRun>> {
    cfg.validate()?;
    let metas: Vec<(u64, ToyNet)> = cfg
        .seeds
        .par_iter()
        .map(|&s| meta_train(cfg, s).map(|(net, _)| (s, net)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(TrainingPolicy, u64, &ToyNet)> = cfg
        .policies
        .iter()
        .flat_map(|&p| metas.iter().map(move |(s, n)| (p, *s, n)))
        .collect();
    let mut runs: Vec<PolicyRun> = jobs
        .into_par_iter()
        .map(|(p, s, net)| fine_tune(net, cfg, p, s))
        .collect::<Result<_>>()?;
    runs.sort_by(|a, b| (a.policy, a.seed).cmp(&(b.policy, b.seed)));
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![4],
            meta_steps: 300,
            fine_tune_steps: 300,
            policies: vec![TrainingPolicy::E2E, TrainingPolicy::LastK(2)],
            meta: DqnConfig {
                warmup: 50,
                ..DqnConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_budget_gives_empty_metrics() {
        let cfg = ExperimentConfig {
            meta_steps: 0,
            fine_tune_steps: 0,
            ..tiny()
        };
        let runs = run_experiment(&cfg).unwrap();
        assert_eq!(runs.len(), 2);
        for r in runs {
            assert!(r.log.rewards.is_empty());
            assert!(r.log.metric_rows().is_empty());
            assert_eq!(r.final_third_reward, None);
            assert_eq!(r.sfd, None);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = run_experiment(&tiny()).unwrap();
        let b = run_experiment(&tiny()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metric_rows_line_up_with_series() {
        let (_, log) = meta_train(&tiny(), 2).unwrap();
        let rows = log.metric_rows();
        let cum = log.cumulative_reward();
        assert_eq!(rows.len(), cum.len());
        assert_eq!(rows.last().unwrap().iteration, log.rewards.len());
        assert_eq!(rows.last().unwrap().sfd, log.sfd());
    }
}
