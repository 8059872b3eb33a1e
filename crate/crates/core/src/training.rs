//! Episode loop for MPDQN training and for policy evaluation.

use serde::Serialize;

use crate::agents::mpdqn::{epsilon_at, MpdqnAgent};
use crate::config::SimulationConfig;
use crate::engine::{run_episode, EpisodeMetrics};
use crate::rng::{derive_seed, Stream};

/// Scenario seed of training episode `episode`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, Stream::Placement, 1 + episode as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean_reward: f64,
    /// Mean losses over the episode's gradient steps; 0 when there were none.
    pub loss_q: f64,
    pub loss_x: f64,
    pub train_steps: u64,
    pub epsilon: f64,
    pub mean_aoi_ms: f64,
    pub mean_energy_mj: f64,
}

/// Trains a fresh agent for `cfg.episodes` episodes. `on_episode` sees the
/// agent after every episode (for periodic checkpoints).
pub fn train_mpdqn(
    cfg: &SimulationConfig,
    seed: u64,
    mut on_episode: impl FnMut(&CurvePoint, &MpdqnAgent),
) -> (MpdqnAgent, Vec<CurvePoint>) {
    let mut agent = MpdqnAgent::new(cfg, seed);
    agent.set_explore(true);
    let mut curve = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let eps = epsilon_at(episode, cfg);
        agent.set_epsilon(eps, cfg.eps_start);
        let steps_before = agent.train_steps();
        let m = run_episode(cfg, &mut agent, episode_seed(seed, episode));
        let losses = agent.take_mean_losses();
        let point = CurvePoint {
            episode,
            mean_reward: m.mean_reward,
            loss_q: losses.map_or(0.0, |l| l.loss_q),
            loss_x: losses.map_or(0.0, |l| l.loss_x),
            train_steps: agent.train_steps() - steps_before,
            epsilon: eps,
            mean_aoi_ms: m.mean_aoi_ms,
            mean_energy_mj: m.mean_energy_mj,
        };
        on_episode(&point, &agent);
        curve.push(point);
    }
    (agent, curve)
}

/// Greedy rollouts of a trained agent; learning is off during evaluation.
pub fn evaluate_mpdqn(
    agent: &MpdqnAgent,
    cfg: &SimulationConfig,
    seeds: &[u64],
) -> Vec<EpisodeMetrics> {
    seeds
        .iter()
        .map(|&s| {
            let mut a = agent.clone();
            a.set_explore(false);
            run_episode(cfg, a, s)
        })
        .collect()
}
