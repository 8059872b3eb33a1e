//! Multi-pass parameterised DQN.
//!
//! The actor maps a state to one power per RRI. The Q network sees the state
//! plus a parameter vector in which only one RRI's slot is filled, and is run
//! once per RRI; head `k` of pass `k` is `Q(s, Γ_k, p_k)`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::mlp::{Gradients, Mlp, OutputActivation};
use super::ou::OuNoise;
use super::replay::ReplayBuffer;
use super::{Agent, Decision, DecisionContext, State, Transition, N_RRI, STATE_DIM};
use crate::config::SimulationConfig;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const HIDDEN: [usize; 2] = [128, 64];
const CHECKPOINT_MAGIC: &str = "cv2x-mpdqn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// `y = r` at a terminal epoch, `r + γ·max_k Q'` otherwise.
pub fn td_target(reward: f64, gamma: f64, max_next_q: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * max_next_q
    }
}

/// Linear ε schedule from `eps_start` to `eps_end` over `eps_decay_episodes`.
pub fn epsilon_at(episode: usize, cfg: &SimulationConfig) -> f64 {
    if cfg.eps_decay_episodes == 0 {
        return cfg.eps_end;
    }
    let frac = (episode as f64 / cfg.eps_decay_episodes as f64).min(1.0);
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Losses of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub loss_q: f64,
    pub loss_x: f64,
}

/// A mini-batch laid out as matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub params: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Self {
        let b = ts.len();
        Self {
            states: Array2::from_shape_fn((b, STATE_DIM), |(i, j)| ts[i].state[j]),
            actions: ts.iter().map(|t| t.rri_index).collect(),
            params: Array2::from_shape_fn((b, N_RRI), |(i, j)| ts[i].params[j]),
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states: Array2::from_shape_fn((b, STATE_DIM), |(i, j)| ts[i].next_state[j]),
            terminal: ts.iter().map(|t| t.terminal).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct MpdqnAgent {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub q: Mlp,
    pub q_target: Mlp,
    adam_actor: Adam,
    adam_q: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    ou: Vec<OuNoise>,
    explore: bool,
    epsilon: f64,
    noise_scale: f64,
    rri_choices: Vec<u64>,
    p_max: f64,
    gamma: f64,
    tau_q: f64,
    tau_x: f64,
    batch_size: usize,
    train_every: usize,
    ou_theta: f64,
    ou_sigma: f64,
    since_train: usize,
    train_steps: u64,
    loss_sums: (f64, f64, u64),
}

impl MpdqnAgent {
    pub fn new(cfg: &SimulationConfig, seed: u64) -> Self {
        Self::with_hidden(cfg, seed, &HIDDEN)
    }

    pub fn with_hidden(cfg: &SimulationConfig, seed: u64, hidden: &[usize]) -> Self {
        let p_max = cfg.p_max_mw();
        let mut init = stream_rng(seed, Stream::Agent, 1);
        let mut actor_sizes = vec![STATE_DIM];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(N_RRI);
        let mut q_sizes = vec![STATE_DIM + N_RRI];
        q_sizes.extend_from_slice(hidden);
        q_sizes.push(N_RRI);
        let actor = Mlp::new(&actor_sizes, OutputActivation::Sigmoid, p_max, &mut init);
        let q = Mlp::new(&q_sizes, OutputActivation::Identity, 1.0, &mut init);
        Self {
            actor_target: actor.clone(),
            q_target: q.clone(),
            adam_actor: Adam::new(&actor, cfg.lr_x),
            adam_q: Adam::new(&q, cfg.lr_q),
            actor,
            q,
            replay: ReplayBuffer::new(cfg.replay_size),
            rng: stream_rng(seed, Stream::Agent, 2),
            replay_rng: stream_rng(seed, Stream::Replay, 0),
            ou: Vec::new(),
            explore: true,
            epsilon: cfg.eps_start,
            noise_scale: 1.0,
            rri_choices: cfg.rri_choices.clone(),
            p_max,
            gamma: cfg.gamma_discount,
            tau_q: cfg.tau_q,
            tau_x: cfg.tau_x,
            batch_size: cfg.batch_size,
            train_every: cfg.train_every.max(1),
            ou_theta: cfg.ou_theta,
            ou_sigma: cfg.ou_sigma * p_max,
            since_train: 0,
            train_steps: 0,
            loss_sums: (0.0, 0.0, 0),
        }
    }

    /// Turns exploration (ε-greedy RRI and OU power noise) and learning on or off.
    pub fn set_explore(&mut self, explore: bool) {
        self.explore = explore;
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Sets ε and scales the OU noise by the same factor relative to the start.
    pub fn set_epsilon(&mut self, epsilon: f64, eps_start: f64) {
        self.epsilon = epsilon;
        self.noise_scale = if eps_start > 0.0 {
            epsilon / eps_start
        } else {
            0.0
        };
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Mean losses since the last call, `None` when no step was taken.
    pub fn take_mean_losses(&mut self) -> Option<TrainStats> {
        let (lq, lx, n) = std::mem::replace(&mut self.loss_sums, (0.0, 0.0, 0));
        (n > 0).then(|| TrainStats {
            loss_q: lq / n as f64,
            loss_x: lx / n as f64,
        })
    }

    /// Powers for every RRI, one row per state.
    pub fn actor_forward(&self, states: ArrayView2<f64>) -> Array2<f64> {
        self.actor.forward(states)
    }

    fn q_input(
        &self,
        states: ArrayView2<f64>,
        params: ArrayView2<f64>,
        k_of_row: impl Fn(usize) -> usize,
    ) -> Array2<f64> {
        let b = states.nrows();
        let mut x = Array2::zeros((b, STATE_DIM + N_RRI));
        for i in 0..b {
            for j in 0..STATE_DIM {
                x[[i, j]] = states[[i, j]];
            }
            let k = k_of_row(i);
            x[[i, STATE_DIM + k]] = params[[i, k]] / self.p_max;
        }
        x
    }

    /// Rows `k·B..(k+1)·B` hold pass `k`.
    fn multipass_input(&self, states: ArrayView2<f64>, params: ArrayView2<f64>) -> Array2<f64> {
        let b = states.nrows();
        let mut x = Array2::zeros((N_RRI * b, STATE_DIM + N_RRI));
        for k in 0..N_RRI {
            for i in 0..b {
                let row = k * b + i;
                for j in 0..STATE_DIM {
                    x[[row, j]] = states[[i, j]];
                }
                x[[row, STATE_DIM + k]] = params[[i, k]] / self.p_max;
            }
        }
        x
    }

    fn multipass_with(
        &self,
        net: &Mlp,
        states: ArrayView2<f64>,
        params: ArrayView2<f64>,
    ) -> Array2<f64> {
        let b = states.nrows();
        let out = net.forward(self.multipass_input(states, params).view());
        Array2::from_shape_fn((b, N_RRI), |(i, k)| out[[k * b + i, k]])
    }

    /// `Q(s, Γ_k, p_k)` for every k, one row per state.
    pub fn q_forward_multipass(
        &self,
        states: ArrayView2<f64>,
        params: ArrayView2<f64>,
    ) -> Array2<f64> {
        self.multipass_with(&self.q, states, params)
    }

    /// Greedy RRI index and the actor's powers for a single state.
    pub fn greedy(&self, state: &State) -> (usize, [f64; N_RRI]) {
        let s = Array2::from_shape_fn((1, STATE_DIM), |(_, j)| state[j]);
        let p = self.actor_forward(s.view());
        let q = self.q_forward_multipass(s.view(), p.view());
        let mut best = 0;
        for k in 1..N_RRI {
            if q[[0, k]] > q[[0, best]] {
                best = k;
            }
        }
        (best, [p[[0, 0]], p[[0, 1]], p[[0, 2]]])
    }

    /// Action for `vehicle` in `state`.
    pub fn select_action(&mut self, state: &State, explore: bool, vehicle: usize) -> Decision {
        let (greedy, params) = self.greedy(state);
        let mut k = greedy;
        let mut power = params[k];
        if explore {
            if self.rng.random::<f64>() < self.epsilon {
                k = self.rng.random_range(0..N_RRI);
                power = params[k];
            }
            if self.ou.len() <= vehicle {
                self.ou
                    .resize(vehicle + 1, OuNoise::new(self.ou_theta, self.ou_sigma));
            }
            power += self.noise_scale * self.ou[vehicle].sample(&mut self.rng);
        }
        let power = power.clamp(0.0, self.p_max);
        let rri = self.rri_choices[k.min(self.rri_choices.len() - 1)];
        Decision {
            action: super::AgentAction {
                rri,
                power_mw: power,
            },
            rri_index: k,
            params,
        }
    }

    /// TD targets from the target networks.
    pub fn td_targets(&self, batch: &Batch) -> Array1<f64> {
        let next_p = self.actor_target.forward(batch.next_states.view());
        let next_q = self.multipass_with(&self.q_target, batch.next_states.view(), next_p.view());
        Array1::from_shape_fn(batch.len(), |i| {
            let max_q = next_q
                .row(i)
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            td_target(batch.rewards[i], self.gamma, max_q, batch.terminal[i])
        })
    }

    /// `L_Q = mean ½(y − Q(s, Γ, p_Γ))²` at the stored actions, and its gradient.
    /// ReLU activity of every hidden unit touched by the two losses on
    /// `batch`. The losses are differentiable wherever this stays constant.
    pub fn relu_pattern(&self, batch: &Batch) -> Vec<bool> {
        let x = self.q_input(batch.states.view(), batch.params.view(), |i| {
            batch.actions[i]
        });
        let mut out = self.q.forward_cached(x.view()).relu_pattern();
        let actor = self.actor.forward_cached(batch.states.view());
        out.extend(actor.relu_pattern());
        let x = self.multipass_input(batch.states.view(), actor.output().view());
        out.extend(self.q.forward_cached(x.view()).relu_pattern());
        out
    }

    pub fn q_loss_and_grads(&self, batch: &Batch, targets: &Array1<f64>) -> (f64, Gradients) {
        let b = batch.len();
        let x = self.q_input(batch.states.view(), batch.params.view(), |i| {
            batch.actions[i]
        });
        let cache = self.q.forward_cached(x.view());
        let out = cache.output();
        let mut grad = Array2::zeros(out.dim());
        let mut loss = 0.0;
        for i in 0..b {
            let k = batch.actions[i];
            let err = out[[i, k]] - targets[i];
            loss += 0.5 * err * err;
            grad[[i, k]] = err / b as f64;
        }
        let (grads, _) = self.q.backward(&cache, &grad);
        (loss / b as f64, grads)
    }

    /// `L_x = −mean Σ_k Q(s, Γ_k, x_k(s))` and its gradient in the actor weights.
    pub fn actor_loss_and_grads(&self, states: ArrayView2<f64>) -> (f64, Gradients) {
        let b = states.nrows();
        let actor_cache = self.actor.forward_cached(states);
        let params = actor_cache.output().clone();
        let x = self.multipass_input(states, params.view());
        let q_cache = self.q.forward_cached(x.view());
        let out = q_cache.output();
        let mut grad_out = Array2::zeros(out.dim());
        let mut loss = 0.0;
        for k in 0..N_RRI {
            for i in 0..b {
                loss -= out[[k * b + i, k]];
                grad_out[[k * b + i, k]] = -1.0 / b as f64;
            }
        }
        let (_, grad_x) = self.q.backward(&q_cache, &grad_out);
        let grad_p = Array2::from_shape_fn((b, N_RRI), |(i, k)| {
            grad_x[[k * b + i, STATE_DIM + k]] / self.p_max
        });
        let (grads, _) = self.actor.backward(&actor_cache, &grad_p);
        (loss / b as f64, grads)
    }

    /// One update of both networks and their targets on `batch`.
    pub fn train_on_batch(&mut self, batch: &Batch) -> TrainStats {
        let targets = self.td_targets(batch);
        let (loss_q, gq) = self.q_loss_and_grads(batch, &targets);
        self.adam_q.step(&mut self.q, &gq);
        let (loss_x, gx) = self.actor_loss_and_grads(batch.states.view());
        self.adam_actor.step(&mut self.actor, &gx);
        self.q_target.soft_update_from(&self.q, self.tau_q);
        self.actor_target.soft_update_from(&self.actor, self.tau_x);
        self.train_steps += 1;
        self.loss_sums.0 += loss_q;
        self.loss_sums.1 += loss_x;
        self.loss_sums.2 += 1;
        TrainStats { loss_q, loss_x }
    }

    /// Samples a batch from replay and trains on it.
    pub fn train_step(&mut self) -> Result<TrainStats> {
        let ts = self.replay.sample(self.batch_size, &mut self.replay_rng)?;
        Ok(self.train_on_batch(&Batch::from_transitions(&ts)))
    }

    pub fn remember(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// Writes all four networks as text.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.checkpoint_string())?;
        Ok(())
    }

    pub fn checkpoint_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
        writeln!(s, "epsilon {}", self.epsilon).unwrap();
        for (name, net) in self.named_nets() {
            let sizes: Vec<String> = net.sizes().iter().map(|v| v.to_string()).collect();
            let act = match net.output {
                OutputActivation::Identity => "identity",
                OutputActivation::Sigmoid => "sigmoid",
            };
            writeln!(
                s,
                "net {name} {act} {} {}",
                net.output_scale,
                sizes.join(" ")
            )
            .unwrap();
            for v in net.flat_params() {
                writeln!(s, "{v}").unwrap();
            }
        }
        s
    }

    fn named_nets(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("actor", &self.actor),
            ("actor_target", &self.actor_target),
            ("q", &self.q),
            ("q_target", &self.q_target),
        ]
    }

    /// Restores networks saved by [`save_checkpoint`](Self::save_checkpoint).
    /// Optimiser state and replay start empty.
    pub fn load_checkpoint(
        path: impl AsRef<Path>,
        cfg: &SimulationConfig,
        seed: u64,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint_str(&text, cfg, seed)
    }

    pub fn from_checkpoint_str(text: &str, cfg: &SimulationConfig, seed: u64) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut h = header.split_whitespace();
        if h.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("not a checkpoint file".into()));
        }
        let version: u32 = h
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let eps_line = lines.next().ok_or_else(|| bad("missing epsilon".into()))?;
        let epsilon: f64 = eps_line
            .strip_prefix("epsilon ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("bad epsilon line `{eps_line}`")))?;

        let mut nets: Vec<(String, Mlp)> = Vec::new();
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            if parts.next() != Some("net") {
                return Err(bad(format!("expected `net`, found `{line}`")));
            }
            let name = parts
                .next()
                .ok_or_else(|| bad("missing net name".into()))?
                .to_string();
            let act = match parts.next() {
                Some("identity") => OutputActivation::Identity,
                Some("sigmoid") => OutputActivation::Sigmoid,
                other => return Err(bad(format!("unknown activation {other:?}"))),
            };
            let scale: f64 = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("bad output scale".into()))?;
            let sizes: Vec<usize> = parts
                .map(|v| v.parse().map_err(|_| bad(format!("bad layer size `{v}`"))))
                .collect::<Result<_>>()?;
            if sizes.len() < 2 {
                return Err(bad(format!("net {name} has fewer than two layers")));
            }
            let mut net = Mlp::zeros(&sizes, act, scale);
            let mut flat = Vec::with_capacity(net.n_params());
            for _ in 0..net.n_params() {
                let v = lines
                    .next()
                    .ok_or_else(|| bad(format!("net {name} is truncated")))?;
                flat.push(
                    v.trim()
                        .parse()
                        .map_err(|_| bad(format!("bad value `{v}`")))?,
                );
            }
            net.set_flat_params(&flat);
            nets.push((name, net));
        }

        let mut agent = Self::new(cfg, seed);
        let mut take = |name: &str| -> Result<Mlp> {
            let pos = nets
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| bad(format!("missing net {name}")))?;
            Ok(nets.swap_remove(pos).1)
        };
        agent.actor = take("actor")?;
        agent.actor_target = take("actor_target")?;
        agent.q = take("q")?;
        agent.q_target = take("q_target")?;
        if agent.actor.input_dim() != STATE_DIM
            || agent.actor.output_dim() != N_RRI
            || agent.q.input_dim() != STATE_DIM + N_RRI
            || agent.q.output_dim() != N_RRI
        {
            return Err(bad(
                "network shapes do not match the state/action sizes".into()
            ));
        }
        agent.adam_actor = Adam::new(&agent.actor, cfg.lr_x);
        agent.adam_q = Adam::new(&agent.q, cfg.lr_q);
        agent.set_epsilon(epsilon, cfg.eps_start);
        Ok(agent)
    }
}

impl Agent for MpdqnAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let explore = self.explore;
        self.select_action(&ctx.state, explore, ctx.vehicle)
    }

    fn observe(&mut self, transition: &Transition) {
        if !self.explore {
            return;
        }
        self.replay.push(*transition);
        self.since_train += 1;
        if self.since_train >= self.train_every && self.replay.len() >= self.batch_size {
            self.since_train = 0;
            self.train_step().expect("replay holds a full batch");
        }
    }
}
