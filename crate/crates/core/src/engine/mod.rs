//! The slot loop.
//!
//! Every slot runs the same fixed sequence:
//!
//! 1. mobility (from the second slot on),
//! 2. arrivals and due retransmission copies, then a fresh resource selection
//!    for vehicles that were idle and just received data,
//! 3. transmit selection at reserved slots and counter bookkeeping, followed by
//!    overflow drops,
//! 4. PHY resolution of every link,
//! 5. receiver and queue AoI updates, sensing records,
//! 6. metrics,
//! 7. epoch close and a new decision for vehicles whose counter ran out.

pub mod aoi;
pub mod reward;
pub mod sensing;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agents::{clamp_action, Agent, Decision, DecisionContext, State, Transition};
use crate::config::{mw_to_dbm, SimulationConfig};
use crate::mobility::{initial_poses, step_position, wrapped_distance, VehiclePose};
use crate::phy::{Channel, SlotTransmission};
use crate::rng::{stream_rng, Stream};
use crate::sps::{
    build_candidate_list, draw_rc, KnownReservation, ReselectionHistory, Reservation,
};
use crate::traffic::{MessageKind, PriorityQueues, TrafficGenerator};

pub use aoi::{update_receiver_aoi, ReceiverAoiMatrix};
pub use reward::{epoch_reward, observe_state};
pub use sensing::SensingHistory;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Never transmit (β = 0 at every reserved slot).
    pub force_silent: bool,
    /// Keep one [`EpochRecord`] per finished epoch.
    pub record_epochs: bool,
    /// Keep per-slot reselection counts for estimating `π`.
    pub record_reselections: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    pub slots: u64,
    /// Mean energy per decision epoch, mJ.
    pub mean_energy_mj: f64,
    /// Mean receiver AoI over in-range ordered pairs and slots, ms.
    pub mean_aoi_ms: f64,
    pub mean_reward: f64,
    pub epochs: u64,
    /// (slot, subchannel) cells carrying two or more transmissions.
    pub collisions: u64,
    pub drops: u64,
    /// Mean in-queue AoI per kind (HPD, DENM, CAM, MHD), ms.
    pub queue_aoi_ms: [f64; 4],
    pub transmissions: u64,
    pub receptions: u64,
    pub successes: u64,
    /// Sum of the counters drawn for every reservation.
    pub rc0_sum: u64,
    /// Sum over epochs of the power in force, mW.
    pub power_sum_mw: f64,
    pub clamped_actions: u64,
    /// No in-range pair was ever observed, so the AoI average is undefined.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub vehicle: usize,
    pub start: u64,
    pub end: u64,
    pub rri: u64,
    pub power_mw: f64,
    pub energy_mj: f64,
    pub mean_aoi_ms: f64,
    pub reward: f64,
    pub state: State,
    pub terminal: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeOutput {
    pub metrics: EpisodeMetrics,
    pub epochs: Vec<EpochRecord>,
    pub reselections: Option<ReselectionHistory>,
}

#[derive(Debug, Clone)]
struct Epoch {
    start: u64,
    state: State,
    decision: Decision,
    energy_mj: f64,
    aoi_sum: f64,
    aoi_count: u64,
    attempts: u64,
    successes: u64,
}

impl Epoch {
    fn new(start: u64, state: State, decision: Decision) -> Self {
        Self {
            start,
            state,
            decision,
            energy_mj: 0.0,
            aoi_sum: 0.0,
            aoi_count: 0,
            attempts: 0,
            successes: 0,
        }
    }

    fn mean_aoi(&self) -> f64 {
        if self.aoi_count == 0 {
            0.0
        } else {
            self.aoi_sum / self.aoi_count as f64
        }
    }
}

#[derive(Debug, Clone)]
struct Vehicle {
    pose: VehiclePose,
    traffic: TrafficGenerator,
    traffic_rng: ChaCha8Rng,
    mac_rng: ChaCha8Rng,
    queues: PriorityQueues,
    sensing: SensingHistory,
    reservation: Option<Reservation>,
    /// The current reservation has been used at least once.
    announced: bool,
    epoch: Epoch,
    last_rn: f64,
    last_rc0: u32,
}

/// One episode in progress.
pub struct Simulation<'c, A: Agent> {
    cfg: &'c SimulationConfig,
    agent: A,
    opts: RunOptions,
    channel: Channel,
    vehicles: Vec<Vehicle>,
    aoi: ReceiverAoiMatrix,
    in_range: Vec<bool>,
    t: u64,
    slot_ms: f64,

    energy_sum: f64,
    reward_sum: f64,
    pair_aoi_sum: f64,
    pair_slots: u64,
    queue_aoi: [(u64, u64); 4],
    metrics: EpisodeMetrics,
    epochs: Vec<EpochRecord>,
    reselections: Option<ReselectionHistory>,
}

impl<'c, A: Agent> Simulation<'c, A> {
    pub fn new(cfg: &'c SimulationConfig, agent: A, seed: u64, opts: RunOptions) -> Self {
        let mut placement = stream_rng(seed, Stream::Placement, 0);
        let poses = initial_poses(cfg, &mut placement);
        let n = poses.len();
        let vehicles = poses
            .into_iter()
            .enumerate()
            .map(|(i, pose)| {
                let mut traffic_rng = stream_rng(seed, Stream::Traffic, i as u64);
                let traffic = TrafficGenerator::new(cfg, &mut traffic_rng);
                Vehicle {
                    pose,
                    traffic,
                    traffic_rng,
                    mac_rng: stream_rng(seed, Stream::Mac, i as u64),
                    queues: PriorityQueues::new(cfg.queue_capacity, cfg.single_queue),
                    sensing: SensingHistory::new(cfg.sensing_window, cfg.n_subchannels),
                    reservation: None,
                    announced: false,
                    epoch: Epoch::new(0, [0.0; 4], Decision::simple(0, 0, 0.0)),
                    last_rn: 0.0,
                    last_rc0: 0,
                }
            })
            .collect();
        let mut sim = Self {
            cfg,
            agent,
            channel: Channel::new(cfg, seed),
            vehicles,
            aoi: ReceiverAoiMatrix::new(n),
            in_range: vec![false; n * n],
            t: 0,
            slot_ms: cfg.slot_ms,
            energy_sum: 0.0,
            reward_sum: 0.0,
            pair_aoi_sum: 0.0,
            pair_slots: 0,
            queue_aoi: [(0, 0); 4],
            metrics: EpisodeMetrics {
                seed,
                ..Default::default()
            },
            epochs: Vec::new(),
            reselections: opts
                .record_reselections
                .then(|| ReselectionHistory::new(n as u64)),
            opts,
        };
        sim.refresh_range();
        for i in 0..n {
            let state = sim.observe(i);
            let decision = sim.decide(i, state);
            sim.vehicles[i].epoch = Epoch::new(0, state, decision);
        }
        sim
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    pub fn poses(&self) -> Vec<VehiclePose> {
        self.vehicles.iter().map(|v| v.pose).collect()
    }

    pub fn receiver_aoi(&self) -> &ReceiverAoiMatrix {
        &self.aoi
    }

    pub fn queues(&self, i: usize) -> &PriorityQueues {
        &self.vehicles[i].queues
    }

    pub fn reservation(&self, i: usize) -> Option<&Reservation> {
        self.vehicles[i].reservation.as_ref()
    }

    pub fn in_range(&self, tx: usize, rx: usize) -> bool {
        self.in_range[tx * self.vehicles.len() + rx]
    }

    pub fn agent(&self) -> &A {
        &self.agent
    }

    fn refresh_range(&mut self) {
        let n = self.vehicles.len();
        for i in 0..n {
            for j in 0..n {
                let was = self.in_range[i * n + j];
                let now = i != j
                    && wrapped_distance(
                        &self.vehicles[i].pose,
                        &self.vehicles[j].pose,
                        self.cfg.highway_length,
                    ) <= self.cfg.comm_radius;
                if now && !was {
                    // a link's age counts from the moment it forms
                    self.aoi.set(i, j, 0.0);
                }
                self.in_range[i * n + j] = now;
            }
        }
    }

    fn observe(&self, i: usize) -> State {
        let n = self.vehicles.len();
        let me = &self.vehicles[i];
        let mut count = 0usize;
        let mut dist = 0.0;
        for j in 0..n {
            if self.in_range[i * n + j] {
                count += 1;
                dist += wrapped_distance(&me.pose, &self.vehicles[j].pose, self.cfg.highway_length);
            }
        }
        let mean = if count == 0 { 0.0 } else { dist / count as f64 };
        observe_state(count, mean, me.last_rn, me.last_rc0, self.cfg)
    }

    fn decide(&mut self, i: usize, state: State) -> Decision {
        let ctx = DecisionContext {
            vehicle: i,
            t: self.t,
            state,
            cfg: self.cfg,
        };
        let mut decision = self.agent.decide(&ctx);
        let (action, clamped) = clamp_action(decision.action, self.cfg);
        if clamped {
            self.metrics.clamped_actions += 1;
        }
        decision.action = action;
        if let Some(k) = self.cfg.rri_choices.iter().position(|&r| r == action.rri) {
            decision.rri_index = k;
        }
        decision
    }

    /// Fresh resource selection for vehicle `i` resolved at the current slot.
    fn select_resource(&mut self, i: usize) {
        let cfg = self.cfg;
        let rri = self.vehicles[i].epoch.decision.action.rri;
        let period = cfg.ms_to_slots(rri);
        let known: Vec<KnownReservation> = self
            .vehicles
            .iter()
            .enumerate()
            .filter(|&(k, v)| k != i && v.announced)
            .filter_map(|(_, v)| {
                let r = v.reservation.as_ref()?;
                let rx_mw = v.epoch.decision.action.power_mw
                    * self.channel.mean_gain(&v.pose, &self.vehicles[i].pose);
                Some(KnownReservation {
                    subchannel: r.resource.subchannel,
                    slot: r.rb_next,
                    period: r.period,
                    rsrp_dbm: mw_to_dbm(rx_mw),
                })
            })
            .collect();
        let t = self.t;
        let me = &mut self.vehicles[i];
        let t_w = me.mac_rng.random_range(0..=cfg.t_w_max);
        let window_start = t + t_w + period;
        let sensing = &me.sensing;
        let list = build_candidate_list(
            window_start,
            period,
            cfg.n_subchannels,
            &known,
            cfg.rsrp_threshold_dbm,
            |slot, sub| sensing.energy(slot, sub, period, t),
        );
        let pick = list[me.mac_rng.random_range(0..list.len())];
        let rc0 = draw_rc(rri, &mut me.mac_rng, cfg);
        me.reservation = Some(Reservation::select(t, rri, period, pick, t_w, rc0));
        me.announced = false;
        me.last_rc0 = rc0;
        self.metrics.rc0_sum += u64::from(rc0);
    }

    fn close_epoch(&mut self, i: usize, terminal: bool) -> State {
        let cfg = self.cfg;
        let t = self.t;
        let ep = self.vehicles[i].epoch.clone();
        let mean_aoi = ep.mean_aoi();
        let reward = epoch_reward(ep.energy_mj, mean_aoi, cfg);
        self.vehicles[i].last_rn = if ep.attempts == 0 {
            0.0
        } else {
            ep.successes as f64 / ep.attempts as f64
        };
        let next_state = self.observe(i);
        self.agent.observe(&Transition {
            state: ep.state,
            rri_index: ep.decision.rri_index,
            params: ep.decision.params,
            reward,
            next_state,
            terminal,
        });
        self.energy_sum += ep.energy_mj;
        self.reward_sum += reward;
        self.metrics.power_sum_mw += ep.decision.action.power_mw;
        self.metrics.epochs += 1;
        if self.opts.record_epochs {
            self.epochs.push(EpochRecord {
                vehicle: i,
                start: ep.start,
                end: t,
                rri: ep.decision.action.rri,
                power_mw: ep.decision.action.power_mw,
                energy_mj: ep.energy_mj,
                mean_aoi_ms: mean_aoi,
                reward,
                state: ep.state,
                terminal,
            });
        }
        next_state
    }

    /// Advances one slot.
    pub fn step(&mut self) {
        let cfg = self.cfg;
        let t = self.t;
        let n = self.vehicles.len();

        // 1. mobility
        if t > 0 {
            for v in &mut self.vehicles {
                v.pose = step_position(&v.pose, self.slot_ms, cfg.highway_length);
            }
            self.refresh_range();
        }

        // 2. arrivals
        for i in 0..n {
            let v = &mut self.vehicles[i];
            for msg in v.traffic.arrivals(t, cfg, &mut v.traffic_rng) {
                v.queues.offer(msg);
            }
            if v.reservation.is_none() && !v.queues.is_empty() {
                self.select_resource(i);
            }
        }

        // 3. transmit selection
        let mut txs: Vec<SlotTransmission> = Vec::new();
        let mut head_phi = vec![0.0; n];
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            if let Some(r) = v.reservation.as_mut() {
                if r.rb_next == t {
                    let sent = if self.opts.force_silent {
                        None
                    } else {
                        let rho = v.queues.transmit_opportunity(Some(r.rb_next), t);
                        v.queues.select_transmit(rho)
                    };
                    r.on_transmit(sent.is_some());
                    if let Some(msg) = sent {
                        let p = v.epoch.decision.action.power_mw;
                        txs.push(SlotTransmission {
                            tx: i,
                            subchannel: r.resource.subchannel,
                            power_mw: p,
                        });
                        head_phi[i] = msg.aoi as f64 * self.slot_ms;
                        v.epoch.energy_mj += p * self.slot_ms / 1000.0;
                        v.announced = true;
                    }
                }
            }
            self.metrics.drops += v.queues.settle();
        }
        self.metrics.transmissions += txs.len() as u64;
        let mut per_sub = vec![0u32; cfg.n_subchannels as usize];
        for s in &txs {
            per_sub[s.subchannel as usize] += 1;
        }
        self.metrics.collisions += per_sub.iter().filter(|&&c| c >= 2).count() as u64;

        // 4. PHY
        let poses = self.poses();
        let outcomes = self.channel.resolve_slot(t, &txs, &poses);

        // 5. AoI and sensing
        let mut delivered = Vec::new();
        for o in &outcomes {
            let ep = &mut self.vehicles[o.tx].epoch;
            ep.attempts += 1;
            self.metrics.receptions += 1;
            if o.success {
                ep.successes += 1;
                self.metrics.successes += 1;
                delivered.push((o.tx, o.rx, head_phi[o.tx], o.l_ms));
            }
        }
        self.aoi.update(&delivered, self.slot_ms);
        let mut transmitting = vec![false; n];
        for s in &txs {
            transmitting[s.tx] = true;
        }
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            v.queues.advance_aoi();
            for (k, (sum, count)) in v.queues.aoi_totals().iter().enumerate() {
                self.queue_aoi[k].0 += sum;
                self.queue_aoi[k].1 += count;
            }
            if !transmitting[i] {
                v.sensing.begin(t);
                for s in &txs {
                    let mw = s.power_mw * self.channel.gain(s.tx, i, t, &poses);
                    v.sensing.add(t, s.subchannel, mw);
                }
            }
        }

        // 6. metrics
        for i in 0..n {
            let row = self.aoi.row(i);
            let mut sum = 0.0;
            let mut count = 0u64;
            for (j, &phi) in row.iter().enumerate() {
                if self.in_range[i * n + j] {
                    sum += phi;
                    count += 1;
                }
            }
            self.pair_aoi_sum += sum;
            self.pair_slots += count;
            let ep = &mut self.vehicles[i].epoch;
            ep.aoi_sum += sum;
            ep.aoi_count += count;
        }

        // 7. epoch boundaries
        let mut reselected = 0u32;
        for i in 0..n {
            let exhausted = self.vehicles[i]
                .reservation
                .as_ref()
                .is_some_and(|r| r.rb_next == t + r.period && r.exhausted());
            if !exhausted {
                continue;
            }
            let state = self.close_epoch(i, false);
            let decision = self.decide(i, state);
            self.vehicles[i].epoch = Epoch::new(t + 1, state, decision);
            let v = &mut self.vehicles[i];
            if v.queues.is_empty() {
                // wait for the next arrival before selecting again
                v.reservation = None;
                v.announced = false;
                continue;
            }
            let rri = decision.action.rri;
            let period = cfg.ms_to_slots(rri);
            if v.mac_rng.random::<f64>() < cfg.p_rk {
                let rc0 = draw_rc(rri, &mut v.mac_rng, cfg);
                let kept = v
                    .reservation
                    .as_ref()
                    .expect("exhausted")
                    .keep(t, rri, period, rc0);
                v.reservation = Some(kept);
                v.last_rc0 = rc0;
                self.metrics.rc0_sum += u64::from(rc0);
            } else {
                reselected += 1;
                self.select_resource(i);
            }
        }
        if let Some(h) = self.reselections.as_mut() {
            h.events_per_slot.push(reselected);
        }

        self.t += 1;
    }

    /// Closes all open epochs and returns the episode summary.
    pub fn finish(mut self) -> EpisodeOutput {
        let n = self.vehicles.len();
        if self.t > 0 {
            self.t -= 1;
        }
        for i in 0..n {
            self.close_epoch(i, true);
        }
        let mut m = self.metrics;
        m.slots = self.t + 1;
        let epochs = m.epochs.max(1) as f64;
        m.mean_energy_mj = self.energy_sum / epochs;
        m.mean_reward = self.reward_sum / epochs;
        if self.pair_slots == 0 {
            m.mean_aoi_ms = 0.0;
            m.degenerate = true;
        } else {
            m.mean_aoi_ms = self.pair_aoi_sum / self.pair_slots as f64;
        }
        for kind in MessageKind::ALL {
            let (sum, count) = self.queue_aoi[kind.index()];
            m.queue_aoi_ms[kind.index()] = if count == 0 {
                0.0
            } else {
                sum as f64 / count as f64 * self.slot_ms
            };
        }
        EpisodeOutput {
            metrics: m,
            epochs: self.epochs,
            reselections: self.reselections,
        }
    }

    pub fn into_agent(self) -> A {
        self.agent
    }
}

/// Runs `cfg.slots_per_episode` slots and returns the summary.
pub fn run_episode<A: Agent>(cfg: &SimulationConfig, agent: A, seed: u64) -> EpisodeMetrics {
    run_episode_with(cfg, agent, seed, RunOptions::default()).metrics
}

pub fn run_episode_with<A: Agent>(
    cfg: &SimulationConfig,
    agent: A,
    seed: u64,
    opts: RunOptions,
) -> EpisodeOutput {
    let mut sim = Simulation::new(cfg, agent, seed, opts);
    for _ in 0..cfg.slots_per_episode {
        sim.step();
    }
    sim.finish()
}
