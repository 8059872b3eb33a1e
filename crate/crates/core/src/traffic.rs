//! Message generation and the per-vehicle transmit queues.
//!
//! CAMs arrive periodically; HPD, DENM and MHD arrive as Bernoulli trials with
//! success probability `λ·e^{-λ}` per slot. Every fresh HPD (DENM) message is
//! re-sent `K_H` (`K_D`) more times, `T_H` (`T_D`) apart; each copy is a new
//! message stamped with its own due slot.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::config::SimulationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    Hpd = 0,
    Denm = 1,
    Cam = 2,
    Mhd = 3,
}

impl MessageKind {
    /// Highest priority first.
    pub const ALL: [MessageKind; 4] = [Self::Hpd, Self::Denm, Self::Cam, Self::Mhd];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Hpd => "hpd",
            Self::Denm => "denm",
            Self::Cam => "cam",
            Self::Mhd => "mhd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub generated_at: u64,
    /// Slots spent queued so far.
    pub aoi: u64,
}

impl Message {
    pub fn new(kind: MessageKind, generated_at: u64) -> Self {
        Self {
            kind,
            generated_at,
            aoi: 0,
        }
    }
}

/// `1 - ceil((t mod T_c) / T_c)`: true on multiples of the CAM period.
pub fn cam_arrival(t: u64, period_slots: u64) -> bool {
    t.is_multiple_of(period_slots)
}

/// Per-slot probability `λ·e^{-λ}` of an event-triggered arrival.
pub fn arrival_probability(lambda: f64) -> f64 {
    lambda * (-lambda).exp()
}

/// One Bernoulli trial of an event-triggered arrival.
pub fn poisson_arrival(lambda: f64, rng: &mut impl Rng) -> bool {
    let p = arrival_probability(lambda);
    p > 0.0 && rng.random::<f64>() < p
}

/// Due slots of the copies that follow a fresh HPD/DENM arrival at `t`.
/// Other kinds are never retransmitted.
pub fn schedule_retransmissions(kind: MessageKind, t: u64, cfg: &SimulationConfig) -> Vec<u64> {
    let (copies, interval_ms) = match kind {
        MessageKind::Hpd => (cfg.k_h, cfg.t_h),
        MessageKind::Denm => (cfg.k_d, cfg.t_d),
        _ => return Vec::new(),
    };
    let interval = cfg.ms_to_slots(interval_ms);
    (1..=u64::from(copies)).map(|k| t + k * interval).collect()
}

/// Next-arrival clocks for the event-triggered kinds plus pending copies.
///
/// Arrival instants are drawn by geometric skipping, which has the same law as
/// one Bernoulli trial per slot.
#[derive(Debug, Clone)]
pub struct TrafficGenerator {
    cam_period: u64,
    geometric: Option<Geometric>,
    /// Next arrival slot for HPD, DENM, MHD.
    next: [u64; 3],
    pending: BinaryHeap<Reverse<(u64, MessageKind, u64)>>,
    pending_seq: u64,
}

const EVENT_KINDS: [MessageKind; 3] = [MessageKind::Hpd, MessageKind::Denm, MessageKind::Mhd];

impl TrafficGenerator {
    pub fn new(cfg: &SimulationConfig, rng: &mut impl Rng) -> Self {
        let p = arrival_probability(cfg.lambda_arrival);
        let geometric = (p > 0.0).then(|| Geometric::new(p).expect("probability in (0, 1)"));
        let mut gen = Self {
            cam_period: cfg.ms_to_slots(cfg.cam_period),
            geometric,
            next: [u64::MAX; 3],
            pending: BinaryHeap::new(),
            pending_seq: 0,
        };
        for k in 0..3 {
            gen.next[k] = gen.skip(0, rng);
        }
        gen
    }

    fn skip(&self, from: u64, rng: &mut impl Rng) -> u64 {
        match &self.geometric {
            Some(g) => from.saturating_add(g.sample(rng)),
            None => u64::MAX,
        }
    }

    /// Messages generated at slot `t`, scheduled copies first, then fresh
    /// arrivals in priority order. Must be called for consecutive slots.
    pub fn arrivals(&mut self, t: u64, cfg: &SimulationConfig, rng: &mut impl Rng) -> Vec<Message> {
        let mut out = Vec::new();
        while let Some(Reverse((due, kind, _))) = self.pending.peek().copied() {
            if due > t {
                break;
            }
            self.pending.pop();
            out.push(Message::new(kind, due));
        }
        let mut fresh = [false; 3];
        for (k, slot) in self.next.iter_mut().enumerate() {
            if *slot == t {
                fresh[k] = true;
            }
        }
        for (k, due) in fresh.into_iter().enumerate() {
            if due {
                self.next[k] = self.skip(t + 1, rng);
            }
        }
        for (k, kind) in EVENT_KINDS.iter().enumerate() {
            if *kind == MessageKind::Mhd && cam_arrival(t, self.cam_period) {
                out.push(Message::new(MessageKind::Cam, t));
            }
            if fresh[k] {
                out.push(Message::new(*kind, t));
                for due in schedule_retransmissions(*kind, t, cfg) {
                    self.pending.push(Reverse((due, *kind, self.pending_seq)));
                    self.pending_seq += 1;
                }
            }
        }
        out
    }
}

/// Outcome of [`PriorityQueues::enqueue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueued {
    Accepted,
    Dropped,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueueCounters {
    pub offered: [u64; 4],
    pub dequeued: [u64; 4],
    pub dropped: [u64; 4],
}

/// Either four strict-priority FIFOs of capacity `L`, or a single pooled
/// FIFO holding `4·L` messages of any kind.
#[derive(Debug, Clone)]
pub struct PriorityQueues {
    single: bool,
    capacity: usize,
    queues: [VecDeque<Message>; 4],
    counters: QueueCounters,
}

impl PriorityQueues {
    pub fn new(capacity: usize, single: bool) -> Self {
        Self {
            single,
            capacity: if single { 4 * capacity } else { capacity },
            queues: Default::default(),
            counters: QueueCounters::default(),
        }
    }

    pub fn is_single(&self) -> bool {
        self.single
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn lane(&self, kind: MessageKind) -> usize {
        if self.single {
            0
        } else {
            kind.index()
        }
    }

    /// Number of queued messages of `kind`.
    pub fn len(&self, kind: MessageKind) -> usize {
        if self.single {
            self.queues[0].iter().filter(|m| m.kind == kind).count()
        } else {
            self.queues[kind.index()].len()
        }
    }

    pub fn total_len(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }

    pub fn counters(&self) -> &QueueCounters {
        &self.counters
    }

    /// Queued messages, head first, highest priority queue first.
    pub fn iter(&self) -> impl Iterator<Item = &Message> {
        self.queues.iter().flatten()
    }

    /// Appends `msg` when its queue has room, otherwise drops it.
    pub fn enqueue(&mut self, msg: Message) -> Enqueued {
        let lane = self.lane(msg.kind);
        self.counters.offered[msg.kind.index()] += 1;
        if self.queues[lane].len() < self.capacity {
            self.queues[lane].push_back(msg);
            Enqueued::Accepted
        } else {
            self.counters.dropped[msg.kind.index()] += 1;
            Enqueued::Dropped
        }
    }

    /// Appends `msg` even past capacity. The excess is trimmed by
    /// [`settle`](Self::settle) once the slot's departure is known, so an
    /// arrival into a full queue survives when the head leaves in the same slot.
    pub fn offer(&mut self, msg: Message) {
        let lane = self.lane(msg.kind);
        self.counters.offered[msg.kind.index()] += 1;
        self.queues[lane].push_back(msg);
    }

    /// Drops the newest messages of any queue above capacity.
    pub fn settle(&mut self) -> u64 {
        let mut dropped = 0;
        for q in &mut self.queues {
            while q.len() > self.capacity {
                let msg = q.pop_back().expect("nonempty");
                self.counters.dropped[msg.kind.index()] += 1;
                dropped += 1;
            }
        }
        dropped
    }

    /// ρ flags: set for kinds that can use the reserved slot `rb` at `t`.
    pub fn transmit_opportunity(&self, rb: Option<u64>, t: u64) -> [bool; 4] {
        let mut rho = [false; 4];
        if rb == Some(t) {
            for kind in MessageKind::ALL {
                rho[kind.index()] = self.len(kind) > 0;
            }
        }
        rho
    }

    /// Serves one message. Priority mode takes the highest-priority kind with
    /// ρ set; single mode takes the pooled head whenever any ρ is set.
    pub fn select_transmit(&mut self, rho: [bool; 4]) -> Option<Message> {
        let msg = if self.single {
            if rho.iter().any(|&r| r) {
                self.queues[0].pop_front()
            } else {
                None
            }
        } else {
            MessageKind::ALL
                .iter()
                .find(|k| rho[k.index()])
                .and_then(|k| self.queues[k.index()].pop_front())
        }?;
        self.counters.dequeued[msg.kind.index()] += 1;
        Some(msg)
    }

    /// One slot of queueing delay for everything still queued.
    pub fn advance_aoi(&mut self) {
        for msg in self.queues.iter_mut().flatten() {
            msg.aoi += 1;
        }
    }

    /// Per-kind (sum of AoI in slots, message count) over queued messages.
    pub fn aoi_totals(&self) -> [(u64, u64); 4] {
        let mut out = [(0, 0); 4];
        for msg in self.iter() {
            let e = &mut out[msg.kind.index()];
            e.0 += msg.aoi;
            e.1 += 1;
        }
        out
    }
}
