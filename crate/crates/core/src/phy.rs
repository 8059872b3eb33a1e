//! Link budget, SINR under SIC and plain interference, and energy per use.

use rand::Rng;

use crate::config::SimulationConfig;
use crate::error::{Error, Result};
use crate::mobility::{wrapped_distance, VehiclePose};
use crate::rng::{keyed_unit, Stream};

/// Distances below this are clamped before computing a gain.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Large-scale gain `10^{-(PL₀ + 10·α·log₁₀ d)/10}`.
pub fn path_gain(d: f64, cfg: &SimulationConfig) -> f64 {
    let pl_db = cfg.pathloss_ref_db + 10.0 * cfg.pathloss_exponent * d.log10();
    10f64.powf(-pl_db / 10.0)
}

/// Unit-mean exponential power fading from a uniform draw in (0, 1].
pub fn fading_from_unit(u: f64) -> f64 {
    -u.ln()
}

/// `|h|²` at distance `d`, with a fresh fading draw from `rng` when enabled.
pub fn channel_gain(d: f64, rng: &mut impl Rng, cfg: &SimulationConfig) -> Result<f64> {
    if d.is_nan() || d <= 0.0 {
        return Err(Error::Domain {
            what: "distance",
            detail: format!("d = {d}"),
        });
    }
    let mut g = path_gain(d, cfg);
    if cfg.fading_enabled {
        // 1 - U lies in (0, 1]
        g *= fading_from_unit(1.0 - rng.random::<f64>());
    }
    Ok(g)
}

/// `η_th = 2^{G / (W·slot)} − 1`.
pub fn sinr_threshold(g_bits: f64, w_hz: f64, slot_ms: f64) -> f64 {
    let rate = g_bits / (slot_ms / 1000.0);
    (rate / w_hz).exp2() - 1.0
}

pub fn sinr_no_collision(p_tx_mw: f64, gain: f64, p_noise_mw: f64) -> f64 {
    p_tx_mw * gain / p_noise_mw
}

/// SINR of every signal after successive cancellation, in input order.
///
/// Signals are decoded strongest first (ties: lower id first), so each one
/// only sees the signals decoded after it as interference.
pub fn sic_decode(received: &[(usize, f64)], p_noise_mw: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..received.len()).collect();
    order.sort_by(|&a, &b| {
        received[b]
            .1
            .total_cmp(&received[a].1)
            .then(received[a].0.cmp(&received[b].0))
    });
    let mut eta = vec![0.0; received.len()];
    let mut weaker = 0.0;
    for &k in order.iter().rev() {
        eta[k] = received[k].1 / (weaker + p_noise_mw);
        weaker += received[k].1;
    }
    eta
}

/// SINR treating every other signal as interference.
pub fn sinr_collision_no_sic(target_mw: f64, interferers_mw: &[f64], p_noise_mw: f64) -> f64 {
    target_mw / (interferers_mw.iter().sum::<f64>() + p_noise_mw)
}

/// Airtime in ms of a `g_bits` message at Shannon rate; infinite when `η ≤ 0`.
pub fn transmission_time(g_bits: f64, w_hz: f64, eta: f64) -> f64 {
    if eta.is_nan() || eta <= 0.0 {
        return f64::INFINITY;
    }
    g_bits / (w_hz * eta.ln_1p() / std::f64::consts::LN_2) * 1000.0
}

/// `(ε, E)` in mJ: energy of one use and of the whole reservation.
pub fn transmission_energy(p_tx_mw: f64, beta: bool, rc0: u32, slot_ms: f64) -> (f64, f64) {
    let eps = if beta {
        p_tx_mw * slot_ms / 1000.0
    } else {
        0.0
    };
    (eps, eps * f64::from(rc0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTransmission {
    pub tx: usize,
    pub subchannel: u32,
    pub power_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptionOutcome {
    pub tx: usize,
    pub rx: usize,
    pub eta: f64,
    pub success: bool,
    /// Airtime in ms; infinite on failure.
    pub l_ms: f64,
}

/// Channel state shared by all links of a run. Fading is a keyed function of
/// (tx, rx, slot), so it does not depend on which other links are evaluated.
#[derive(Debug, Clone)]
pub struct Channel {
    seed: u64,
    fading: bool,
    noise_mw: f64,
    eta_th: f64,
    g_bits: f64,
    w_hz: f64,
    noma: bool,
    radius: f64,
    highway_length: f64,
    pathloss_ref_db: f64,
    pathloss_exponent: f64,
}

impl Channel {
    pub fn new(cfg: &SimulationConfig, seed: u64) -> Self {
        let w_hz = cfg.resource_bandwidth();
        let g_bits = cfg.message_size_bits as f64;
        Self {
            seed,
            fading: cfg.fading_enabled,
            noise_mw: cfg.noise_power,
            eta_th: sinr_threshold(g_bits, w_hz, cfg.slot_ms),
            g_bits,
            w_hz,
            noma: cfg.noma_enabled,
            radius: cfg.comm_radius,
            highway_length: cfg.highway_length,
            pathloss_ref_db: cfg.pathloss_ref_db,
            pathloss_exponent: cfg.pathloss_exponent,
        }
    }

    pub fn eta_threshold(&self) -> f64 {
        self.eta_th
    }

    pub fn distance(&self, a: &VehiclePose, b: &VehiclePose) -> f64 {
        wrapped_distance(a, b, self.highway_length).max(MIN_DISTANCE_M)
    }

    /// Pathloss-only gain between two poses.
    pub fn mean_gain(&self, a: &VehiclePose, b: &VehiclePose) -> f64 {
        let d = self.distance(a, b);
        let pl_db = self.pathloss_ref_db + 10.0 * self.pathloss_exponent * d.log10();
        10f64.powf(-pl_db / 10.0)
    }

    /// Gain including the fading realisation of link (tx, rx) at slot `t`.
    pub fn gain(&self, tx: usize, rx: usize, t: u64, poses: &[VehiclePose]) -> f64 {
        let g = self.mean_gain(&poses[tx], &poses[rx]);
        if self.fading {
            let u = keyed_unit(self.seed, Stream::Fading, &[tx as u64, rx as u64, t]);
            g * fading_from_unit(u)
        } else {
            g
        }
    }

    /// Resolves every (tx, in-range rx) link of slot `t`.
    ///
    /// All same-subchannel transmitters interfere at a receiver, in range or
    /// not. A receiver that transmits in the slot decodes nothing.
    pub fn resolve_slot(
        &self,
        t: u64,
        txs: &[SlotTransmission],
        poses: &[VehiclePose],
    ) -> Vec<ReceptionOutcome> {
        let mut out = Vec::new();
        let transmitting: Vec<bool> = {
            let mut v = vec![false; poses.len()];
            for s in txs {
                v[s.tx] = true;
            }
            v
        };
        let mut received: Vec<(usize, f64)> = Vec::new();
        for rx in 0..poses.len() {
            let in_range: Vec<usize> = (0..txs.len())
                .filter(|&k| {
                    let tx = txs[k].tx;
                    tx != rx
                        && wrapped_distance(&poses[tx], &poses[rx], self.highway_length)
                            <= self.radius
                })
                .collect();
            if in_range.is_empty() {
                continue;
            }
            if transmitting[rx] {
                for &k in &in_range {
                    out.push(ReceptionOutcome {
                        tx: txs[k].tx,
                        rx,
                        eta: 0.0,
                        success: false,
                        l_ms: f64::INFINITY,
                    });
                }
                continue;
            }
            for &k in &in_range {
                let target = txs[k];
                received.clear();
                for s in txs.iter().filter(|s| s.subchannel == target.subchannel) {
                    received.push((s.tx, s.power_mw * self.gain(s.tx, rx, t, poses)));
                }
                let pos = received
                    .iter()
                    .position(|&(id, _)| id == target.tx)
                    .expect("target is on its own subchannel");
                let eta = if self.noma {
                    sic_decode(&received, self.noise_mw)[pos]
                } else {
                    let others: Vec<f64> = received
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != pos)
                        .map(|(_, &(_, p))| p)
                        .collect();
                    sinr_collision_no_sic(received[pos].1, &others, self.noise_mw)
                };
                let success = eta >= self.eta_th;
                out.push(ReceptionOutcome {
                    tx: target.tx,
                    rx,
                    eta,
                    success,
                    l_ms: if success {
                        transmission_time(self.g_bits, self.w_hz, eta)
                    } else {
                        f64::INFINITY
                    },
                });
            }
        }
        out
    }
}
