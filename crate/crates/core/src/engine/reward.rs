use crate::agents::State;
use crate::config::SimulationConfig;

/// Normalized state `[N/N_v, d/w, Rn, RC⁰/rc_max]`, each in `[0, 1]`.
pub fn observe_state(
    n_receivers: usize,
    mean_distance_m: f64,
    rn: f64,
    rc0: u32,
    cfg: &SimulationConfig,
) -> State {
    let n = n_receivers as f64 / cfg.n_vehicles.max(1) as f64;
    let d = mean_distance_m / cfg.comm_radius;
    let rc = f64::from(rc0) / f64::from(cfg.rc_max());
    [
        n.clamp(0.0, 1.0),
        d.clamp(0.0, 1.0),
        rn.clamp(0.0, 1.0),
        rc.clamp(0.0, 1.0),
    ]
}

/// `E / (P_max · slot · rc_max)`, with `E` in mJ.
pub fn energy_norm(energy_mj: f64, cfg: &SimulationConfig) -> f64 {
    let scale = cfg.p_max_mw() * cfg.slot_ms / 1000.0 * f64::from(cfg.rc_max());
    energy_mj / scale
}

/// `min(Φ̄, cap) / cap`.
pub fn aoi_norm(aoi_ms: f64, cfg: &SimulationConfig) -> f64 {
    aoi_ms.min(cfg.aoi_cap_ms) / cfg.aoi_cap_ms
}

pub fn reward_from_normalized(e_norm: f64, aoi_norm: f64, cfg: &SimulationConfig) -> f64 {
    -(cfg.omega1 * e_norm + cfg.omega2 * aoi_norm)
}

/// Reward of one decision epoch from its energy (mJ) and mean receiver age (ms).
pub fn epoch_reward(energy_mj: f64, mean_aoi_ms: f64, cfg: &SimulationConfig) -> f64 {
    reward_from_normalized(energy_norm(energy_mj, cfg), aoi_norm(mean_aoi_ms, cfg), cfg)
}
