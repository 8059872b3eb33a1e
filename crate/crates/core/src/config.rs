//! Scenario configuration.
//!
//! A scenario file is a flat list of `key=value` lines (UTF-8). Blank lines and
//! everything after a `#` are ignored. Keys that are not present keep the value
//! from [`SimulationConfig::default`]. `omega2` follows `1 - omega1` unless it is
//! given explicitly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::ConfigError;

/// Environment variable that overrides the scenario seed.
pub const SEED_ENV: &str = "SIM_SEED";

/// Every tunable of a run. Times are in milliseconds unless noted, powers in
/// mW unless the name says dBm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    // scenario
    pub n_vehicles: usize,
    /// Highway length D in meters.
    pub highway_length: f64,
    /// Communication radius w in meters (inclusive).
    pub comm_radius: f64,
    pub lanes: u32,
    /// Lane spacing d_y in meters.
    pub lane_width: f64,
    /// km/h
    pub v_max: f64,
    /// km/h; only checked against the slowest lane speed.
    pub v_min: f64,

    // traffic
    pub queue_capacity: usize,
    /// Pool all message kinds into one FIFO instead of four priority queues.
    pub single_queue: bool,
    pub cam_period: u64,
    /// Per-slot Poisson rate shared by HPD, DENM and MHD.
    pub lambda_arrival: f64,
    pub k_h: u32,
    pub k_d: u32,
    pub t_h: u64,
    pub t_d: u64,

    // radio
    pub rri_choices: Vec<u64>,
    /// When nonzero every reservation uses this RRI and the agent only sets power.
    pub fixed_rri: u64,
    pub p_max_dbm: f64,
    pub slot_ms: f64,
    /// Hz
    pub total_bandwidth: f64,
    pub n_subchannels: u32,
    pub message_size_bits: u64,
    /// Noise power in mW.
    pub noise_power: f64,
    /// Highway line-of-sight values at 5.9 GHz by default.
    pub pathloss_exponent: f64,
    /// Path loss at 1 m, dB.
    pub pathloss_ref_db: f64,
    pub fading_enabled: bool,
    /// Receivers use successive interference cancellation.
    pub noma_enabled: bool,

    // semi-persistent scheduling
    pub p_rk: f64,
    /// Upper bound (slots) of the resource-selection buffer time.
    pub t_w_max: u64,
    pub rc_base_lo: u32,
    pub rc_base_hi: u32,
    pub rsrp_threshold_dbm: f64,
    /// Slots of received-energy history used for ranking candidates.
    pub sensing_window: u64,

    // objective
    pub omega1: f64,
    pub omega2: f64,
    /// Receiver AoI (ms) that maps to a normalized value of 1 in the reward.
    pub aoi_cap_ms: f64,

    // learning
    pub gamma_discount: f64,
    pub lr_q: f64,
    pub lr_x: f64,
    pub tau_q: f64,
    pub tau_x: f64,
    pub replay_size: usize,
    pub batch_size: usize,
    pub episodes: usize,
    pub slots_per_episode: u64,
    pub seed: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_episodes: usize,
    pub ou_theta: f64,
    /// OU noise scale as a fraction of the linear maximum power.
    pub ou_sigma: f64,
    /// Gradient step every this many stored transitions.
    pub train_every: usize,
    /// Episodes between periodic training checkpoints (0 disables them).
    pub checkpoint_every: usize,

    // genetic baseline
    pub ga_population: usize,
    pub ga_generations: usize,
    pub ga_crossover: f64,
    pub ga_mutation: f64,
    pub ga_tournament: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 20,
            highway_length: 500.0,
            comm_radius: 150.0,
            lanes: 4,
            lane_width: 4.0,
            v_max: 80.0,
            v_min: 60.0,

            queue_capacity: 10,
            single_queue: false,
            cam_period: 100,
            lambda_arrival: 1e-4,
            k_h: 8,
            k_d: 5,
            t_h: 100,
            t_d: 500,

            rri_choices: vec![20, 50, 100],
            fixed_rri: 0,
            p_max_dbm: 23.0,
            slot_ms: 1.0,
            total_bandwidth: 10e6,
            n_subchannels: 5,
            message_size_bits: 2400,
            noise_power: 1e-10,
            pathloss_exponent: 2.27,
            pathloss_ref_db: 42.4,
            fading_enabled: true,
            noma_enabled: true,

            p_rk: 0.8,
            t_w_max: 3,
            rc_base_lo: 5,
            rc_base_hi: 15,
            rsrp_threshold_dbm: -110.0,
            sensing_window: 1000,

            omega1: 0.6,
            omega2: 0.4,
            aoi_cap_ms: 1000.0,

            gamma_discount: 0.99,
            lr_q: 5e-4,
            lr_x: 1e-4,
            tau_q: 0.01,
            tau_x: 0.01,
            replay_size: 2000,
            batch_size: 128,
            episodes: 500,
            slots_per_episode: 10_000,
            seed: 1,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_episodes: 500,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            train_every: 1,
            checkpoint_every: 100,

            ga_population: 30,
            ga_generations: 20,
            ga_crossover: 0.8,
            ga_mutation: 0.1,
            ga_tournament: 2,
        }
    }
}

/// Same as `SimulationConfig::default()`.
pub fn default_config() -> SimulationConfig {
    SimulationConfig::default()
}

/// Reads and validates a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<SimulationConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    SimulationConfig::parse(&text)
}

trait KvValue: Sized {
    fn parse_kv(raw: &str) -> Result<Self, String>;
    fn format_kv(&self) -> String;
}

macro_rules! kv_via_fromstr {
    ($($t:ty),*) => {$(
        impl KvValue for $t {
            fn parse_kv(raw: &str) -> Result<Self, String> {
                raw.parse::<$t>().map_err(|e| e.to_string())
            }
            fn format_kv(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

kv_via_fromstr!(u32, u64, usize, f64, bool);

impl KvValue for Vec<u64> {
    fn parse_kv(raw: &str) -> Result<Self, String> {
        raw.split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|e| e.to_string()))
            .collect()
    }
    fn format_kv(&self) -> String {
        self.iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

macro_rules! config_keys {
    ($($field:ident),* $(,)?) => {
        /// All scenario keys, in the order they are written out.
        pub const CONFIG_KEYS: &[&str] = &[$(stringify!($field)),*];

        impl SimulationConfig {
            fn assign(&mut self, key: &str, raw: &str) -> Option<Result<(), String>> {
                match key {
                    $(stringify!($field) => Some(KvValue::parse_kv(raw).map(|v| self.$field = v)),)*
                    _ => None,
                }
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), KvValue::format_kv(&self.$field))),*]
            }
        }
    };
}

config_keys!(
    n_vehicles,
    highway_length,
    comm_radius,
    lanes,
    lane_width,
    v_max,
    v_min,
    queue_capacity,
    single_queue,
    cam_period,
    lambda_arrival,
    k_h,
    k_d,
    t_h,
    t_d,
    rri_choices,
    fixed_rri,
    p_max_dbm,
    slot_ms,
    total_bandwidth,
    n_subchannels,
    message_size_bits,
    noise_power,
    pathloss_exponent,
    pathloss_ref_db,
    fading_enabled,
    noma_enabled,
    p_rk,
    t_w_max,
    rc_base_lo,
    rc_base_hi,
    rsrp_threshold_dbm,
    sensing_window,
    omega1,
    omega2,
    aoi_cap_ms,
    gamma_discount,
    lr_q,
    lr_x,
    tau_q,
    tau_x,
    replay_size,
    batch_size,
    episodes,
    slots_per_episode,
    seed,
    eps_start,
    eps_end,
    eps_decay_episodes,
    ou_theta,
    ou_sigma,
    train_every,
    checkpoint_every,
    ga_population,
    ga_generations,
    ga_crossover,
    ga_mutation,
    ga_tournament,
);

impl SimulationConfig {
    /// Parses scenario text on top of the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut omega2_given = false;
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key=value`, got `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match cfg.assign(key, value) {
                None => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.to_string(),
                    })
                }
                Some(Err(message)) => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        message,
                    })
                }
                Some(Ok(())) => {}
            }
            omega2_given |= key == "omega2";
        }
        if !omega2_given {
            cfg.omega2 = 1.0 - cfg.omega1;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes every key, one `key=value` per line. `parse` of the output
    /// reproduces `self` exactly.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Replaces the seed with `SIM_SEED` when it is set.
    pub fn apply_env_overrides(&mut self) -> Result<(), ConfigError> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw.trim().parse().map_err(|_| ConfigError::Invalid {
                field: "seed",
                reason: format!("{SEED_ENV}=`{raw}` is not an unsigned integer"),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> ConfigError {
            ConfigError::Invalid {
                field,
                reason: reason.into(),
            }
        }
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(bad(field, format!("must be positive, got {v}")))
            }
        };
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(bad(field, format!("must lie in [0, 1], got {v}")))
            }
        };

        positive("highway_length", self.highway_length)?;
        positive("comm_radius", self.comm_radius)?;
        positive("slot_ms", self.slot_ms)?;
        positive("total_bandwidth", self.total_bandwidth)?;
        positive("noise_power", self.noise_power)?;
        if self.lane_width.is_nan() || self.lane_width < 0.0 {
            return Err(bad("lane_width", "must be nonnegative"));
        }
        if self.n_vehicles == 0 {
            return Err(bad("n_vehicles", "at least one vehicle is required"));
        }
        if self.lanes < 2 || !self.lanes.is_multiple_of(2) {
            return Err(bad("lanes", "must be a positive even number"));
        }
        let slowest = self.v_max - 20.0 * (f64::from(self.lanes) / 2.0 - 1.0);
        if slowest < 0.0 {
            return Err(bad(
                "v_max",
                format!("outer lanes would have negative speed {slowest} km/h"),
            ));
        }
        if self.queue_capacity == 0 {
            return Err(bad("queue_capacity", "must be at least 1"));
        }
        if self.n_subchannels == 0 {
            return Err(bad("n_subchannels", "must be at least 1"));
        }
        if self.rri_choices.is_empty() {
            return Err(bad("rri_choices", "must not be empty"));
        }
        let whole_slots = |field: &'static str, ms: u64| {
            let slots = ms as f64 / self.slot_ms;
            if ms > 0 && (slots - slots.round()).abs() < 1e-9 {
                Ok(())
            } else {
                Err(bad(
                    field,
                    format!("{ms} ms is not a positive whole number of slots"),
                ))
            }
        };
        for &rri in &self.rri_choices {
            whole_slots("rri_choices", rri)?;
        }
        if self.fixed_rri != 0 {
            whole_slots("fixed_rri", self.fixed_rri)?;
        }
        whole_slots("cam_period", self.cam_period)?;
        whole_slots("t_h", self.t_h)?;
        whole_slots("t_d", self.t_d)?;
        if !(self.lambda_arrival >= 0.0 && self.lambda_arrival.is_finite()) {
            return Err(bad("lambda_arrival", "must be nonnegative"));
        }
        unit("p_rk", self.p_rk)?;
        if self.rc_base_lo == 0 || self.rc_base_lo > self.rc_base_hi {
            return Err(bad("rc_base_lo", "need 1 <= rc_base_lo <= rc_base_hi"));
        }
        if self.omega1 < 0.0 || !self.omega1.is_finite() {
            return Err(bad("omega1", "must be nonnegative"));
        }
        if self.omega2 < 0.0 || !self.omega2.is_finite() {
            return Err(bad("omega2", "must be nonnegative"));
        }
        positive("aoi_cap_ms", self.aoi_cap_ms)?;
        unit("gamma_discount", self.gamma_discount)?;
        unit("tau_q", self.tau_q)?;
        unit("tau_x", self.tau_x)?;
        unit("eps_start", self.eps_start)?;
        unit("eps_end", self.eps_end)?;
        unit("ga_crossover", self.ga_crossover)?;
        unit("ga_mutation", self.ga_mutation)?;
        if self.batch_size == 0 || self.batch_size > self.replay_size {
            return Err(bad("batch_size", "need 1 <= batch_size <= replay_size"));
        }
        if self.train_every == 0 {
            return Err(bad("train_every", "must be at least 1"));
        }
        if self.ga_population < 2 {
            return Err(bad("ga_population", "must be at least 2"));
        }
        if self.ga_tournament == 0 {
            return Err(bad("ga_tournament", "must be at least 1"));
        }
        if self.sensing_window == 0 {
            return Err(bad("sensing_window", "must be at least 1 slot"));
        }
        Ok(())
    }

    /// Linear maximum transmit power.
    pub fn p_max_mw(&self) -> f64 {
        dbm_to_mw(self.p_max_dbm)
    }

    /// Per-resource bandwidth W in Hz.
    pub fn resource_bandwidth(&self) -> f64 {
        self.total_bandwidth / f64::from(self.n_subchannels)
    }

    /// Converts a whole-millisecond period into slots.
    pub fn ms_to_slots(&self, ms: u64) -> u64 {
        (ms as f64 / self.slot_ms).round() as u64
    }

    /// RRIs the agent may pick from, honouring `fixed_rri`.
    pub fn allowed_rris(&self) -> Vec<u64> {
        if self.fixed_rri != 0 {
            vec![self.fixed_rri]
        } else {
            self.rri_choices.clone()
        }
    }

    /// Largest reselection counter any RRI can produce.
    pub fn rc_max(&self) -> u32 {
        let shortest = self.rri_choices.iter().copied().min().unwrap_or(100);
        scaled_rc(self.rc_base_hi, shortest)
    }
}

/// RC bound at RRI `rri_ms`, scaling the 100 ms bound by `100 / rri`.
pub(crate) fn scaled_rc(base: u32, rri_ms: u64) -> u32 {
    ((f64::from(base) * 100.0 / rri_ms as f64).round() as u32).max(1)
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_defaults() {
        let c = default_config();
        assert_eq!(c.n_vehicles, 20);
        assert_eq!(c.highway_length, 500.0);
        assert_eq!(c.comm_radius, 150.0);
        assert_eq!(c.queue_capacity, 10);
        assert_eq!(c.cam_period, 100);
        assert_eq!(c.lambda_arrival, 1e-4);
        assert_eq!((c.k_h, c.k_d), (8, 5));
        assert_eq!((c.t_h, c.t_d), (100, 500));
        assert_eq!((c.lr_q, c.lr_x), (5e-4, 1e-4));
        assert_eq!((c.tau_q, c.tau_x), (0.01, 0.01));
        assert_eq!(c.replay_size, 2000);
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.gamma_discount, 0.99);
        assert_eq!(c.p_max_dbm, 23.0);
        assert_eq!(c.v_max, 80.0);
        assert_eq!(c.slot_ms, 1.0);
        assert!((c.resource_bandwidth() - 2e6).abs() < 1e-6);
        assert!((c.p_max_mw() - 199.526_231).abs() < 1e-5);
        assert!((c.omega1 + c.omega2 - 1.0).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn single_key_keeps_other_defaults() {
        let c = SimulationConfig::parse("n_vehicles=30\n").unwrap();
        let mut expected = default_config();
        expected.n_vehicles = 30;
        assert_eq!(c, expected);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(SimulationConfig::parse("").unwrap(), default_config());
        assert_eq!(
            SimulationConfig::parse("# only a comment\n\n").unwrap(),
            default_config()
        );
    }

    #[test]
    fn out_of_range_p_rk_is_rejected() {
        let err = SimulationConfig::parse("p_rk=1.5").unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid { field: "p_rk", .. }),
            "{err}"
        );
    }

    #[test]
    fn parse_errors_name_line_and_key() {
        match SimulationConfig::parse("seed=1\nbogus=3\n").unwrap_err() {
            ConfigError::UnknownKey { line, key } => assert_eq!((line, key.as_str()), (2, "bogus")),
            other => panic!("{other}"),
        }
        match SimulationConfig::parse("\nlanes=four").unwrap_err() {
            ConfigError::BadValue { line, key, .. } => {
                assert_eq!((line, key.as_str()), (2, "lanes"))
            }
            other => panic!("{other}"),
        }
        assert!(matches!(
            SimulationConfig::parse("no equals sign").unwrap_err(),
            ConfigError::Syntax { line: 1, .. }
        ));
    }

    #[test]
    fn omega2_tracks_omega1_unless_given() {
        let c = SimulationConfig::parse("omega1=0.3").unwrap();
        assert!((c.omega2 - 0.7).abs() < 1e-12);
        let c = SimulationConfig::parse("omega1=0.3\nomega2=0.2").unwrap();
        assert_eq!(c.omega2, 0.2);
    }

    #[test]
    fn negative_lane_speed_rejected() {
        let err = SimulationConfig::parse("lanes=8\nv_max=50").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "v_max", .. }));
    }

    #[test]
    fn fractional_slot_periods_rejected() {
        let err = SimulationConfig::parse("slot_ms=0.3").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.cfg");
        std::fs::write(&path, "# highway\nn_vehicles = 30 # more cars\n").unwrap();
        assert_eq!(load_config(&path).unwrap().n_vehicles, 30);
        assert!(matches!(
            load_config(dir.path().join("missing.cfg")).unwrap_err(),
            ConfigError::Io { .. }
        ));
    }

    #[test]
    fn every_key_is_written() {
        let text = default_config().to_kv_string();
        assert_eq!(text.lines().count(), CONFIG_KEYS.len());
    }

    proptest! {
        #[test]
        fn kv_round_trip(
            n in 1usize..80,
            lambda in 0.0f64..0.01,
            p_rk in 0.0f64..=1.0,
            omega1 in 0.0f64..1.0,
            seed in any::<u64>(),
            noise in 1e-13f64..1e-6,
            rri in prop::sample::subsequence(vec![10u64, 20, 50, 100, 200], 1..5),
            single in any::<bool>(),
        ) {
            let mut cfg = default_config();
            cfg.n_vehicles = n;
            cfg.lambda_arrival = lambda;
            cfg.p_rk = p_rk;
            cfg.omega1 = omega1;
            cfg.omega2 = 1.0 - omega1;
            cfg.seed = seed;
            cfg.noise_power = noise;
            cfg.rri_choices = rri;
            cfg.single_queue = single;
            let back = SimulationConfig::parse(&cfg.to_kv_string()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
