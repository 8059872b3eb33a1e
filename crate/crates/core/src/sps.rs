//! Semi-persistent scheduling: reservation lifecycle, candidate selection and
//! the closed-form collision probability.

use rand::Rng;

use crate::config::{scaled_rc, SimulationConfig};
use crate::error::{Error, Result};

/// One (subframe, subchannel) cell of a selection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Resource {
    /// Offset in slots from the start of the selection window, `< Γ`.
    pub subframe: u64,
    pub subchannel: u32,
}

/// Number of resources in a selection window of `period` slots.
pub fn pool_size(period: u64, n_subchannels: u32) -> u64 {
    period * u64::from(n_subchannels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservation {
    /// RRI in ms.
    pub rri: u64,
    /// RRI in slots.
    pub period: u64,
    pub resource: Resource,
    /// Absolute slot of the next use.
    pub rb_next: u64,
    pub rc: u32,
    pub rc0: u32,
    /// Uses elapsed since the reservation was (re)established.
    pub m: u32,
    pub t_rk: u64,
    pub t_w: u64,
    pub t_s: u64,
}

impl Reservation {
    /// Fresh selection resolved at `t` (a reselection instant or, after an
    /// idle spell, the first arrival): first use at `t + T_w + T_s + Γ`.
    pub fn select(t: u64, rri: u64, period: u64, resource: Resource, t_w: u64, rc0: u32) -> Self {
        Self {
            rri,
            period,
            resource,
            rb_next: t + t_w + resource.subframe + period,
            rc: rc0,
            rc0,
            m: 0,
            t_rk: t,
            t_w,
            t_s: resource.subframe,
        }
    }

    /// Keeps the current subchannel and phase: next use at `t_rk + Γ`.
    pub fn keep(&self, t_rk: u64, rri: u64, period: u64, rc0: u32) -> Self {
        Self {
            rri,
            period,
            resource: self.resource,
            rb_next: t_rk + period,
            rc: rc0,
            rc0,
            m: 0,
            t_rk,
            t_w: 0,
            t_s: 0,
        }
    }

    /// Bookkeeping at a reserved slot. `RC` only counts uses that carried a
    /// message.
    pub fn on_transmit(&mut self, beta: bool) {
        if beta {
            self.rc = self.rc.saturating_sub(1);
        }
        self.m += 1;
        self.rb_next += self.period;
    }

    pub fn exhausted(&self) -> bool {
        self.rc == 0
    }
}

/// `RC⁰ ~ U{lo·100/Γ, …, hi·100/Γ}`.
pub fn draw_rc(rri: u64, rng: &mut impl Rng, cfg: &SimulationConfig) -> u32 {
    let lo = scaled_rc(cfg.rc_base_lo, rri);
    let hi = scaled_rc(cfg.rc_base_hi, rri).max(lo);
    rng.random_range(lo..=hi)
}

/// A reservation of another vehicle that this vehicle has heard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnownReservation {
    pub subchannel: u32,
    /// Any slot of the reservation's recurrence (typically its next use).
    pub slot: u64,
    pub period: u64,
    /// Received power at the sensing vehicle, dBm.
    pub rsrp_dbm: f64,
}

impl KnownReservation {
    /// Whether the reservation ever lands on `(slot, subchannel)` under a
    /// reservation with period `period`.
    pub fn recurs_on(&self, slot: u64, subchannel: u32, period: u64) -> bool {
        if subchannel != self.subchannel {
            return false;
        }
        let g = gcd(period, self.period);
        self.slot.abs_diff(slot).is_multiple_of(g)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Size of the candidate list, `⌈0.2·CSR⌉`.
pub fn candidate_count(csr: u64) -> usize {
    csr.div_ceil(5) as usize
}

/// Builds `L_C` for a window starting at absolute slot `window_start`.
///
/// Resources on which a known reservation recurs with RSRP above the threshold
/// are excluded; the threshold is raised 3 dB at a time until enough remain.
/// The survivors with the lowest sensed energy, ties by (subframe,
/// subchannel), form the list.
pub fn build_candidate_list(
    window_start: u64,
    period: u64,
    n_subchannels: u32,
    known: &[KnownReservation],
    rsrp_threshold_dbm: f64,
    energy: impl Fn(u64, u32) -> f64,
) -> Vec<Resource> {
    let csr = pool_size(period, n_subchannels);
    let need = candidate_count(csr);
    let pool: Vec<Resource> = (0..period)
        .flat_map(|subframe| {
            (0..n_subchannels).map(move |subchannel| Resource {
                subframe,
                subchannel,
            })
        })
        .collect();

    // loudest recurring reservation per resource; NEG_INFINITY when none
    let loudest: Vec<f64> = pool
        .iter()
        .map(|r| {
            known
                .iter()
                .filter(|k| k.recurs_on(window_start + r.subframe, r.subchannel, period))
                .map(|k| k.rsrp_dbm)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    let mut threshold = rsrp_threshold_dbm;
    let available = loop {
        let available: Vec<usize> = (0..pool.len())
            .filter(|&i| loudest[i] <= threshold)
            .collect();
        if available.len() >= need {
            break available;
        }
        threshold += 3.0;
    };

    let mut scored: Vec<(f64, Resource)> = available
        .into_iter()
        .map(|i| {
            let r = pool[i];
            (energy(window_start + r.subframe, r.subchannel), r)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(need);
    scored.into_iter().map(|(_, r)| r).collect()
}

/// Closed-form probability that a tagged vehicle's reservation collides:
/// `1 − [1 − (1 − Π_{i<Γ}(1 − π/(1−πi)))·(1−P_rk)/(CSR−N_v+1)]^{N_v−1}`.
pub fn collision_probability(pi: f64, rri: u64, csr: u64, n_v: u64, p_rk: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&pi) {
        return Err(Error::Domain {
            what: "readiness probability",
            detail: format!("pi = {pi}"),
        });
    }
    if csr < n_v {
        return Err(Error::Domain {
            what: "resource pool",
            detail: format!("CSR = {csr} < N_v = {n_v}"),
        });
    }
    if rri > 0 && pi * (rri - 1) as f64 >= 1.0 {
        return Err(Error::Domain {
            what: "readiness probability",
            detail: format!("pi * (rri - 1) = {} >= 1", pi * (rri - 1) as f64),
        });
    }
    if n_v <= 1 {
        return Ok(0.0);
    }
    let none_ready: f64 = (0..rri).map(|i| 1.0 - pi / (1.0 - pi * i as f64)).product();
    let per_vehicle = (1.0 - none_ready) * (1.0 - p_rk) / (csr - n_v + 1) as f64;
    Ok(1.0 - (1.0 - per_vehicle).powi((n_v - 1) as i32))
}

/// Monte Carlo estimate of [`collision_probability`] by drawing resources.
///
/// The tagged vehicle holds resource 0 and the other `N_v − 1` vehicles hold
/// resources `1..N_v`. Each other vehicle's next selection instant has a
/// uniform phase over its `1/π`-slot renewal cycle, so it falls inside the
/// tagged window of `Γ` slots with probability `πΓ`. A vehicle that lands in
/// the window reselects with probability `1 − P_rk` and then picks uniformly
/// among the resources not held by the non-tagged vehicles (the tagged one
/// included). A trial collides when any of them lands on resource 0.
pub fn monte_carlo_collision(
    pi: f64,
    rri: u64,
    csr: u64,
    n_v: u64,
    p_rk: f64,
    trials: u64,
    rng: &mut impl Rng,
) -> f64 {
    if n_v <= 1 || trials == 0 || csr < n_v {
        return 0.0;
    }
    // candidate resources: 0 (tagged) and the free ones n_v..csr
    let free = csr - n_v + 1;
    let mut hits = 0u64;
    for _ in 0..trials {
        let mut collided = false;
        for _ in 1..n_v {
            let ready = pi > 0.0 && rng.random::<f64>() / pi < rri as f64;
            if !ready || rng.random::<f64>() < p_rk {
                continue;
            }
            let pick = rng.random_range(0..free);
            if pick == 0 {
                collided = true;
            }
        }
        hits += u64::from(collided);
    }
    hits as f64 / trials as f64
}

/// Per-slot counts of reselect-branch decisions, for estimating `π`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReselectionHistory {
    pub n_vehicles: u64,
    pub events_per_slot: Vec<u32>,
}

/// Minimum number of vehicle-slots [`estimate_pi`] accepts.
pub const MIN_PI_HISTORY: u64 = 10_000;

impl ReselectionHistory {
    pub fn new(n_vehicles: u64) -> Self {
        Self {
            n_vehicles,
            events_per_slot: Vec::new(),
        }
    }

    pub fn vehicle_slots(&self) -> u64 {
        self.n_vehicles * self.events_per_slot.len() as u64
    }

    /// Splits the record into its first and second half (by slots).
    pub fn halves(&self) -> (Self, Self) {
        let mid = self.events_per_slot.len() / 2;
        let part = |s: &[u32]| Self {
            n_vehicles: self.n_vehicles,
            events_per_slot: s.to_vec(),
        };
        (
            part(&self.events_per_slot[..mid]),
            part(&self.events_per_slot[mid..]),
        )
    }
}

/// Fraction of vehicle-slots in which a vehicle with a nonempty queue and an
/// exhausted counter took the reselect branch.
pub fn estimate_pi(history: &ReselectionHistory) -> Result<f64> {
    let have = history.vehicle_slots();
    if have < MIN_PI_HISTORY {
        return Err(Error::InsufficientHistory {
            have,
            need: MIN_PI_HISTORY,
        });
    }
    let events: u64 = history.events_per_slot.iter().map(|&e| u64::from(e)).sum();
    Ok(events as f64 / have as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rc_ranges_scale_with_rri() {
        let cfg = default_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (rri, lo, hi) in [(100, 5, 15), (20, 25, 75), (50, 10, 30)] {
            let draws: Vec<u32> = (0..5_000).map(|_| draw_rc(rri, &mut rng, &cfg)).collect();
            assert_eq!(*draws.iter().min().unwrap(), lo);
            assert_eq!(*draws.iter().max().unwrap(), hi);
        }
    }

    #[test]
    fn rb_after_keep_and_reselect() {
        let r = Reservation::select(
            0,
            100,
            100,
            Resource {
                subframe: 7,
                subchannel: 1,
            },
            1,
            10,
        );
        let kept = r.keep(1000, 100, 100, 10);
        assert_eq!(kept.rb_next, 1100);
        assert_eq!(kept.resource, r.resource);

        let res = Reservation::select(
            1000,
            100,
            100,
            Resource {
                subframe: 30,
                subchannel: 0,
            },
            2,
            10,
        );
        assert_eq!(res.rb_next, 1132);
        assert_eq!((res.t_w, res.t_s, res.m), (2, 30, 0));
    }

    #[test]
    fn on_transmit_counts_only_real_uses() {
        let mut r = Reservation::select(0, 100, 100, Resource::default_for_test(), 0, 5);
        let rb = r.rb_next;
        r.on_transmit(true);
        assert_eq!(r.rc, 4);
        r.on_transmit(false);
        assert_eq!(r.rc, 4);
        assert_eq!(r.rb_next, rb + 200);
        assert_eq!(r.m, 2);
        r.rc = 1;
        r.on_transmit(true);
        assert!(r.exhausted());
    }

    impl Resource {
        fn default_for_test() -> Self {
            Resource {
                subframe: 0,
                subchannel: 0,
            }
        }
    }

    #[test]
    fn reserved_slots_recur_with_period() {
        let mut r = Reservation::select(
            10,
            50,
            50,
            Resource {
                subframe: 3,
                subchannel: 2,
            },
            1,
            30,
        );
        let first = r.rb_next;
        for k in 1..20 {
            r.on_transmit(k % 3 == 0);
            assert_eq!(r.rb_next, first + k * 50);
        }
    }

    #[test]
    fn idle_pool_gives_first_fifth_in_index_order() {
        let list = build_candidate_list(0, 20, 5, &[], -110.0, |_, _| 0.0);
        assert_eq!(list.len(), 20);
        let expect: Vec<Resource> = (0..4)
            .flat_map(|s| {
                (0..5).map(move |c| Resource {
                    subframe: s,
                    subchannel: c,
                })
            })
            .collect();
        assert_eq!(list, expect);
        assert_eq!(candidate_count(40), 8);
        assert_eq!(
            build_candidate_list(0, 8, 5, &[], -110.0, |_, _| 0.0).len(),
            8
        );
    }

    #[test]
    fn loud_recurring_reservation_is_excluded() {
        // CSR = 100; every resource equally quiet except that the loud one
        // is also the quietest
        let loud = KnownReservation {
            subchannel: 0,
            slot: 1_000,
            period: 20,
            rsrp_dbm: -80.0,
        };
        let energy = |slot: u64, sub: u32| {
            if slot.is_multiple_of(20) && sub == 0 {
                0.0
            } else {
                1.0
            }
        };
        let list = build_candidate_list(1_000, 20, 5, &[loud], -110.0, energy);
        assert!(!list.contains(&Resource {
            subframe: 0,
            subchannel: 0
        }));

        let quiet = KnownReservation {
            rsrp_dbm: -120.0,
            ..loud
        };
        let list = build_candidate_list(1_000, 20, 5, &[quiet], -110.0, energy);
        assert_eq!(
            list[0],
            Resource {
                subframe: 0,
                subchannel: 0
            }
        );
    }

    #[test]
    fn threshold_relaxes_when_pool_is_crowded() {
        // every resource of a 2x1 pool is loudly reserved
        let known: Vec<KnownReservation> = (0..2)
            .map(|s| KnownReservation {
                subchannel: 0,
                slot: s,
                period: 2,
                rsrp_dbm: -100.0 + s as f64,
            })
            .collect();
        let list = build_candidate_list(0, 2, 1, &known, -110.0, |_, _| 0.0);
        assert_eq!(list.len(), 1);
        // after relaxing to -101 only the quieter of the two qualifies
        assert_eq!(list[0].subframe, 0);
    }

    #[test]
    fn recurrence_uses_gcd_of_periods() {
        let k = KnownReservation {
            subchannel: 1,
            slot: 105,
            period: 100,
            rsrp_dbm: 0.0,
        };
        assert!(k.recurs_on(125, 1, 20));
        assert!(!k.recurs_on(126, 1, 20));
        assert!(!k.recurs_on(125, 0, 20));
        assert!(k.recurs_on(155, 1, 50));
        assert!(!k.recurs_on(145, 1, 50));
    }

    #[test]
    fn collision_probability_edges() {
        assert_eq!(collision_probability(0.01, 20, 100, 1, 0.0).unwrap(), 0.0);
        assert_eq!(collision_probability(0.01, 20, 100, 10, 1.0).unwrap(), 0.0);
        assert!(collision_probability(0.01, 20, 5, 10, 0.0).is_err());
        assert!(collision_probability(0.1, 20, 100, 10, 0.0).is_err());
    }

    #[test]
    fn product_telescopes() {
        // Π(1 − π/(1−πi)) over i < Γ equals 1 − πΓ
        let (pi, rri, csr, n_v) = (0.003, 50u64, 250u64, 20u64);
        let expect = 1.0 - (1.0 - pi * rri as f64 / (csr - n_v + 1) as f64).powi(19);
        let got = collision_probability(pi, rri, csr, n_v, 0.0).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_resource_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let analytic = collision_probability(0.01, 50, 250, 10, 0.0).unwrap();
        let mc = monte_carlo_collision(0.01, 50, 250, 10, 0.0, 200_000, &mut rng);
        assert!(
            ((mc - analytic) / analytic).abs() < 0.1,
            "{mc} vs {analytic}"
        );
    }

    #[test]
    fn pi_estimates() {
        let never = ReselectionHistory {
            n_vehicles: 10,
            events_per_slot: vec![0; 2_000],
        };
        assert_eq!(estimate_pi(&never).unwrap(), 0.0);
        let always = ReselectionHistory {
            n_vehicles: 10,
            events_per_slot: vec![10; 2_000],
        };
        assert_eq!(estimate_pi(&always).unwrap(), 1.0);
        let short = ReselectionHistory {
            n_vehicles: 10,
            events_per_slot: vec![0; 999],
        };
        assert!(matches!(
            estimate_pi(&short),
            Err(Error::InsufficientHistory { .. })
        ));
    }
}
