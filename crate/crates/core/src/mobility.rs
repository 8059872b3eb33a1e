//! Constant-speed motion on a bidirectional multi-lane highway.
//!
//! Lanes are numbered `1..=F`; the lower half drives in `+x`, the upper half in
//! `-x`. The x axis wraps around at `D` so vehicle density stays constant.

use rand::Rng;

use crate::config::SimulationConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehiclePose {
    /// meters, in `[0, D)`
    pub x: f64,
    /// meters
    pub y: f64,
    /// 1-based lane index
    pub lane: u32,
    /// +1 or -1
    pub direction: i8,
    /// km/h
    pub speed: f64,
}

/// Travel direction of a lane: `+1` for the lower half of the lanes.
pub fn lane_direction(lane: u32, lanes: u32) -> i8 {
    if 2 * lane <= lanes {
        1
    } else {
        -1
    }
}

/// `v_max - 20 * |f - F/2 + (δ - 1)/2|` in km/h.
pub fn lane_speed(lane: u32, direction: i8, lanes: u32, v_max: f64) -> f64 {
    let offset = f64::from(lane) - f64::from(lanes) / 2.0 + (f64::from(direction) - 1.0) / 2.0;
    v_max - 20.0 * offset.abs()
}

/// `f * d_y - d_y / 2`.
pub fn lane_y(lane: u32, lane_width: f64) -> f64 {
    f64::from(lane) * lane_width - lane_width / 2.0
}

impl VehiclePose {
    pub fn on_lane(x: f64, lane: u32, cfg: &SimulationConfig) -> Self {
        let direction = lane_direction(lane, cfg.lanes);
        Self {
            x: x.rem_euclid(cfg.highway_length),
            y: lane_y(lane, cfg.lane_width),
            lane,
            direction,
            speed: lane_speed(lane, direction, cfg.lanes, cfg.v_max),
        }
    }
}

/// Advances a pose by `slot_ms` milliseconds.
pub fn step_position(pose: &VehiclePose, slot_ms: f64, highway_length: f64) -> VehiclePose {
    // km/h -> m/ms
    let meters_per_ms = pose.speed / 3600.0;
    let x = pose.x + f64::from(pose.direction) * meters_per_ms * slot_ms;
    let mut x = x.rem_euclid(highway_length);
    // rem_euclid can round up to exactly D for tiny negative inputs
    if x >= highway_length {
        x = 0.0;
    }
    VehiclePose { x, ..*pose }
}

/// Euclidean distance with the x axis treated as a ring of length `highway_length`.
pub fn wrapped_distance(a: &VehiclePose, b: &VehiclePose, highway_length: f64) -> f64 {
    let dx = (a.x - b.x).abs();
    let dx = dx.min(highway_length - dx);
    dx.hypot(a.y - b.y)
}

/// Vehicles within `radius` (inclusive) of vehicle `i`, excluding `i`.
pub fn receivers_within(
    i: usize,
    poses: &[VehiclePose],
    radius: f64,
    highway_length: f64,
) -> Vec<usize> {
    let me = &poses[i];
    poses
        .iter()
        .enumerate()
        .filter(|&(j, p)| j != i && wrapped_distance(me, p, highway_length) <= radius)
        .map(|(j, _)| j)
        .collect()
}

/// Round-robin lane assignment with uniform x per vehicle.
pub fn initial_poses(cfg: &SimulationConfig, rng: &mut impl Rng) -> Vec<VehiclePose> {
    (0..cfg.n_vehicles)
        .map(|k| {
            let lane = (k as u32 % cfg.lanes) + 1;
            let x = rng.random_range(0.0..cfg.highway_length);
            VehiclePose::on_lane(x, lane, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_config;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn lane_speeds_for_four_lanes() {
        assert_eq!(lane_speed(2, 1, 4, 80.0), 80.0);
        assert_eq!(lane_speed(1, 1, 4, 80.0), 60.0);
        assert_eq!(lane_speed(3, -1, 4, 80.0), 80.0);
        assert_eq!(lane_speed(4, -1, 4, 80.0), 60.0);
    }

    #[test]
    fn lane_y_values() {
        assert_eq!(lane_y(1, 4.0), 2.0);
        assert_eq!(lane_y(2, 4.0), 6.0);
        assert_eq!(lane_y(1, 0.0), 0.0);
    }

    #[test]
    fn step_forward_and_wrap() {
        let cfg = default_config();
        let pose = VehiclePose::on_lane(100.0, 2, &cfg);
        let next = step_position(&pose, 1.0, 500.0);
        assert_relative_eq!(next.x, 100.0 + 80.0 / 3600.0, epsilon = 1e-12);

        let still = VehiclePose {
            speed: 0.0,
            x: 0.0,
            ..pose
        };
        assert_eq!(step_position(&still, 1.0, 500.0).x, 0.0);

        let edge = VehiclePose { x: 499.99, ..pose };
        assert_relative_eq!(
            step_position(&edge, 1.0, 500.0).x,
            0.012_222_222,
            epsilon = 1e-8
        );
    }

    #[test]
    fn radius_is_inclusive() {
        let cfg = default_config();
        let a = VehiclePose::on_lane(100.0, 1, &cfg);
        let b = VehiclePose::on_lane(250.0, 1, &cfg);
        let poses = [a, b];
        assert_eq!(receivers_within(0, &poses, 150.0, 500.0), vec![1]);
        assert_eq!(receivers_within(1, &poses, 150.0, 500.0), vec![0]);
        assert!(receivers_within(0, &poses[..1], 150.0, 500.0).is_empty());
    }

    #[test]
    fn wraparound_neighbours() {
        let cfg = default_config();
        let poses = [
            VehiclePose::on_lane(10.0, 1, &cfg),
            VehiclePose::on_lane(495.0, 1, &cfg),
        ];
        assert_relative_eq!(wrapped_distance(&poses[0], &poses[1], 500.0), 15.0);
        assert_eq!(receivers_within(0, &poses, 150.0, 500.0), vec![1]);
    }

    proptest! {
        #[test]
        fn motion_invariants(x in 0.0f64..500.0, lane in 1u32..=4, steps in 1usize..3000) {
            let cfg = default_config();
            let start = VehiclePose::on_lane(x, lane, &cfg);
            let mut pose = start;
            for _ in 0..steps {
                pose = step_position(&pose, 1.0, cfg.highway_length);
                prop_assert!(pose.x >= 0.0 && pose.x < cfg.highway_length);
            }
            prop_assert_eq!(pose.lane, start.lane);
            prop_assert_eq!(pose.direction, start.direction);
            prop_assert_eq!(pose.speed, start.speed);
            prop_assert_eq!(pose.y, lane_y(pose.lane, cfg.lane_width));
            prop_assert_eq!(pose.direction, lane_direction(pose.lane, cfg.lanes));
        }

        #[test]
        fn wrapped_distance_symmetric_and_bounded(
            x1 in 0.0f64..500.0, x2 in 0.0f64..500.0, l1 in 1u32..=4, l2 in 1u32..=4
        ) {
            let cfg = default_config();
            let a = VehiclePose::on_lane(x1, l1, &cfg);
            let b = VehiclePose::on_lane(x2, l2, &cfg);
            let ab = wrapped_distance(&a, &b, 500.0);
            prop_assert_eq!(ab, wrapped_distance(&b, &a, 500.0));
            let max_dy = f64::from(cfg.lanes - 1) * cfg.lane_width;
            prop_assert!(ab <= (250.0f64).hypot(max_dy) + 1e-9);
        }
    }
}
