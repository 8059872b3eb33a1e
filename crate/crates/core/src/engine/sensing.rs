/// Received power per (slot, subchannel) over the last `window` slots.
///
/// Slots in which the owner transmitted are never stamped and so do not count
/// as sensed.
#[derive(Debug, Clone)]
pub struct SensingHistory {
    window: u64,
    n_subchannels: usize,
    stamp: Vec<u64>,
    power: Vec<f64>,
}

impl SensingHistory {
    pub fn new(window: u64, n_subchannels: u32) -> Self {
        Self {
            window,
            n_subchannels: n_subchannels as usize,
            stamp: vec![u64::MAX; window as usize],
            power: vec![0.0; window as usize * n_subchannels as usize],
        }
    }

    fn row(&self, t: u64) -> usize {
        (t % self.window) as usize
    }

    /// Marks slot `t` as sensed with nothing received yet.
    pub fn begin(&mut self, t: u64) {
        let r = self.row(t);
        self.stamp[r] = t;
        let n = self.n_subchannels;
        self.power[r * n..(r + 1) * n].fill(0.0);
    }

    pub fn add(&mut self, t: u64, subchannel: u32, mw: f64) {
        let r = self.row(t);
        debug_assert_eq!(self.stamp[r], t);
        self.power[r * self.n_subchannels + subchannel as usize] += mw;
    }

    pub fn sensed(&self, t: u64) -> Option<&[f64]> {
        let r = self.row(t);
        (self.stamp[r] == t)
            .then(|| &self.power[r * self.n_subchannels..(r + 1) * self.n_subchannels])
    }

    /// Mean power seen on `subchannel` at the past slots `slot − kΓ`, `k ≥ 1`,
    /// that are still inside the window ending at `now`.
    pub fn energy(&self, slot: u64, subchannel: u32, period: u64, now: u64) -> f64 {
        let oldest = now.saturating_sub(self.window - 1);
        let mut sum = 0.0;
        let mut count = 0u32;
        let mut k = 1;
        while let Some(v) = slot.checked_sub(k * period) {
            if v < oldest {
                break;
            }
            if v <= now {
                if let Some(row) = self.sensed(v) {
                    sum += row[subchannel as usize];
                    count += 1;
                }
            }
            k += 1;
        }
        if count == 0 {
            0.0
        } else {
            sum / f64::from(count)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averages_matching_past_slots() {
        let mut h = SensingHistory::new(100, 2);
        for t in 0..=150 {
            if t == 110 {
                continue; // own transmission
            }
            h.begin(t);
            if t % 20 == 10 {
                h.add(t, 1, t as f64);
            }
        }
        // candidates at 170 look back at 150, 130, 110 (unsensed), 90, 70, 51.. stop
        let e = h.energy(170, 1, 20, 150);
        assert_eq!(e, (150.0 + 130.0 + 90.0 + 70.0) / 4.0);
        assert_eq!(h.energy(170, 0, 20, 150), 0.0);
        assert_eq!(h.energy(5, 1, 20, 150), 0.0);
    }
}
