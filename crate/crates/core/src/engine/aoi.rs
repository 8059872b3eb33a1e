/// Receiver-side age Φ[i→j] in ms of vehicle i's information at vehicle j.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverAoiMatrix {
    n: usize,
    phi: Vec<f64>,
}

impl ReceiverAoiMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            phi: vec![0.0; n * n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, tx: usize, rx: usize) -> f64 {
        self.phi[tx * self.n + rx]
    }

    pub fn set(&mut self, tx: usize, rx: usize, value: f64) {
        self.phi[tx * self.n + rx] = value;
    }

    /// Row of ages held by every receiver about `tx`.
    pub fn row(&self, tx: usize) -> &[f64] {
        &self.phi[tx * self.n..(tx + 1) * self.n]
    }

    /// Ages one slot older everywhere, then refreshed on successful links.
    /// `successes` holds (tx, rx, φ of the delivered message in ms, airtime in ms).
    pub fn update(&mut self, successes: &[(usize, usize, f64, f64)], slot_ms: f64) {
        for v in &mut self.phi {
            *v += slot_ms;
        }
        for &(tx, rx, head_phi, l) in successes {
            self.set(
                tx,
                rx,
                update_receiver_aoi(0.0, Some((head_phi, l)), slot_ms),
            );
        }
    }
}

/// One step of `Φ`: `φ_head + l` after a successful reception, otherwise
/// one slot older.
pub fn update_receiver_aoi(phi: f64, success: Option<(f64, f64)>, slot_ms: f64) -> f64 {
    match success {
        Some((head_phi, l)) => head_phi + l,
        None => phi + slot_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn failure_and_success_branches() {
        assert_eq!(update_receiver_aoi(50.0, None, 1.0), 51.0);
        assert_relative_eq!(update_receiver_aoi(50.0, Some((10.0, 0.6)), 1.0), 10.6);
    }

    #[test]
    fn grows_by_rri_between_failed_opportunities() {
        let mut m = ReceiverAoiMatrix::new(2);
        for _ in 0..100 {
            m.update(&[], 1.0);
        }
        assert_eq!(m.get(0, 1), 100.0);
        m.update(&[(0, 1, 3.0, 0.5)], 1.0);
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.get(1, 0), 101.0);
    }
}
