use rand::Rng;
use rand_distr::StandardNormal;

/// Discrete Ornstein-Uhlenbeck process `x ← x + θ(μ − x) + σ·N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
    x: f64,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64) -> Self {
        Self {
            theta,
            sigma,
            mu: 0.0,
            x: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.x = self.mu;
    }

    pub fn sample(&mut self, rng: &mut impl Rng) -> f64 {
        let n: f64 = rng.sample(StandardNormal);
        self.x += self.theta * (self.mu - self.x) + self.sigma * n;
        self.x
    }
}
