use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Agent, Decision, DecisionContext};
use crate::config::SimulationConfig;
use crate::rng::{stream_rng, Stream};

/// Uniform RRI from the allowed set and uniform power in `[0, P_max]`.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream_rng(seed, Stream::Agent, 0),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }
}

/// One draw of the random baseline.
pub fn random_policy(rng: &mut impl Rng, cfg: &SimulationConfig) -> Decision {
    let allowed = cfg.allowed_rris();
    let rri = allowed[rng.random_range(0..allowed.len())];
    let rri_index = cfg.rri_choices.iter().position(|&r| r == rri).unwrap_or(0);
    let power = rng.random_range(0.0..=cfg.p_max_mw());
    Decision::simple(rri_index, rri, power)
}

impl Agent for RandomPolicy {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        random_policy(&mut self.rng, ctx.cfg)
    }
}
