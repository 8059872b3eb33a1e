//! Allocation policies. Each one is asked for an (RRI, power) pair whenever a
//! vehicle's reservation runs out.

pub mod adam;
pub mod ga;
pub mod mlp;
pub mod mpdqn;
pub mod ou;
pub mod random;
pub mod replay;

use crate::config::SimulationConfig;

pub use ga::{GaPolicy, GaPopulation, Individual};
pub use mpdqn::MpdqnAgent;
pub use random::RandomPolicy;

/// Number of state features.
pub const STATE_DIM: usize = 4;
/// Number of discrete RRI choices.
pub const N_RRI: usize = 3;

pub type State = [f64; STATE_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentAction {
    /// ms
    pub rri: u64,
    /// mW
    pub power_mw: f64,
}

/// An action plus what a learner needs to store it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: AgentAction,
    /// Index into `rri_choices`.
    pub rri_index: usize,
    /// Continuous parameter for every discrete choice, mW.
    pub params: [f64; N_RRI],
}

impl Decision {
    /// A decision with only the chosen slot of `params` filled.
    pub fn simple(rri_index: usize, rri: u64, power_mw: f64) -> Self {
        let mut params = [0.0; N_RRI];
        params[rri_index.min(N_RRI - 1)] = power_mw;
        Self {
            action: AgentAction { rri, power_mw },
            rri_index,
            params,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub vehicle: usize,
    pub t: u64,
    pub state: State,
    pub cfg: &'a SimulationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: State,
    pub rri_index: usize,
    pub params: [f64; N_RRI],
    pub reward: f64,
    pub next_state: State,
    pub terminal: bool,
}

pub trait Agent {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision;

    /// Called once per finished decision epoch.
    fn observe(&mut self, _transition: &Transition) {}
}

impl<A: Agent + ?Sized> Agent for &mut A {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        (**self).decide(ctx)
    }

    fn observe(&mut self, transition: &Transition) {
        (**self).observe(transition)
    }
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        (**self).decide(ctx)
    }

    fn observe(&mut self, transition: &Transition) {
        (**self).observe(transition)
    }
}

/// Always transmits at a fixed power and RRI. Handy for tests and for the
/// zero-power baseline.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub rri_index: usize,
    pub power_mw: f64,
}

impl Agent for ConstantPolicy {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let rri = ctx.cfg.rri_choices[self.rri_index.min(ctx.cfg.rri_choices.len() - 1)];
        Decision::simple(self.rri_index, rri, self.power_mw)
    }
}

/// Forces an action into the constraint set. Returns the fixed action and
/// whether anything had to change.
pub fn clamp_action(action: AgentAction, cfg: &SimulationConfig) -> (AgentAction, bool) {
    let allowed = cfg.allowed_rris();
    let mut fixed = action;
    let mut changed = false;
    if !allowed.contains(&action.rri) {
        let nearest = *allowed
            .iter()
            .min_by_key(|&&r| r.abs_diff(action.rri))
            .expect("at least one RRI");
        // a fixed-RRI run overrides the agent on purpose; that is not a fault
        changed = cfg.fixed_rri == 0 || !cfg.rri_choices.contains(&action.rri);
        fixed.rri = nearest;
    }
    let p_max = cfg.p_max_mw();
    if !action.power_mw.is_finite() || action.power_mw < 0.0 || action.power_mw > p_max {
        fixed.power_mw = if action.power_mw.is_nan() {
            0.0
        } else {
            action.power_mw.clamp(0.0, p_max)
        };
        changed = true;
    }
    (fixed, changed)
}
