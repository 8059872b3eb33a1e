//! Genetic-algorithm baseline. An individual fixes one (RRI, power) pair per
//! vehicle; its fitness is the mean epoch reward of an episode run with that
//! allocation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::random::random_policy;
use super::{Agent, AgentAction, Decision, DecisionContext};
use crate::config::SimulationConfig;
use crate::engine::run_episode;

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genes: Vec<AgentAction>,
}

impl Individual {
    pub fn random(n_vehicles: usize, cfg: &SimulationConfig, rng: &mut impl Rng) -> Self {
        Self {
            genes: (0..n_vehicles)
                .map(|_| random_policy(rng, cfg).action)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaPopulation {
    pub individuals: Vec<Individual>,
    pub fitness: Vec<f64>,
}

impl GaPopulation {
    pub fn random(size: usize, cfg: &SimulationConfig, rng: &mut impl Rng) -> Self {
        Self {
            individuals: (0..size)
                .map(|_| Individual::random(cfg.n_vehicles, cfg, rng))
                .collect(),
            fitness: vec![f64::NEG_INFINITY; size],
        }
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Index and fitness of the fittest individual (lowest index on ties).
    pub fn best(&self) -> (usize, f64) {
        let mut best = 0;
        for (i, &f) in self.fitness.iter().enumerate() {
            if f > self.fitness[best] {
                best = i;
            }
        }
        (best, self.fitness[best])
    }

    pub fn mean_fitness(&self) -> f64 {
        self.fitness.iter().sum::<f64>() / self.fitness.len() as f64
    }
}

fn tournament<'a>(pop: &'a GaPopulation, size: usize, rng: &mut impl Rng) -> &'a Individual {
    let mut best = rng.random_range(0..pop.len());
    for _ in 1..size.max(1) {
        let c = rng.random_range(0..pop.len());
        if pop.fitness[c] > pop.fitness[best] {
            best = c;
        }
    }
    &pop.individuals[best]
}

fn mutate(ind: &mut Individual, cfg: &SimulationConfig, rng: &mut impl Rng) {
    let allowed = cfg.allowed_rris();
    let p_max = cfg.p_max_mw();
    let jitter = Normal::new(0.0, 0.1 * p_max).expect("positive sigma");
    for g in &mut ind.genes {
        if rng.random::<f64>() < cfg.ga_mutation {
            g.rri = allowed[rng.random_range(0..allowed.len())];
        }
        if rng.random::<f64>() < cfg.ga_mutation {
            g.power_mw = (g.power_mw + jitter.sample(rng)).clamp(0.0, p_max);
        }
    }
}

/// Next generation without fitness: the elite, then tournament-selected
/// parents with single-point crossover and per-gene mutation.
pub fn breed(pop: &GaPopulation, cfg: &SimulationConfig, rng: &mut impl Rng) -> Vec<Individual> {
    let (elite, _) = pop.best();
    let mut next = vec![pop.individuals[elite].clone()];
    while next.len() < pop.len() {
        let mut a = tournament(pop, cfg.ga_tournament, rng).clone();
        let mut b = tournament(pop, cfg.ga_tournament, rng).clone();
        let n = a.genes.len();
        if n > 1 && rng.random::<f64>() < cfg.ga_crossover {
            let cut = rng.random_range(1..n);
            for k in cut..n {
                std::mem::swap(&mut a.genes[k], &mut b.genes[k]);
            }
        }
        mutate(&mut a, cfg, rng);
        mutate(&mut b, cfg, rng);
        next.push(a);
        if next.len() < pop.len() {
            next.push(b);
        }
    }
    next
}

/// Breeds one generation and scores it. The elite keeps its fitness, so the
/// evaluator only sees the new individuals and the best fitness never drops
/// when evaluation is deterministic.
pub fn ga_step(
    pop: &GaPopulation,
    mut evaluate: impl FnMut(&[Individual]) -> Vec<f64>,
    rng: &mut impl Rng,
    cfg: &SimulationConfig,
) -> GaPopulation {
    let (_, elite_fitness) = pop.best();
    let individuals = breed(pop, cfg, rng);
    let mut fitness = vec![elite_fitness];
    fitness.extend(evaluate(&individuals[1..]));
    GaPopulation {
        individuals,
        fitness,
    }
}

/// Mean epoch reward of an episode under a fixed allocation.
pub fn episode_fitness(ind: &Individual, cfg: &SimulationConfig, seed: u64) -> f64 {
    run_episode(cfg, GaPolicy::new(ind.clone()), seed).mean_reward
}

/// Scores individuals in parallel; results come back in input order.
pub fn evaluate_population(inds: &[Individual], cfg: &SimulationConfig, seed: u64) -> Vec<f64> {
    inds.par_iter()
        .map(|ind| episode_fitness(ind, cfg, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaHistory {
    pub best: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Runs `cfg.ga_generations` generations, every individual scored on the
/// episode seed `eval_seed`.
pub fn optimize(
    cfg: &SimulationConfig,
    rng: &mut impl Rng,
    eval_seed: u64,
) -> (GaPopulation, GaHistory) {
    let mut pop = GaPopulation::random(cfg.ga_population, cfg, rng);
    pop.fitness = evaluate_population(&pop.individuals, cfg, eval_seed);
    let mut history = GaHistory {
        best: vec![pop.best().1],
        mean: vec![pop.mean_fitness()],
    };
    for _ in 0..cfg.ga_generations {
        pop = ga_step(
            &pop,
            |inds| evaluate_population(inds, cfg, eval_seed),
            rng,
            cfg,
        );
        history.best.push(pop.best().1);
        history.mean.push(pop.mean_fitness());
    }
    (pop, history)
}

/// Serves a fixed allocation.
#[derive(Debug, Clone)]
pub struct GaPolicy {
    pub individual: Individual,
}

impl GaPolicy {
    pub fn new(individual: Individual) -> Self {
        Self { individual }
    }
}

impl Agent for GaPolicy {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let g = self.individual.genes[ctx.vehicle % self.individual.genes.len()];
        let k = ctx
            .cfg
            .rri_choices
            .iter()
            .position(|&r| r == g.rri)
            .unwrap_or(0);
        Decision::simple(k, g.rri, g.power_mw)
    }
}
