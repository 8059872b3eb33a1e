use std::path::{Path, PathBuf};

use cv2x_core::agents::ga::{optimize, GaPolicy, Individual};
use cv2x_core::agents::{MpdqnAgent, RandomPolicy};
use cv2x_core::rng::{stream_rng, Stream};
use cv2x_core::sps::{collision_probability, monte_carlo_collision, pool_size};
use cv2x_core::training::{episode_seed, train_mpdqn};
use cv2x_core::{load_config, run_episode, EpisodeMetrics, SimulationConfig};
use rayon::prelude::*;

use crate::args::{
    Axis, Command, Common, EvaluateArgs, PolicyKind, SimulateArgs, SweepArgs, Toggle, TrainArgs,
    ValidateArgs,
};
use crate::output::{
    unix_ms, write_episodes, write_records, write_serialized, EpisodeRow, RunManifest,
    EPISODE_COLUMNS,
};
use crate::CliError;

/// Agent-stream index of the GA's own random draws.
const GA_STREAM_INDEX: u64 = 3;

pub fn dispatch(cmd: Command, args: &[String]) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => simulate(&a, args),
        Command::Train(a) => train(&a, args),
        Command::Evaluate(a) => evaluate(&a, args),
        Command::Sweep(a) => sweep(&a, args),
        Command::ValidateCollision(a) => validate_collision(&a, args),
    }
}

/// Scenario file (or defaults), then `SIM_SEED`, then command-line overrides.
pub fn resolve_config(common: &Common) -> Result<SimulationConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path).map_err(|e| CliError::config(e.to_string()))?,
        None => SimulationConfig::default(),
    };
    cfg.apply_env_overrides()
        .map_err(|e| CliError::config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(ep) = common.episodes {
        cfg.episodes = ep;
    }
    if let Some(slots) = common.slots {
        cfg.slots_per_episode = slots;
    }
    cfg.validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn seeds_or_default(seeds: &[u64], cfg: &SimulationConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds.to_vec()
    }
}

fn finish_manifest(
    subcommand: &str,
    args: &[String],
    cfg: &SimulationConfig,
    seeds: Vec<u64>,
    started: u128,
    out: &Path,
    outputs: Vec<PathBuf>,
) -> Result<(), CliError> {
    RunManifest {
        tool: "cv2x".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        args: args.to_vec(),
        seeds,
        config_text: cfg.to_kv_string(),
        config: cfg.clone(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        outputs,
    }
    .write(out)?;
    Ok(())
}

/// A policy ready to be instantiated per episode.
#[derive(Debug, Clone)]
pub enum PreparedPolicy {
    Random,
    Ga(Individual),
    Mpdqn(Box<MpdqnAgent>),
}

impl PreparedPolicy {
    pub fn run(&self, cfg: &SimulationConfig, seed: u64) -> EpisodeMetrics {
        match self {
            Self::Random => run_episode(cfg, RandomPolicy::new(seed), seed),
            Self::Ga(ind) => run_episode(cfg, GaPolicy::new(ind.clone()), seed),
            Self::Mpdqn(agent) => {
                let mut a = agent.as_ref().clone();
                a.set_explore(false);
                run_episode(cfg, a, seed)
            }
        }
    }
}

/// Best GA allocation for `cfg`, every individual scored on one episode
/// derived from `seed`.
pub fn ga_allocation(cfg: &SimulationConfig, seed: u64) -> Individual {
    let mut rng = stream_rng(seed, Stream::Agent, GA_STREAM_INDEX);
    let (pop, _) = optimize(cfg, &mut rng, episode_seed(seed, 0));
    pop.individuals[pop.best().0].clone()
}

fn load_agent(path: &Path, cfg: &SimulationConfig) -> Result<MpdqnAgent, CliError> {
    MpdqnAgent::load_checkpoint(path, cfg, cfg.seed)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn prepare(
    kind: PolicyKind,
    checkpoint: Option<&Path>,
    cfg: &SimulationConfig,
    seed: u64,
) -> Result<PreparedPolicy, CliError> {
    Ok(match kind {
        PolicyKind::Random => PreparedPolicy::Random,
        PolicyKind::Ga => PreparedPolicy::Ga(ga_allocation(cfg, seed)),
        PolicyKind::Mpdqn => {
            let path =
                checkpoint.ok_or_else(|| CliError::usage("--policy mpdqn needs --checkpoint"))?;
            PreparedPolicy::Mpdqn(Box::new(load_agent(path, cfg)?))
        }
    })
}

/// `cfg.episodes` episodes per seed; rows come back in (seed, episode) order.
pub fn simulate_rows(
    cfg: &SimulationConfig,
    kind: PolicyKind,
    checkpoint: Option<&Path>,
    seeds: &[u64],
) -> Result<Vec<EpisodeRow>, CliError> {
    let policies = seeds
        .iter()
        .map(|&s| prepare(kind, checkpoint, cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|k| (0..cfg.episodes).map(move |ep| (k, ep)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(k, ep)| EpisodeRow {
            seed: seeds[k],
            episode: ep,
            metrics: policies[k].run(cfg, episode_seed(seeds[k], ep)),
        })
        .collect())
}

fn simulate(a: &SimulateArgs, args: &[String]) -> Result<(), CliError> {
    let started = unix_ms();
    let cfg = resolve_config(&a.common)?;
    let seeds = seeds_or_default(&a.seeds, &cfg);
    let rows = simulate_rows(&cfg, a.policy, a.checkpoint.as_deref(), &seeds)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let path = out.join("episode_metrics.csv");
    write_episodes(&path, &rows)?;
    finish_manifest("simulate", args, &cfg, seeds, started, out, vec![path])
}

fn checkpoint_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn train(a: &TrainArgs, args: &[String]) -> Result<(), CliError> {
    let started = unix_ms();
    let cfg = resolve_config(&a.common)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let ckpt_dir = out.join("checkpoints");
    prepare_out(&ckpt_dir)?;
    let mut outputs = Vec::new();
    let mut failure = None;
    let (agent, curve) = train_mpdqn(&cfg, cfg.seed, |point, agent| {
        let n = point.episode + 1;
        if failure.is_none()
            && cfg.checkpoint_every > 0
            && n % cfg.checkpoint_every == 0
            && n < cfg.episodes
        {
            let path = ckpt_dir.join(format!("episode_{n:05}.ckpt"));
            match agent.save_checkpoint(&path) {
                Ok(()) => outputs.push(path),
                Err(e) => failure = Some(checkpoint_err(&path, e)),
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let final_path = ckpt_dir.join("final.ckpt");
    agent
        .save_checkpoint(&final_path)
        .map_err(|e| checkpoint_err(&final_path, e))?;
    outputs.push(final_path);
    let curve_path = out.join("reward_curve.csv");
    write_serialized(&curve_path, &curve)?;
    outputs.insert(0, curve_path);
    finish_manifest("train", args, &cfg, vec![cfg.seed], started, out, outputs)
}

fn summary_fields(label: &[String], rows: &[&EpisodeRow]) -> Vec<String> {
    let n = rows.len().max(1) as f64;
    let mean =
        |f: &dyn Fn(&EpisodeMetrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let mut v = label.to_vec();
    v.extend([
        rows.len().to_string(),
        mean(&|m| m.mean_energy_mj).to_string(),
        mean(&|m| m.mean_aoi_ms).to_string(),
        mean(&|m| m.mean_reward).to_string(),
        mean(&|m| m.collisions as f64).to_string(),
        mean(&|m| m.drops as f64).to_string(),
    ]);
    v
}

const SUMMARY_COLUMNS: &[&str] = &[
    "runs",
    "mean_energy_mj",
    "mean_aoi_ms",
    "mean_reward",
    "mean_collisions",
    "mean_drops",
];

fn evaluate(a: &EvaluateArgs, args: &[String]) -> Result<(), CliError> {
    let started = unix_ms();
    let cfg = resolve_config(&a.common)?;
    if a.seeds.is_empty() {
        return Err(CliError::usage("--seeds must not be empty"));
    }
    let out = &a.common.out;
    prepare_out(out)?;
    let mut outputs = Vec::new();
    let mut rows: Vec<(PolicyKind, EpisodeRow)> = Vec::new();
    for &kind in &a.policies {
        let policy = match kind {
            PolicyKind::Mpdqn => {
                let agent = match &a.checkpoint {
                    Some(path) => load_agent(path, &cfg)?,
                    None => {
                        let (agent, curve) = train_mpdqn(&cfg, cfg.seed, |_, _| {});
                        let curve_path = out.join("reward_curve.csv");
                        write_serialized(&curve_path, &curve)?;
                        outputs.push(curve_path);
                        agent
                    }
                };
                PreparedPolicy::Mpdqn(Box::new(agent))
            }
            other => prepare(other, None, &cfg, cfg.seed)?,
        };
        let metrics: Vec<EpisodeMetrics> =
            a.seeds.par_iter().map(|&s| policy.run(&cfg, s)).collect();
        rows.extend(a.seeds.iter().zip(metrics).map(|(&seed, metrics)| {
            (
                kind,
                EpisodeRow {
                    seed,
                    episode: 0,
                    metrics,
                },
            )
        }));
    }
    let mut header = vec!["policy"];
    header.extend(EPISODE_COLUMNS);
    let path = out.join("evaluation.csv");
    write_records(
        &path,
        &header,
        rows.iter().map(|(k, r)| {
            let mut f = vec![k.name().to_string()];
            f.extend(r.fields());
            f
        }),
    )?;
    outputs.push(path);
    let mut header = vec!["policy"];
    header.extend(SUMMARY_COLUMNS);
    let path = out.join("evaluation_summary.csv");
    write_records(
        &path,
        &header,
        a.policies.iter().map(|&kind| {
            let sel: Vec<&EpisodeRow> = rows
                .iter()
                .filter(|(k, _)| *k == kind)
                .map(|(_, r)| r)
                .collect();
            summary_fields(&[kind.name().to_string()], &sel)
        }),
    )?;
    outputs.push(path);
    finish_manifest(
        "evaluate",
        args,
        &cfg,
        a.seeds.clone(),
        started,
        out,
        outputs,
    )
}

/// `base` with one axis set to `value`, validated.
pub fn apply_axis(
    base: &SimulationConfig,
    axis: Axis,
    value: f64,
) -> Result<SimulationConfig, CliError> {
    let mut cfg = base.clone();
    let integer = || {
        if value >= 0.0 && value.fract() == 0.0 {
            Ok(value as u64)
        } else {
            Err(CliError::usage(format!(
                "{} needs non-negative integers, got {value}",
                axis.name()
            )))
        }
    };
    match axis {
        Axis::NVehicles => cfg.n_vehicles = integer()? as usize,
        Axis::MessageSizeBits => cfg.message_size_bits = integer()?,
        Axis::RriFixed => cfg.fixed_rri = integer()?,
        Axis::Omega1 => {
            cfg.omega1 = value;
            cfg.omega2 = 1.0 - value;
        }
    }
    cfg.validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(cfg)
}

fn sweep(a: &SweepArgs, args: &[String]) -> Result<(), CliError> {
    let started = unix_ms();
    let mut base = resolve_config(&a.common)?;
    if a.values.is_empty() {
        return Err(CliError::usage("--values must not be empty"));
    }
    if let Some(t) = a.noma {
        base.noma_enabled = t == Toggle::On;
    }
    let seeds = seeds_or_default(&a.seeds, &base);
    let mut per_value = Vec::new();
    for &value in &a.values {
        let cfg = apply_axis(&base, a.axis, value)?;
        per_value.push((
            value,
            simulate_rows(&cfg, a.policy, a.checkpoint.as_deref(), &seeds)?,
        ));
    }
    let out = &a.common.out;
    prepare_out(out)?;
    let label = |value: f64| vec![a.axis.name().to_string(), value.to_string()];
    let mut header = vec!["axis", "value"];
    header.extend(EPISODE_COLUMNS);
    let runs_path = out.join("sweep_runs.csv");
    write_records(
        &runs_path,
        &header,
        per_value.iter().flat_map(|(value, rows)| {
            rows.iter().map(move |r| {
                let mut f = label(*value);
                f.extend(r.fields());
                f
            })
        }),
    )?;
    let mut header = vec!["axis", "value"];
    header.extend(SUMMARY_COLUMNS);
    let summary_path = out.join("sweep_summary.csv");
    write_records(
        &summary_path,
        &header,
        per_value
            .iter()
            .map(|(value, rows)| summary_fields(&label(*value), &rows.iter().collect::<Vec<_>>())),
    )?;
    finish_manifest(
        "sweep",
        args,
        &base,
        seeds,
        started,
        out,
        vec![runs_path, summary_path],
    )
}

/// One grid point of `validate-collision`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionRow {
    pub n_vehicles: u64,
    pub rri: u64,
    pub p_rk: f64,
    pub pi: f64,
    pub csr: u64,
    pub analytic: f64,
    pub monte_carlo: f64,
    /// `|mc − analytic| / analytic`; `None` when the analytic value is 0.
    pub rel_error: Option<f64>,
}

pub fn collision_grid(
    cfg: &SimulationConfig,
    n_vehicles: &[u64],
    rris: &[u64],
    p_rk: &[f64],
    pi: f64,
    trials: u64,
) -> Result<Vec<CollisionRow>, CliError> {
    let mut points = Vec::new();
    for &nv in n_vehicles {
        for &rri in rris {
            for &prk in p_rk {
                points.push((nv, rri, prk));
            }
        }
    }
    points
        .par_iter()
        .enumerate()
        .map(|(idx, &(nv, rri, prk))| {
            let period = cfg.ms_to_slots(rri);
            let csr = pool_size(period, cfg.n_subchannels);
            let analytic = collision_probability(pi, period, csr, nv, prk)
                .map_err(|e| CliError::runtime(format!("N_v={nv} rri={rri} p_rk={prk}: {e}")))?;
            let mut rng = stream_rng(cfg.seed, Stream::MonteCarlo, idx as u64);
            let monte_carlo = monte_carlo_collision(pi, period, csr, nv, prk, trials, &mut rng);
            Ok(CollisionRow {
                n_vehicles: nv,
                rri,
                p_rk: prk,
                pi,
                csr,
                analytic,
                monte_carlo,
                rel_error: (analytic > 0.0).then(|| (monte_carlo - analytic).abs() / analytic),
            })
        })
        .collect()
}

fn validate_collision(a: &ValidateArgs, args: &[String]) -> Result<(), CliError> {
    let started = unix_ms();
    let cfg = resolve_config(&a.common)?;
    if a.trials < 10_000 {
        return Err(CliError::usage("--trials must be at least 10000"));
    }
    if !(0.0..=1.0).contains(&a.pi) {
        return Err(CliError::usage("--pi must lie in [0, 1]"));
    }
    let rows = collision_grid(&cfg, &a.n_vehicles, &a.rris, &a.p_rk, a.pi, a.trials)?;
    let out = &a.common.out;
    prepare_out(out)?;
    let path = out.join("collision_validation.csv");
    write_records(
        &path,
        &[
            "n_vehicles",
            "rri_ms",
            "p_rk",
            "pi",
            "csr",
            "analytic",
            "monte_carlo",
            "rel_error",
        ],
        rows.iter().map(|r| {
            vec![
                r.n_vehicles.to_string(),
                r.rri.to_string(),
                r.p_rk.to_string(),
                r.pi.to_string(),
                r.csr.to_string(),
                r.analytic.to_string(),
                r.monte_carlo.to_string(),
                r.rel_error.map_or_else(String::new, |e| e.to_string()),
            ]
        }),
    )?;
    finish_manifest(
        "validate-collision",
        args,
        &cfg,
        vec![cfg.seed],
        started,
        out,
        vec![path],
    )
}
