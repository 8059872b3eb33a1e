//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process fails if any check fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cv2x_cli::commands::{collision_grid, ga_allocation, PreparedPolicy};
use cv2x_core::agents::mpdqn::Batch;
use cv2x_core::agents::{MpdqnAgent, RandomPolicy, State, Transition, N_RRI};
use cv2x_core::engine::{run_episode_with, RunOptions};
use cv2x_core::phy::{sic_decode, sinr_collision_no_sic};
use cv2x_core::rng::{stream_rng, Stream};
use cv2x_core::training::train_mpdqn;
use cv2x_core::{default_config, run_episode, EpisodeMetrics, SimulationConfig};
use rand::Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn random_runs(cfg: &SimulationConfig, seeds: &[u64]) -> Vec<EpisodeMetrics> {
    seeds
        .par_iter()
        .map(|&s| run_episode(cfg, RandomPolicy::new(s), s))
        .collect()
}

fn queue_aoi_ordering() -> Outcome {
    let start = Instant::now();
    let multi = SimulationConfig {
        n_vehicles: 30,
        fixed_rri: 100,
        slots_per_episode: 100_000,
        ..default_config()
    };
    let single = SimulationConfig {
        single_queue: true,
        ..multi.clone()
    };
    let (m, s) = rayon::join(
        || run_episode(&multi, RandomPolicy::new(11), 11),
        || run_episode(&single, RandomPolicy::new(11), 11),
    );
    let [hpd, denm, cam, _] = m.queue_aoi_ms;
    let cam_single = s.queue_aoi_ms[2];
    let elapsed = start.elapsed();
    outcome(
        hpd < denm && denm < cam && cam < cam_single && elapsed < Duration::from_secs(60),
        format!(
            "HPD {hpd:.1} < DENM {denm:.1} < CAM {cam:.1} ms; CAM single-queue {cam_single:.1} ms; {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

const SEEDS: [u64; 3] = [21, 22, 23];

fn noma_benefit() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut reduction_50 = 0.0;
    for nv in [20, 30, 40, 50] {
        let base = SimulationConfig {
            n_vehicles: nv,
            fixed_rri: 20,
            ..default_config()
        };
        let off = SimulationConfig {
            noma_enabled: false,
            ..base.clone()
        };
        let with: Vec<f64> = random_runs(&base, &SEEDS)
            .iter()
            .map(|m| m.mean_aoi_ms)
            .collect();
        let without: Vec<f64> = random_runs(&off, &SEEDS)
            .iter()
            .map(|m| m.mean_aoi_ms)
            .collect();
        ok &= with.iter().zip(&without).all(|(a, b)| a < b);
        let reduction = 1.0 - mean(&with) / mean(&without);
        parts.push(format!(
            "N_v={nv}: {:.1} vs {:.1} ms ({:.0}%)",
            mean(&with),
            mean(&without),
            100.0 * reduction
        ));
        if nv == 50 {
            reduction_50 = reduction;
        }
    }
    let elapsed = start.elapsed();
    ok &= (0.30..=0.70).contains(&reduction_50) && elapsed < Duration::from_secs(300);
    outcome(
        ok,
        format!("{}; {:.1} s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn rri_sweet_spot() -> Outcome {
    let phi = |rri: u64| -> Vec<f64> {
        let cfg = SimulationConfig {
            n_vehicles: 50,
            fixed_rri: rri,
            noma_enabled: false,
            ..default_config()
        };
        random_runs(&cfg, &SEEDS)
            .iter()
            .map(|m| m.mean_aoi_ms)
            .collect()
    };
    let (p20, p50, p100) = (phi(20), phi(50), phi(100));
    let wins = (0..SEEDS.len())
        .filter(|&k| p50[k] < p20[k] && p50[k] < p100[k])
        .count();
    outcome(
        2 * wins > SEEDS.len(),
        format!(
            "Γ=50 lowest on {wins}/{} seeds; means 20/50/100 ms: {:.1}/{:.1}/{:.1}",
            SEEDS.len(),
            mean(&p20),
            mean(&p50),
            mean(&p100)
        ),
    )
}

fn collision_probability_check() -> Outcome {
    let start = Instant::now();
    let cfg = default_config();
    let pi = 0.009;
    let rows = collision_grid(
        &cfg,
        &[1, 5, 10, 20],
        &[20, 50, 100],
        &[0.0, 0.8, 1.0],
        pi,
        100_000,
    )
    .expect("grid within the formula's domain");
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for r in &rows {
        if r.n_vehicles == 1 || r.p_rk == 1.0 {
            ok &= r.analytic == 0.0 && r.monte_carlo == 0.0;
        } else if r.analytic >= 0.01 {
            let e = r.rel_error.expect("positive analytic value");
            worst = worst.max(e);
            checked += 1;
            ok &= e <= 0.10;
        }
    }
    let elapsed = start.elapsed();
    ok &= checked > 0 && elapsed < Duration::from_secs(120);
    outcome(
        ok,
        format!(
            "{checked} points with P_col ≥ 0.01, worst rel. error {worst:.4}; zero rows exact; {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Cancels the strongest remaining signal (lowest id on ties) one at a time.
fn ordered_cancellation(received: &[(usize, f64)], noise: f64) -> Vec<f64> {
    let mut remaining: Vec<usize> = (0..received.len()).collect();
    let mut eta = vec![0.0; received.len()];
    while !remaining.is_empty() {
        let mut best = 0;
        for (pos, &k) in remaining.iter().enumerate() {
            let b = remaining[best];
            if received[k].1 > received[b].1
                || (received[k].1 == received[b].1 && received[k].0 < received[b].0)
            {
                best = pos;
            }
        }
        let k = remaining.remove(best);
        let interference: f64 = remaining.iter().map(|&j| received[j].1).sum();
        eta[k] = received[k].1 / (interference + noise);
    }
    eta
}

fn sic_oracle() -> Outcome {
    let mut rng = stream_rng(5, Stream::MonteCarlo, 0);
    let noise = 1e-10;
    let mut worst: f64 = 0.0;
    let mut dominated = true;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=4);
        let mut received: Vec<(usize, f64)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0..50),
                    10f64.powf(rng.random_range(-13.0..-5.0)),
                )
            })
            .collect();
        if n > 1 && rng.random::<f64>() < 0.1 {
            received[1].1 = received[0].1;
        }
        let fast = sic_decode(&received, noise);
        let slow = ordered_cancellation(&received, noise);
        for k in 0..n {
            worst = worst.max((fast[k] - slow[k]).abs() / slow[k].abs());
            let others: Vec<f64> = (0..n).filter(|&j| j != k).map(|j| received[j].1).collect();
            // equal up to summation order when k is decoded first
            let plain = sinr_collision_no_sic(received[k].1, &others, noise);
            dominated &= fast[k] >= plain * (1.0 - 1e-12);
        }
    }
    outcome(
        worst <= 1e-12 && dominated,
        format!("10000 instances, worst rel. difference {worst:.2e}, SIC ≥ no-SIC: {dominated}"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let n = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if n == 0.0 {
        d
    } else {
        d / n
    }
}

fn random_batch(rng: &mut impl Rng, p_max: f64) -> Batch {
    let ts: Vec<Transition> = (0..16)
        .map(|_| {
            let state: State = std::array::from_fn(|_| rng.random());
            Transition {
                state,
                rri_index: rng.random_range(0..N_RRI),
                params: std::array::from_fn(|_| rng.random_range(0.0..p_max)),
                reward: -rng.random::<f64>(),
                next_state: std::array::from_fn(|_| rng.random()),
                terminal: rng.random::<f64>() < 0.2,
            }
        })
        .collect();
    Batch::from_transitions(&ts)
}

/// Central differences on `coords` random coordinates of one network. A
/// coordinate whose ±h step flips a ReLU has no derivative to compare with
/// and is skipped. Returns (rel. error, skipped).
#[allow(clippy::too_many_arguments)]
fn fd_check(
    agent: &MpdqnAgent,
    batch: &Batch,
    analytic: &[f64],
    params: Vec<f64>,
    set: impl Fn(&mut MpdqnAgent, &[f64]),
    loss: impl Fn(&MpdqnAgent) -> f64,
    idx: &[usize],
    h: f64,
) -> (f64, usize) {
    let pattern = agent.relu_pattern(batch);
    let mut probe = agent.clone();
    let mut num = Vec::new();
    let mut ana = Vec::new();
    let mut skipped = 0;
    for &k in idx {
        let mut eval = |delta: f64| {
            let mut p = params.clone();
            p[k] += delta;
            set(&mut probe, &p);
            (loss(&probe), probe.relu_pattern(batch) == pattern)
        };
        let (up, smooth_up) = eval(h);
        let (down, smooth_down) = eval(-h);
        if smooth_up && smooth_down {
            num.push((up - down) / (2.0 * h));
            ana.push(analytic[k]);
        } else {
            skipped += 1;
        }
    }
    (rel_err(&ana, &num), skipped)
}

fn gradient_checks() -> Outcome {
    let cfg = default_config();
    let h = 1e-5;
    let coords = 60;
    let results: Vec<(f64, f64, usize)> = (0..100u64)
        .into_par_iter()
        .map(|draw| {
            let agent = MpdqnAgent::new(&cfg, 1000 + draw);
            let mut rng = stream_rng(draw, Stream::MonteCarlo, 1);
            let batch = random_batch(&mut rng, cfg.p_max_mw());
            let y = agent.td_targets(&batch);

            let gq = agent.q_loss_and_grads(&batch, &y).1.flat();
            let params = agent.q.flat_params();
            let idx: Vec<usize> = (0..coords)
                .map(|_| rng.random_range(0..params.len()))
                .collect();
            let (eq, sq) = fd_check(
                &agent,
                &batch,
                &gq,
                params,
                |a, p| a.q.set_flat_params(p),
                |a| a.q_loss_and_grads(&batch, &y).0,
                &idx,
                h,
            );

            let gx = agent.actor_loss_and_grads(batch.states.view()).1.flat();
            let params = agent.actor.flat_params();
            let idx: Vec<usize> = (0..coords)
                .map(|_| rng.random_range(0..params.len()))
                .collect();
            let (ex, sx) = fd_check(
                &agent,
                &batch,
                &gx,
                params,
                |a, p| a.actor.set_flat_params(p),
                |a| a.actor_loss_and_grads(batch.states.view()).0,
                &idx,
                h,
            );
            (eq, ex, sq + sx)
        })
        .collect();
    let worst_q = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_x = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let skipped: usize = results.iter().map(|r| r.2).sum();
    let total = 100 * 2 * coords;
    outcome(
        worst_q < 1e-4 && worst_x < 1e-4,
        format!(
            "100 draws, worst rel. error Q {worst_q:.2e}, actor {worst_x:.2e}; \
             {skipped}/{total} coordinates skipped at ReLU kinks"
        ),
    )
}

fn learning_and_ordering() -> Outcome {
    let start = Instant::now();
    let cfg = SimulationConfig {
        n_vehicles: 20,
        episodes: 500,
        slots_per_episode: 10_000,
        ..default_config()
    };
    let (agent, curve) = train_mpdqn(&cfg, cfg.seed, |_, _| {});
    let early = mean(
        &curve[..100]
            .iter()
            .map(|p| p.mean_reward)
            .collect::<Vec<_>>(),
    );
    let late = mean(
        &curve[400..]
            .iter()
            .map(|p| p.mean_reward)
            .collect::<Vec<_>>(),
    );
    let seeds = [1001u64, 1002, 1003];
    let eval = |policy: &PreparedPolicy| -> (f64, f64) {
        let ms: Vec<EpisodeMetrics> = seeds.par_iter().map(|&s| policy.run(&cfg, s)).collect();
        (
            mean(&ms.iter().map(|m| m.mean_reward).collect::<Vec<_>>()),
            mean(&ms.iter().map(|m| m.mean_aoi_ms).collect::<Vec<_>>()),
        )
    };
    let (r_mpdqn, aoi_mpdqn) = eval(&PreparedPolicy::Mpdqn(Box::new(agent)));
    let (r_ga, _) = eval(&PreparedPolicy::Ga(ga_allocation(&cfg, cfg.seed)));
    let (r_random, aoi_random) = eval(&PreparedPolicy::Random);
    let elapsed = start.elapsed();
    outcome(
        late > early && r_mpdqn >= r_ga && r_ga >= r_random && aoi_mpdqn <= aoi_random && elapsed < Duration::from_secs(1800),
        format!(
            "reward ep 0-100 {early:.4} -> ep 400-500 {late:.4}; eval reward MPDQN {r_mpdqn:.4}, GA {r_ga:.4}, random {r_random:.4}; \
             Φ̄ MPDQN {aoi_mpdqn:.1} vs random {aoi_random:.1} ms; {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn energy_analytics() -> Outcome {
    let cfg = SimulationConfig {
        n_vehicles: 20,
        slots_per_episode: 200_000,
        ..default_config()
    };
    let mut runs: Vec<EpisodeMetrics> = Vec::new();
    let mut next = 0u64;
    while runs.iter().map(|m| m.epochs).sum::<u64>() < 100_000 {
        let batch: Vec<u64> = (next..next + 8).collect();
        next += 8;
        runs.extend(random_runs(
            &cfg,
            &batch.iter().map(|s| 500 + s).collect::<Vec<_>>(),
        ));
    }
    let epochs: u64 = runs.iter().map(|m| m.epochs).sum();
    let measured = runs
        .iter()
        .map(|m| m.mean_energy_mj * m.epochs as f64)
        .sum::<f64>()
        / epochs as f64;
    let transmissions: u64 = runs.iter().map(|m| m.transmissions).sum();
    let drawn: u64 = runs.iter().map(|m| m.rc0_sum).sum();
    let rris = cfg.allowed_rris();
    let mean_rc0 = rris
        .iter()
        .map(|&g| {
            let scale = 100.0 / g as f64;
            (cfg.rc_base_lo as f64 * scale + cfg.rc_base_hi as f64 * scale) / 2.0
        })
        .sum::<f64>()
        / rris.len() as f64;
    let expected = cfg.p_max_mw() / 2.0 * cfg.slot_ms / 1000.0
        * mean_rc0
        * (transmissions as f64 / drawn as f64);
    let rel = (measured - expected).abs() / expected;
    let silent = run_episode_with(
        &cfg,
        RandomPolicy::new(3),
        3,
        RunOptions {
            force_silent: true,
            ..RunOptions::default()
        },
    )
    .metrics;
    outcome(
        rel < 0.05 && silent.mean_energy_mj == 0.0,
        format!(
            "{epochs} epochs: measured {measured:.4} mJ, closed form {expected:.4} mJ (rel. {rel:.4}); silent Ē = {}",
            silent.mean_energy_mj
        ),
    )
}

fn message_size() -> Outcome {
    let mut phis = Vec::new();
    let mut energies = Vec::new();
    for g in [1200, 2400, 4800] {
        let cfg = SimulationConfig {
            n_vehicles: 50,
            message_size_bits: g,
            ..default_config()
        };
        let ms = random_runs(&cfg, &SEEDS);
        phis.push(mean(&ms.iter().map(|m| m.mean_aoi_ms).collect::<Vec<_>>()));
        energies.push(mean(
            &ms.iter().map(|m| m.mean_energy_mj).collect::<Vec<_>>(),
        ));
    }
    let monotone = phis.windows(2).all(|w| w[0] <= w[1]);
    let (lo, hi) = energies
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &e| {
            (a.min(e), b.max(e))
        });
    let spread = (hi - lo) / mean(&energies);
    outcome(
        monotone && spread < 0.10,
        format!(
            "Φ̄ over G=1200/2400/4800: {:.1}/{:.1}/{:.1} ms; Ē spread {:.2}%",
            phis[0],
            phis[1],
            phis[2],
            100.0 * spread
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_cv2x"))
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable output dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "manifest.json") {
                let rel = p
                    .strip_prefix(dir)
                    .expect("inside dir")
                    .display()
                    .to_string();
                out.push((rel, std::fs::read(&p).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let scenario = tmp.path().join("small.cfg");
    std::fs::write(
        &scenario,
        "n_vehicles=6\nslots_per_episode=3000\nepisodes=2\nbatch_size=16\nga_population=6\nga_generations=2\ncheckpoint_every=1\n",
    )
    .expect("writable temp dir");
    let scenario = scenario.to_str().expect("utf-8 path");
    let runs: [(&str, &[&str]); 5] = [
        ("simulate", &["simulate", "--seeds", "3,4"]),
        ("simulate-ga", &["simulate", "--policy", "ga"]),
        ("train", &["train"]),
        ("evaluate", &["evaluate", "--seeds", "7,8"]),
        (
            "sweep",
            &[
                "sweep",
                "--axis",
                "n_vehicles",
                "--values",
                "4,6",
                "--noma",
                "off",
            ],
        ),
    ];
    let mut failures = Vec::new();
    let mut compared = 0;
    for (name, args) in runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{name}-{rep}"));
            let mut full: Vec<&str> = args.to_vec();
            let out_str = out.to_str().expect("utf-8 path").to_string();
            full.extend(["--config", scenario, "--out", &out_str]);
            if !run_cli(&full) {
                failures.push(format!("{name} exited nonzero"));
            }
            outputs.push(output_files(&out));
        }
        compared += outputs[0].len();
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            failures.push(format!("{name} outputs differ"));
        }
    }
    let mut vc = Vec::new();
    for rep in 0..2 {
        let out = tmp.path().join(format!("vc-{rep}"));
        let out_str = out.to_str().expect("utf-8 path").to_string();
        if !run_cli(&["validate-collision", "--trials", "10000", "--out", &out_str]) {
            failures.push("validate-collision exited nonzero".into());
        }
        vc.push(output_files(&out));
    }
    compared += vc[0].len();
    if vc[0] != vc[1] {
        failures.push("validate-collision outputs differ".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{compared} files byte-identical across repeated runs of every subcommand")
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let checks: [Check; 10] = [
        ("1 queue AoI ordering", queue_aoi_ordering),
        ("2 NOMA benefit", noma_benefit),
        ("3 RRI sweet spot", rri_sweet_spot),
        (
            "4 analytic collision probability",
            collision_probability_check,
        ),
        ("5 SIC oracle equivalence", sic_oracle),
        ("6 gradient checks", gradient_checks),
        ("7 learning and policy ordering", learning_and_ordering),
        ("8 energy analytics", energy_analytics),
        ("9 message-size monotonicity", message_size),
        ("10 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        println!(
            "[{}] criterion {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
