//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run a subset with `cargo test -p framepick --test acceptance -- 1 3`.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use framepick::episode::{
    make_state, mean_quality, EpisodeConfig, FrameIndex, HistoryVector, QualityVector,
};
use framepick::eval::{
    auc, compare, emit_report, read_csv_runs, run_episode, CompareOptions, ComparisonReport,
    ReportFormat,
};
use framepick::policies::Policy;
use framepick::qnet::{gradient_survey, QNetConfig, QNetworkParams};
use framepick::reward::{aux_reward, goal_reward, q_target, GoalVariant, RandomStats, Transition};
use framepick::sim::suite::{generate_episode, generate_suite, load_suite, SuiteParams};
use framepick::sim::{calibrate_noise, quality_population, ObservationMode, SimEnv};
use framepick::stats::pearson;
use framepick::trainer::{epsilon, train, ReplayBuffer, TrainConfig};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seed of the training suite used for criteria 4 and 5; disjoint from the
/// shipped evaluation suite.
const TRAIN_SUITE_SEED: u64 = 77;
const TRAIN_SUITE_EPISODES: usize = 200;
const TRAIN_SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn shipped_suite() -> (Vec<EpisodeConfig>, u64) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/suite50.json");
    load_suite(&path).expect("shipped suite loads")
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

// ---------------------------------------------------------------- 1

fn reward_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut checks = 0usize;
    let mut check = |ok: bool, what: String| {
        checks += 1;
        if !ok && failures.len() < 5 {
            failures.push(what);
        }
    };
    for _ in 0..1000 {
        let stats = RandomStats {
            horizon: 5,
            mu_hat: rng.random_range(0.1..0.9),
            sigma_hat: rng.random_range(1e-3..0.3),
            n_runs: 30,
        };
        let (mu, sigma) = (stats.mu_hat, stats.sigma_hat);
        let naive = |p| goal_reward(p, &stats, GoalVariant::Naive);
        let fin = |p| goal_reward(p, &stats, GoalVariant::Final);
        check(close(naive(mu), 0.0), format!("naive zero crossing at mu={mu}"));
        check(
            close(fin(mu + sigma), 0.0),
            format!("final zero crossing at mu+sigma={}", mu + sigma),
        );
        let p: f64 = rng.random();
        check(
            close(fin(p), naive(p) - 1.0),
            format!("final = naive - 1 at p={p}"),
        );
        check(
            close(naive(p), (p - mu) / sigma),
            format!("naive closed form at p={p}"),
        );

        let delta = rng.random_range(0.01..1.0);
        let gamma = rng.random_range(0.0..1.0);
        let g: f64 = rng.random_range(-5.0..5.0);
        let next: f64 = rng.random_range(-5.0..5.0);
        let state = make_state(
            QualityVector::constant(2, 0.5).unwrap(),
            HistoryVector::zeros(2),
            0,
        )
        .unwrap();
        let next_state = make_state(
            QualityVector::constant(2, 0.5).unwrap(),
            HistoryVector::from_counts(vec![1, 0]),
            1,
        )
        .unwrap();
        let tr = |terminal: bool, goal: Option<f64>, aux: f64| Transition {
            state: state.clone(),
            action: FrameIndex(0),
            next_state: next_state.clone(),
            terminal,
            horizon: if terminal { 1 } else { 2 },
            goal_reward: goal,
            aux_reward: aux,
        };
        let t = tr(true, Some(g), 1.0);
        check(
            close(q_target(&t, next, delta, gamma).unwrap(), delta * g),
            "terminal target".into(),
        );
        let t2 = tr(true, Some(2.0 * g), 1.0);
        check(
            close(
                q_target(&t2, next, delta, gamma).unwrap(),
                2.0 * q_target(&t, next, delta, gamma).unwrap(),
            ),
            "terminal linearity in goal".into(),
        );
        for aux in [-1.0, 1.0] {
            let t = tr(false, None, aux);
            let y = q_target(&t, next, delta, gamma).unwrap();
            check(
                close(y, delta * aux + gamma * next),
                "non-terminal target".into(),
            );
            let y2 = q_target(&t, 2.0 * next, delta, gamma).unwrap();
            check(
                close(y2 - y, gamma * next),
                "non-terminal linearity in next value".into(),
            );
        }
    }

    for _ in 0..1000 {
        let n = rng.random_range(1..8);
        let counts: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let min = *counts.iter().min().unwrap();
        let h = HistoryVector::from_counts(counts.clone());
        for (a, &c) in counts.iter().enumerate() {
            let expected = if c == min { 1.0 } else { -1.0 };
            check(
                aux_reward(&h, FrameIndex(a)) == expected,
                format!("aux reward for {counts:?} at {a}"),
            );
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        let permuted = HistoryVector::from_counts(perm.iter().map(|&i| counts[i]).collect());
        for (new_pos, &old) in perm.iter().enumerate() {
            check(
                aux_reward(&permuted, FrameIndex(new_pos)) == aux_reward(&h, FrameIndex(old)),
                "aux permutation invariance".into(),
            );
        }
    }
    let ties = HistoryVector::from_counts(vec![1, 0, 0, 2]);
    check(
        aux_reward(&ties, FrameIndex(1)) == 1.0 && aux_reward(&ties, FrameIndex(2)) == 1.0,
        "tied minima are both rewarded".into(),
    );
    check(
        aux_reward(&HistoryVector::zeros(4), FrameIndex(3)) == 1.0,
        "first action is never punished".into(),
    );

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checks} checks exact to 1e-12")
        } else {
            format!("failed: {}", failures.join("; "))
        },
    )
}

// ---------------------------------------------------------------- 2

fn gradient_verification() -> Outcome {
    let s = gradient_survey(100, 20).unwrap();
    outcome(
        s.max_rel_err <= 1e-4,
        format!(
            "max relative error {:.2e} over {} draws ({} coordinates)",
            s.max_rel_err, s.draws, s.checked
        ),
    )
}

// ---------------------------------------------------------------- 3

fn final_performance(config: &EpisodeConfig, actions: &[usize]) -> f64 {
    let mut env = SimEnv::new(config.clone()).unwrap();
    let mut last = 0.0;
    for &a in actions {
        use framepick::sim::Environment;
        let (s, _) = env.step(FrameIndex(a)).unwrap();
        last = mean_quality(&s.quality).unwrap();
    }
    last
}

fn brute_force_optimum(config: &EpisodeConfig) -> (Vec<usize>, f64) {
    let n = config.n_frames;
    let t = config.horizon;
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for code in 0..n.pow(t) {
        let seq: Vec<usize> = (0..t).map(|i| (code / n.pow(i)) % n).collect();
        let p = final_performance(config, &seq);
        if p > best.1 {
            best = (seq, p);
        }
    }
    best
}

fn micro_episode(i: u64) -> EpisodeConfig {
    let params = SuiteParams {
        min_frames: 4,
        max_frames: 6,
        min_segments: 1,
        max_segments: 2,
        horizon: 2 + (i % 2) as u32,
        transition_noise: false,
        ..SuiteParams::default()
    };
    generate_episode(&params, 1000 + i).unwrap()
}

fn micro_train_config(config: &EpisodeConfig, seed: u64) -> TrainConfig {
    let updates = 3000;
    TrainConfig {
        lr: 1e-3,
        t_train: config.horizon,
        subseq_len: config.n_frames,
        episodes: updates / config.horizon as usize,
        eps_steps: (updates / 2) as u64,
        seed,
        network: QNetConfig {
            embed: 16,
            hidden: 32,
            head: 32,
            history_scale: f64::from(config.horizon),
            ..QNetConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn micro_mdp() -> Outcome {
    let mut passed = 0;
    let mut lines = Vec::new();
    for i in 0..10 {
        let config = micro_episode(i);
        let (_, optimum) = brute_force_optimum(&config);
        let (params, _) = train(&micro_train_config(&config, i), std::slice::from_ref(&config))
            .expect("micro training runs");
        let mut env = SimEnv::new(config.clone()).unwrap();
        let r = run_episode(&mut env, &config, &mut Policy::agent(params), ObservationMode::Oracle)
            .unwrap();
        let got = *r.scores.last().unwrap();
        if got >= 0.95 * optimum {
            passed += 1;
        }
        lines.push(format!("{:.3}", got / optimum));
    }
    outcome(
        passed >= 9,
        format!("{passed}/10 episodes within 95% of optimum (ratios {})", lines.join(" ")),
    )
}

// ---------------------------------------------------------------- 4, 5

fn desk_training(variant: GoalVariant) -> QNetworkParams {
    let suite = generate_suite(
        &SuiteParams {
            n_episodes: TRAIN_SUITE_EPISODES,
            ..SuiteParams::default()
        },
        TRAIN_SUITE_SEED,
    )
    .unwrap();
    let cfg = TrainConfig {
        goal_variant: variant,
        seed: TRAIN_SEED,
        ..TrainConfig::desk()
    };
    train(&cfg, &suite).expect("desk training runs").0
}

fn evaluate(agent: QNetworkParams) -> ComparisonReport {
    let (suite, hash) = shipped_suite();
    let policies = vec![
        ("agent".to_string(), Policy::agent(agent)),
        ("worst-oracle".to_string(), Policy::WorstOracle),
        ("random".to_string(), Policy::random(0)),
    ];
    let mut report = compare(&suite, &policies, &CompareOptions::default()).unwrap();
    report.suite_hash = Some(format!("{hash:016x}"));
    report
}

fn central_claim(report: &ComparisonReport) -> Outcome {
    let agent = report.policy("agent").unwrap().mean_auc;
    let worst = report.policy("worst-oracle").unwrap().mean_auc;
    let random = report.policy("random").unwrap().mean_auc;
    let vs_random = report.win("agent", "random").unwrap();
    let vs_worst = report.win("agent", "worst-oracle").unwrap();
    let pass = agent >= worst && vs_random.win_fraction >= 0.55 && vs_random.ci_low > 0.5;
    outcome(
        pass,
        format!(
            "AUC agent {agent:.4} / worst-oracle {worst:.4} / random {random:.4}; \
             agent vs random wins {:.2} [{:.2}, {:.2}]; agent vs worst wins {:.2} [{:.2}, {:.2}]",
            vs_random.win_fraction,
            vs_random.ci_low,
            vs_random.ci_high,
            vs_worst.win_fraction,
            vs_worst.ci_low,
            vs_worst.ci_high
        ),
    )
}

fn reward_ablation(final_report: &ComparisonReport) -> Outcome {
    let naive_report = evaluate(desk_training(GoalVariant::Naive));
    let fin = final_report.policy("agent").unwrap().mean_auc;
    let naive = naive_report.policy("agent").unwrap().mean_auc;
    outcome(
        fin >= naive,
        format!("mean AUC with final goal reward {fin:.4}, with naive goal reward {naive:.4}"),
    )
}

// ---------------------------------------------------------------- 6

fn simulator_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures: BTreeMap<&str, String> = BTreeMap::new();
    let cases = 300;
    for _ in 0..cases {
        let n = rng.random_range(2..40);
        let boundaries: Vec<usize> = {
            let k = rng.random_range(0..n.min(4));
            let mut b = sample(&mut rng, n - 1, k).into_vec();
            b.iter_mut().for_each(|x| *x += 1);
            b.sort_unstable();
            b
        };
        let c = config(
            (0..n).map(|_| rng.random()).collect(),
            (0..n).map(|_| rng.random_range(0.01..=1.0)).collect(),
            boundaries,
            rng.random_range(0.3..20.0),
            rng.random_range(0.05..=1.0),
            rng.random_range(0.05..0.99),
            rng.random_range(0.0..1.0),
            rng.random(),
        );
        let actions: Vec<usize> = (0..8).map(|_| rng.random_range(0..n)).collect();
        let a = actions[0];
        let mask: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let results = [
            ("monotone refinement", check_monotone(&c, &actions)),
            ("diminishing returns", check_diminishing(&c, a)),
            ("saturation", check_saturation(&c, &mask, a)),
            ("segment attenuation", check_segment_attenuation(&c, a)),
            ("localization", check_localization(&c, a)),
            ("determinism", check_determinism(&c, &actions)),
        ];
        for (name, r) in results {
            if let Err(e) = r {
                failures.entry(name).or_insert(e);
            }
        }
    }

    let (suite, _) = shipped_suite();
    let base = &suite[0];
    let mut calib = Vec::new();
    for target in [0.42, 0.47, 0.51] {
        match calibrate_noise(target, base) {
            Ok(sigma) => {
                // Independent check on a fresh population and fresh noise.
                let pop = quality_population(base, 100_000, base.seed ^ 0x5eed).unwrap();
                let mut nrng = ChaCha8Rng::seed_from_u64(target.to_bits());
                let noisy: Vec<f64> = pop
                    .iter()
                    .map(|q| {
                        let z: f64 = nrng.sample(StandardNormal);
                        (q + sigma * z).clamp(0.0, 1.0)
                    })
                    .collect();
                let r = pearson(&pop, &noisy).unwrap();
                if (r - target).abs() > 0.02 {
                    failures.insert("calibration", format!("target {target}: PCC {r:.4}"));
                }
                calib.push(format!("{target}->sigma {sigma:.4} (PCC {r:.3})"));
            }
            Err(e) => {
                failures.insert("calibration", e.to_string());
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("6 invariants over {cases} random episodes; calibration {}", calib.join(", "))
        } else {
            format!("{failures:?}")
        },
    )
}

// ---------------------------------------------------------------- 7

fn bookkeeping() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let c: f64 = rng.random();
        let len = rng.random_range(1..20);
        if auc(&vec![c; len]).unwrap() != c {
            failures.push(format!("constant-curve AUC for {c} x {len}"));
            break;
        }
    }

    let (suite, hash) = shipped_suite();
    let policies = vec![
        ("random".to_string(), Policy::random(3)),
        ("linspace".to_string(), Policy::Linspace),
    ];
    let mut report = compare(
        &suite[..5],
        &policies,
        &CompareOptions {
            bootstrap_resamples: 1000,
            ..CompareOptions::default()
        },
    )
    .unwrap();
    report.suite_hash = Some(format!("{hash:016x}"));
    let random = report.policy("random").unwrap();
    if random.repeats != 5 || !random.std_auc.is_some_and(|s| s >= 0.0) {
        failures.push(format!(
            "random repeats {} std {:?}",
            random.repeats, random.std_auc
        ));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    emit_report(&report, ReportFormat::Csv, &path).unwrap();
    let back = read_csv_runs(&path).unwrap();
    let sig12 = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let roundtrip = back.len() == report.runs.len()
        && back.iter().zip(&report.runs).all(|(x, y)| {
            x.policy == y.policy
                && x.episode == y.episode
                && x.repeat == y.repeat
                && sig12(x.auc, y.auc)
                && x.scores.len() == y.scores.len()
                && x.scores.iter().zip(&y.scores).all(|(a, b)| sig12(*a, *b))
        });
    if !roundtrip {
        failures.push("CSV round trip".to_string());
    }

    let capacity = 50;
    let mut buffer = ReplayBuffer::new(capacity).unwrap();
    let state = make_state(
        QualityVector::constant(2, 0.5).unwrap(),
        HistoryVector::zeros(2),
        0,
    )
    .unwrap();
    let k = 17;
    for i in 0..capacity + k {
        buffer.push(Transition {
            state: state.clone(),
            action: FrameIndex(0),
            next_state: state.clone(),
            terminal: true,
            horizon: 1,
            goal_reward: Some(i as f64),
            aux_reward: 1.0,
        });
    }
    let kept: Vec<f64> = buffer.iter().map(|t| t.goal_reward.unwrap()).collect();
    let expected: Vec<f64> = (k..capacity + k).map(|i| i as f64).collect();
    if buffer.len() != capacity || kept != expected {
        failures.push("replay FIFO eviction".to_string());
    }

    let cfg = TrainConfig::default();
    if epsilon(0, &cfg) != 0.7 || epsilon(5000, &cfg) != 0.25 {
        failures.push(format!(
            "epsilon endpoints {} {}",
            epsilon(0, &cfg),
            epsilon(5000, &cfg)
        ));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "AUC, repeat std, CSV round trip, FIFO eviction and epsilon endpoints hold".to_string()
        } else {
            failures.join("; ")
        },
    )
}

// ----------------------------------------------------------------

fn main() {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let run = |i: u32| wanted.is_empty() || wanted.contains(&i);
    let mut all_pass = true;
    let mut report = |i: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed();
        all_pass &= o.pass;
        println!(
            "criterion {i} {} {name} ({}): {}",
            if o.pass { "PASS" } else { "FAIL" },
            fmt_secs(secs),
            o.detail
        );
    };

    if run(1) {
        report(1, "reward correctness", &mut reward_correctness);
    }
    if run(2) {
        report(2, "gradient verification", &mut gradient_verification);
    }
    if run(3) {
        report(3, "micro-MDP optimality", &mut micro_mdp);
    }
    if run(4) || run(5) {
        let mut final_report = None;
        report(4, "agent vs worst and random", &mut || {
            let r = evaluate(desk_training(GoalVariant::Final));
            let o = central_claim(&r);
            final_report = Some(r);
            o
        });
        if run(5) {
            let fr = final_report.expect("criterion 4 ran");
            report(5, "reward-function ablation", &mut || reward_ablation(&fr));
        }
    }
    if run(6) {
        report(6, "simulator invariants and calibration", &mut simulator_invariants);
    }
    if run(7) {
        report(7, "harness bookkeeping", &mut bookkeeping);
    }
    if !all_pass {
        std::process::exit(1);
    }
}

fn fmt_secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
