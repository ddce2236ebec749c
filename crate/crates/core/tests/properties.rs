use std::collections::BTreeMap;

use framepick::episode::{make_state, EpisodeConfig, FrameIndex, HistoryVector, QualityVector};
use framepick::eval::{auc, run_episode, win_fraction_ci};
use framepick::policies::{linspace_index, Policy};
use framepick::qnet::{read_params, write_params, QNetConfig, QNetworkParams};
use framepick::reward::{
    aux_reward, decompose, goal_reward, single_task, GoalVariant, RandomStats, StepRecord,
};
use framepick::sim::suite::{generate_episode, SuiteParams};
use framepick::sim::{Environment, ObservationMode, SimEnv};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stats(horizon: u32, mu: f64, sigma: f64) -> RandomStats {
    RandomStats {
        horizon,
        mu_hat: mu,
        sigma_hat: sigma,
        n_runs: 30,
    }
}

fn small_episode(seed: u64, horizon: u32) -> EpisodeConfig {
    let params = SuiteParams {
        min_frames: 5,
        max_frames: 15,
        horizon,
        ..SuiteParams::default()
    };
    generate_episode(&params, seed).unwrap()
}

fn rollout(config: &EpisodeConfig, actions: &[usize]) -> Vec<StepRecord> {
    let mut env = SimEnv::new(config.clone()).unwrap();
    let mut state = env.state();
    actions
        .iter()
        .map(|&a| {
            let (next, _) = env.step(FrameIndex(a)).unwrap();
            let rec = StepRecord {
                state: state.clone(),
                action: FrameIndex(a),
                next_state: next.clone(),
                performance: env.true_mean_quality(),
            };
            state = next;
            rec
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn goal_reward_is_monotone_in_performance(
        p1 in 0.0..1.0f64, p2 in 0.0..1.0f64, mu in 0.0..1.0f64, sigma in 1e-3..1.0f64,
    ) {
        let s = stats(3, mu, sigma);
        for v in [GoalVariant::Naive, GoalVariant::Final] {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(goal_reward(lo, &s, v) <= goal_reward(hi, &s, v));
        }
        let naive = goal_reward(p1, &s, GoalVariant::Naive);
        let fin = goal_reward(p1, &s, GoalVariant::Final);
        prop_assert!((fin - (naive - 1.0)).abs() <= 1e-12);
        prop_assert_eq!(fin > 0.0, p1 - mu > sigma);
    }

    #[test]
    fn aux_reward_follows_the_argmin_set(counts in prop::collection::vec(0u32..4, 1..12)) {
        let min = *counts.iter().min().unwrap();
        let h = HistoryVector::from_counts(counts.clone());
        let rewarded = (0..counts.len()).filter(|&a| aux_reward(&h, FrameIndex(a)) == 1.0).count();
        prop_assert_eq!(rewarded, counts.iter().filter(|&&c| c == min).count());
        for a in 0..counts.len() {
            prop_assert!(aux_reward(&h, FrameIndex(a)).abs() == 1.0);
        }
    }

    #[test]
    fn decomposition_shape(seed in 0u64..1000, horizon in 1u32..6, picks in prop::collection::vec(0usize..100, 6)) {
        let config = small_episode(seed, horizon);
        let actions: Vec<usize> = picks.iter().take(horizon as usize).map(|p| p % config.n_frames).collect();
        let by_h: BTreeMap<u32, RandomStats> = (1..=horizon).map(|t| (t, stats(t, 0.4, 0.05))).collect();
        let steps = rollout(&config, &actions);
        let d = decompose(&steps, &by_h, GoalVariant::Final).unwrap();
        prop_assert_eq!(d.len(), 2 * horizon as usize - 1);
        let terminal: Vec<_> = d.iter().filter(|t| t.terminal).collect();
        prop_assert_eq!(terminal.len(), horizon as usize);
        for (i, t) in terminal.iter().enumerate() {
            prop_assert_eq!(t.horizon, i as u32 + 1);
            prop_assert!(t.goal_reward.is_some());
        }
        prop_assert!(d.iter().filter(|t| !t.terminal).all(|t| t.goal_reward.is_none()));

        let s = single_task(&steps, &by_h, GoalVariant::Final).unwrap();
        prop_assert_eq!(s.len(), horizon as usize);
        prop_assert_eq!(s.iter().filter(|t| t.terminal).count(), 1);
        prop_assert!(s.last().unwrap().terminal);
    }

    #[test]
    fn linspace_stays_in_range_and_is_nondecreasing(n in 1usize..200, horizon in 1u32..20) {
        let picks: Vec<usize> = (0..horizon).map(|r| linspace_index(r, n, horizon).0).collect();
        prop_assert!(picks.iter().all(|&p| p < n));
        prop_assert!(picks.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn auc_lies_between_min_and_max(scores in prop::collection::vec(0.0..1.0f64, 1..20)) {
        let a = auc(&scores).unwrap();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= lo - 1e-15 && a <= hi + 1e-15);
    }

    #[test]
    fn win_interval_brackets_the_fraction(
        pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..40), seed in any::<u64>(),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (w, lo, hi) = win_fraction_ci(&a, &b, 200, seed).unwrap();
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert!(lo <= w + 1e-12 && w <= hi + 1e-12);
    }

    #[test]
    fn rollouts_are_reproducible_per_policy(seed in 0u64..500, mode_wild in any::<bool>()) {
        let config = small_episode(seed, 4);
        let mode = if mode_wild { ObservationMode::Wild } else { ObservationMode::Oracle };
        for make in [|| Policy::random(9), || Policy::WorstWild, || Policy::Linspace] {
            let mut e1 = SimEnv::new(config.clone()).unwrap();
            let mut e2 = SimEnv::new(config.clone()).unwrap();
            let r1 = run_episode(&mut e1, &config, &mut make(), mode).unwrap();
            let r2 = run_episode(&mut e2, &config, &mut make(), mode).unwrap();
            prop_assert_eq!(r1, r2);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        embed in 1usize..5, hidden in 1usize..5, head in 1usize..5, seed in any::<u64>(),
        use_history in any::<bool>(),
    ) {
        let config = QNetConfig { embed, hidden, head, use_history, ..QNetConfig::default() };
        let params = QNetworkParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut bytes = Vec::new();
        write_params(&mut bytes, &params).unwrap();
        let back = read_params(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.config(), params.config());
        prop_assert!(back.values().iter().zip(params.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn agent_always_picks_a_valid_frame(seed in any::<u64>(), q in prop::collection::vec(0.0..1.0f64, 1..30)) {
        let config = QNetConfig { embed: 3, hidden: 3, head: 3, ..QNetConfig::default() };
        let params = QNetworkParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let n = q.len();
        let state = make_state(QualityVector::new(q).unwrap(), HistoryVector::zeros(n), 0).unwrap();
        let mut agent = Policy::agent(params);
        let a = agent.select(&state.quality, &state.history, 0, 8).unwrap();
        prop_assert!(a.0 < n);
    }
}
