//! Rollouts, AUC, multi-policy comparison and reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::{mean_quality, EpisodeConfig, EpisodeResult};
use crate::error::{Error, Result};
use crate::hash::{derive_seed, fnv1a64};
use crate::policies::Policy;
use crate::sim::{Environment, ObservationMode, SimEnv};

const STREAM_BOOTSTRAP: u64 = 0x626f_6f74;

/// Mean of the per-round scores. A running mean, so a constant curve gives
/// back exactly its constant.
pub fn auc(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Domain("auc of an empty score sequence".into()));
    }
    let mut m = 0.0;
    for (k, &s) in scores.iter().enumerate() {
        m += (s - m) / (k + 1) as f64;
    }
    Ok(m)
}

/// Plays `config.horizon` rounds of `policy`. Selection sees the policy's
/// view of the quality; scores are always mean true quality after each step.
pub fn run_episode<E: Environment>(
    env: &mut E,
    config: &EpisodeConfig,
    policy: &mut Policy,
    mode: ObservationMode,
) -> Result<EpisodeResult> {
    let mut state = env.reset(config)?;
    let view = policy.observation_mode(mode);
    let mut actions = Vec::with_capacity(config.horizon as usize);
    let mut scores = Vec::with_capacity(config.horizon as usize);
    for round in 0..config.horizon {
        let observation = match view {
            ObservationMode::Oracle => state.quality.clone(),
            ObservationMode::Wild => env.observe(ObservationMode::Wild)?,
        };
        let action = policy.select(&observation, &state.history, round, config.horizon)?;
        let (next, _) = env.step(action)?;
        scores.push(mean_quality(&next.quality)?);
        actions.push(action);
        state = next;
    }
    EpisodeResult::from_rounds(actions, scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub mode: ObservationMode,
    /// Overrides every episode's horizon when set.
    pub horizon: Option<u32>,
    pub random_repeats: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            mode: ObservationMode::Oracle,
            horizon: Some(8),
            random_repeats: 5,
            bootstrap_resamples: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: String,
    pub episode: usize,
    pub repeat: usize,
    pub auc: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub name: String,
    pub kind: String,
    pub repeats: usize,
    pub mean_auc: f64,
    /// Spread of the suite-mean AUC across repeats; only for stochastic policies.
    pub std_auc: Option<f64>,
    /// Mean score after each round.
    pub curve: Vec<f64>,
    /// AUC per episode, averaged over repeats.
    pub episode_auc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseWin {
    pub a: String,
    pub b: String,
    /// Share of episodes where `a`'s AUC is at least `b`'s.
    pub win_fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub version: String,
    pub suite_hash: Option<String>,
    pub mode: ObservationMode,
    pub horizon: u32,
    pub n_episodes: usize,
    pub policies: Vec<PolicySummary>,
    pub pairwise: Vec<PairwiseWin>,
    pub runs: Vec<RunRecord>,
}

impl ComparisonReport {
    pub fn policy(&self, name: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.name == name)
    }

    pub fn win(&self, a: &str, b: &str) -> Option<&PairwiseWin> {
        self.pairwise.iter().find(|w| w.a == a && w.b == b)
    }
}

/// Runs every policy on every episode of `suite`. Stochastic policies are
/// repeated with seeds derived from the policy name, episode and repeat, so
/// the report does not depend on the order of `policies`.
pub fn compare(
    suite: &[EpisodeConfig],
    policies: &[(String, Policy)],
    options: &CompareOptions,
) -> Result<ComparisonReport> {
    if suite.is_empty() {
        return Err(Error::Config("comparison needs a non-empty suite".into()));
    }
    if policies.is_empty() {
        return Err(Error::Config("comparison needs at least one policy".into()));
    }
    if options.random_repeats == 0 {
        return Err(Error::Config("random_repeats must be positive".into()));
    }
    let mut by_name: BTreeMap<&str, &Policy> = BTreeMap::new();
    for (name, p) in policies {
        if by_name.insert(name.as_str(), p).is_some() {
            return Err(Error::Config(format!("duplicate policy name {name:?}")));
        }
    }
    let suite: Vec<EpisodeConfig> = suite
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if let Some(t) = options.horizon {
                c.horizon = t;
            }
            c
        })
        .collect();
    let horizon = suite[0].horizon;
    if suite.iter().any(|c| c.horizon != horizon) {
        return Err(Error::Config(
            "episodes have different horizons; pass a common horizon".into(),
        ));
    }

    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    for (&name, &policy) in &by_name {
        let repeats = if policy.is_stochastic() {
            options.random_repeats
        } else {
            1
        };
        let name_tag = fnv1a64(name.as_bytes());
        let mut per_episode = vec![0.0; suite.len()];
        let mut per_repeat = vec![0.0; repeats];
        let mut curve = vec![0.0; horizon as usize];
        for (ep, config) in suite.iter().enumerate() {
            for rep in 0..repeats {
                let mut p =
                    policy.reseeded(derive_seed(options.seed, &[name_tag, ep as u64, rep as u64]));
                let mut env = SimEnv::new(config.clone())?;
                let r = run_episode(&mut env, config, &mut p, options.mode)?;
                per_episode[ep] += r.auc / repeats as f64;
                per_repeat[rep] += r.auc / suite.len() as f64;
                for (c, s) in curve.iter_mut().zip(&r.scores) {
                    *c += s / (suite.len() * repeats) as f64;
                }
                runs.push(RunRecord {
                    policy: name.to_string(),
                    episode: ep,
                    repeat: rep,
                    auc: r.auc,
                    scores: r.scores,
                });
            }
        }
        summaries.push(PolicySummary {
            name: name.to_string(),
            kind: policy.kind().to_string(),
            repeats,
            mean_auc: crate::stats::mean(&per_episode).expect("non-empty suite"),
            std_auc: policy
                .is_stochastic()
                .then(|| crate::stats::sample_std(&per_repeat).unwrap_or(0.0)),
            curve,
            episode_auc: per_episode,
        });
    }

    let mut pairwise = Vec::new();
    for a in &summaries {
        for b in &summaries {
            if a.name == b.name {
                continue;
            }
            let seed = derive_seed(
                options.seed,
                &[STREAM_BOOTSTRAP, fnv1a64(a.name.as_bytes()), fnv1a64(b.name.as_bytes())],
            );
            let (win_fraction, ci_low, ci_high) = win_fraction_ci(
                &a.episode_auc,
                &b.episode_auc,
                options.bootstrap_resamples,
                seed,
            )?;
            pairwise.push(PairwiseWin {
                a: a.name.clone(),
                b: b.name.clone(),
                win_fraction,
                ci_low,
                ci_high,
            });
        }
    }

    Ok(ComparisonReport {
        version: crate::VERSION.to_string(),
        suite_hash: None,
        mode: options.mode,
        horizon,
        n_episodes: suite.len(),
        policies: summaries,
        pairwise,
        runs,
    })
}

/// Share of paired items with `a ≥ b` and its percentile-bootstrap 95% interval.
pub fn win_fraction_ci(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let wins: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| if x >= y { 1.0 } else { 0.0 })
        .collect();
    let n = wins.len();
    let point = wins.iter().sum::<f64>() / n as f64;
    if resamples == 0 {
        return Ok((point, point, point));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| wins[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    boot.sort_by(f64::total_cmp);
    let lo = crate::stats::percentile_sorted(&boot, 0.025).expect("non-empty");
    let hi = crate::stats::percentile_sorted(&boot, 0.975).expect("non-empty");
    Ok((point, lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// Writes per-run rows as CSV (with `#` comment lines for the suite hash and
/// tool version) or the full report as JSON.
pub fn emit_report(report: &ComparisonReport, format: ReportFormat, path: &Path) -> Result<()> {
    if report.runs.is_empty() || report.policies.is_empty() {
        return Err(Error::Config("refusing to write an empty report".into()));
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut file, report)?;
            writeln!(file).map_err(|e| Error::io(path, e))?;
        }
        ReportFormat::Csv => {
            writeln!(
                file,
                "# suite_hash={}\n# version={}\n# mode={}",
                report.suite_hash.as_deref().unwrap_or("none"),
                report.version,
                serde_json::to_value(report.mode)?.as_str().unwrap_or_default()
            )
            .map_err(|e| Error::io(path, e))?;
            let mut w = csv::Writer::from_writer(file);
            let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
            let mut header: Vec<String> =
                ["policy", "episode", "repeat", "auc"].map(String::from).to_vec();
            header.extend((1..=report.horizon).map(|t| format!("s{t}")));
            w.write_record(&header).map_err(csv_err)?;
            for r in &report.runs {
                let mut row = vec![
                    r.policy.clone(),
                    r.episode.to_string(),
                    r.repeat.to_string(),
                    r.auc.to_string(),
                ];
                row.extend(r.scores.iter().map(f64::to_string));
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// Reads back the run rows of a CSV report.
pub fn read_csv_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut runs = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("bad number in column {}", i + 1)))
        };
        runs.push(RunRecord {
            policy: rec.get(0).unwrap_or_default().to_string(),
            episode: num(1)? as usize,
            repeat: num(2)? as usize,
            auc: num(3)?,
            scores: (4..rec.len()).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(runs)
}
